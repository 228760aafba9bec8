#pragma once
// Graph-level reward functions: Recall@K and a triplet F-score, plus the
// dispatcher the trainer calls. Both metrics rank the predicted triplets,
// optionally enforce the graph constraint, cut at k and match against truth.

#include <string>

#include "cmat/graph.hpp"

namespace cmat {

enum class MetricKind { Recall, Spice };

struct RewardSpec {
    MetricKind kind = MetricKind::Recall;
    int k = 20;
    bool graph_constraint = true;
    double iou_threshold = 0.5;

    void check() const;  // throws UsageError on bad fields
};

// Accepts "recall@K" / "spice@K"; throws UsageError otherwise.
RewardSpec parse_metric(const std::string& name, bool graph_constraint = true);
std::string metric_name(const RewardSpec& spec);

// |matched truth triplets among top-k predictions| / |truth triplets|.
// Empty truth: 1 when predictions are empty too, else 0.
double recall_at_k(const SceneGraph& predicted, const SceneGraph& truth, const RewardSpec& spec);

// Harmonic mean of triplet precision and recall over the top-k predictions.
double spice(const SceneGraph& predicted, const SceneGraph& truth, const RewardSpec& spec);

// Dispatch on spec.kind.
double reward(const SceneGraph& predicted, const SceneGraph& truth, const RewardSpec& spec);

}  // namespace cmat
