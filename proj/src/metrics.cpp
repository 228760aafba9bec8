#include "cmat/metrics.hpp"

#include <algorithm>

#include "cmat/errors.hpp"

namespace cmat {
namespace {

// Ranked, constraint-filtered, top-k slice of the predicted triplets.
std::vector<Triplet> top_k_predictions(const SceneGraph& predicted, const RewardSpec& spec) {
    std::vector<Triplet> ranked = predicted.triplets;
    rank_triplets(ranked);
    if (spec.graph_constraint) ranked = apply_graph_constraint(ranked);
    if (ranked.size() > static_cast<std::size_t>(spec.k))
        ranked.resize(static_cast<std::size_t>(spec.k));
    return ranked;
}

std::size_t count_matches(const SceneGraph& predicted, const SceneGraph& truth,
                          const RewardSpec& spec, std::size_t* out_considered) {
    const std::vector<Triplet> top = top_k_predictions(predicted, spec);
    if (out_considered) *out_considered = top.size();
    // Constraint already applied on the full ranking; don't re-filter the slice.
    return match_triplets(predicted.entities, top, truth, spec.iou_threshold, false).size();
}

}  // namespace

void RewardSpec::check() const {
    if (k < 1) throw UsageError("metric: k must be >= 1");
    if (!(iou_threshold > 0.0 && iou_threshold <= 1.0))
        throw UsageError("metric: iou threshold must lie in (0,1]");
}

RewardSpec parse_metric(const std::string& name, bool graph_constraint) {
    const auto at = name.find('@');
    if (at == std::string::npos)
        throw UsageError("metric: expected recall@K or spice@K, got '" + name + "'");
    const std::string head = name.substr(0, at);
    RewardSpec spec;
    if (head == "recall")
        spec.kind = MetricKind::Recall;
    else if (head == "spice")
        spec.kind = MetricKind::Spice;
    else
        throw UsageError("metric: unknown kind '" + head + "' (recall|spice)");
    try {
        spec.k = std::stoi(name.substr(at + 1));
    } catch (const std::exception&) {
        throw UsageError("metric: bad K in '" + name + "'");
    }
    spec.graph_constraint = graph_constraint;
    spec.check();
    return spec;
}

std::string metric_name(const RewardSpec& spec) {
    return (spec.kind == MetricKind::Recall ? "recall@" : "spice@") + std::to_string(spec.k);
}

double recall_at_k(const SceneGraph& predicted, const SceneGraph& truth, const RewardSpec& spec) {
    if (truth.triplets.empty()) return predicted.triplets.empty() ? 1.0 : 0.0;
    const std::size_t matches = count_matches(predicted, truth, spec, nullptr);
    return static_cast<double>(matches) / static_cast<double>(truth.triplets.size());
}

double spice(const SceneGraph& predicted, const SceneGraph& truth, const RewardSpec& spec) {
    if (truth.triplets.empty() && predicted.triplets.empty()) return 1.0;
    std::size_t considered = 0;
    const std::size_t matches = count_matches(predicted, truth, spec, &considered);
    if (matches == 0) return 0.0;
    const double precision = static_cast<double>(matches) / static_cast<double>(considered);
    const double recall = static_cast<double>(matches) / static_cast<double>(truth.triplets.size());
    return 2.0 * precision * recall / (precision + recall);
}

double reward(const SceneGraph& predicted, const SceneGraph& truth, const RewardSpec& spec) {
    spec.check();
    switch (spec.kind) {
        case MetricKind::Recall:
            return recall_at_k(predicted, truth, spec);
        case MetricKind::Spice:
            return spice(predicted, truth, spec);
    }
    throw UsageError("metric: unknown kind");
}

}  // namespace cmat
