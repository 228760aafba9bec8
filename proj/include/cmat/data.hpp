#pragma once
// Synthetic contextual scenes standing in for detector outputs. Categories
// co-occur in groups, initial logits are corrupted within feature-confusable
// slots, and predicates follow a per-category-pair table, so communication
// between agents genuinely helps classification.

#include <cstdint>
#include <string>
#include <vector>

#include "cmat/graph.hpp"
#include "cmat/model.hpp"

namespace cmat::data {

struct WorldSpec {
    int num_classes = 13;     // including background at 0
    int num_predicates = 7;   // including no-relationship at 0
    int feature_dim = 16;
    int min_entities = 4;
    int max_entities = 8;
    double feature_noise = 0.35;
    double corruption = 0.3;  // P(initial argmax is wrong)
    std::uint64_t seed = 1;

    // Row-normalized tables, all built by contextual().
    std::vector<double> cooc;        // C x C, P(category | anchor category)
    std::vector<double> pred_given;  // (C*C) x R, P(predicate | subject, object cats)
    std::vector<double> confusion;   // C x C, P(observed | true)
    std::vector<double> proto;       // C x d category feature prototypes
    std::vector<double> pred_proto;  // R x d pair feature prototypes

    // Categories split into co-occurrence groups; confusable slots cut across
    // groups so scene context is what disambiguates a corrupted label.
    static WorldSpec contextual(int num_classes, int num_predicates, int feature_dim,
                                double mean_entities, double corruption, double feature_noise,
                                std::uint64_t seed);

    void check() const;  // throws ValidationError (degenerate rows, bad rates)
    Vocab vocab() const { return Vocab::synthetic(num_classes, num_predicates); }
};

struct SceneRecord {
    std::int64_t id = 0;
    model::SceneInput input;
    SceneGraph truth;  // entities carry the true categories, confidence 1
};

std::vector<SceneRecord> generate(const WorldSpec& world, int count);

// Line-delimited records, one JSON object per scene. save/load round-trip is
// byte identical; load validates every record against the vocab.
void save(const std::vector<SceneRecord>& records, const std::string& path);
std::vector<SceneRecord> load(const std::string& path, const Vocab& vocab);

void save_vocab(const Vocab& vocab, const std::string& path);
Vocab load_vocab(const std::string& path);

struct SplitResult {
    std::vector<SceneRecord> train, val, test;
};

// Seed-deterministic disjoint partition; fractions must sum to 1.
SplitResult split(const std::vector<SceneRecord>& records, double f_train, double f_val,
                  double f_test, std::uint64_t seed);

}  // namespace cmat::data
