#pragma once
// Scene-graph data model shared by metrics, model and data: entities with
// normalized boxes, directed predicate edges, IoU and triplet matching.

#include <cstddef>
#include <string>
#include <vector>

namespace cmat {

// Category index 0 is background; predicate index 0 is no-relationship.
struct Vocab {
    std::vector<std::string> objects;
    std::vector<std::string> predicates;

    std::size_t num_objects() const { return objects.size(); }
    std::size_t num_predicates() const { return predicates.size(); }

    // Synthetic vocabulary: bg, obj01..objN / none, rel01..relM.
    static Vocab synthetic(std::size_t num_objects, std::size_t num_predicates);
};

struct Box {
    double x1 = 0, y1 = 0, x2 = 0, y2 = 0;

    double area() const { return (x2 - x1) * (y2 - y1); }
    bool valid() const;
};

// intersection / union; symmetric, in [0,1] for valid boxes.
double iou(const Box& a, const Box& b);

struct Entity {
    int category = 0;
    Box box;
    double confidence = 1.0;
};

struct Triplet {
    int subject_index = 0;
    int object_index = 0;
    int predicate = 0;
    double score = 0.0;
};

struct SceneGraph {
    std::vector<Entity> entities;
    std::vector<Triplet> triplets;
};

// Reports every violated invariant; empty result means the graph is valid.
// Ground-truth graphs additionally require a unique predicate per ordered
// entity pair; predicted graphs may carry several (constraint-free ranking).
std::vector<std::string> validate(const SceneGraph& g, const Vocab& vocab,
                                  bool unique_pairs = true);

// Sort by descending score; ties broken by (subject, object, predicate)
// ascending so evaluation is deterministic across runs.
void rank_triplets(std::vector<Triplet>& triplets);

// Keep only the highest-ranked predicate per ordered (subject, object) pair.
// Input must already be ranked.
std::vector<Triplet> apply_graph_constraint(const std::vector<Triplet>& ranked);

// Match ranked predictions against ground truth. A prediction matches a truth
// triplet when subject/object categories and the predicate agree and both
// boxes reach the IoU threshold; each truth triplet is consumed at most once.
// Returns indices into truth.triplets.
std::vector<std::size_t> match_triplets(const std::vector<Entity>& predicted_entities,
                                        const std::vector<Triplet>& predicted_ranked,
                                        const SceneGraph& truth,
                                        double iou_threshold,
                                        bool graph_constraint);

}  // namespace cmat
