#include "cmat/graph.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace cmat {

Vocab Vocab::synthetic(std::size_t num_objects, std::size_t num_predicates) {
    Vocab v;
    v.objects.reserve(num_objects);
    v.objects.push_back("bg");
    for (std::size_t i = 1; i < num_objects; ++i)
        v.objects.push_back("obj" + std::string(i < 10 ? "0" : "") + std::to_string(i));
    v.predicates.reserve(num_predicates);
    v.predicates.push_back("none");
    for (std::size_t i = 1; i < num_predicates; ++i)
        v.predicates.push_back("rel" + std::string(i < 10 ? "0" : "") + std::to_string(i));
    return v;
}

bool Box::valid() const {
    return std::isfinite(x1) && std::isfinite(y1) && std::isfinite(x2) && std::isfinite(y2) &&
           x1 < x2 && y1 < y2 && x1 >= 0.0 && y1 >= 0.0 && x2 <= 1.0 && y2 <= 1.0;
}

double iou(const Box& a, const Box& b) {
    const double ix = std::max(0.0, std::min(a.x2, b.x2) - std::max(a.x1, b.x1));
    const double iy = std::max(0.0, std::min(a.y2, b.y2) - std::max(a.y1, b.y1));
    const double inter = ix * iy;
    if (inter <= 0.0) return 0.0;
    return inter / (a.area() + b.area() - inter);
}

std::vector<std::string> validate(const SceneGraph& g, const Vocab& vocab, bool unique_pairs) {
    std::vector<std::string> bad;
    const auto n = static_cast<int>(g.entities.size());
    for (std::size_t i = 0; i < g.entities.size(); ++i) {
        const Entity& e = g.entities[i];
        if (e.category < 0 || e.category >= static_cast<int>(vocab.num_objects()))
            bad.push_back("entity " + std::to_string(i) + ": category out of range");
        if (!e.box.valid())
            bad.push_back("entity " + std::to_string(i) + ": invalid box");
        if (!(e.confidence >= 0.0 && e.confidence <= 1.0))
            bad.push_back("entity " + std::to_string(i) + ": confidence outside [0,1]");
    }
    std::set<std::pair<int, int>> seen_pairs;
    for (std::size_t k = 0; k < g.triplets.size(); ++k) {
        const Triplet& t = g.triplets[k];
        const std::string tag = "triplet " + std::to_string(k) + ": ";
        if (t.subject_index < 0 || t.subject_index >= n || t.object_index < 0 ||
            t.object_index >= n)
            bad.push_back(tag + "entity index out of range");
        if (t.subject_index == t.object_index)
            bad.push_back(tag + "subject equals object");
        if (t.predicate < 0 || t.predicate >= static_cast<int>(vocab.num_predicates()))
            bad.push_back(tag + "predicate out of range");
        if (t.score < 0.0 || !std::isfinite(t.score))
            bad.push_back(tag + "score must be finite and non-negative");
        if (unique_pairs && !seen_pairs.insert({t.subject_index, t.object_index}).second)
            bad.push_back(tag + "duplicate ordered (subject, object) pair");
    }
    return bad;
}

void rank_triplets(std::vector<Triplet>& triplets) {
    std::stable_sort(triplets.begin(), triplets.end(), [](const Triplet& a, const Triplet& b) {
        if (a.score != b.score) return a.score > b.score;
        if (a.subject_index != b.subject_index) return a.subject_index < b.subject_index;
        if (a.object_index != b.object_index) return a.object_index < b.object_index;
        return a.predicate < b.predicate;
    });
}

std::vector<Triplet> apply_graph_constraint(const std::vector<Triplet>& ranked) {
    std::vector<Triplet> out;
    out.reserve(ranked.size());
    std::set<std::pair<int, int>> taken;
    for (const Triplet& t : ranked)
        if (taken.insert({t.subject_index, t.object_index}).second) out.push_back(t);
    return out;
}

std::vector<std::size_t> match_triplets(const std::vector<Entity>& predicted_entities,
                                        const std::vector<Triplet>& predicted_ranked,
                                        const SceneGraph& truth,
                                        double iou_threshold,
                                        bool graph_constraint) {
    const std::vector<Triplet>& pool =
        graph_constraint ? apply_graph_constraint(predicted_ranked) : predicted_ranked;
    std::vector<bool> used(truth.triplets.size(), false);
    std::vector<std::size_t> matched;
    for (const Triplet& p : pool) {
        const Entity& ps = predicted_entities.at(static_cast<std::size_t>(p.subject_index));
        const Entity& po = predicted_entities.at(static_cast<std::size_t>(p.object_index));
        for (std::size_t k = 0; k < truth.triplets.size(); ++k) {
            if (used[k]) continue;
            const Triplet& t = truth.triplets[k];
            if (t.predicate != p.predicate) continue;
            const Entity& ts = truth.entities.at(static_cast<std::size_t>(t.subject_index));
            const Entity& to = truth.entities.at(static_cast<std::size_t>(t.object_index));
            if (ps.category != ts.category || po.category != to.category) continue;
            if (iou(ps.box, ts.box) < iou_threshold || iou(po.box, to.box) < iou_threshold)
                continue;
            used[k] = true;
            matched.push_back(k);
            break;
        }
    }
    return matched;
}

}  // namespace cmat
