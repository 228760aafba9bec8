#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <set>

#include "cmat/graph.hpp"
#include "cmat/rng.hpp"

using namespace cmat;

namespace {

Box random_box(Rng& rng) {
    const double w = rng.uniform(0.05, 0.5);
    const double h = rng.uniform(0.05, 0.5);
    Box b;
    b.x1 = rng.uniform(0.0, 1.0 - w);
    b.y1 = rng.uniform(0.0, 1.0 - h);
    b.x2 = b.x1 + w;
    b.y2 = b.y1 + h;
    return b;
}

// Independent matcher: for each prediction in order, scan truths by index and
// consume the first compatible unmatched one. Deliberately naive.
std::set<std::size_t> oracle_match(const std::vector<Entity>& pred_entities,
                                   const std::vector<Triplet>& ranked, const SceneGraph& truth,
                                   double thr) {
    std::set<std::size_t> used;
    for (const Triplet& p : ranked) {
        for (std::size_t k = 0; k < truth.triplets.size(); ++k) {
            if (used.count(k)) continue;
            const Triplet& t = truth.triplets[k];
            const Entity& ps = pred_entities[static_cast<std::size_t>(p.subject_index)];
            const Entity& po = pred_entities[static_cast<std::size_t>(p.object_index)];
            const Entity& ts = truth.entities[static_cast<std::size_t>(t.subject_index)];
            const Entity& to = truth.entities[static_cast<std::size_t>(t.object_index)];
            const bool same = ps.category == ts.category && po.category == to.category &&
                              p.predicate == t.predicate && iou(ps.box, ts.box) >= thr &&
                              iou(po.box, to.box) >= thr;
            if (same) {
                used.insert(k);
                break;
            }
        }
    }
    return used;
}

}  // namespace

TEST_CASE("iou basics") {
    const Box a{0.1, 0.1, 0.4, 0.4};
    CHECK(iou(a, a) == doctest::Approx(1.0));
    const Box b{0.6, 0.6, 0.9, 0.9};
    CHECK(iou(a, b) == 0.0);

    // direct area arithmetic: inter = 0.1*0.1, union = 0.04 + 0.04 - 0.01
    const Box c{0.0, 0.0, 0.2, 0.2};
    const Box d{0.1, 0.1, 0.3, 0.3};
    const double inter = 0.1 * 0.1;
    const double uni = 0.04 + 0.04 - inter;
    CHECK(iou(c, d) == doctest::Approx(inter / uni));
    CHECK(iou(c, d) == doctest::Approx(1.0 / 7.0));
}

TEST_CASE("iou properties on random boxes") {
    Rng rng(11);
    for (int trial = 0; trial < 200; ++trial) {
        const Box a = random_box(rng);
        const Box b = random_box(rng);
        const double ab = iou(a, b);
        CHECK(ab == iou(b, a));
        CHECK(ab >= 0.0);
        CHECK(ab <= 1.0);
        CHECK(iou(a, a) == doctest::Approx(1.0));
    }
}

TEST_CASE("validate reports violations") {
    const Vocab vocab = Vocab::synthetic(5, 4);
    SceneGraph g;
    g.entities.push_back({1, Box{0.1, 0.1, 0.3, 0.3}, 1.0});
    g.entities.push_back({2, Box{0.5, 0.5, 0.7, 0.7}, 1.0});
    g.triplets.push_back({0, 1, 2, 1.0});
    CHECK(validate(g, vocab).empty());

    SceneGraph self = g;
    self.triplets.push_back({1, 1, 1, 1.0});
    const auto v1 = validate(self, vocab);
    REQUIRE(!v1.empty());
    CHECK(v1.front().find("subject equals object") != std::string::npos);

    SceneGraph bad_cat = g;
    bad_cat.entities[0].category = 5;  // == |C|
    CHECK(!validate(bad_cat, vocab).empty());

    SceneGraph dup = g;
    dup.triplets.push_back({0, 1, 3, 0.5});
    CHECK(!validate(dup, vocab).empty());
    CHECK(validate(dup, vocab, /*unique_pairs=*/false).empty());
}

TEST_CASE("ranking ties are deterministic") {
    std::vector<Triplet> ts = {{2, 1, 3, 0.5}, {0, 1, 2, 0.5}, {0, 1, 1, 0.5}, {1, 0, 1, 0.9}};
    rank_triplets(ts);
    CHECK(ts[0].score == 0.9);
    CHECK(ts[1].subject_index == 0);
    CHECK(ts[1].predicate == 1);
    CHECK(ts[2].predicate == 2);
    CHECK(ts[3].subject_index == 2);
}

TEST_CASE("graph constraint keeps one predicate per ordered pair") {
    std::vector<Triplet> ts = {{0, 1, 1, 0.9}, {0, 1, 2, 0.8}, {1, 0, 1, 0.7}, {0, 1, 3, 0.6}};
    const auto kept = apply_graph_constraint(ts);
    REQUIRE(kept.size() == 2);
    CHECK(kept[0].predicate == 1);
    CHECK(kept[1].subject_index == 1);
}

TEST_CASE("match_triplets identity and empty") {
    const Vocab vocab = Vocab::synthetic(6, 5);
    SceneGraph truth;
    Rng rng(3);
    for (int i = 0; i < 4; ++i) truth.entities.push_back({i + 1, random_box(rng), 1.0});
    truth.triplets = {{0, 1, 1, 1.0}, {1, 2, 2, 1.0}, {2, 3, 3, 1.0}};
    REQUIRE(validate(truth, vocab).empty());

    std::vector<Triplet> pred = truth.triplets;
    rank_triplets(pred);
    const auto matched = match_triplets(truth.entities, pred, truth, 0.5, true);
    CHECK(matched.size() == truth.triplets.size());

    CHECK(match_triplets(truth.entities, {}, truth, 0.5, true).empty());
}

TEST_CASE("match_triplets decoys ranked above real matches") {
    // 4 truth triplets; predictions contain 2 of them after 3 decoys
    Rng rng(5);
    SceneGraph truth;
    for (int i = 0; i < 5; ++i) truth.entities.push_back({i + 1, random_box(rng), 1.0});
    truth.triplets = {{0, 1, 1, 1.0}, {1, 2, 2, 1.0}, {2, 3, 3, 1.0}, {3, 4, 1, 1.0}};

    std::vector<Entity> pred_entities = truth.entities;
    std::vector<Triplet> pred = {
        {0, 2, 3, 0.99},  // decoy: wrong predicate for this pair
        {4, 0, 2, 0.98},  // decoy
        {1, 4, 3, 0.97},  // decoy
        {1, 2, 2, 0.90},  // real
        {3, 4, 1, 0.85},  // real
    };
    rank_triplets(pred);
    const auto matched = match_triplets(pred_entities, pred, truth, 0.5, true);
    const auto expected = oracle_match(pred_entities, pred, truth, 0.5);
    CHECK(matched.size() == 2);
    CHECK(std::set<std::size_t>(matched.begin(), matched.end()) == expected);
    CHECK(expected == std::set<std::size_t>{1, 3});
}

TEST_CASE("matcher agrees with oracle on random instances") {
    Rng rng(17);
    for (int trial = 0; trial < 100; ++trial) {
        const int n = 3 + static_cast<int>(rng.below(4));
        SceneGraph truth;
        for (int i = 0; i < n; ++i)
            truth.entities.push_back({1 + static_cast<int>(rng.below(4)), random_box(rng), 1.0});
        std::set<std::pair<int, int>> pairs;
        const int nt = 1 + static_cast<int>(rng.below(4));
        for (int k = 0; k < nt; ++k) {
            int s = static_cast<int>(rng.below(static_cast<std::uint64_t>(n)));
            int o = static_cast<int>(rng.below(static_cast<std::uint64_t>(n)));
            if (s == o || !pairs.insert({s, o}).second) continue;
            truth.triplets.push_back({s, o, 1 + static_cast<int>(rng.below(3)), 1.0});
        }

        std::vector<Entity> pred_entities = truth.entities;
        std::vector<Triplet> pred;
        for (int k = 0; k < 12; ++k) {
            int s = static_cast<int>(rng.below(static_cast<std::uint64_t>(n)));
            int o = static_cast<int>(rng.below(static_cast<std::uint64_t>(n)));
            if (s == o) continue;
            pred.push_back({s, o, 1 + static_cast<int>(rng.below(3)), rng.uniform()});
        }
        rank_triplets(pred);

        // constraint off: straight comparison against the naive oracle
        const auto got = match_triplets(pred_entities, pred, truth, 0.5, false);
        const auto expected = oracle_match(pred_entities, pred, truth, 0.5);
        CHECK(std::set<std::size_t>(got.begin(), got.end()) == expected);
        CHECK(got.size() <= std::min(pred.size(), truth.triplets.size()));

        // constraint on: result must match the oracle on the filtered list
        const auto filtered = apply_graph_constraint(pred);
        const auto got_c = match_triplets(pred_entities, pred, truth, 0.5, true);
        const auto expected_c = oracle_match(pred_entities, filtered, truth, 0.5);
        CHECK(std::set<std::size_t>(got_c.begin(), got_c.end()) == expected_c);
    }
}
