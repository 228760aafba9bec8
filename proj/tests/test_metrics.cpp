#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <numeric>

#include "cmat/errors.hpp"
#include "cmat/metrics.hpp"
#include "cmat/rng.hpp"

using namespace cmat;

namespace {

Box unit_box(int i) {
    // disjoint small boxes along the diagonal
    const double step = 0.09;
    const double x = 0.01 + step * i;
    return Box{x, x, x + 0.08, x + 0.08};
}

SceneGraph chain_truth(int n_entities, int n_triplets) {
    SceneGraph g;
    for (int i = 0; i < n_entities; ++i) g.entities.push_back({i + 1, unit_box(i), 1.0});
    for (int k = 0; k < n_triplets; ++k)
        g.triplets.push_back({k, k + 1, 1 + (k % 3), 1.0});
    return g;
}

SceneGraph permuted(const SceneGraph& g, const std::vector<int>& perm) {
    SceneGraph out;
    out.entities.resize(g.entities.size());
    for (std::size_t i = 0; i < g.entities.size(); ++i)
        out.entities[static_cast<std::size_t>(perm[i])] = g.entities[i];
    for (const Triplet& t : g.triplets) {
        Triplet q = t;
        q.subject_index = perm[static_cast<std::size_t>(t.subject_index)];
        q.object_index = perm[static_cast<std::size_t>(t.object_index)];
        out.triplets.push_back(q);
    }
    return out;
}

}  // namespace

TEST_CASE("metric string parsing") {
    const RewardSpec r = parse_metric("recall@20");
    CHECK(r.kind == MetricKind::Recall);
    CHECK(r.k == 20);
    const RewardSpec s = parse_metric("spice@7", false);
    CHECK(s.kind == MetricKind::Spice);
    CHECK(s.k == 7);
    CHECK_FALSE(s.graph_constraint);
    CHECK_THROWS_AS(parse_metric("recall20"), UsageError);
    CHECK_THROWS_AS(parse_metric("meanrank@5"), UsageError);
    CHECK_THROWS_AS(parse_metric("recall@x"), UsageError);
    CHECK_THROWS_AS(parse_metric("recall@0"), UsageError);
    CHECK(metric_name(r) == "recall@20");
}

TEST_CASE("recall on identity and empty predictions") {
    const SceneGraph truth = chain_truth(6, 5);
    RewardSpec spec = parse_metric("recall@20");
    SceneGraph pred = truth;
    CHECK(recall_at_k(pred, truth, spec) == doctest::Approx(1.0));

    SceneGraph empty;
    empty.entities = truth.entities;
    CHECK(recall_at_k(empty, truth, spec) == doctest::Approx(0.0));

    SceneGraph no_truth;
    no_truth.entities = truth.entities;
    CHECK(recall_at_k(pred, no_truth, spec) == doctest::Approx(0.0));
    CHECK(recall_at_k(no_truth, no_truth, spec) == doctest::Approx(1.0));
}

TEST_CASE("recall counts only top-k matches") {
    // 4 truth triplets; exactly 2 land inside the top-k window
    const SceneGraph truth = chain_truth(5, 4);
    SceneGraph pred;
    pred.entities = truth.entities;
    // 2 real triplets, high rank
    pred.triplets.push_back({0, 1, 1, 0.9});
    pred.triplets.push_back({1, 2, 2, 0.8});
    // the other 2 true ones ranked below k decoys
    for (int k = 0; k < 20; ++k) pred.triplets.push_back({0, 2, 1 + (k % 3), 0.5});
    pred.triplets.push_back({2, 3, 3, 0.1});
    pred.triplets.push_back({3, 4, 1, 0.05});

    RewardSpec spec = parse_metric("recall@20", false);
    CHECK(recall_at_k(pred, truth, spec) == doctest::Approx(0.5));

    // with k large enough everything matches
    spec.k = 100;
    CHECK(recall_at_k(pred, truth, spec) == doctest::Approx(1.0));
}

TEST_CASE("recall monotone in k") {
    Rng rng(23);
    const SceneGraph truth = chain_truth(6, 5);
    SceneGraph pred;
    pred.entities = truth.entities;
    for (int i = 0; i < 6; ++i)
        for (int j = 0; j < 6; ++j) {
            if (i == j) continue;
            for (int r = 1; r <= 3; ++r) pred.triplets.push_back({i, j, r, rng.uniform()});
        }
    double prev = 0.0;
    for (int k = 1; k <= 50; ++k) {
        RewardSpec spec = parse_metric("recall@" + std::to_string(k));
        const double v = recall_at_k(pred, truth, spec);
        CHECK(v >= prev);
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
        prev = v;
    }
}

TEST_CASE("spice harmonic mean") {
    const SceneGraph truth = chain_truth(9, 8);
    RewardSpec spec = parse_metric("spice@4", false);

    SceneGraph pred;
    pred.entities = truth.entities;
    // top-4 predictions with exactly 2 matches -> precision 0.5, recall 2/8 = 0.25
    pred.triplets.push_back({0, 1, 1, 0.9});
    pred.triplets.push_back({1, 2, 2, 0.8});
    pred.triplets.push_back({0, 2, 3, 0.7});
    pred.triplets.push_back({0, 3, 3, 0.6});
    const double p = 0.5, r = 0.25;
    CHECK(spice(pred, truth, spec) == doctest::Approx(2 * p * r / (p + r)));
    CHECK(spice(pred, truth, spec) == doctest::Approx(1.0 / 3.0));

    SceneGraph perfect = truth;
    spec.k = 20;
    CHECK(spice(perfect, truth, spec) == doctest::Approx(1.0));

    SceneGraph none;
    none.entities = truth.entities;
    none.triplets.push_back({0, 2, 3, 0.9});
    CHECK(spice(none, truth, spec) == doctest::Approx(0.0));
}

TEST_CASE("spice bounds") {
    Rng rng(31);
    const SceneGraph truth = chain_truth(5, 4);
    for (int trial = 0; trial < 50; ++trial) {
        SceneGraph pred;
        pred.entities = truth.entities;
        const int np = 1 + static_cast<int>(rng.below(10));
        for (int k = 0; k < np; ++k) {
            int s = static_cast<int>(rng.below(5));
            int o = static_cast<int>(rng.below(5));
            if (s == o) continue;
            pred.triplets.push_back({s, o, 1 + static_cast<int>(rng.below(3)), rng.uniform()});
        }
        RewardSpec spec = parse_metric("spice@5", false);
        const double v = spice(pred, truth, spec);
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }
}

TEST_CASE("reward dispatch and the local-sensitivity toy") {
    RewardSpec spec = parse_metric("recall@20");
    const SceneGraph truth = chain_truth(6, 4);
    CHECK(reward(truth, truth, spec) == doctest::Approx(1.0));

    RewardSpec sp = parse_metric("spice@20");
    SceneGraph disjoint;
    disjoint.entities = truth.entities;
    disjoint.triplets.push_back({5, 0, 3, 1.0});
    CHECK(reward(disjoint, truth, sp) == doctest::Approx(0.0));

    // toy scene: hub node 'a' with 4 edges; relabeling only 'a' flips
    // 3-right/1-wrong into 1-right/3-wrong
    SceneGraph toy_truth;
    for (int i = 0; i < 5; ++i) toy_truth.entities.push_back({i + 1, unit_box(i), 1.0});
    toy_truth.triplets = {{0, 1, 1, 1.0}, {0, 2, 1, 1.0}, {0, 3, 2, 1.0}, {4, 1, 2, 1.0}};

    SceneGraph good = toy_truth;  // hub right: edges 0,1,2 survive; entity 4 wrong breaks edge 3
    good.entities[4].category = 3;
    RewardSpec k4 = parse_metric("recall@4");
    const double r_good = reward(good, toy_truth, k4);

    SceneGraph bad = toy_truth;  // hub mislabeled: its 3 edges break, edge 3 survives
    bad.entities[0].category = 4;
    const double r_bad = reward(bad, toy_truth, k4);

    CHECK(r_good == doctest::Approx(0.75));
    CHECK(r_bad == doctest::Approx(0.25));
}

TEST_CASE("metrics invariant under consistent entity permutation") {
    Rng rng(41);
    const SceneGraph truth = chain_truth(6, 5);
    SceneGraph pred;
    pred.entities = truth.entities;
    for (int k = 0; k < 15; ++k) {
        int s = static_cast<int>(rng.below(6));
        int o = static_cast<int>(rng.below(6));
        if (s == o) continue;
        pred.triplets.push_back({s, o, 1 + static_cast<int>(rng.below(3)), rng.uniform()});
    }
    std::vector<int> perm(6);
    std::iota(perm.begin(), perm.end(), 0);
    for (int trial = 0; trial < 20; ++trial) {
        for (std::size_t i = perm.size(); i > 1; --i)
            std::swap(perm[i - 1], perm[rng.below(i)]);
        const SceneGraph p2 = permuted(pred, perm);
        const SceneGraph t2 = permuted(truth, perm);
        for (const char* name : {"recall@3", "recall@20", "spice@5"}) {
            const RewardSpec spec = parse_metric(name);
            CHECK(reward(pred, truth, spec) == doctest::Approx(reward(p2, t2, spec)));
        }
    }
}
