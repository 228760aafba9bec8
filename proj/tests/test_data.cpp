#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>

#include "cmat/data.hpp"
#include "cmat/errors.hpp"

using namespace cmat;
using data::SceneRecord;
using data::WorldSpec;

namespace {

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

int argmax(const std::vector<double>& v) {
    return static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
}

}  // namespace

TEST_CASE("contextual world passes its own validation") {
    const WorldSpec w = WorldSpec::contextual(13, 7, 16, 6.0, 0.3, 0.35, 1);
    w.check();
    CHECK(w.min_entities == 4);
    CHECK(w.max_entities == 8);
    // vocab carries background and no-relationship at index 0
    const Vocab v = w.vocab();
    CHECK(v.objects[0] == "bg");
    CHECK(v.predicates[0] == "none");
    CHECK(v.objects.size() == 13);
}

TEST_CASE("degenerate tables rejected") {
    WorldSpec w = WorldSpec::contextual(9, 5, 8, 4.0, 0.2, 0.3, 2);
    std::fill(w.cooc.begin() + 9, w.cooc.begin() + 18, 0.0);  // zero out row 1
    CHECK_THROWS_AS(w.check(), ValidationError);
    CHECK_THROWS_AS(data::generate(w, 5), ValidationError);
    CHECK_THROWS_AS(WorldSpec::contextual(9, 5, 8, 4.0, 0.7, 0.3, 2), ValidationError);
}

TEST_CASE("clean world: initial argmax equals ground truth") {
    const WorldSpec w = WorldSpec::contextual(13, 7, 12, 5.0, 0.0, 0.0, 3);
    const auto records = data::generate(w, 50);
    for (const SceneRecord& rec : records)
        for (std::size_t i = 0; i < rec.truth.entities.size(); ++i)
            CHECK(argmax(rec.input.init_logits[i]) == rec.truth.entities[i].category);
}

TEST_CASE("generated ground truth always validates") {
    const WorldSpec w = WorldSpec::contextual(13, 7, 12, 6.0, 0.3, 0.4, 4);
    const Vocab vocab = w.vocab();
    const auto records = data::generate(w, 200);
    for (const SceneRecord& rec : records) {
        CHECK(validate(rec.truth, vocab).empty());
        CHECK(rec.input.size() >= w.min_entities);
        CHECK(rec.input.size() <= w.max_entities);
        for (const Entity& e : rec.truth.entities) CHECK(e.category != 0);
    }
}

TEST_CASE("mean entities within 20 percent of configured mean") {
    const WorldSpec w = WorldSpec::contextual(13, 7, 8, 6.0, 0.3, 0.35, 5);
    const auto records = data::generate(w, 1000);
    double mean = 0.0;
    for (const SceneRecord& rec : records) mean += rec.input.size();
    mean /= static_cast<double>(records.size());
    CHECK(mean > 6.0 * 0.8);
    CHECK(mean < 6.0 * 1.2);
}

TEST_CASE("corruption rate matches the wrong-argmax fraction") {
    for (double c : {0.15, 0.3, 0.45}) {
        const WorldSpec w = WorldSpec::contextual(13, 7, 8, 6.0, c, 0.35, 6);
        const auto records = data::generate(w, 800);
        int wrong = 0, total = 0;
        for (const SceneRecord& rec : records)
            for (std::size_t i = 0; i < rec.truth.entities.size(); ++i) {
                wrong += argmax(rec.input.init_logits[i]) != rec.truth.entities[i].category;
                ++total;
            }
        const double frac = static_cast<double>(wrong) / total;
        const double sigma = std::sqrt(c * (1.0 - c) / total);
        CHECK(std::fabs(frac - c) <= 3.0 * sigma);
    }
}

TEST_CASE("serialization round trip and determinism") {
    const WorldSpec w = WorldSpec::contextual(9, 5, 6, 4.0, 0.25, 0.3, 7);
    const Vocab vocab = w.vocab();
    const auto records = data::generate(w, 40);
    const auto records2 = data::generate(w, 40);

    const auto dir = std::filesystem::temp_directory_path();
    const std::string p1 = (dir / "cmat_data_1.jsonl").string();
    const std::string p2 = (dir / "cmat_data_2.jsonl").string();
    data::save(records, p1);
    data::save(records2, p2);
    CHECK(slurp(p1) == slurp(p2));  // same seed, identical bytes

    const auto loaded = data::load(p1, vocab);
    REQUIRE(loaded.size() == records.size());
    const std::string p3 = (dir / "cmat_data_3.jsonl").string();
    data::save(loaded, p3);
    CHECK(slurp(p1) == slurp(p3));  // save -> load -> save identity

    for (std::size_t k = 0; k < loaded.size(); ++k) {
        CHECK(loaded[k].id == records[k].id);
        CHECK(loaded[k].input.features == records[k].input.features);
        CHECK(loaded[k].input.pair_features == records[k].input.pair_features);
        CHECK(loaded[k].truth.triplets.size() == records[k].truth.triplets.size());
    }

    std::filesystem::remove(p1);
    std::filesystem::remove(p2);
    std::filesystem::remove(p3);
}

TEST_CASE("malformed and truncated files reported with line numbers") {
    const WorldSpec w = WorldSpec::contextual(9, 5, 6, 4.0, 0.25, 0.3, 8);
    const Vocab vocab = w.vocab();
    const auto records = data::generate(w, 5);
    const auto dir = std::filesystem::temp_directory_path();
    const std::string path = (dir / "cmat_data_bad.jsonl").string();
    data::save(records, path);

    // truncate mid-record
    std::string bytes = slurp(path);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << bytes.substr(0, bytes.size() - bytes.size() / 3);
    out.close();
    try {
        (void)data::load(path, vocab);
        FAIL("expected ValidationError");
    } catch (const ValidationError& e) {
        CHECK(std::string(e.what()).find("line") != std::string::npos);
    }

    // wrong vocab size: logits length mismatch
    const Vocab small = Vocab::synthetic(5, 5);
    data::save(records, path);
    CHECK_THROWS_AS((void)data::load(path, small), ValidationError);
    std::filesystem::remove(path);
}

TEST_CASE("vocab file round trip") {
    const Vocab vocab = Vocab::synthetic(7, 4);
    const auto dir = std::filesystem::temp_directory_path();
    const std::string path = (dir / "cmat_vocab.json").string();
    data::save_vocab(vocab, path);
    const Vocab loaded = data::load_vocab(path);
    CHECK(loaded.objects == vocab.objects);
    CHECK(loaded.predicates == vocab.predicates);
    std::filesystem::remove(path);
}

TEST_CASE("split is disjoint, exhaustive and deterministic") {
    const WorldSpec w = WorldSpec::contextual(9, 5, 6, 4.0, 0.25, 0.3, 9);
    const auto records = data::generate(w, 100);

    const auto all = data::split(records, 1.0, 0.0, 0.0, 11);
    CHECK(all.train.size() == 100);
    CHECK(all.val.empty());
    CHECK(all.test.empty());

    const auto s1 = data::split(records, 0.7, 0.15, 0.15, 11);
    const auto s2 = data::split(records, 0.7, 0.15, 0.15, 11);
    CHECK(s1.train.size() == 70);
    CHECK(s1.val.size() == 15);
    CHECK(s1.test.size() == 15);

    std::set<std::int64_t> seen;
    for (const auto* part : {&s1.train, &s1.val, &s1.test})
        for (const SceneRecord& r : *part) CHECK(seen.insert(r.id).second);
    CHECK(seen.size() == 100);

    for (std::size_t k = 0; k < s1.train.size(); ++k)
        CHECK(s1.train[k].id == s2.train[k].id);

    const auto s3 = data::split(records, 0.7, 0.15, 0.15, 12);
    bool same = true;
    for (std::size_t k = 0; k < s1.train.size(); ++k) same &= s1.train[k].id == s3.train[k].id;
    CHECK_FALSE(same);

    CHECK_THROWS_AS(data::split(records, 0.5, 0.2, 0.2, 1), ValidationError);
    CHECK_THROWS_AS(data::split({}, 1.0, 0.0, 0.0, 1), ValidationError);
}
