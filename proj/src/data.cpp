#include "cmat/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "cmat/errors.hpp"
#include "cmat/rng.hpp"

namespace cmat::data {

namespace {

void normalize_row(double* row, int n) {
    double s = 0.0;
    for (int i = 0; i < n; ++i) s += row[i];
    if (s <= 0.0) return;
    for (int i = 0; i < n; ++i) row[i] /= s;
}

int group_of(int category, int groups) { return (category - 1) % groups; }
int slot_of(int category, int groups) { return (category - 1) / groups; }

}  // namespace

WorldSpec WorldSpec::contextual(int num_classes, int num_predicates, int feature_dim,
                                double mean_entities, double corruption, double feature_noise,
                                std::uint64_t seed) {
    if (num_classes < 4 || num_predicates < 2)
        throw ValidationError("world: need >= 4 object classes and >= 2 predicates");
    if (!(corruption >= 0.0 && corruption < 0.6))
        throw ValidationError("world: corruption rate must lie in [0, 0.6)");
    if (mean_entities < 2.0) throw ValidationError("world: mean entities must be >= 2");

    WorldSpec w;
    w.num_classes = num_classes;
    w.num_predicates = num_predicates;
    w.feature_dim = feature_dim;
    w.feature_noise = feature_noise;
    w.corruption = corruption;
    w.seed = seed;
    const int m = static_cast<int>(std::lround(mean_entities));
    w.min_entities = std::max(2, m - 2);
    w.max_entities = m + 2;

    const int C = num_classes, R = num_predicates, d = feature_dim;
    const int real = C - 1;
    const int groups = std::min(3, real);  // co-occurrence groups

    // Co-occurrence: same-group categories dominate a scene.
    w.cooc.assign(static_cast<std::size_t>(C) * C, 0.0);
    for (int a = 1; a < C; ++a) {
        double* row = w.cooc.data() + static_cast<std::size_t>(a) * C;
        const int ga = group_of(a, groups);
        for (int c = 1; c < C; ++c)
            row[c] = (group_of(c, groups) == ga) ? 1.0 : 0.15 / groups;
        normalize_row(row, C);
    }

    // Predicates: same-group pairs are frequently related, cross-group rarely;
    // the dominant predicate depends on the slot pair.
    w.pred_given.assign(static_cast<std::size_t>(C) * C * R, 0.0);
    for (int a = 0; a < C; ++a) {
        for (int b = 0; b < C; ++b) {
            double* row = w.pred_given.data() + (static_cast<std::size_t>(a) * C + b) * R;
            if (a == 0 || b == 0 || a == b) {
                row[0] = 1.0;
                continue;
            }
            const bool same_group = group_of(a, groups) == group_of(b, groups);
            const int dom = 1 + (2 * slot_of(a, groups) + slot_of(b, groups)) % (R - 1);
            if (same_group) {
                row[0] = 0.55;
                row[dom] += 0.35;
                for (int r = 1; r < R; ++r) row[r] += 0.10 / (R - 1);
            } else {
                row[0] = 0.92;
                row[dom] += 0.04;
                for (int r = 1; r < R; ++r) row[r] += 0.04 / (R - 1);
            }
            normalize_row(row, R);
        }
    }

    // Confusion: mass off the diagonal goes to the same slot in other groups.
    w.confusion.assign(static_cast<std::size_t>(C) * C, 0.0);
    w.confusion[0] = 1.0;  // background row (never sampled by generate)
    for (int c = 1; c < C; ++c) {
        double* row = w.confusion.data() + static_cast<std::size_t>(c) * C;
        std::vector<int> mates;
        for (int o = 1; o < C; ++o)
            if (o != c && slot_of(o, groups) == slot_of(c, groups)) mates.push_back(o);
        row[c] = 1.0 - corruption;
        if (mates.empty())
            row[c] = 1.0;
        else
            for (int o : mates) row[o] = corruption / static_cast<double>(mates.size());
        normalize_row(row, C);
    }

    // Prototypes: slots fix the main direction, groups add a weaker offset, so
    // a single noisy feature rarely identifies the group on its own.
    Rng rng(mix_seed(seed, 0x776f726c));  // "worl"
    std::vector<double> slot_dir(static_cast<std::size_t>(real) * d);
    std::vector<double> group_dir(static_cast<std::size_t>(groups) * d);
    for (double& x : slot_dir) x = rng.normal();
    for (double& x : group_dir) x = rng.normal();
    w.proto.assign(static_cast<std::size_t>(C) * d, 0.0);
    for (int c = 1; c < C; ++c) {
        double* row = w.proto.data() + static_cast<std::size_t>(c) * d;
        const double* sd = slot_dir.data() + static_cast<std::size_t>(slot_of(c, groups)) * d;
        const double* gd = group_dir.data() + static_cast<std::size_t>(group_of(c, groups)) * d;
        for (int k = 0; k < d; ++k) row[k] = 0.8 * sd[k] + 0.4 * gd[k];
    }
    w.pred_proto.assign(static_cast<std::size_t>(R) * d, 0.0);
    for (int r = 1; r < R; ++r) {
        double* row = w.pred_proto.data() + static_cast<std::size_t>(r) * d;
        for (int k = 0; k < d; ++k) row[k] = rng.normal();
    }

    w.check();
    return w;
}

void WorldSpec::check() const {
    const int C = num_classes, R = num_predicates;
    if (C < 2 || R < 2) throw ValidationError("world: vocab sizes must be >= 2");
    auto check_rows = [](const std::vector<double>& t, int rows, int cols, int first_row,
                         const std::string& name) {
        if (t.size() != static_cast<std::size_t>(rows) * cols)
            throw ValidationError("world: table " + name + " has wrong size");
        for (int r = first_row; r < rows; ++r) {
            double s = 0.0;
            for (int c = 0; c < cols; ++c) {
                const double v = t[static_cast<std::size_t>(r) * cols + c];
                if (v < 0.0 || !std::isfinite(v))
                    throw ValidationError("world: table " + name + " has negative entries");
                s += v;
            }
            if (s <= 1e-12)
                throw ValidationError("world: table " + name + " row " + std::to_string(r) +
                                      " is all zero");
            if (std::fabs(s - 1.0) > 1e-9)
                throw ValidationError("world: table " + name + " row " + std::to_string(r) +
                                      " is not normalized");
        }
    };
    check_rows(cooc, C, C, 1, "cooc");
    check_rows(confusion, C, C, 1, "confusion");
    check_rows(pred_given, C * C, R, 0, "pred_given");
    if (proto.size() != static_cast<std::size_t>(C) * feature_dim ||
        pred_proto.size() != static_cast<std::size_t>(R) * feature_dim)
        throw ValidationError("world: prototype tables have wrong size");
    if (min_entities < 1 || max_entities < min_entities)
        throw ValidationError("world: bad entities-per-scene range");
}

std::vector<SceneRecord> generate(const WorldSpec& world, int count) {
    world.check();
    if (count < 1) throw ValidationError("generate: scene count must be >= 1");
    const int C = world.num_classes, R = world.num_predicates, d = world.feature_dim;

    std::vector<SceneRecord> out;
    out.reserve(static_cast<std::size_t>(count));
    for (int s = 0; s < count; ++s) {
        Rng rng(mix_seed(world.seed, 0x5ce4e, static_cast<std::uint64_t>(s)));
        SceneRecord rec;
        rec.id = s;
        const int n = world.min_entities +
                      static_cast<int>(rng.below(
                          static_cast<std::uint64_t>(world.max_entities - world.min_entities + 1)));

        // categories: anchor then co-occurrence-driven companions
        std::vector<int> cats(static_cast<std::size_t>(n));
        const int anchor = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(C - 1)));
        cats[0] = anchor;
        for (int i = 1; i < n; ++i) {
            const double* row = world.cooc.data() + static_cast<std::size_t>(anchor) * C;
            double u = rng.uniform(), acc = 0.0;
            int c = C - 1;
            for (int k = 0; k < C; ++k) {
                acc += row[k];
                if (u < acc) {
                    c = k;
                    break;
                }
            }
            cats[static_cast<std::size_t>(i)] = c;
        }

        // boxes: random, normalized, non-degenerate
        rec.input.boxes.resize(static_cast<std::size_t>(n));
        for (auto& b : rec.input.boxes) {
            const double w = rng.uniform(0.08, 0.30), h = rng.uniform(0.08, 0.30);
            b.x1 = rng.uniform(0.0, 1.0 - w);
            b.y1 = rng.uniform(0.0, 1.0 - h);
            b.x2 = b.x1 + w;
            b.y2 = b.y1 + h;
        }

        // features and corrupted initial logits
        rec.input.features.resize(static_cast<std::size_t>(n));
        rec.input.init_logits.resize(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) {
            const int c = cats[static_cast<std::size_t>(i)];
            auto& f = rec.input.features[static_cast<std::size_t>(i)];
            f.resize(static_cast<std::size_t>(d));
            const double* pr = world.proto.data() + static_cast<std::size_t>(c) * d;
            for (int k = 0; k < d; ++k) f[static_cast<std::size_t>(k)] =
                pr[k] + world.feature_noise * rng.normal();

            const double* conf_row = world.confusion.data() + static_cast<std::size_t>(c) * C;
            double u = rng.uniform(), acc = 0.0;
            int observed = c;
            for (int k = 0; k < C; ++k) {
                acc += conf_row[k];
                if (u < acc) {
                    observed = k;
                    break;
                }
            }
            auto& lg = rec.input.init_logits[static_cast<std::size_t>(i)];
            lg.resize(static_cast<std::size_t>(C));
            for (int k = 0; k < C; ++k)
                lg[static_cast<std::size_t>(k)] =
                    std::log(world.confusion[static_cast<std::size_t>(k) * C + observed] + 0.01);
        }

        // ground-truth triplets and matching pair features
        rec.input.pair_features.resize(static_cast<std::size_t>(model::pair_count(n)));
        for (int i = 0; i < n; ++i) {
            for (int j = 0; j < n; ++j) {
                if (j == i) continue;
                const int ci = cats[static_cast<std::size_t>(i)];
                const int cj = cats[static_cast<std::size_t>(j)];
                const double* row =
                    world.pred_given.data() + (static_cast<std::size_t>(ci) * C + cj) * R;
                double u = rng.uniform(), acc = 0.0;
                int r = 0;
                for (int k = 0; k < R; ++k) {
                    acc += row[k];
                    if (u < acc) {
                        r = k;
                        break;
                    }
                }
                if (r > 0) {
                    Triplet t;
                    t.subject_index = i;
                    t.object_index = j;
                    t.predicate = r;
                    t.score = 1.0;
                    rec.truth.triplets.push_back(t);
                }
                auto& pf =
                    rec.input.pair_features[static_cast<std::size_t>(model::pair_index(i, j, n))];
                pf.resize(static_cast<std::size_t>(d));
                const double* pp = world.pred_proto.data() + static_cast<std::size_t>(r) * d;
                for (int k = 0; k < d; ++k)
                    pf[static_cast<std::size_t>(k)] = pp[k] + world.feature_noise * rng.normal();
            }
        }

        rec.truth.entities.reserve(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) {
            Entity ent;
            ent.category = cats[static_cast<std::size_t>(i)];
            ent.box = rec.input.boxes[static_cast<std::size_t>(i)];
            ent.confidence = 1.0;
            rec.truth.entities.push_back(ent);
        }
        out.push_back(std::move(rec));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Serialization

namespace {

nlohmann::json record_to_json(const SceneRecord& rec) {
    nlohmann::json j;
    j["id"] = rec.id;
    nlohmann::json ents = nlohmann::json::array();
    for (std::size_t i = 0; i < rec.truth.entities.size(); ++i) {
        const Entity& e = rec.truth.entities[i];
        ents.push_back({{"category", e.category},
                        {"box", {e.box.x1, e.box.y1, e.box.x2, e.box.y2}},
                        {"feature", rec.input.features[i]},
                        {"logits", rec.input.init_logits[i]}});
    }
    j["entities"] = ents;
    nlohmann::json pairs = nlohmann::json::array();
    const int n = static_cast<int>(rec.truth.entities.size());
    for (int i = 0; i < n; ++i)
        for (int k = 0; k < n; ++k) {
            if (k == i) continue;
            pairs.push_back(
                {i, k, rec.input.pair_features[static_cast<std::size_t>(model::pair_index(i, k, n))]});
        }
    j["pairs"] = pairs;
    nlohmann::json trips = nlohmann::json::array();
    for (const Triplet& t : rec.truth.triplets)
        trips.push_back({t.subject_index, t.object_index, t.predicate});
    j["triplets"] = trips;
    return j;
}

SceneRecord record_from_json(const nlohmann::json& j, const Vocab& vocab, int line_no) {
    const std::string where = "dataset line " + std::to_string(line_no) + ": ";
    SceneRecord rec;
    try {
        rec.id = j.at("id").get<std::int64_t>();
        const auto& ents = j.at("entities");
        const int n = static_cast<int>(ents.size());
        if (n < 1) throw ValidationError(where + "scene has no entities");
        for (const auto& ej : ents) {
            Entity e;
            e.category = ej.at("category").get<int>();
            const auto& b = ej.at("box");
            e.box = Box{b.at(0).get<double>(), b.at(1).get<double>(), b.at(2).get<double>(),
                        b.at(3).get<double>()};
            e.confidence = 1.0;
            rec.truth.entities.push_back(e);
            rec.input.boxes.push_back(e.box);
            rec.input.features.push_back(ej.at("feature").get<std::vector<double>>());
            rec.input.init_logits.push_back(ej.at("logits").get<std::vector<double>>());
        }
        rec.input.pair_features.resize(static_cast<std::size_t>(model::pair_count(n)));
        for (const auto& pj : j.at("pairs")) {
            const int a = pj.at(0).get<int>();
            const int b = pj.at(1).get<int>();
            if (a < 0 || a >= n || b < 0 || b >= n || a == b)
                throw ValidationError(where + "pair indices out of range");
            rec.input.pair_features[static_cast<std::size_t>(model::pair_index(a, b, n))] =
                pj.at(2).get<std::vector<double>>();
        }
        for (const auto& tj : j.at("triplets")) {
            Triplet t;
            t.subject_index = tj.at(0).get<int>();
            t.object_index = tj.at(1).get<int>();
            t.predicate = tj.at(2).get<int>();
            t.score = 1.0;
            rec.truth.triplets.push_back(t);
        }
    } catch (const nlohmann::json::exception& ex) {
        throw ValidationError(where + "malformed record: " + ex.what());
    }
    const auto violations = validate(rec.truth, vocab);
    if (!violations.empty())
        throw ValidationError(where + "invalid ground truth: " + violations.front());
    for (const Entity& e : rec.truth.entities)
        if (e.category == 0) throw ValidationError(where + "background entity in ground truth");
    return rec;
}

}  // namespace

void save(const std::vector<SceneRecord>& records, const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw ValidationError("dataset: cannot open " + path + " for writing");
    for (const SceneRecord& rec : records) out << record_to_json(rec).dump() << "\n";
    if (!out) throw ValidationError("dataset: short write to " + path);
}

std::vector<SceneRecord> load(const std::string& path, const Vocab& vocab) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("dataset: cannot open " + path);
    std::vector<SceneRecord> out;
    std::string line;
    int line_no = 0;
    std::size_t feature_dim = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const std::exception& ex) {
            throw ValidationError("dataset line " + std::to_string(line_no) + ": bad JSON: " +
                                  ex.what());
        }
        SceneRecord rec = record_from_json(j, vocab, line_no);
        for (const auto& f : rec.input.features) {
            if (feature_dim == 0) feature_dim = f.size();
            if (f.size() != feature_dim)
                throw ValidationError("dataset line " + std::to_string(line_no) +
                                      ": inconsistent feature dimension");
        }
        for (const auto& lg : rec.input.init_logits)
            if (lg.size() != vocab.num_objects())
                throw ValidationError("dataset line " + std::to_string(line_no) +
                                      ": logits length != vocab size");
        out.push_back(std::move(rec));
    }
    return out;
}

void save_vocab(const Vocab& vocab, const std::string& path) {
    nlohmann::json j;
    j["objects"] = vocab.objects;
    j["predicates"] = vocab.predicates;
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw ValidationError("vocab: cannot open " + path + " for writing");
    out << j.dump(2) << "\n";
}

Vocab load_vocab(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("vocab: cannot open " + path);
    nlohmann::json j;
    try {
        in >> j;
        Vocab v;
        v.objects = j.at("objects").get<std::vector<std::string>>();
        v.predicates = j.at("predicates").get<std::vector<std::string>>();
        if (v.objects.empty() || v.predicates.empty())
            throw ValidationError("vocab: empty category lists in " + path);
        return v;
    } catch (const nlohmann::json::exception& ex) {
        throw ValidationError("vocab: malformed file " + path + ": " + ex.what());
    }
}

SplitResult split(const std::vector<SceneRecord>& records, double f_train, double f_val,
                  double f_test, std::uint64_t seed) {
    if (records.empty()) throw ValidationError("split: empty input");
    if (std::fabs(f_train + f_val + f_test - 1.0) > 1e-9)
        throw ValidationError("split: fractions must sum to 1");
    const std::size_t n = records.size();
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    Rng rng(mix_seed(seed, 0x5714));
    for (std::size_t i = n; i > 1; --i) {
        const std::size_t j = rng.below(i);
        std::swap(idx[i - 1], idx[j]);
    }
    const auto n_train = static_cast<std::size_t>(std::llround(f_train * static_cast<double>(n)));
    auto n_val = static_cast<std::size_t>(std::llround(f_val * static_cast<double>(n)));
    if (n_train + n_val > n) n_val = n - n_train;
    SplitResult res;
    for (std::size_t i = 0; i < n; ++i) {
        const SceneRecord& r = records[idx[i]];
        if (i < n_train)
            res.train.push_back(r);
        else if (i < n_train + n_val)
            res.val.push_back(r);
        else
            res.test.push_back(r);
    }
    return res;
}

}  // namespace cmat::data
