#include "cmat/cli.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>

#include <CLI11.hpp>
#include <json.hpp>

#include "cmat/data.hpp"
#include "cmat/errors.hpp"
#include "cmat/kernels.hpp"
#include "cmat/metrics.hpp"
#include "cmat/training.hpp"

namespace cmat::cli {

namespace {

constexpr const char* kVersion = "cmat 0.1.0";

std::string fnv1a_digest(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("digest: cannot open " + path);
    std::uint64_t h = 1469598103934665603ULL;
    char buf[1 << 15];
    while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
        const std::streamsize got = in.gcount();
        for (std::streamsize i = 0; i < got; ++i) {
            h ^= static_cast<unsigned char>(buf[i]);
            h *= 1099511628211ULL;
        }
        if (!in) break;
    }
    char out[20];
    std::snprintf(out, sizeof(out), "fnv1a:%016llx", static_cast<unsigned long long>(h));
    return out;
}

std::string now_iso8601() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    char buf[32];
    std::tm tmv{};
    gmtime_r(&t, &tmv);
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tmv);
    return buf;
}

// Run manifest: written with status "running" before any output file, then
// finalized. A manifest left in "running" marks a partial run.
class Manifest {
  public:
    Manifest(std::string path, std::string command, std::uint64_t seed, nlohmann::json config)
        : path_(std::move(path)), start_(std::chrono::steady_clock::now()) {
        doc_["command"] = std::move(command);
        doc_["version"] = kVersion;
        doc_["seed"] = seed;
        doc_["config"] = std::move(config);
        doc_["inputs"] = nlohmann::json::object();
        doc_["outputs"] = nlohmann::json::object();
        doc_["started_at"] = now_iso8601();
        doc_["status"] = "running";
    }

    void add_input(const std::string& name, const std::string& file) {
        doc_["inputs"][name] = {{"path", file}, {"digest", fnv1a_digest(file)}};
    }
    void add_output(const std::string& name, const std::string& file) {
        doc_["outputs"][name] = {{"path", file}};
    }

    void write_running() const { dump(); }

    void finalize() {
        for (auto& [name, entry] : doc_["outputs"].items())
            entry["digest"] = fnv1a_digest(entry["path"].get<std::string>());
        doc_["finished_at"] = now_iso8601();
        doc_["wall_ms"] = std::chrono::duration_cast<std::chrono::milliseconds>(
                              std::chrono::steady_clock::now() - start_)
                              .count();
        doc_["status"] = "complete";
        dump();
    }

  private:
    void dump() const {
        std::ofstream out(path_, std::ios::trunc);
        if (!out) throw ValidationError("manifest: cannot write " + path_);
        out << doc_.dump(2) << "\n";
    }
    std::string path_;
    nlohmann::json doc_;
    std::chrono::steady_clock::time_point start_;
};

void require_fresh(const std::string& path, bool force) {
    if (!force && std::filesystem::exists(path))
        throw UsageError("output " + path + " exists; pass --force to overwrite");
}

nlohmann::json iter_to_json(const train::IterRecord& rec) {
    nlohmann::json j;
    j["iteration"] = rec.iteration;
    j["stage"] = rec.stage;
    j["loss"] = rec.diag.loss;
    j["reward_mean"] = rec.diag.reward_mean;
    j["reward_std"] = rec.diag.reward_std;
    j["cb_mean"] = rec.diag.cb_mean;
    j["entropy"] = rec.diag.entropy_mean;
    if (rec.val_metric) j["val_metric"] = *rec.val_metric;
    return j;
}

// Training flags shared by pretrain / train-rl / ablate.
struct TrainFlags {
    train::TrainConfig config;
    std::string reward_name = "recall@20";
    std::string baseline_name = "cf";
    std::string constraint = "on";

    void attach(CLI::App* cmd, bool rl_flags) {
        cmd->add_option("--dim-h", config.dims.h, "agent hidden size");
        cmd->add_option("--dim-d", config.dims.d, "input/pair feature size");
        cmd->add_option("--dim-e", config.dims.e, "embedding size");
        cmd->add_option("--dim-z", config.dims.z, "relation context size");
        cmd->add_option("--rounds", config.rounds, "communication rounds T");
        cmd->add_option("--batch", config.batch_size, "scenes per iteration");
        cmd->add_option("--seed", config.seed, "run seed");
        cmd->add_option("--threads", config.threads, "worker threads per batch");
        cmd->add_option("--eval-every", config.eval_every, "validation cadence");
        cmd->add_option("--clip-norm", config.clip_norm, "global gradient norm clip");
        cmd->add_option("--lr-pretrain", config.lr_pretrain, "stage-1 learning rate");
        cmd->add_option("--pretrain-iters", config.pretrain_iters, "stage-1 iterations");
        if (rl_flags) {
            cmd->add_option("--lr-rl", config.lr_rl, "stage-2 learning rate");
            cmd->add_option("--rl-iters", config.rl_iters, "stage-2 iterations");
            cmd->add_option("--alpha", config.alpha, "XE trade-off weight");
            cmd->add_option("--entropy", config.entropy_coeff, "entropy coefficient");
            cmd->add_option("--baseline", baseline_name, "cf|sc|ma|none");
            cmd->add_option("--cb-budget", config.cb_budget,
                            "counterfactual candidates per agent (0 = exact)");
            cmd->add_option("--reward", reward_name, "training reward, e.g. recall@20");
            cmd->add_option("--constraint", constraint, "graph constraint on|off");
            cmd->add_option("--ma-window", config.ma_window, "moving-average horizon");
        }
    }

    void resolve() {
        if (constraint != "on" && constraint != "off")
            throw UsageError("--constraint must be on or off");
        config.reward = parse_metric(reward_name, constraint == "on");
        config.val_metric = parse_metric("recall@20", true);
        config.baseline = train::parse_baseline(baseline_name);
        config.check();
    }

    nlohmann::json snapshot() const {
        nlohmann::json j;
        j["dims"] = {{"h", config.dims.h}, {"d", config.dims.d}, {"e", config.dims.e},
                     {"z", config.dims.z}};
        j["rounds"] = config.rounds;
        j["alpha"] = config.alpha;
        j["entropy"] = config.entropy_coeff;
        j["baseline"] = baseline_name;
        j["cb_budget"] = config.cb_budget;
        j["reward"] = reward_name;
        j["constraint"] = constraint;
        j["lr_pretrain"] = config.lr_pretrain;
        j["lr_rl"] = config.lr_rl;
        j["clip_norm"] = config.clip_norm;
        j["batch"] = config.batch_size;
        j["pretrain_iters"] = config.pretrain_iters;
        j["rl_iters"] = config.rl_iters;
        j["eval_every"] = config.eval_every;
        j["ma_window"] = config.ma_window;
        j["threads"] = config.threads;
        j["seed"] = config.seed;
        return j;
    }
};

struct LoadedData {
    Vocab vocab;
    std::vector<data::SceneRecord> records;
};

LoadedData load_dataset(const std::string& data_path, std::string vocab_path) {
    if (vocab_path.empty()) vocab_path = data_path + ".vocab.json";
    LoadedData ld;
    ld.vocab = data::load_vocab(vocab_path);
    ld.records = data::load(data_path, ld.vocab);
    if (ld.records.empty()) throw ValidationError("dataset " + data_path + " is empty");
    return ld;
}

// ---------------------------------------------------------------------------
// gen-data

int cmd_gen_data(const std::string& out, int scenes, int classes, int predicates, int feature_dim,
                 double mean_objects, double corruption, double noise, std::uint64_t seed,
                 bool force) {
    if (scenes < 1) throw UsageError("gen-data: --scenes must be >= 1");
    const std::string vocab_path = out + ".vocab.json";
    const std::string manifest_path = out + ".manifest.json";
    require_fresh(out, force);

    nlohmann::json cfg = {{"scenes", scenes},       {"classes", classes},
                          {"predicates", predicates}, {"feature_dim", feature_dim},
                          {"mean_objects", mean_objects}, {"corruption", corruption},
                          {"noise", noise}};
    Manifest manifest(manifest_path, "gen-data", seed, cfg);
    manifest.add_output("dataset", out);
    manifest.add_output("vocab", vocab_path);
    manifest.write_running();

    const data::WorldSpec world = data::WorldSpec::contextual(classes, predicates, feature_dim,
                                                              mean_objects, corruption, noise,
                                                              seed);
    const std::vector<data::SceneRecord> records = data::generate(world, scenes);
    data::save(records, out);
    data::save_vocab(world.vocab(), vocab_path);
    manifest.finalize();
    std::cout << "wrote " << records.size() << " scenes to " << out << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// pretrain / train-rl

int cmd_pretrain(const std::string& data_path, const std::string& vocab_path,
                 const std::string& out, TrainFlags& flags, bool force) {
    flags.resolve();
    const LoadedData ld = load_dataset(data_path, vocab_path);
    const std::string log_path = out + ".log.jsonl";
    require_fresh(out, force);

    Manifest manifest(out + ".manifest.json", "pretrain", flags.config.seed, flags.snapshot());
    manifest.add_input("data", data_path);
    manifest.add_output("checkpoint", out);
    manifest.add_output("log", log_path);
    manifest.write_running();

    const data::SplitResult splits = data::split(ld.records, 0.7, 0.15, 0.15, flags.config.seed);
    model::ModelParameters params = model::ModelParameters::init(
        flags.config.dims, static_cast<int>(ld.vocab.num_objects()),
        static_cast<int>(ld.vocab.num_predicates()), flags.config.seed);

    std::ofstream log(log_path, std::ios::trunc | std::ios::binary);
    if (!log) throw ValidationError("cannot open log " + log_path);
    train::pretrain(params, splits.train, splits.val, flags.config,
                    [&](const train::IterRecord& rec) { log << iter_to_json(rec).dump() << "\n"; });
    log.close();
    model::save_checkpoint(out, params, flags.config.rounds);
    manifest.finalize();
    std::cout << "pretrained checkpoint at " << out << "\n";
    return 0;
}

int cmd_train_rl(const std::string& data_path, const std::string& vocab_path,
                 const std::string& init, const std::string& out, TrainFlags& flags, bool force) {
    flags.resolve();
    if (init.empty()) throw UsageError("train-rl: --init checkpoint is required");
    const LoadedData ld = load_dataset(data_path, vocab_path);
    const std::string log_path = out + ".log.jsonl";
    require_fresh(out, force);

    Manifest manifest(out + ".manifest.json", "train-rl", flags.config.seed, flags.snapshot());
    manifest.add_input("data", data_path);
    manifest.add_input("init", init);
    manifest.add_output("checkpoint", out);
    manifest.add_output("log", log_path);
    manifest.write_running();

    model::CheckpointMeta meta;
    model::ModelParameters params = model::load_checkpoint(init, &meta);
    if (params.num_classes != static_cast<int>(ld.vocab.num_objects()) ||
        params.num_predicates != static_cast<int>(ld.vocab.num_predicates()))
        throw ValidationError("train-rl: checkpoint vocab sizes do not match the dataset");
    flags.config.dims = params.dims;

    const data::SplitResult splits = data::split(ld.records, 0.7, 0.15, 0.15, flags.config.seed);
    std::ofstream log(log_path, std::ios::trunc | std::ios::binary);
    if (!log) throw ValidationError("cannot open log " + log_path);
    train::train_rl(params, splits.train, splits.val, flags.config,
                    [&](const train::IterRecord& rec) { log << iter_to_json(rec).dump() << "\n"; });
    log.close();
    model::save_checkpoint(out, params, flags.config.rounds);
    manifest.finalize();
    std::cout << "rl checkpoint at " << out << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// eval

int cmd_eval(const std::string& ckpt, const std::string& data_path, const std::string& vocab_path,
             const std::string& task_name, std::vector<std::string> metric_names,
             const std::string& constraint, const std::string& out, bool force) {
    if (constraint != "on" && constraint != "off")
        throw UsageError("--constraint must be on or off");
    if (metric_names.empty()) metric_names = {"recall@20", "recall@50"};
    const train::EvalTask task = train::parse_task(task_name);
    const LoadedData ld = load_dataset(data_path, vocab_path);

    model::CheckpointMeta meta;
    const model::ModelParameters params = model::load_checkpoint(ckpt, &meta);
    if (params.num_classes != static_cast<int>(ld.vocab.num_objects()) ||
        params.num_predicates != static_cast<int>(ld.vocab.num_predicates()))
        throw ValidationError("eval: checkpoint vocab sizes do not match the dataset");

    std::vector<nlohmann::json> rows;
    std::cout << "task " << task_name << " on " << ld.records.size() << " scenes ("
              << "constraint " << constraint << ")\n";
    for (const std::string& name : metric_names) {
        const RewardSpec spec = parse_metric(name, constraint == "on");
        const double value =
            train::evaluate_mean(params, ld.records, spec, meta.rounds, task);
        std::cout << "  " << name << "  " << value << "\n";
        rows.push_back({{"task", task_name},
                        {"metric", name},
                        {"constraint", constraint},
                        {"value", value},
                        {"scenes", ld.records.size()}});
    }

    if (!out.empty()) {
        require_fresh(out, force);
        Manifest manifest(out + ".manifest.json", "eval", 0,
                          {{"task", task_name}, {"constraint", constraint}});
        manifest.add_input("data", data_path);
        manifest.add_input("checkpoint", ckpt);
        manifest.add_output("report", out);
        manifest.write_running();
        std::ofstream rep(out, std::ios::trunc | std::ios::binary);
        if (!rep) throw ValidationError("cannot open report " + out);
        for (const auto& row : rows) rep << row.dump() << "\n";
        rep.close();
        manifest.finalize();
    }
    return 0;
}

// ---------------------------------------------------------------------------
// gradcheck

int cmd_gradcheck(TrainFlags& flags) {
    flags.resolve();
    const std::uint64_t seed = flags.config.seed;
    const model::Dims dims = flags.config.dims;
    const int C = 4, R = 3, rounds = 2, n_agents = 3;

    const data::WorldSpec world =
        data::WorldSpec::contextual(C, R, dims.d, n_agents, 0.25, 0.3, seed);
    const std::vector<data::SceneRecord> scenes = data::generate(world, 2);
    model::ModelParameters params = model::ModelParameters::init(dims, C, R, seed);

    // The XE loss is checked at scale 1e-3: central differences on a loss of
    // magnitude ~5 carry ~1e-10 of roundoff, which would swamp gradients in
    // the [1e-8, 1e-5] band; scaling tucks that band under the 1e-8 floor.
    const double check_scale = 1e-3;
    const data::SceneRecord& scene = scenes[0];
    auto loss_fn = [&]() {
        return check_scale *
               train::xe_objective(params, scene.input, scene.truth, rounds, nullptr);
    };
    auto grad_fn = [&]() {
        model::GradStore gs = model::GradStore::zeros_like(params);
        train::xe_objective(params, scene.input, scene.truth, rounds, &gs);
        gs.scale(check_scale);
        return gs.g;
    };
    const ad::FiniteDiffResult fd =
        ad::finite_diff_check(params.named_tensors(), loss_fn, grad_fn, 1e-5);

    const RewardSpec spec = parse_metric("recall@20", true);
    const train::BaselineLemmaResult lemma = train::expected_baseline_contribution(
        params, scenes[1].input, scenes[1].truth, spec, rounds, flags.config.enumeration_cap);

    std::cout << "gradcheck max_rel_err " << fd.max_rel_err << " (worst " << fd.worst_param
              << "[" << fd.worst_index << "])\n";
    std::cout << "baseline lemma residual " << lemma.relative_residual << "\n";
    const bool ok = fd.max_rel_err < 1e-4 && lemma.relative_residual < 1e-10;
    std::cout << (ok ? "ok" : "FAILED") << "\n";
    return ok ? 0 : 4;
}

// ---------------------------------------------------------------------------
// ablate

struct CellStats {
    double mean = 0.0;
    double stddev = 0.0;
    std::vector<double> values;

    void finish() {
        const double n = static_cast<double>(values.size());
        for (double v : values) mean += v;
        mean /= n;
        double var = 0.0;
        for (double v : values) var += (v - mean) * (v - mean);
        stddev = values.size() > 1 ? std::sqrt(var / (n - 1.0)) : 0.0;
    }
};

int cmd_ablate(const std::string& data_path, const std::string& vocab_path,
               const std::string& axis, int seeds, const std::string& out, TrainFlags& flags,
               bool force) {
    flags.resolve();
    if (seeds < 1) throw UsageError("ablate: --seeds must be >= 1");
    if (axis != "baseline" && axis != "reward" && axis != "steps")
        throw UsageError("ablate: --axis must be baseline|reward|steps");
    const LoadedData ld = load_dataset(data_path, vocab_path);
    require_fresh(out, force);

    Manifest manifest(out + ".manifest.json", "ablate", flags.config.seed,
                      {{"axis", axis}, {"seeds", seeds}, {"train", flags.snapshot()}});
    manifest.add_input("data", data_path);
    manifest.add_output("summary", out);
    manifest.write_running();

    const data::SplitResult splits = data::split(ld.records, 0.7, 0.15, 0.15, flags.config.seed);
    const RewardSpec val_spec = parse_metric("recall@20", true);

    std::vector<std::string> cells;
    if (axis == "baseline") cells = {"init", "none", "ma", "sc", "cf"};
    if (axis == "reward") cells = {"init", "recall", "spice"};
    if (axis == "steps") cells = {"2", "3", "4", "5"};

    std::map<std::string, CellStats> stats;
    for (int s = 0; s < seeds; ++s) {
        train::TrainConfig base = flags.config;
        base.seed = flags.config.seed + static_cast<std::uint64_t>(s);

        if (axis == "steps") {
            for (const std::string& cell : cells) {
                train::TrainConfig cfg = base;
                cfg.rounds = std::stoi(cell);
                model::ModelParameters params = model::ModelParameters::init(
                    cfg.dims, static_cast<int>(ld.vocab.num_objects()),
                    static_cast<int>(ld.vocab.num_predicates()), cfg.seed);
                train::pretrain(params, splits.train, {}, cfg, nullptr);
                train::train_rl(params, splits.train, {}, cfg, nullptr);
                stats[cell].values.push_back(train::evaluate_mean(
                    params, splits.val, val_spec, cfg.rounds, train::EvalTask::SgCls));
            }
            continue;
        }

        // shared supervised initialization for the seed
        model::ModelParameters init = model::ModelParameters::init(
            base.dims, static_cast<int>(ld.vocab.num_objects()),
            static_cast<int>(ld.vocab.num_predicates()), base.seed);
        train::pretrain(init, splits.train, {}, base, nullptr);
        stats["init"].values.push_back(train::evaluate_mean(init, splits.val, val_spec,
                                                            base.rounds, train::EvalTask::SgCls));

        for (const std::string& cell : cells) {
            if (cell == "init") continue;
            train::TrainConfig cfg = base;
            if (axis == "baseline") cfg.baseline = train::parse_baseline(cell);
            if (axis == "reward") {
                cfg.baseline = train::BaselineKind::Cf;
                cfg.reward = parse_metric(cell + "@" + std::to_string(flags.config.reward.k),
                                          flags.config.reward.graph_constraint);
            }
            model::ModelParameters params = init;
            train::train_rl(params, splits.train, {}, cfg, nullptr);
            stats[cell].values.push_back(train::evaluate_mean(
                params, splits.val, val_spec, cfg.rounds, train::EvalTask::SgCls));
        }
    }

    std::ofstream rep(out, std::ios::trunc | std::ios::binary);
    if (!rep) throw ValidationError("cannot open summary " + out);
    std::cout << "ablation axis " << axis << " over " << seeds << " seeds (val recall@20)\n";
    for (const std::string& cell : cells) {
        CellStats& cs = stats[cell];
        cs.finish();
        std::cout << "  " << cell << "  " << cs.mean << " +- " << cs.stddev << "\n";
        nlohmann::json row = {{"axis", axis},     {"cell", cell},
                              {"metric", "recall@20"}, {"mean", cs.mean},
                              {"std", cs.stddev}, {"seeds", seeds},
                              {"values", cs.values}};
        rep << row.dump() << "\n";
    }
    rep.close();
    manifest.finalize();
    return 0;
}

}  // namespace

int run(const std::vector<std::string>& args) {
    CLI::App app{"counterfactual-critic multi-agent scene-graph labeling", "cmat"};
    app.require_subcommand(1);
    std::string kernels = "auto";
    app.add_option("--kernels", kernels, "simd backend: auto|scalar|avx2");

    // gen-data
    auto* gen = app.add_subcommand("gen-data", "generate a synthetic contextual corpus");
    std::string gen_out = "data.jsonl";
    int gen_scenes = 400, gen_classes = 13, gen_predicates = 7, gen_fdim = 16;
    double gen_mean = 6.0, gen_corruption = 0.3, gen_noise = 0.35;
    std::uint64_t gen_seed = 1;
    bool gen_force = false;
    gen->add_option("--out", gen_out, "output dataset path");
    gen->add_option("--scenes", gen_scenes, "number of scenes");
    gen->add_option("--classes", gen_classes, "object categories incl. background");
    gen->add_option("--predicates", gen_predicates, "predicates incl. no-relationship");
    gen->add_option("--feature-dim", gen_fdim, "entity/pair feature dimension");
    gen->add_option("--mean-objects", gen_mean, "mean entities per scene");
    gen->add_option("--corruption", gen_corruption, "initial-label corruption rate");
    gen->add_option("--noise", gen_noise, "feature noise level");
    gen->add_option("--seed", gen_seed, "generator seed");
    gen->add_flag("--force", gen_force, "overwrite existing outputs");

    // pretrain
    auto* pre = app.add_subcommand("pretrain", "stage-1 supervised training");
    std::string pre_data, pre_vocab, pre_out = "pretrain.ckpt";
    bool pre_force = false;
    TrainFlags pre_flags;
    pre->add_option("--data", pre_data, "dataset path")->required();
    pre->add_option("--vocab", pre_vocab, "vocab path (default <data>.vocab.json)");
    pre->add_option("--out", pre_out, "checkpoint output path");
    pre->add_flag("--force", pre_force, "overwrite existing outputs");
    pre->set_config("--config", "", "flat key=value config file");
    pre_flags.attach(pre, false);

    // train-rl
    auto* rl = app.add_subcommand("train-rl", "stage-2 policy-gradient training");
    std::string rl_data, rl_vocab, rl_init, rl_out = "rl.ckpt";
    bool rl_force = false;
    TrainFlags rl_flags;
    rl->add_option("--data", rl_data, "dataset path")->required();
    rl->add_option("--vocab", rl_vocab, "vocab path (default <data>.vocab.json)");
    rl->add_option("--init", rl_init, "pretrained checkpoint")->required();
    rl->add_option("--out", rl_out, "checkpoint output path");
    rl->add_flag("--force", rl_force, "overwrite existing outputs");
    rl->set_config("--config", "", "flat key=value config file");
    rl_flags.attach(rl, true);

    // eval
    auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
    std::string ev_ckpt, ev_data, ev_vocab, ev_task = "sgcls", ev_constraint = "on", ev_out;
    std::vector<std::string> ev_metrics;
    bool ev_force = false;
    ev->add_option("--ckpt", ev_ckpt, "checkpoint path")->required();
    ev->add_option("--data", ev_data, "dataset path")->required();
    ev->add_option("--vocab", ev_vocab, "vocab path (default <data>.vocab.json)");
    ev->add_option("--task", ev_task, "predcls|sgcls");
    ev->add_option("--metric", ev_metrics, "metric names, e.g. recall@20 spice@20");
    ev->add_option("--constraint", ev_constraint, "graph constraint on|off");
    ev->add_option("--out", ev_out, "structured report path (optional)");
    ev->add_flag("--force", ev_force, "overwrite existing outputs");

    // gradcheck
    auto* gc = app.add_subcommand("gradcheck", "finite-difference and baseline-lemma checks");
    TrainFlags gc_flags;
    gc_flags.config.seed = 7;
    gc->set_config("--config", "", "flat key=value config file");
    gc_flags.attach(gc, false);

    // ablate
    auto* ab = app.add_subcommand("ablate", "axis sweeps with per-cell mean and std");
    std::string ab_data, ab_vocab, ab_axis = "baseline", ab_out = "ablation.jsonl";
    int ab_seeds = 5;
    bool ab_force = false;
    TrainFlags ab_flags;
    ab->add_option("--data", ab_data, "dataset path")->required();
    ab->add_option("--vocab", ab_vocab, "vocab path (default <data>.vocab.json)");
    ab->add_option("--axis", ab_axis, "baseline|reward|steps");
    ab->add_option("--seeds", ab_seeds, "seeds per cell");
    ab->add_option("--out", ab_out, "summary output path");
    ab->add_flag("--force", ab_force, "overwrite existing outputs");
    ab->set_config("--config", "", "flat key=value config file");
    ab_flags.attach(ab, true);

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
        kern::select(kern::parse_backend(kernels));
        if (gen->parsed())
            return cmd_gen_data(gen_out, gen_scenes, gen_classes, gen_predicates, gen_fdim,
                                gen_mean, gen_corruption, gen_noise, gen_seed, gen_force);
        if (pre->parsed()) return cmd_pretrain(pre_data, pre_vocab, pre_out, pre_flags, pre_force);
        if (rl->parsed())
            return cmd_train_rl(rl_data, rl_vocab, rl_init, rl_out, rl_flags, rl_force);
        if (ev->parsed())
            return cmd_eval(ev_ckpt, ev_data, ev_vocab, ev_task, ev_metrics, ev_constraint,
                            ev_out, ev_force);
        if (gc->parsed()) return cmd_gradcheck(gc_flags);
        if (ab->parsed())
            return cmd_ablate(ab_data, ab_vocab, ab_axis, ab_seeds, ab_out, ab_flags, ab_force);
        throw UsageError("no subcommand given");
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 2;
    } catch (const NumericError& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return 4;
    } catch (const ValidationError& e) {
        std::cerr << "validation error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

}  // namespace cmat::cli
