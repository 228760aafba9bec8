#include "cmat/training.hpp"

#include <algorithm>
#include <cmath>
#include <thread>

#include "cmat/errors.hpp"
#include "cmat/kernels.hpp"

namespace cmat::train {

namespace {

// Deterministic scene-level parallelism: worker w handles k = w, w+nw, ...
// and every slot is written exactly once, so thread count never changes
// results as long as the combine step walks slots in order.
template <typename Fn>
void parallel_scenes(int count, int threads, Fn&& fn) {
    if (threads <= 1 || count <= 1) {
        for (int k = 0; k < count; ++k) fn(k);
        return;
    }
    const int nw = std::min(threads, count);
    std::vector<std::thread> workers;
    workers.reserve(static_cast<std::size_t>(nw));
    for (int w = 0; w < nw; ++w)
        workers.emplace_back([&, w] {
            for (int k = w; k < count; k += nw) fn(k);
        });
    for (auto& t : workers) t.join();
}

std::uint64_t sample_stream_seed(std::uint64_t run_seed, std::int64_t scene_id, int iteration) {
    return mix_seed(run_seed, static_cast<std::uint64_t>(scene_id),
                    0xAC710000ULL + static_cast<std::uint64_t>(iteration));
}

std::vector<int> sample_actions(const model::FinalState& fs, Rng& rng) {
    std::vector<int> actions(static_cast<std::size_t>(fs.n), 0);
    for (int i = 0; i < fs.n; ++i) {
        const auto probs = fs.agent_probs(i);
        const double u = rng.uniform();
        double acc = 0.0;
        int pick = fs.c - 1;
        for (int c = 0; c < fs.c; ++c) {
            acc += probs[c];
            if (u < acc) {
                pick = c;
                break;
            }
        }
        actions[static_cast<std::size_t>(i)] = pick;
    }
    return actions;
}

void apply_update(model::ModelParameters& p, const model::GradStore& grads, double lr,
                  double clip_norm) {
    double factor = -lr;
    const double norm = grads.global_norm();
    if (clip_norm > 0.0 && norm > clip_norm) factor *= clip_norm / norm;
    auto named = p.named_tensors();
    for (std::size_t i = 0; i < named.size(); ++i)
        kern::active().axpy(factor, grads.g[i].data(), named[i].second->v.data(),
                            grads.g[i].size());
}

std::vector<int> truth_actions(const SceneGraph& truth) {
    std::vector<int> actions;
    actions.reserve(truth.entities.size());
    for (const Entity& e : truth.entities) actions.push_back(e.category);
    return actions;
}

}  // namespace

BaselineKind parse_baseline(const std::string& name) {
    if (name == "cf") return BaselineKind::Cf;
    if (name == "sc") return BaselineKind::Sc;
    if (name == "ma") return BaselineKind::Ma;
    if (name == "none") return BaselineKind::None;
    throw UsageError("baseline: unknown kind '" + name + "' (cf|sc|ma|none)");
}

std::string baseline_name(BaselineKind k) {
    switch (k) {
        case BaselineKind::Cf: return "cf";
        case BaselineKind::Sc: return "sc";
        case BaselineKind::Ma: return "ma";
        case BaselineKind::None: return "none";
    }
    return "?";
}

EvalTask parse_task(const std::string& name) {
    if (name == "predcls") return EvalTask::PredCls;
    if (name == "sgcls") return EvalTask::SgCls;
    throw UsageError("task: unknown '" + name + "' (predcls|sgcls)");
}

void TrainConfig::check() const {
    if (rounds < 1) throw UsageError("config: rounds must be >= 1");
    if (alpha < 0.0) throw UsageError("config: alpha must be >= 0");
    if (entropy_coeff < 0.0) throw UsageError("config: entropy coefficient must be >= 0");
    if (cb_budget < 0) throw UsageError("config: cb budget must be >= 0");
    if (lr_pretrain <= 0.0 || lr_rl <= 0.0) throw UsageError("config: learning rates must be > 0");
    if (batch_size < 1) throw UsageError("config: batch size must be >= 1");
    if (pretrain_iters < 0 || rl_iters < 0) throw UsageError("config: iteration counts must be >= 0");
    if (ma_window < 1) throw UsageError("config: ma window must be >= 1");
    if (threads < 1) throw UsageError("config: threads must be >= 1");
    reward.check();
    val_metric.check();
}

std::vector<int> gt_predicates(const SceneGraph& truth) {
    const int n = static_cast<int>(truth.entities.size());
    std::vector<int> preds(static_cast<std::size_t>(model::pair_count(n)), 0);
    for (const Triplet& t : truth.triplets)
        preds[static_cast<std::size_t>(model::pair_index(t.subject_index, t.object_index, n))] =
            t.predicate;
    return preds;
}

ad::Var xe_loss_var(ad::Tape& tape, const model::ParamVars& pv, const model::StateVars& sv,
                    const model::ModelParameters& p, const SceneGraph& truth) {
    const int n = sv.n;
    if (static_cast<int>(truth.entities.size()) != n)
        throw ValidationError("xe: truth entity count mismatch");
    const std::vector<int> actions = truth_actions(truth);

    ad::Var ll;  // accumulated log-likelihood
    for (int i = 0; i < n; ++i) {
        const ad::Var lp = tape.log_softmax(sv.slog[static_cast<std::size_t>(i)]);
        const ad::Var term = tape.pick(lp, actions[static_cast<std::size_t>(i)]);
        ll = ll.ok() ? tape.add(ll, term) : term;
    }
    if (n > 1) {
        const std::vector<ad::Var> logits = model::relation_logits(tape, pv, sv, p, actions);
        const std::vector<int> preds = gt_predicates(truth);
        for (std::size_t k = 0; k < logits.size(); ++k) {
            const ad::Var lp = tape.log_softmax(logits[k]);
            ll = tape.add(ll, tape.pick(lp, preds[k]));
        }
    }
    return tape.scale(ll, -1.0);
}

double xe_objective(const model::ModelParameters& p, const model::SceneInput& scene,
                    const SceneGraph& truth, int rounds, model::GradStore* grads) {
    scene.check(p.dims, p.num_classes);
    ad::Tape tape;
    const model::ParamVars pv = model::add_params(tape, p);
    const model::StateVars sv = model::communicate(tape, pv, scene, rounds);
    const ad::Var loss = xe_loss_var(tape, pv, sv, p, truth);
    if (grads) {
        tape.backward(loss);
        grads->accumulate(tape, pv);
    }
    return tape.scalar_value(loss);
}

// Training-time rewards impose the action set, so entities carry unit
// confidence (as in PredCls) and the ranking rests on the predicate
// probabilities. Otherwise an exploratory flip to the right label would sink
// its own triplets below the top-k cut and the critic would never see it.
double episode_reward(const model::FinalState& fs, const model::ModelParameters& p,
                      const std::vector<int>& actions, const SceneGraph& truth,
                      const RewardSpec& spec) {
    std::vector<double> rel;
    model::relation_probs_raw(fs, p, actions, rel);
    const std::vector<double> unit(actions.size(), 1.0);
    const SceneGraph predicted = model::assemble_graph(fs, p, actions, rel, &unit);
    return reward(predicted, truth, spec);
}

double counterfactual_baseline(const model::FinalState& fs, const model::ModelParameters& p,
                               const std::vector<int>& actions, int agent,
                               const SceneGraph& truth, const RewardSpec& spec, int budget,
                               const std::vector<double>& base_rel_probs) {
    const int C = p.num_classes;
    if (budget < 0 || budget > C)
        throw UsageError("cb: budget must lie in {0} or [1, |C|], got " + std::to_string(budget));
    if (agent < 0 || agent >= fs.n) throw ValidationError("cb: agent index out of range");

    const auto probs = fs.agent_probs(agent);
    std::vector<int> candidates;
    if (budget == 0) {
        candidates.resize(static_cast<std::size_t>(C));
        for (int c = 0; c < C; ++c) candidates[static_cast<std::size_t>(c)] = c;
    } else {
        std::vector<int> order;
        for (int c = 1; c < C; ++c) order.push_back(c);
        std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
            if (probs[a] != probs[b]) return probs[a] > probs[b];
            return a < b;
        });
        const int take = std::min(budget, C - 1);
        candidates.assign(order.begin(), order.begin() + take);
        candidates.push_back(0);  // background always kept
        std::sort(candidates.begin(), candidates.end());
    }

    std::vector<int> cand_actions = actions;
    std::vector<double> rel;
    const std::vector<double> unit(actions.size(), 1.0);
    double mass = 0.0, acc = 0.0;
    for (int v : candidates) {
        cand_actions[static_cast<std::size_t>(agent)] = v;
        rel = base_rel_probs;
        if (v != actions[static_cast<std::size_t>(agent)])
            model::relation_probs_raw(fs, p, cand_actions, rel, agent);
        const SceneGraph predicted = model::assemble_graph(fs, p, cand_actions, rel, &unit);
        const double r = reward(predicted, truth, spec);
        mass += probs[v];
        acc += probs[v] * r;
    }
    return acc / mass;
}

double sc_baseline(const model::FinalState& fs, const model::ModelParameters& p,
                   const SceneGraph& truth, const RewardSpec& spec) {
    const int C = fs.c;
    std::vector<int> actions(static_cast<std::size_t>(fs.n), 0);
    for (int i = 0; i < fs.n; ++i) {
        const auto probs = fs.agent_probs(i);
        int best = 0;
        for (int c = 1; c < C; ++c)
            if (probs[c] > probs[best]) best = c;
        actions[static_cast<std::size_t>(i)] = best;
    }
    return episode_reward(fs, p, actions, truth, spec);
}

double ma_baseline(const std::vector<double>& history, int window) {
    if (history.empty()) return 0.0;
    const std::size_t take = std::min<std::size_t>(static_cast<std::size_t>(window), history.size());
    double s = 0.0;
    for (std::size_t i = history.size() - take; i < history.size(); ++i) s += history[i];
    return s / static_cast<double>(take);
}

StepDiagnostics policy_gradient_step(model::ModelParameters& p,
                                     const std::vector<data::SceneRecord>& batch,
                                     const TrainConfig& config, int iteration,
                                     std::vector<double>& ma_history) {
    const int B = static_cast<int>(batch.size());
    if (B == 0) throw ValidationError("policy step: empty batch");
    const double ma_value = ma_baseline(ma_history, config.ma_window);  // batch-start snapshot

    struct SceneOut {
        model::GradStore grads;
        double loss = 0.0;
        double reward_value = 0.0;
        double baseline_sum = 0.0;
        double entropy_sum = 0.0;
        int agents = 0;
    };
    std::vector<SceneOut> outs(static_cast<std::size_t>(B));

    parallel_scenes(B, config.threads, [&](int k) {
        const data::SceneRecord& rec = batch[static_cast<std::size_t>(k)];
        rec.input.check(p.dims, p.num_classes);
        const int n = rec.input.size();

        ad::Tape tape;
        const model::ParamVars pv = model::add_params(tape, p);
        const model::StateVars sv = model::communicate(tape, pv, rec.input, config.rounds);
        const model::FinalState fs = model::extract_final(tape, sv, rec.input);

        Rng stream(sample_stream_seed(config.seed, rec.id, iteration));
        const std::vector<int> actions = sample_actions(fs, stream);

        std::vector<double> base_rel;
        model::relation_probs_raw(fs, p, actions, base_rel);
        const std::vector<double> unit(actions.size(), 1.0);
        const SceneGraph predicted = model::assemble_graph(fs, p, actions, base_rel, &unit);
        const double episode = reward(predicted, rec.truth, config.reward);

        // per-agent advantages
        std::vector<double> adv(static_cast<std::size_t>(n), 0.0);
        double baseline_sum = 0.0;
        switch (config.baseline) {
            case BaselineKind::Cf:
                for (int i = 0; i < n; ++i) {
                    const double cb = counterfactual_baseline(fs, p, actions, i, rec.truth,
                                                              config.reward, config.cb_budget,
                                                              base_rel);
                    adv[static_cast<std::size_t>(i)] = advantage(episode, cb);
                    baseline_sum += cb;
                }
                break;
            case BaselineKind::Sc: {
                const double sc = sc_baseline(fs, p, rec.truth, config.reward);
                for (int i = 0; i < n; ++i) adv[static_cast<std::size_t>(i)] = episode - sc;
                baseline_sum = sc * n;
                break;
            }
            case BaselineKind::Ma:
                for (int i = 0; i < n; ++i) adv[static_cast<std::size_t>(i)] = episode - ma_value;
                baseline_sum = ma_value * n;
                break;
            case BaselineKind::None:
                for (int i = 0; i < n; ++i) adv[static_cast<std::size_t>(i)] = episode;
                break;
        }

        // objective on the tape: policy term + alpha XE + entropy bonus
        ad::Var objective;
        double entropy_sum = 0.0;
        for (int i = 0; i < n; ++i) {
            const ad::Var lp = tape.log_softmax(sv.slog[static_cast<std::size_t>(i)]);
            const ad::Var pol =
                tape.scale(tape.pick(lp, actions[static_cast<std::size_t>(i)]),
                           adv[static_cast<std::size_t>(i)]);
            objective = objective.ok() ? tape.add(objective, pol) : pol;

            const ad::Var gt_term =
                tape.scale(tape.pick(lp, rec.truth.entities[static_cast<std::size_t>(i)].category),
                           config.alpha);
            objective = tape.add(objective, gt_term);

            const ad::Var ent = tape.scale(
                tape.sum(tape.mul(sv.p[static_cast<std::size_t>(i)], lp)), -1.0);
            entropy_sum += tape.scalar_value(ent);
            objective = tape.add(objective, tape.scale(ent, config.entropy_coeff));
        }
        if (n > 1) {
            const std::vector<ad::Var> logits =
                model::relation_logits(tape, pv, sv, p, actions);
            const std::vector<int> preds = gt_predicates(rec.truth);
            for (std::size_t q = 0; q < logits.size(); ++q) {
                const ad::Var lp = tape.log_softmax(logits[q]);
                objective =
                    tape.add(objective, tape.scale(tape.pick(lp, preds[q]), config.alpha));
            }
        }
        const ad::Var loss = tape.scale(objective, -1.0);
        tape.backward(loss);

        SceneOut& out = outs[static_cast<std::size_t>(k)];
        out.grads = model::GradStore::zeros_like(p);
        out.grads.accumulate(tape, pv);
        out.loss = tape.scalar_value(loss);
        out.reward_value = episode;
        out.baseline_sum = baseline_sum;
        out.entropy_sum = entropy_sum;
        out.agents = n;
    });

    // combine in scene order
    model::GradStore total = model::GradStore::zeros_like(p);
    StepDiagnostics diag;
    double reward_sq = 0.0;
    int total_agents = 0;
    double baseline_total = 0.0;
    for (const SceneOut& out : outs) {
        total.add(out.grads);
        diag.loss += out.loss;
        diag.reward_mean += out.reward_value;
        reward_sq += out.reward_value * out.reward_value;
        baseline_total += out.baseline_sum;
        diag.entropy_mean += out.entropy_sum;
        total_agents += out.agents;
        ma_history.push_back(out.reward_value);
    }
    total.scale(1.0 / B);
    diag.loss /= B;
    diag.reward_mean /= B;
    diag.reward_std = std::sqrt(std::max(0.0, reward_sq / B - diag.reward_mean * diag.reward_mean));
    diag.cb_mean = total_agents > 0 ? baseline_total / total_agents : 0.0;
    diag.entropy_mean = total_agents > 0 ? diag.entropy_mean / total_agents : 0.0;

    if (!total.finite())
        throw NumericError("policy step: non-finite gradient at iteration " +
                           std::to_string(iteration) + " (reward mean " +
                           std::to_string(diag.reward_mean) + ", loss " +
                           std::to_string(diag.loss) + ")");
    apply_update(p, total, config.lr_rl, config.clip_norm);
    return diag;
}

BaselineLemmaResult expected_baseline_contribution(const model::ModelParameters& p,
                                                   const model::SceneInput& scene,
                                                   const SceneGraph& truth,
                                                   const RewardSpec& spec, int rounds,
                                                   int enumeration_cap) {
    scene.check(p.dims, p.num_classes);
    const int n = scene.size();
    const int C = p.num_classes;
    if (n * C > enumeration_cap)
        throw ValidationError("baseline lemma: instance size n*|C| = " + std::to_string(n * C) +
                              " exceeds enumeration cap " + std::to_string(enumeration_cap));

    ad::Tape tape;
    const model::ParamVars pv = model::add_params(tape, p);
    const model::StateVars sv = model::communicate(tape, pv, scene, rounds);
    const model::FinalState fs = model::extract_final(tape, sv, scene);

    // fixed joint action: greedy decode
    std::vector<int> actions(static_cast<std::size_t>(n), 0);
    for (int i = 0; i < n; ++i) {
        const auto probs = fs.agent_probs(i);
        int best = 0;
        for (int c = 1; c < C; ++c)
            if (probs[c] > probs[best]) best = c;
        actions[static_cast<std::size_t>(i)] = best;
    }
    std::vector<double> base_rel;
    model::relation_probs_raw(fs, p, actions, base_rel);

    std::vector<double> cb(static_cast<std::size_t>(n), 0.0);
    for (int i = 0; i < n; ++i)
        cb[static_cast<std::size_t>(i)] =
            counterfactual_baseline(fs, p, actions, i, truth, spec, 0, base_rel);

    // all pick nodes appended before any backward pass
    std::vector<std::vector<ad::Var>> picks(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        const ad::Var lp = tape.log_softmax(sv.slog[static_cast<std::size_t>(i)]);
        for (int v = 0; v < C; ++v)
            picks[static_cast<std::size_t>(i)].push_back(tape.pick(lp, v));
    }

    BaselineLemmaResult res;
    res.accumulated = model::GradStore::zeros_like(p);
    model::GradStore single = model::GradStore::zeros_like(p);
    for (int i = 0; i < n; ++i) {
        for (int v = 0; v < C; ++v) {
            tape.backward(picks[static_cast<std::size_t>(i)][static_cast<std::size_t>(v)]);
            const double w = fs.agent_probs(i)[v] * cb[static_cast<std::size_t>(i)];
            for (auto& gvec : single.g) std::fill(gvec.begin(), gvec.end(), 0.0);
            single.accumulate(tape, pv);
            res.accumulated.add(single, w);
            res.magnitude_scale += std::fabs(w) * single.global_norm();
        }
    }
    res.relative_residual =
        res.accumulated.global_norm() / std::max(res.magnitude_scale, 1e-300);
    return res;
}

double evaluate_mean(const model::ModelParameters& p, const std::vector<data::SceneRecord>& records,
                     const RewardSpec& spec, int rounds, EvalTask task) {
    if (records.empty()) throw ValidationError("evaluate: no records");
    double total = 0.0;
    for (const data::SceneRecord& rec : records) {
        rec.input.check(p.dims, p.num_classes);
        ad::Tape tape;
        const model::ParamVars pv = model::add_params(tape, p);
        const model::StateVars sv = model::communicate(tape, pv, rec.input, rounds);
        const model::FinalState fs = model::extract_final(tape, sv, rec.input);
        model::Decoded dec;
        if (task == EvalTask::PredCls) {
            const std::vector<int> actions = truth_actions(rec.truth);
            const std::vector<double> ones(actions.size(), 1.0);
            dec = model::decode_with_actions(fs, p, actions, &ones);
        } else {
            dec = model::decode(fs, p, model::DecodeMode::Greedy);
        }
        total += reward(dec.graph, rec.truth, spec);
    }
    return total / static_cast<double>(records.size());
}

namespace {

std::vector<data::SceneRecord> make_batch(const std::vector<data::SceneRecord>& records,
                                          int iteration, int batch_size) {
    std::vector<data::SceneRecord> batch;
    batch.reserve(static_cast<std::size_t>(batch_size));
    const std::size_t n = records.size();
    for (int k = 0; k < batch_size; ++k)
        batch.push_back(records[(static_cast<std::size_t>(iteration) * batch_size + k) % n]);
    return batch;
}

}  // namespace

void pretrain(model::ModelParameters& p, const std::vector<data::SceneRecord>& train_set,
              const std::vector<data::SceneRecord>& val_set, const TrainConfig& config,
              const LogSink& log) {
    config.check();
    if (train_set.empty()) throw ValidationError("pretrain: empty training set");
    for (int iter = 0; iter < config.pretrain_iters; ++iter) {
        const std::vector<data::SceneRecord> batch =
            make_batch(train_set, iter, config.batch_size);
        const int B = static_cast<int>(batch.size());
        std::vector<model::GradStore> grads(static_cast<std::size_t>(B));
        std::vector<double> losses(static_cast<std::size_t>(B), 0.0);
        parallel_scenes(B, config.threads, [&](int k) {
            grads[static_cast<std::size_t>(k)] = model::GradStore::zeros_like(p);
            losses[static_cast<std::size_t>(k)] =
                xe_objective(p, batch[static_cast<std::size_t>(k)].input,
                             batch[static_cast<std::size_t>(k)].truth, config.rounds,
                             &grads[static_cast<std::size_t>(k)]);
        });
        model::GradStore total = model::GradStore::zeros_like(p);
        double loss = 0.0;
        for (int k = 0; k < B; ++k) {
            total.add(grads[static_cast<std::size_t>(k)]);
            loss += losses[static_cast<std::size_t>(k)];
        }
        total.scale(1.0 / B);
        if (!total.finite())
            throw NumericError("pretrain: non-finite gradient at iteration " +
                               std::to_string(iter));
        apply_update(p, total, config.lr_pretrain, config.clip_norm);

        IterRecord rec;
        rec.iteration = iter;
        rec.stage = "pretrain";
        rec.diag.loss = loss / B;
        const bool last = iter + 1 == config.pretrain_iters;
        if (!val_set.empty() && ((iter + 1) % config.eval_every == 0 || last))
            rec.val_metric =
                evaluate_mean(p, val_set, config.val_metric, config.rounds, EvalTask::SgCls);
        if (log) log(rec);
    }
}

void train_rl(model::ModelParameters& p, const std::vector<data::SceneRecord>& train_set,
              const std::vector<data::SceneRecord>& val_set, const TrainConfig& config,
              const LogSink& log) {
    config.check();
    if (train_set.empty()) throw ValidationError("train-rl: empty training set");
    std::vector<double> ma_history;
    for (int iter = 0; iter < config.rl_iters; ++iter) {
        const std::vector<data::SceneRecord> batch =
            make_batch(train_set, iter, config.batch_size);
        IterRecord rec;
        rec.iteration = iter;
        rec.stage = "rl";
        rec.diag = policy_gradient_step(p, batch, config, iter, ma_history);
        const bool last = iter + 1 == config.rl_iters;
        if (!val_set.empty() && ((iter + 1) % config.eval_every == 0 || last))
            rec.val_metric =
                evaluate_mean(p, val_set, config.val_metric, config.rounds, EvalTask::SgCls);
        if (log) log(rec);
    }
}

model::ModelParameters train_full(const TrainConfig& config, const Vocab& vocab,
                                  const std::vector<data::SceneRecord>& train_set,
                                  const std::vector<data::SceneRecord>& val_set,
                                  const LogSink& log) {
    model::ModelParameters p = model::ModelParameters::init(
        config.dims, static_cast<int>(vocab.num_objects()),
        static_cast<int>(vocab.num_predicates()), config.seed);
    pretrain(p, train_set, val_set, config, log);
    train_rl(p, train_set, val_set, config, log);
    return p;
}

}  // namespace cmat::train
