#pragma once
// Two-stage optimization: supervised cross-entropy pretraining, then
// multi-agent policy gradient on a graph-level reward with a per-agent
// counterfactual baseline (or the SC / MA / no-baseline alternatives).

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "cmat/data.hpp"
#include "cmat/metrics.hpp"
#include "cmat/model.hpp"

namespace cmat::train {

enum class BaselineKind { Cf, Sc, Ma, None };
BaselineKind parse_baseline(const std::string& name);
std::string baseline_name(BaselineKind k);

struct TrainConfig {
    model::Dims dims;
    int rounds = 2;  // communication depth T

    double alpha = 1.0;          // XE trade-off in the combined gradient
    double entropy_coeff = 0.01;
    BaselineKind baseline = BaselineKind::Cf;
    int cb_budget = 2;           // candidates per agent; 0 = exact full-class sum
    RewardSpec reward;           // training reward (recall@20 by default)
    RewardSpec val_metric;       // validation metric for logs (recall@20)

    double lr_pretrain = 1e-3;
    double lr_rl = 3e-5;
    double clip_norm = 5.0;
    int batch_size = 6;
    int pretrain_iters = 300;
    int rl_iters = 300;
    int eval_every = 20;
    int ma_window = 64;
    int threads = 1;
    int enumeration_cap = 128;  // n*|C| limit for the exact-enumeration check
    std::uint64_t seed = 1;

    void check() const;  // throws UsageError
};

// Ground-truth predicate per ordered pair (0 where unannotated).
std::vector<int> gt_predicates(const SceneGraph& truth);

// Sum of object and relationship cross-entropies for one scene, built on the
// tape (relation head teacher-forced with the true categories).
ad::Var xe_loss_var(ad::Tape& tape, const model::ParamVars& pv, const model::StateVars& sv,
                    const model::ModelParameters& p, const SceneGraph& truth);

// Convenience wrapper: full forward, loss value, optional gradients.
double xe_objective(const model::ModelParameters& p, const model::SceneInput& scene,
                    const SceneGraph& truth, int rounds, model::GradStore* grads);

// Reward of the graph assembled from the given actions with greedy predicates.
double episode_reward(const model::FinalState& fs, const model::ModelParameters& p,
                      const std::vector<int>& actions, const SceneGraph& truth,
                      const RewardSpec& spec);

// Probability-weighted reward over candidate replacements of one agent's
// action, others fixed. budget = 0 sums every category; otherwise the budget
// highest-probability non-background categories plus background. Candidate
// probabilities are renormalized over the candidate set in both modes.
// base_rel_probs holds the raw relation distributions for `actions` so only
// pairs touching the agent are recomputed per candidate.
double counterfactual_baseline(const model::FinalState& fs, const model::ModelParameters& p,
                               const std::vector<int>& actions, int agent,
                               const SceneGraph& truth, const RewardSpec& spec, int budget,
                               const std::vector<double>& base_rel_probs);

inline double advantage(double reward, double baseline) { return reward - baseline; }

// Reward of the greedy decode, shared by all agents in the scene.
double sc_baseline(const model::FinalState& fs, const model::ModelParameters& p,
                   const SceneGraph& truth, const RewardSpec& spec);

// Mean of the last `window` episode rewards; 0 on empty history.
double ma_baseline(const std::vector<double>& history, int window);

// One optimizer step over a batch of scenes. Returns per-iteration
// diagnostics; parameters are updated in place. `iteration` seeds the
// per-scene sampling streams; `ma_history` is consulted and then extended in
// scene order.
struct StepDiagnostics {
    double loss = 0.0;
    double reward_mean = 0.0;
    double reward_std = 0.0;
    double cb_mean = 0.0;
    double entropy_mean = 0.0;
};
StepDiagnostics policy_gradient_step(model::ModelParameters& p,
                                     const std::vector<data::SceneRecord>& batch,
                                     const TrainConfig& config, int iteration,
                                     std::vector<double>& ma_history);

// Exact enumeration of sum_i sum_v p_i(v) grad log p_i(v) CB^i on one scene;
// analytically zero. Returns the accumulated vector (gradient layout) plus
// the magnitude scale gathered before cancellation. Refuses instances with
// n*|C| above the cap.
struct BaselineLemmaResult {
    model::GradStore accumulated;
    double magnitude_scale = 0.0;
    double relative_residual = 0.0;
};
BaselineLemmaResult expected_baseline_contribution(const model::ModelParameters& p,
                                                   const model::SceneInput& scene,
                                                   const SceneGraph& truth,
                                                   const RewardSpec& spec, int rounds,
                                                   int enumeration_cap);

// Per-iteration log record (wall-clock timing lives in the run manifest so
// logs stay byte-reproducible).
struct IterRecord {
    int iteration = 0;
    std::string stage;
    StepDiagnostics diag;
    std::optional<double> val_metric;
};
using LogSink = std::function<void(const IterRecord&)>;

enum class EvalTask { PredCls, SgCls };
EvalTask parse_task(const std::string& name);

// Mean metric over records. PredCls fixes actions to ground truth with unit
// confidence; SGCls decodes greedily.
double evaluate_mean(const model::ModelParameters& p, const std::vector<data::SceneRecord>& records,
                     const RewardSpec& spec, int rounds, EvalTask task);

// Stage 1: supervised XE. Stage 2: policy gradient from a pretrained model.
void pretrain(model::ModelParameters& p, const std::vector<data::SceneRecord>& train_set,
              const std::vector<data::SceneRecord>& val_set, const TrainConfig& config,
              const LogSink& log);
void train_rl(model::ModelParameters& p, const std::vector<data::SceneRecord>& train_set,
              const std::vector<data::SceneRecord>& val_set, const TrainConfig& config,
              const LogSink& log);

// Both stages from a fresh seed-initialized model.
model::ModelParameters train_full(const TrainConfig& config, const Vocab& vocab,
                                  const std::vector<data::SceneRecord>& train_set,
                                  const std::vector<data::SceneRecord>& val_set,
                                  const LogSink& log);

}  // namespace cmat::train
