#pragma once
// The communicative multi-agent network. Every entity is an agent holding an
// LSTM state; T rounds of extract / message / attention-update refine its
// category logits, then a relation head scores predicates for ordered pairs
// and a decoder assembles the predicted scene graph.
//
// The communication net and the relation head run on the autodiff tape for
// training. The relation head additionally has a raw (tape-free) forward used
// by the counterfactual-baseline hot path; the two are equivalence-tested.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "cmat/autodiff.hpp"
#include "cmat/graph.hpp"
#include "cmat/rng.hpp"

namespace cmat::model {

struct Dims {
    int h = 32;  // agent hidden state
    int d = 16;  // input / pairwise feature
    int e = 16;  // category embedding
    int z = 16;  // relation-head context
};

// Ordered pairs (i,j), i != j, laid out subject-major.
inline int pair_count(int n) { return n * (n - 1); }
inline int pair_index(int i, int j, int n) { return i * (n - 1) + (j < i ? j : j - 1); }

struct ModelParameters {
    Dims dims;
    int num_classes = 0;
    int num_predicates = 0;

    // extract: 4-gate LSTM cell over [x, e], shared by all agents and rounds
    ad::Tensor lstm_w_xi, lstm_w_xf, lstm_w_xg, lstm_w_xo;  // h x (d+e)
    ad::Tensor lstm_w_hi, lstm_w_hf, lstm_w_hg, lstm_w_ho;  // h x h
    ad::Tensor lstm_b_i, lstm_b_f, lstm_b_g, lstm_b_o;      // h
    ad::Tensor w_score;  // |C| x h, incremental logit update
    ad::Tensor embed;    // |C| x e, category embedding table

    // message
    ad::Tensor w_unary;  // h x h
    ad::Tensor w_pair;   // h x d

    // update
    ad::Tensor w_att_unary;  // 1 x 2h
    ad::Tensor w_att_pair;   // 1 x (h+d)
    ad::Tensor w_input;      // d x h, next-round input feature
    ad::Tensor w_pair_subj;  // d x h
    ad::Tensor w_pair_obj;   // d x h

    // relation head
    ad::Tensor w_obj_ctx;    // z x (h+e)
    ad::Tensor w_pair_feat;  // z x d, pair context from the final pair state
    ad::Tensor w_rel_expand; // 2z x z
    ad::Tensor w_fuse_x;     // 2z x 2z
    ad::Tensor w_fuse_y;     // 2z x 2z
    ad::Tensor w_rel_out;    // |R| x 2z
    ad::Tensor bias_table;   // (|C|*|C|) x |R|, predicate bias per (head, tail)

    // Weights uniform in [-0.1, 0.1] from the seed; biases zero except the
    // LSTM forget gate (1.0); bias_table zero.
    static ModelParameters init(const Dims& dims, int num_classes, int num_predicates,
                                std::uint64_t seed);

    // Fixed order; defines gradient layout and the checkpoint tensor order.
    std::vector<std::pair<std::string, ad::Tensor*>> named_tensors();
    std::vector<std::pair<std::string, const ad::Tensor*>> named_tensors() const;

    std::size_t total_values() const;
    void check_finite() const;  // throws NumericError
};

// Parameter leaves on a tape, in named_tensors() order.
struct ParamVars {
    std::vector<ad::Var> vars;
    ad::Var lstm_w_xi, lstm_w_xf, lstm_w_xg, lstm_w_xo;
    ad::Var lstm_w_hi, lstm_w_hf, lstm_w_hg, lstm_w_ho;
    ad::Var lstm_b_i, lstm_b_f, lstm_b_g, lstm_b_o;
    ad::Var w_score, embed, w_unary, w_pair, w_att_unary, w_att_pair;
    ad::Var w_input, w_pair_subj, w_pair_obj;
    ad::Var w_obj_ctx, w_pair_feat, w_rel_expand, w_fuse_x, w_fuse_y, w_rel_out, bias_table;
};
ParamVars add_params(ad::Tape& tape, const ModelParameters& p);

// Gradients aligned with named_tensors() order.
struct GradStore {
    std::vector<std::vector<double>> g;

    static GradStore zeros_like(const ModelParameters& p);
    void accumulate(const ad::Tape& tape, const ParamVars& pv, double weight = 1.0);
    void add(const GradStore& other, double weight = 1.0);
    void scale(double c);
    double global_norm() const;
    bool finite() const;
};

// Detector-substitute scene input: per-entity feature and initial logits,
// per-ordered-pair feature, plus boxes carried through to decoded graphs.
struct SceneInput {
    std::vector<Box> boxes;
    std::vector<std::vector<double>> features;     // n x d
    std::vector<std::vector<double>> init_logits;  // n x |C|
    std::vector<std::vector<double>> pair_features;  // pair_count(n) x d

    int size() const { return static_cast<int>(features.size()); }
    void check(const Dims& dims, int num_classes) const;  // throws ValidationError
};

// Tape-resident agent states at some communication step.
struct StateVars {
    int n = 0;
    int step = 0;
    std::vector<ad::Var> h, c;   // hidden / cell, per agent
    std::vector<ad::Var> x;      // round input feature
    std::vector<ad::Var> slog;   // accumulated category logits
    std::vector<ad::Var> p;      // softmax(slog)
    std::vector<ad::Var> e;      // soft category embedding
    std::vector<ad::Var> hpair;  // pair states, pair_index order
};

struct Messages {
    std::vector<ad::Var> unary;  // per agent
    std::vector<ad::Var> pair;   // per ordered pair
};

// h = c = 0, x/s/pair features copied in, e = embed^T softmax(s0).
StateVars init_states(ad::Tape& tape, const ParamVars& pv, const SceneInput& scene);

// LSTM over [x, e_prev]; slog += w_score h; e = embed^T softmax(slog).
void extract_step(ad::Tape& tape, const ParamVars& pv, StateVars& sv);

// unary m_j = w_unary h_j; pair m_ij = w_pair hpair_ij.
Messages compose_messages(ad::Tape& tape, const ParamVars& pv, const StateVars& sv);

// Soft-attention fusion of messages into the next input feature, then pair
// state refresh from the current hidden states. Singleton scenes have empty
// attention sums.
void attention_update(ad::Tape& tape, const ParamVars& pv, StateVars& sv, const Messages& msg);

// rounds x (extract, message, update) then one extract. rounds >= 1.
StateVars communicate(ad::Tape& tape, const ParamVars& pv, const SceneInput& scene, int rounds);

// Per-pair predicate logits given fixed actions (tape version).
std::vector<ad::Var> relation_logits(ad::Tape& tape, const ParamVars& pv, const StateVars& sv,
                                     const ModelParameters& p, const std::vector<int>& actions);

// Values pulled off the tape once communication is done; the raw relation
// head and the decoder work from this.
struct FinalState {
    int n = 0;
    int h = 0, d = 0, c = 0;
    std::vector<double> hidden;  // n*h
    std::vector<double> hpair;   // pair_count(n)*d
    std::vector<double> probs;   // n*|C|, final p_i
    std::vector<Box> boxes;

    std::span<const double> agent_probs(int i) const {
        return {probs.data() + static_cast<std::size_t>(i) * c, static_cast<std::size_t>(c)};
    }
};
FinalState extract_final(const ad::Tape& tape, const StateVars& sv, const SceneInput& scene);

// Raw relation head: per-pair distributions, pair_index order, |R| each.
// `only_agent` >= 0 recomputes just the pairs touching that agent into
// `probs` (the other entries must hold values for the unchanged actions).
void relation_probs_raw(const FinalState& fs, const ModelParameters& p,
                        const std::vector<int>& actions, std::vector<double>& probs,
                        int only_agent = -1);

enum class DecodeMode { Greedy, Sample };

struct Decoded {
    std::vector<int> actions;
    std::vector<double> action_probs;  // n*|C|
    std::vector<double> rel_probs;     // pair_count(n)*|R|
    SceneGraph graph;                  // all predicates r >= 1, unranked
};

// Predicted graph from precomputed relation distributions. Confidence per
// entity is p_i(action) unless conf_override supplies fixed values (PredCls
// uses 1). Triplet score = subject conf * object conf * predicate prob.
SceneGraph assemble_graph(const FinalState& fs, const ModelParameters& p,
                          const std::vector<int>& actions, const std::vector<double>& rel_probs,
                          const std::vector<double>* conf_override = nullptr);

// Assemble the predicted graph for the given actions (computes rel probs).
Decoded decode_with_actions(const FinalState& fs, const ModelParameters& p,
                            const std::vector<int>& actions,
                            const std::vector<double>* conf_override = nullptr);

// Greedy argmax (ties to the lowest index) or a draw from p_i^T.
Decoded decode(const FinalState& fs, const ModelParameters& p, DecodeMode mode,
               Rng* rng = nullptr);

// Checkpoint: one-line JSON manifest then named tensors as little-endian
// 64-bit floats, in named_tensors() order.
struct CheckpointMeta {
    int format = 1;
    Dims dims;
    int num_classes = 0;
    int num_predicates = 0;
    int rounds = 0;
};
void save_checkpoint(const std::string& path, const ModelParameters& p, int rounds);
ModelParameters load_checkpoint(const std::string& path, CheckpointMeta* meta_out = nullptr);

}  // namespace cmat::model
