#include "cmat/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "cmat/errors.hpp"
#include "cmat/kernels.hpp"

namespace cmat::model {

namespace {
const kern::Kernels& K() { return kern::active(); }
}

// ---------------------------------------------------------------------------
// Parameters

ModelParameters ModelParameters::init(const Dims& dims, int num_classes, int num_predicates,
                                      std::uint64_t seed) {
    if (num_classes < 2 || num_predicates < 2)
        throw ValidationError("model: need at least 2 object classes and 2 predicates");
    ModelParameters p;
    p.dims = dims;
    p.num_classes = num_classes;
    p.num_predicates = num_predicates;

    const int h = dims.h, d = dims.d, e = dims.e, z = dims.z;
    const int u = d + e;

    for (ad::Tensor* t : {&p.lstm_w_xi, &p.lstm_w_xf, &p.lstm_w_xg, &p.lstm_w_xo})
        *t = ad::Tensor::matrix(h, u);
    for (ad::Tensor* t : {&p.lstm_w_hi, &p.lstm_w_hf, &p.lstm_w_hg, &p.lstm_w_ho})
        *t = ad::Tensor::matrix(h, h);
    for (ad::Tensor* t : {&p.lstm_b_i, &p.lstm_b_f, &p.lstm_b_g, &p.lstm_b_o})
        *t = ad::Tensor::vector(h);
    p.w_score = ad::Tensor::matrix(num_classes, h);
    p.embed = ad::Tensor::matrix(num_classes, e);
    p.w_unary = ad::Tensor::matrix(h, h);
    p.w_pair = ad::Tensor::matrix(h, d);
    p.w_att_unary = ad::Tensor::matrix(1, 2 * h);
    p.w_att_pair = ad::Tensor::matrix(1, h + d);
    p.w_input = ad::Tensor::matrix(d, h);
    p.w_pair_subj = ad::Tensor::matrix(d, h);
    p.w_pair_obj = ad::Tensor::matrix(d, h);
    p.w_obj_ctx = ad::Tensor::matrix(z, h + e);
    p.w_pair_feat = ad::Tensor::matrix(z, d);
    p.w_rel_expand = ad::Tensor::matrix(2 * z, z);
    p.w_fuse_x = ad::Tensor::matrix(2 * z, 2 * z);
    p.w_fuse_y = ad::Tensor::matrix(2 * z, 2 * z);
    p.w_rel_out = ad::Tensor::matrix(num_predicates, 2 * z);
    p.bias_table = ad::Tensor::matrix(num_classes * num_classes, num_predicates);

    Rng rng(mix_seed(seed, 0x7061726d));  // "parm"
    for (auto& [name, t] : p.named_tensors()) {
        t->requires_grad = true;
        if (name.rfind("lstm_b", 0) == 0 || name == "bias_table") {
            std::fill(t->v.begin(), t->v.end(), name == "lstm_b_f" ? 1.0 : 0.0);
        } else {
            for (double& x : t->v) x = rng.uniform(-0.1, 0.1);
        }
    }
    return p;
}

std::vector<std::pair<std::string, ad::Tensor*>> ModelParameters::named_tensors() {
    return {
        {"lstm_w_xi", &lstm_w_xi},   {"lstm_w_xf", &lstm_w_xf},
        {"lstm_w_xg", &lstm_w_xg},   {"lstm_w_xo", &lstm_w_xo},
        {"lstm_w_hi", &lstm_w_hi},   {"lstm_w_hf", &lstm_w_hf},
        {"lstm_w_hg", &lstm_w_hg},   {"lstm_w_ho", &lstm_w_ho},
        {"lstm_b_i", &lstm_b_i},     {"lstm_b_f", &lstm_b_f},
        {"lstm_b_g", &lstm_b_g},     {"lstm_b_o", &lstm_b_o},
        {"w_score", &w_score},       {"embed", &embed},
        {"w_unary", &w_unary},       {"w_pair", &w_pair},
        {"w_att_unary", &w_att_unary}, {"w_att_pair", &w_att_pair},
        {"w_input", &w_input},       {"w_pair_subj", &w_pair_subj},
        {"w_pair_obj", &w_pair_obj}, {"w_obj_ctx", &w_obj_ctx},
        {"w_pair_feat", &w_pair_feat}, {"w_rel_expand", &w_rel_expand},
        {"w_fuse_x", &w_fuse_x},     {"w_fuse_y", &w_fuse_y},
        {"w_rel_out", &w_rel_out},   {"bias_table", &bias_table},
    };
}

std::vector<std::pair<std::string, const ad::Tensor*>> ModelParameters::named_tensors() const {
    std::vector<std::pair<std::string, const ad::Tensor*>> out;
    for (auto& [name, t] : const_cast<ModelParameters*>(this)->named_tensors())
        out.emplace_back(name, t);
    return out;
}

std::size_t ModelParameters::total_values() const {
    std::size_t n = 0;
    for (auto& [name, t] : named_tensors()) n += t->size();
    return n;
}

void ModelParameters::check_finite() const {
    for (auto& [name, t] : named_tensors())
        if (!ad::all_finite(t->v))
            throw NumericError("model: non-finite values in parameter " + name);
}

ParamVars add_params(ad::Tape& tape, const ModelParameters& p) {
    ParamVars pv;
    std::vector<ad::Var*> slots = {
        &pv.lstm_w_xi, &pv.lstm_w_xf, &pv.lstm_w_xg, &pv.lstm_w_xo,
        &pv.lstm_w_hi, &pv.lstm_w_hf, &pv.lstm_w_hg, &pv.lstm_w_ho,
        &pv.lstm_b_i,  &pv.lstm_b_f,  &pv.lstm_b_g,  &pv.lstm_b_o,
        &pv.w_score,   &pv.embed,     &pv.w_unary,   &pv.w_pair,
        &pv.w_att_unary, &pv.w_att_pair, &pv.w_input, &pv.w_pair_subj,
        &pv.w_pair_obj, &pv.w_obj_ctx, &pv.w_pair_feat, &pv.w_rel_expand,
        &pv.w_fuse_x,  &pv.w_fuse_y,  &pv.w_rel_out, &pv.bias_table,
    };
    const auto named = p.named_tensors();
    for (std::size_t i = 0; i < named.size(); ++i) {
        ad::Var v = tape.param(*named[i].second);
        *slots[i] = v;
        pv.vars.push_back(v);
    }
    return pv;
}

GradStore GradStore::zeros_like(const ModelParameters& p) {
    GradStore gs;
    for (auto& [name, t] : p.named_tensors()) gs.g.emplace_back(t->size(), 0.0);
    return gs;
}

void GradStore::accumulate(const ad::Tape& tape, const ParamVars& pv, double weight) {
    for (std::size_t i = 0; i < g.size(); ++i) {
        const auto grad = tape.grad(pv.vars[i]);
        K().axpy(weight, grad.data(), g[i].data(), g[i].size());
    }
}

void GradStore::add(const GradStore& other, double weight) {
    for (std::size_t i = 0; i < g.size(); ++i)
        K().axpy(weight, other.g[i].data(), g[i].data(), g[i].size());
}

void GradStore::scale(double c) {
    for (auto& v : g) K().scale(v.data(), c, v.data(), v.size());
}

double GradStore::global_norm() const {
    double sq = 0.0;
    for (const auto& v : g) sq += K().dot(v.data(), v.data(), v.size());
    return std::sqrt(sq);
}

bool GradStore::finite() const {
    for (const auto& v : g)
        if (!ad::all_finite(v)) return false;
    return true;
}

// ---------------------------------------------------------------------------
// Scene input

void SceneInput::check(const Dims& dims, int num_classes) const {
    const int n = size();
    if (n < 1) throw ValidationError("scene: needs at least one entity");
    if (static_cast<int>(boxes.size()) != n || static_cast<int>(init_logits.size()) != n)
        throw ValidationError("scene: boxes/logits count mismatch");
    if (static_cast<int>(pair_features.size()) != pair_count(n))
        throw ValidationError("scene: expected " + std::to_string(pair_count(n)) +
                              " pair features, got " + std::to_string(pair_features.size()));
    for (int i = 0; i < n; ++i) {
        if (static_cast<int>(features[i].size()) != dims.d)
            throw ValidationError("scene: entity feature dim != d");
        if (static_cast<int>(init_logits[i].size()) != num_classes)
            throw ValidationError("scene: initial logits dim != |C|");
        if (!ad::all_finite(features[i]) || !ad::all_finite(init_logits[i]))
            throw ValidationError("scene: non-finite entity inputs");
    }
    for (const auto& f : pair_features) {
        if (static_cast<int>(f.size()) != dims.d)
            throw ValidationError("scene: pair feature dim != d");
        if (!ad::all_finite(f)) throw ValidationError("scene: non-finite pair feature");
    }
}

// ---------------------------------------------------------------------------
// Communication

StateVars init_states(ad::Tape& tape, const ParamVars& pv, const SceneInput& scene) {
    const int n = scene.size();
    StateVars sv;
    sv.n = n;
    sv.step = 0;
    const int h = tape.rows(pv.lstm_w_hi);
    const std::vector<double> zero_h(static_cast<std::size_t>(h), 0.0);
    const ad::Var zh = tape.input(zero_h, h);

    for (int i = 0; i < n; ++i) {
        sv.h.push_back(zh);
        sv.c.push_back(zh);
        sv.x.push_back(tape.input(scene.features[i], static_cast<int>(scene.features[i].size())));
        sv.slog.push_back(
            tape.input(scene.init_logits[i], static_cast<int>(scene.init_logits[i].size())));
        ad::Var p = tape.softmax(sv.slog.back());
        sv.p.push_back(p);
        sv.e.push_back(tape.matvec_t(pv.embed, p));
    }
    for (const auto& f : scene.pair_features)
        sv.hpair.push_back(tape.input(f, static_cast<int>(f.size())));
    return sv;
}

void extract_step(ad::Tape& tape, const ParamVars& pv, StateVars& sv) {
    for (int i = 0; i < sv.n; ++i) {
        const ad::Var u = tape.concat(sv.x[i], sv.e[i]);
        auto gate = [&](ad::Var wx, ad::Var wh, ad::Var b) {
            return tape.add(tape.add(tape.matvec(wx, u), tape.matvec(wh, sv.h[i])), b);
        };
        const ad::Var gi = tape.sigmoid(gate(pv.lstm_w_xi, pv.lstm_w_hi, pv.lstm_b_i));
        const ad::Var gf = tape.sigmoid(gate(pv.lstm_w_xf, pv.lstm_w_hf, pv.lstm_b_f));
        const ad::Var gg = tape.tanh(gate(pv.lstm_w_xg, pv.lstm_w_hg, pv.lstm_b_g));
        const ad::Var go = tape.sigmoid(gate(pv.lstm_w_xo, pv.lstm_w_ho, pv.lstm_b_o));
        sv.c[i] = tape.add(tape.mul(gf, sv.c[i]), tape.mul(gi, gg));
        sv.h[i] = tape.mul(go, tape.tanh(sv.c[i]));
        sv.slog[i] = tape.add(sv.slog[i], tape.matvec(pv.w_score, sv.h[i]));
        sv.p[i] = tape.softmax(sv.slog[i]);
        sv.e[i] = tape.matvec_t(pv.embed, sv.p[i]);
    }
}

Messages compose_messages(ad::Tape& tape, const ParamVars& pv, const StateVars& sv) {
    Messages msg;
    for (int j = 0; j < sv.n; ++j) msg.unary.push_back(tape.matvec(pv.w_unary, sv.h[j]));
    for (const ad::Var hp : sv.hpair) msg.pair.push_back(tape.matvec(pv.w_pair, hp));
    return msg;
}

void attention_update(ad::Tape& tape, const ParamVars& pv, StateVars& sv, const Messages& msg) {
    const int n = sv.n;
    std::vector<ad::Var> new_x(static_cast<std::size_t>(n));

    for (int i = 0; i < n; ++i) {
        ad::Var inner;
        if (n == 1) {
            inner = sv.h[i];
        } else {
            // attention scores over the other agents, ascending j
            ad::Var logits_u, logits_p;
            std::vector<int> others;
            for (int j = 0; j < n; ++j) {
                if (j == i) continue;
                others.push_back(j);
                const ad::Var uj = tape.matvec(pv.w_att_unary, tape.concat(sv.h[i], sv.h[j]));
                const ad::Var upj = tape.matvec(
                    pv.w_att_pair, tape.concat(sv.h[i], sv.hpair[pair_index(i, j, n)]));
                logits_u = logits_u.ok() ? tape.concat(logits_u, uj) : uj;
                logits_p = logits_p.ok() ? tape.concat(logits_p, upj) : upj;
            }
            const ad::Var alpha_u = tape.softmax(logits_u);
            const ad::Var alpha_p = tape.softmax(logits_p);
            ad::Var acc_u, acc_p;
            for (std::size_t k = 0; k < others.size(); ++k) {
                const int j = others[k];
                const ad::Var cu = tape.smul(tape.pick(alpha_u, static_cast<int>(k)), msg.unary[j]);
                const ad::Var cp = tape.smul(tape.pick(alpha_p, static_cast<int>(k)),
                                             msg.pair[pair_index(i, j, n)]);
                acc_u = acc_u.ok() ? tape.add(acc_u, cu) : cu;
                acc_p = acc_p.ok() ? tape.add(acc_p, cp) : cp;
            }
            inner = tape.add(sv.h[i], tape.add(acc_u, acc_p));
        }
        new_x[i] = tape.matvec(pv.w_input, tape.relu(inner));
    }

    // pair refresh from the hidden states extracted this round
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
            if (j == i) continue;
            const int pidx = pair_index(i, j, n);
            const ad::Var shift = tape.add(tape.matvec(pv.w_pair_subj, sv.h[i]),
                                           tape.matvec(pv.w_pair_obj, sv.h[j]));
            sv.hpair[pidx] = tape.relu(tape.add(sv.hpair[pidx], shift));
        }
    }
    sv.x = std::move(new_x);
    sv.step += 1;
}

StateVars communicate(ad::Tape& tape, const ParamVars& pv, const SceneInput& scene, int rounds) {
    if (rounds < 1) throw ValidationError("model: communication rounds must be >= 1");
    StateVars sv = init_states(tape, pv, scene);
    for (int t = 0; t < rounds; ++t) {
        extract_step(tape, pv, sv);
        const Messages msg = compose_messages(tape, pv, sv);
        attention_update(tape, pv, sv, msg);
    }
    extract_step(tape, pv, sv);
    return sv;
}

// ---------------------------------------------------------------------------
// Relation head (tape)

std::vector<ad::Var> relation_logits(ad::Tape& tape, const ParamVars& pv, const StateVars& sv,
                                     const ModelParameters& p, const std::vector<int>& actions) {
    const int n = sv.n;
    if (static_cast<int>(actions.size()) != n)
        throw ValidationError("relation head: one action per agent required");
    for (int a : actions)
        if (a < 0 || a >= p.num_classes) throw ValidationError("relation head: action out of range");

    std::vector<ad::Var> ctx(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i)
        ctx[i] = tape.matvec(pv.w_obj_ctx,
                             tape.concat(sv.h[i], tape.row(pv.embed, actions[i])));

    std::vector<ad::Var> out;
    out.reserve(static_cast<std::size_t>(pair_count(n)));
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
            if (j == i) continue;
            const int pidx = pair_index(i, j, n);
            const ad::Var zp = tape.matvec(pv.w_pair_feat, sv.hpair[pidx]);
            const ad::Var xs = tape.matvec(pv.w_fuse_x, tape.concat(ctx[i], ctx[j]));
            const ad::Var ys = tape.matvec(pv.w_fuse_y, tape.matvec(pv.w_rel_expand, zp));
            const ad::Var fused =
                tape.add(tape.relu(tape.add(xs, ys)),
                         tape.scale(tape.square(tape.add(xs, tape.scale(ys, -1.0))), -1.0));
            const ad::Var logits =
                tape.add(tape.matvec(pv.w_rel_out, fused),
                         tape.row(pv.bias_table, actions[i] * p.num_classes + actions[j]));
            out.push_back(logits);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Final state + raw relation head

FinalState extract_final(const ad::Tape& tape, const StateVars& sv, const SceneInput& scene) {
    FinalState fs;
    fs.n = sv.n;
    fs.h = tape.rows(sv.h[0]);
    fs.d = sv.hpair.empty() ? static_cast<int>(scene.features[0].size())
                            : tape.rows(sv.hpair[0]);
    fs.c = tape.rows(sv.p[0]);
    fs.boxes = scene.boxes;
    fs.hidden.reserve(static_cast<std::size_t>(fs.n) * fs.h);
    fs.probs.reserve(static_cast<std::size_t>(fs.n) * fs.c);
    for (int i = 0; i < fs.n; ++i) {
        const auto hv = tape.value(sv.h[i]);
        fs.hidden.insert(fs.hidden.end(), hv.begin(), hv.end());
        const auto pb = tape.value(sv.p[i]);
        fs.probs.insert(fs.probs.end(), pb.begin(), pb.end());
    }
    fs.hpair.reserve(sv.hpair.size() * static_cast<std::size_t>(fs.d));
    for (const ad::Var hp : sv.hpair) {
        const auto v = tape.value(hp);
        fs.hpair.insert(fs.hpair.end(), v.begin(), v.end());
    }
    return fs;
}

void relation_probs_raw(const FinalState& fs, const ModelParameters& p,
                        const std::vector<int>& actions, std::vector<double>& probs,
                        int only_agent) {
    const int n = fs.n;
    const int h = fs.h, d = fs.d, e = p.dims.e, z = p.dims.z, R = p.num_predicates;
    if (static_cast<int>(actions.size()) != n)
        throw ValidationError("relation head: one action per agent required");
    probs.resize(static_cast<std::size_t>(pair_count(n)) * R);

    // z_i = w_obj_ctx [h_i, embed[v_i]]; cheap enough to refresh for all agents
    std::vector<double> cat(static_cast<std::size_t>(h + e));
    std::vector<double> ctx(static_cast<std::size_t>(n) * z);
    for (int i = 0; i < n; ++i) {
        std::memcpy(cat.data(), fs.hidden.data() + static_cast<std::size_t>(i) * h,
                    sizeof(double) * h);
        std::memcpy(cat.data() + h, p.embed.v.data() + static_cast<std::size_t>(actions[i]) * e,
                    sizeof(double) * e);
        K().matvec(p.w_obj_ctx.v.data(), cat.data(), ctx.data() + static_cast<std::size_t>(i) * z,
                   static_cast<std::size_t>(z), static_cast<std::size_t>(h + e));
    }

    const int zz = 2 * z;
    std::vector<double> zp(static_cast<std::size_t>(z));
    std::vector<double> pair_cat(static_cast<std::size_t>(zz));
    std::vector<double> xs(static_cast<std::size_t>(zz)), ys(static_cast<std::size_t>(zz));
    std::vector<double> summ(static_cast<std::size_t>(zz)), diff(static_cast<std::size_t>(zz));
    std::vector<double> relu_s(static_cast<std::size_t>(zz)), sq(static_cast<std::size_t>(zz));
    std::vector<double> fused(static_cast<std::size_t>(zz));
    std::vector<double> logits(static_cast<std::size_t>(R));

    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
            if (j == i) continue;
            if (only_agent >= 0 && i != only_agent && j != only_agent) continue;
            const int pidx = pair_index(i, j, n);
            K().matvec(p.w_pair_feat.v.data(), fs.hpair.data() + static_cast<std::size_t>(pidx) * d,
                       zp.data(), static_cast<std::size_t>(z), static_cast<std::size_t>(d));
            std::memcpy(pair_cat.data(), ctx.data() + static_cast<std::size_t>(i) * z,
                        sizeof(double) * z);
            std::memcpy(pair_cat.data() + z, ctx.data() + static_cast<std::size_t>(j) * z,
                        sizeof(double) * z);
            K().matvec(p.w_fuse_x.v.data(), pair_cat.data(), xs.data(),
                       static_cast<std::size_t>(zz), static_cast<std::size_t>(zz));
            std::vector<double> expanded(static_cast<std::size_t>(zz));
            K().matvec(p.w_rel_expand.v.data(), zp.data(), expanded.data(),
                       static_cast<std::size_t>(zz), static_cast<std::size_t>(z));
            K().matvec(p.w_fuse_y.v.data(), expanded.data(), ys.data(),
                       static_cast<std::size_t>(zz), static_cast<std::size_t>(zz));
            // mirror the tape op order exactly: relu(xs + ys) + (-1)*(xs + (-1)*ys)^2
            K().add(xs.data(), ys.data(), summ.data(), zz);
            K().relu(summ.data(), relu_s.data(), zz);
            K().scale(ys.data(), -1.0, diff.data(), zz);
            K().add(xs.data(), diff.data(), diff.data(), zz);
            K().mul(diff.data(), diff.data(), sq.data(), zz);
            K().scale(sq.data(), -1.0, sq.data(), zz);
            K().add(relu_s.data(), sq.data(), fused.data(), zz);
            K().matvec(p.w_rel_out.v.data(), fused.data(), logits.data(),
                       static_cast<std::size_t>(R), static_cast<std::size_t>(zz));
            const double* bias = p.bias_table.v.data() +
                                 (static_cast<std::size_t>(actions[i]) * p.num_classes +
                                  actions[j]) *
                                     R;
            double* out = probs.data() + static_cast<std::size_t>(pidx) * R;
            K().add(logits.data(), bias, out, R);
            ad::softmax_inplace({out, static_cast<std::size_t>(R)});
        }
    }
}

// ---------------------------------------------------------------------------
// Decoding

SceneGraph assemble_graph(const FinalState& fs, const ModelParameters& p,
                          const std::vector<int>& actions, const std::vector<double>& rel_probs,
                          const std::vector<double>* conf_override) {
    const int n = fs.n;
    const int C = p.num_classes, R = p.num_predicates;
    SceneGraph g;
    g.entities.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        Entity ent;
        ent.category = actions[static_cast<std::size_t>(i)];
        ent.box = fs.boxes[static_cast<std::size_t>(i)];
        ent.confidence = conf_override
                             ? (*conf_override)[static_cast<std::size_t>(i)]
                             : fs.probs[static_cast<std::size_t>(i) * C +
                                        actions[static_cast<std::size_t>(i)]];
        g.entities.push_back(ent);
    }
    g.triplets.reserve(static_cast<std::size_t>(pair_count(n)) * (R - 1));
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
            if (j == i) continue;
            const int pidx = pair_index(i, j, n);
            const double conf = g.entities[static_cast<std::size_t>(i)].confidence *
                                g.entities[static_cast<std::size_t>(j)].confidence;
            for (int r = 1; r < R; ++r) {
                Triplet t;
                t.subject_index = i;
                t.object_index = j;
                t.predicate = r;
                t.score = conf * rel_probs[static_cast<std::size_t>(pidx) * R + r];
                g.triplets.push_back(t);
            }
        }
    }
    return g;
}

Decoded decode_with_actions(const FinalState& fs, const ModelParameters& p,
                            const std::vector<int>& actions,
                            const std::vector<double>* conf_override) {
    Decoded dec;
    dec.actions = actions;
    dec.action_probs = fs.probs;
    relation_probs_raw(fs, p, actions, dec.rel_probs);
    dec.graph = assemble_graph(fs, p, actions, dec.rel_probs, conf_override);
    return dec;
}

Decoded decode(const FinalState& fs, const ModelParameters& p, DecodeMode mode, Rng* rng) {
    const int n = fs.n;
    const int C = p.num_classes;
    std::vector<int> actions(static_cast<std::size_t>(n), 0);
    for (int i = 0; i < n; ++i) {
        const auto probs = fs.agent_probs(i);
        if (mode == DecodeMode::Greedy) {
            int best = 0;
            for (int c = 1; c < C; ++c)
                if (probs[c] > probs[best]) best = c;
            actions[static_cast<std::size_t>(i)] = best;
        } else {
            if (!rng) throw ValidationError("decode: sampling requires a random stream");
            const double u = rng->uniform();
            double acc = 0.0;
            int pick = C - 1;
            for (int c = 0; c < C; ++c) {
                acc += probs[c];
                if (u < acc) {
                    pick = c;
                    break;
                }
            }
            actions[static_cast<std::size_t>(i)] = pick;
        }
    }
    return decode_with_actions(fs, p, actions, nullptr);
}

// ---------------------------------------------------------------------------
// Checkpoints

static_assert(std::endian::native == std::endian::little,
              "checkpoint io assumes a little-endian host");

void save_checkpoint(const std::string& path, const ModelParameters& p, int rounds) {
    p.check_finite();
    nlohmann::json manifest;
    manifest["format"] = 1;
    manifest["h"] = p.dims.h;
    manifest["d"] = p.dims.d;
    manifest["e"] = p.dims.e;
    manifest["z"] = p.dims.z;
    manifest["classes"] = p.num_classes;
    manifest["predicates"] = p.num_predicates;
    manifest["rounds"] = rounds;
    nlohmann::json tensors = nlohmann::json::array();
    for (auto& [name, t] : p.named_tensors())
        tensors.push_back({{"name", name}, {"rows", t->rows}, {"cols", t->cols}});
    manifest["tensors"] = tensors;

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw ValidationError("checkpoint: cannot open " + path + " for writing");
    out << "CMATCKP1\n" << manifest.dump() << "\n";
    for (auto& [name, t] : p.named_tensors())
        out.write(reinterpret_cast<const char*>(t->v.data()),
                  static_cast<std::streamsize>(t->v.size() * sizeof(double)));
    if (!out) throw ValidationError("checkpoint: short write to " + path);
}

ModelParameters load_checkpoint(const std::string& path, CheckpointMeta* meta_out) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("checkpoint: cannot open " + path);
    std::string magic, line;
    std::getline(in, magic);
    if (magic != "CMATCKP1") throw ValidationError("checkpoint: bad magic in " + path);
    if (!std::getline(in, line)) throw ValidationError("checkpoint: missing manifest in " + path);
    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(line);
    } catch (const std::exception& ex) {
        throw ValidationError(std::string("checkpoint: bad manifest: ") + ex.what());
    }

    CheckpointMeta meta;
    meta.format = manifest.at("format").get<int>();
    if (meta.format != 1) throw ValidationError("checkpoint: unsupported format version");
    meta.dims.h = manifest.at("h").get<int>();
    meta.dims.d = manifest.at("d").get<int>();
    meta.dims.e = manifest.at("e").get<int>();
    meta.dims.z = manifest.at("z").get<int>();
    meta.num_classes = manifest.at("classes").get<int>();
    meta.num_predicates = manifest.at("predicates").get<int>();
    meta.rounds = manifest.at("rounds").get<int>();

    ModelParameters p =
        ModelParameters::init(meta.dims, meta.num_classes, meta.num_predicates, 0);
    const auto named = p.named_tensors();
    const auto& tlist = manifest.at("tensors");
    if (tlist.size() != named.size())
        throw ValidationError("checkpoint: tensor count mismatch");
    for (std::size_t i = 0; i < named.size(); ++i) {
        auto& [name, t] = named[i];
        const auto& entry = tlist[i];
        if (entry.at("name").get<std::string>() != name)
            throw ValidationError("checkpoint: tensor order mismatch at " + name);
        if (entry.at("rows").get<int>() != t->rows || entry.at("cols").get<int>() != t->cols)
            throw ValidationError("checkpoint: shape mismatch for " + name);
        in.read(reinterpret_cast<char*>(t->v.data()),
                static_cast<std::streamsize>(t->v.size() * sizeof(double)));
        if (!in) throw ValidationError("checkpoint: truncated data at tensor " + name);
    }
    p.check_finite();
    if (meta_out) *meta_out = meta;
    return p;
}

}  // namespace cmat::model
