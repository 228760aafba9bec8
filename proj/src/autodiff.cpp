#include "cmat/autodiff.hpp"

#include <cmath>
#include <cstring>

#include "cmat/errors.hpp"
#include "cmat/kernels.hpp"

namespace cmat::ad {

namespace {
const kern::Kernels& K() { return kern::active(); }

double stable_sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}
}  // namespace

bool all_finite(std::span<const double> x) {
    for (double v : x)
        if (!std::isfinite(v)) return false;
    return true;
}

void softmax_inplace(std::span<double> x) {
    const std::size_t n = x.size();
    const double m = K().max(x.data(), n);
    double z = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
        x[k] = std::exp(x[k] - m);
        z += x[k];
    }
    K().scale(x.data(), 1.0 / z, x.data(), n);
}

void log_softmax_inplace(std::span<double> x) {
    const std::size_t n = x.size();
    const double m = K().max(x.data(), n);
    double z = 0.0;
    for (std::size_t k = 0; k < n; ++k) z += std::exp(x[k] - m);
    const double lz = m + std::log(z);
    for (std::size_t k = 0; k < n; ++k) x[k] -= lz;
}

void Tape::check(Var v) const {
    if (!v.ok() || static_cast<std::size_t>(v.i) >= nodes_.size())
        throw ValidationError("tape: dangling variable handle");
}

void Tape::shape_fail(const char* op, Var a, Var b) const {
    std::string msg = std::string("tape: op ") + op + ": incompatible shapes (" +
                      std::to_string(nodes_[a.i].rows) + "," + std::to_string(nodes_[a.i].cols) +
                      ")";
    if (b.ok())
        msg += " vs (" + std::to_string(nodes_[b.i].rows) + "," +
               std::to_string(nodes_[b.i].cols) + ")";
    throw ValidationError(msg);
}

Var Tape::push(Node n) {
    n.off = vals_.size();
    vals_.resize(vals_.size() + len(n));
    nodes_.push_back(n);
    return Var{static_cast<std::int32_t>(nodes_.size() - 1)};
}

Var Tape::input(std::span<const double> values, int rows, int cols) {
    if (values.size() != static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols))
        throw ValidationError("tape: op input: value count does not match shape (" +
                              std::to_string(rows) + "," + std::to_string(cols) + ")");
    Var v = push(Node{Op::Input, -1, -1, 0, 0.0, rows, cols});
    std::memcpy(val(v.i), values.data(), values.size() * sizeof(double));
    return v;
}

Var Tape::scalar(double value) { return input(std::span<const double>(&value, 1), 1, 1); }

Var Tape::param(const Tensor& t) {
    Var v = push(Node{t.requires_grad ? Op::Param : Op::Input, -1, -1, 0, 0.0, t.rows, t.cols});
    std::memcpy(val(v.i), t.v.data(), t.v.size() * sizeof(double));
    return v;
}

Var Tape::matvec(Var w, Var x) {
    check(w);
    check(x);
    const Node& nw = nodes_[w.i];
    const Node& nx = nodes_[x.i];
    if (nx.cols != 1 || nw.cols != nx.rows) shape_fail("matvec", w, x);
    Var y = push(Node{Op::MatVec, w.i, x.i, 0, 0.0, nw.rows, 1});
    K().matvec(val(w.i), val(x.i), val(y.i), static_cast<std::size_t>(nodes_[w.i].rows),
               static_cast<std::size_t>(nodes_[w.i].cols));
    return y;
}

Var Tape::matvec_t(Var w, Var x) {
    check(w);
    check(x);
    const Node& nw = nodes_[w.i];
    const Node& nx = nodes_[x.i];
    if (nx.cols != 1 || nw.rows != nx.rows) shape_fail("matvec_t", w, x);
    Var y = push(Node{Op::MatVecT, w.i, x.i, 0, 0.0, nw.cols, 1});
    double* out = val(y.i);
    std::memset(out, 0, len(nodes_[y.i]) * sizeof(double));
    K().matvec_t_acc(val(w.i), val(x.i), out, static_cast<std::size_t>(nodes_[w.i].rows),
                     static_cast<std::size_t>(nodes_[w.i].cols));
    return y;
}

Var Tape::row(Var matrix, int r) {
    check(matrix);
    const int mrows = nodes_[matrix.i].rows;
    const int mcols = nodes_[matrix.i].cols;
    if (r < 0 || r >= mrows)
        throw ValidationError("tape: op row: index " + std::to_string(r) + " outside " +
                              std::to_string(mrows) + " rows");
    Var y = push(Node{Op::Row, matrix.i, -1, r, 0.0, mcols, 1});
    std::memcpy(val(y.i), val(matrix.i) + static_cast<std::size_t>(r) * mcols,
                static_cast<std::size_t>(mcols) * sizeof(double));
    return y;
}

Var Tape::unary_like(Op op, Var a) {
    check(a);
    const Node& na = nodes_[a.i];
    return push(Node{op, a.i, -1, 0, 0.0, na.rows, na.cols});
}

Var Tape::add(Var a, Var b) {
    check(a);
    check(b);
    const Node& na = nodes_[a.i];
    const Node& nb = nodes_[b.i];
    if (na.rows != nb.rows || na.cols != nb.cols) shape_fail("add", a, b);
    Var y = push(Node{Op::Add, a.i, b.i, 0, 0.0, na.rows, na.cols});
    K().add(val(a.i), val(b.i), val(y.i), len(nodes_[y.i]));
    return y;
}

Var Tape::relu(Var a) {
    Var y = unary_like(Op::Relu, a);
    K().relu(val(a.i), val(y.i), len(nodes_[y.i]));
    return y;
}

Var Tape::sigmoid(Var a) {
    Var y = unary_like(Op::Sigmoid, a);
    const double* x = val(a.i);
    double* out = val(y.i);
    for (std::size_t k = 0; k < len(nodes_[y.i]); ++k) out[k] = stable_sigmoid(x[k]);
    return y;
}

Var Tape::tanh(Var a) {
    Var y = unary_like(Op::Tanh, a);
    const double* x = val(a.i);
    double* out = val(y.i);
    for (std::size_t k = 0; k < len(nodes_[y.i]); ++k) out[k] = std::tanh(x[k]);
    return y;
}

Var Tape::mul(Var a, Var b) {
    check(a);
    check(b);
    const Node& na = nodes_[a.i];
    const Node& nb = nodes_[b.i];
    if (na.rows != nb.rows || na.cols != nb.cols) shape_fail("mul", a, b);
    Var y = push(Node{Op::Mul, a.i, b.i, 0, 0.0, na.rows, na.cols});
    K().mul(val(a.i), val(b.i), val(y.i), len(nodes_[y.i]));
    return y;
}

Var Tape::square(Var a) {
    Var y = unary_like(Op::Square, a);
    K().mul(val(a.i), val(a.i), val(y.i), len(nodes_[y.i]));
    return y;
}

Var Tape::scale(Var a, double c) {
    check(a);
    const Node& na = nodes_[a.i];
    Var y = push(Node{Op::ScaleC, a.i, -1, 0, c, na.rows, na.cols});
    K().scale(val(a.i), c, val(y.i), len(nodes_[y.i]));
    return y;
}

Var Tape::smul(Var s, Var a) {
    check(s);
    check(a);
    const Node& ns = nodes_[s.i];
    if (ns.rows != 1 || ns.cols != 1) shape_fail("smul", s, a);
    const Node& na = nodes_[a.i];
    Var y = push(Node{Op::SMul, s.i, a.i, 0, 0.0, na.rows, na.cols});
    K().scale(val(a.i), val(s.i)[0], val(y.i), len(nodes_[y.i]));
    return y;
}

Var Tape::concat(Var a, Var b) {
    check(a);
    check(b);
    const int la = nodes_[a.i].rows;
    const int lb = nodes_[b.i].rows;
    if (nodes_[a.i].cols != 1 || nodes_[b.i].cols != 1) shape_fail("concat", a, b);
    Var y = push(Node{Op::Concat, a.i, b.i, la, 0.0, la + lb, 1});
    std::memcpy(val(y.i), val(a.i), static_cast<std::size_t>(la) * sizeof(double));
    std::memcpy(val(y.i) + la, val(b.i), static_cast<std::size_t>(lb) * sizeof(double));
    return y;
}

Var Tape::softmax(Var a) {
    check(a);
    if (nodes_[a.i].cols != 1) shape_fail("softmax", a, Var{});
    Var y = unary_like(Op::Softmax, a);
    const std::size_t n = len(nodes_[y.i]);
    std::memcpy(val(y.i), val(a.i), n * sizeof(double));
    softmax_inplace({val(y.i), n});
    return y;
}

Var Tape::log_softmax(Var a) {
    check(a);
    if (nodes_[a.i].cols != 1) shape_fail("log_softmax", a, Var{});
    Var y = unary_like(Op::LogSoftmax, a);
    const std::size_t n = len(nodes_[y.i]);
    std::memcpy(val(y.i), val(a.i), n * sizeof(double));
    log_softmax_inplace({val(y.i), n});
    return y;
}

Var Tape::sum(Var a) {
    check(a);
    Var y = push(Node{Op::Sum, a.i, -1, 0, 0.0, 1, 1});
    val(y.i)[0] = K().sum(val(a.i), len(nodes_[a.i]));
    return y;
}

Var Tape::pick(Var a, int index) {
    check(a);
    const Node& na = nodes_[a.i];
    if (na.cols != 1 || index < 0 || index >= na.rows)
        throw ValidationError("tape: op pick: index " + std::to_string(index) +
                              " outside vector of length " + std::to_string(na.rows));
    Var y = push(Node{Op::Pick, a.i, -1, index, 0.0, 1, 1});
    val(y.i)[0] = val(a.i)[index];
    return y;
}

std::span<const double> Tape::value(Var v) const {
    check(v);
    return {val(v.i), len(nodes_[v.i])};
}

std::span<const double> Tape::grad(Var v) const {
    check(v);
    if (grads_.size() != vals_.size())
        throw ValidationError("tape: grad requested before backward()");
    return {grads_.data() + nodes_[v.i].off, len(nodes_[v.i])};
}

int Tape::rows(Var v) const {
    check(v);
    return nodes_[v.i].rows;
}

int Tape::cols(Var v) const {
    check(v);
    return nodes_[v.i].cols;
}

void Tape::clear() {
    nodes_.clear();
    vals_.clear();
    grads_.clear();
}

void Tape::backward(Var output) {
    check(output);
    const Node& on = nodes_[output.i];
    if (on.rows != 1 || on.cols != 1)
        throw ValidationError("tape: backward: output must be scalar, got (" +
                              std::to_string(on.rows) + "," + std::to_string(on.cols) + ")");
    grads_.assign(vals_.size(), 0.0);
    grads_[on.off] = 1.0;

    const auto& k = K();
    for (std::int32_t i = output.i; i >= 0; --i) {
        const Node& n = nodes_[i];
        const double* gy = grads_.data() + n.off;
        const std::size_t ln = len(n);
        switch (n.op) {
            case Op::Input:
            case Op::Param:
                break;
            case Op::MatVec: {
                const Node& nw = nodes_[n.a];
                const std::size_t r = static_cast<std::size_t>(nw.rows);
                const std::size_t c = static_cast<std::size_t>(nw.cols);
                k.outer_acc(gy, val(n.b), grd(n.a), r, c);
                k.matvec_t_acc(val(n.a), gy, grd(n.b), r, c);
                break;
            }
            case Op::MatVecT: {
                const Node& nw = nodes_[n.a];
                const std::size_t r = static_cast<std::size_t>(nw.rows);
                const std::size_t c = static_cast<std::size_t>(nw.cols);
                // y = W^T x: dW += x gy^T, dx_r += dot(W[r,:], gy)
                k.outer_acc(val(n.b), gy, grd(n.a), r, c);
                const double* w = val(n.a);
                double* gx = grd(n.b);
                for (std::size_t rr = 0; rr < r; ++rr) gx[rr] += k.dot(w + rr * c, gy, c);
                break;
            }
            case Op::Row: {
                const Node& nm = nodes_[n.a];
                k.axpy(1.0, gy, grd(n.a) + static_cast<std::size_t>(n.aux) * nm.cols, ln);
                break;
            }
            case Op::Add:
                k.axpy(1.0, gy, grd(n.a), ln);
                k.axpy(1.0, gy, grd(n.b), ln);
                break;
            case Op::Relu:
                k.relu_grad_acc(val(n.a), gy, grd(n.a), ln);
                break;
            case Op::Sigmoid: {
                const double* y = val(i);
                double* ga = grd(n.a);
                for (std::size_t j = 0; j < ln; ++j) ga[j] += gy[j] * y[j] * (1.0 - y[j]);
                break;
            }
            case Op::Tanh: {
                const double* y = val(i);
                double* ga = grd(n.a);
                for (std::size_t j = 0; j < ln; ++j) ga[j] += gy[j] * (1.0 - y[j] * y[j]);
                break;
            }
            case Op::Mul:
                k.mul_acc(gy, val(n.b), grd(n.a), ln);
                k.mul_acc(gy, val(n.a), grd(n.b), ln);
                break;
            case Op::Square: {
                const double* x = val(n.a);
                double* ga = grd(n.a);
                for (std::size_t j = 0; j < ln; ++j) ga[j] += 2.0 * x[j] * gy[j];
                break;
            }
            case Op::ScaleC:
                k.axpy(n.c, gy, grd(n.a), ln);
                break;
            case Op::SMul: {
                grads_[nodes_[n.a].off] += k.dot(gy, val(n.b), ln);
                k.axpy(val(n.a)[0], gy, grd(n.b), ln);
                break;
            }
            case Op::Concat: {
                const std::size_t la = static_cast<std::size_t>(n.aux);
                k.axpy(1.0, gy, grd(n.a), la);
                k.axpy(1.0, gy + la, grd(n.b), ln - la);
                break;
            }
            case Op::Softmax: {
                const double* y = val(i);
                const double s = k.dot(gy, y, ln);
                double* ga = grd(n.a);
                for (std::size_t j = 0; j < ln; ++j) ga[j] += y[j] * (gy[j] - s);
                break;
            }
            case Op::LogSoftmax: {
                const double* y = val(i);
                const double s = k.sum(gy, ln);
                double* ga = grd(n.a);
                for (std::size_t j = 0; j < ln; ++j) ga[j] += gy[j] - std::exp(y[j]) * s;
                break;
            }
            case Op::Sum: {
                const double g = gy[0];
                double* ga = grd(n.a);
                for (std::size_t j = 0; j < len(nodes_[n.a]); ++j) ga[j] += g;
                break;
            }
            case Op::Pick:
                grads_[nodes_[n.a].off + static_cast<std::size_t>(n.aux)] += gy[0];
                break;
        }
    }
}

FiniteDiffResult finite_diff_check(
    const std::vector<std::pair<std::string, Tensor*>>& params,
    const std::function<double()>& loss,
    const std::function<std::vector<std::vector<double>>()>& analytic,
    double step) {
    const std::vector<std::vector<double>> grads = analytic();
    if (grads.size() != params.size())
        throw ValidationError("finite_diff_check: analytic gradient count mismatch");

    FiniteDiffResult res;
    for (std::size_t p = 0; p < params.size(); ++p) {
        Tensor& t = *params[p].second;
        if (grads[p].size() != t.size())
            throw ValidationError("finite_diff_check: gradient size mismatch for " +
                                  params[p].first);
        for (std::size_t j = 0; j < t.size(); ++j) {
            const double saved = t.v[j];
            t.v[j] = saved + step;
            const double f1 = loss();
            t.v[j] = saved - step;
            const double f2 = loss();
            t.v[j] = saved;
            if (!std::isfinite(f1) || !std::isfinite(f2))
                throw NumericError("finite_diff_check: non-finite loss at " + params[p].first);
            const double numeric = (f1 - f2) / (2.0 * step);
            const double a = grads[p][j];
            const double denom = std::max({std::fabs(a), std::fabs(numeric), 1e-8});
            const double rel = std::fabs(a - numeric) / denom;
            if (rel > res.max_rel_err) {
                res.max_rel_err = rel;
                res.worst_param = params[p].first;
                res.worst_index = j;
            }
        }
    }
    return res;
}

}  // namespace cmat::ad
