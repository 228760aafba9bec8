#pragma once
// Reverse-mode differentiation on a flat tape. The op set is the closure of
// what the communication network, relation head and the training losses need:
// matvec (plain and transposed), embedding-row select, add, concat,
// elementwise relu/sigmoid/tanh/multiply/square, scalar scale and
// tape-scalar multiply, softmax, log-softmax, sum, pick.
//
// Values live in one arena per tape so repeated per-scene tapes reuse their
// allocations. Gradients are materialized by backward() and accumulate
// additively across fan-out. 64-bit floats throughout.

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace cmat::ad {

struct Tensor {
    int rows = 0;
    int cols = 1;
    std::vector<double> v;
    bool requires_grad = false;

    static Tensor vector(int n, double fill = 0.0) {
        Tensor t;
        t.rows = n;
        t.cols = 1;
        t.v.assign(static_cast<std::size_t>(n), fill);
        return t;
    }
    static Tensor matrix(int r, int c, double fill = 0.0) {
        Tensor t;
        t.rows = r;
        t.cols = c;
        t.v.assign(static_cast<std::size_t>(r) * static_cast<std::size_t>(c), fill);
        return t;
    }
    std::size_t size() const { return v.size(); }
    double& at(int r, int c) { return v[static_cast<std::size_t>(r) * cols + c]; }
    double at(int r, int c) const { return v[static_cast<std::size_t>(r) * cols + c]; }
};

bool all_finite(std::span<const double> x);

// Max-subtracted softmax / log-softmax. The tape ops and the raw relation
// head share these so the two paths agree bit for bit.
void softmax_inplace(std::span<double> x);
void log_softmax_inplace(std::span<double> x);

struct Var {
    std::int32_t i = -1;
    bool ok() const { return i >= 0; }
};

class Tape {
  public:
    // Leaves.
    Var input(std::span<const double> values, int rows, int cols = 1);
    Var scalar(double value);
    Var param(const Tensor& t);  // grad leaf when t.requires_grad

    // Linear algebra. W is a matrix node, x a vector node.
    Var matvec(Var w, Var x);    // W x
    Var matvec_t(Var w, Var x);  // W^T x
    Var row(Var matrix, int r);  // row r as a vector

    // Shape-preserving ops.
    Var add(Var a, Var b);
    Var relu(Var a);
    Var sigmoid(Var a);
    Var tanh(Var a);
    Var mul(Var a, Var b);       // elementwise
    Var square(Var a);
    Var scale(Var a, double c);  // constant scale
    Var smul(Var s, Var a);      // tape scalar times tensor

    // Vectors.
    Var concat(Var a, Var b);
    Var softmax(Var a);
    Var log_softmax(Var a);

    // Reductions / selection.
    Var sum(Var a);
    Var pick(Var a, int index);  // scalar a[index]

    // Reverse pass from a scalar output. Grads reset on each call.
    void backward(Var output);

    std::span<const double> value(Var v) const;
    std::span<const double> grad(Var v) const;
    double scalar_value(Var v) const { return value(v)[0]; }

    int rows(Var v) const;
    int cols(Var v) const;

    void clear();  // drop nodes, keep arena capacity
    std::size_t num_nodes() const { return nodes_.size(); }

  private:
    enum class Op : std::uint8_t {
        Input, Param, MatVec, MatVecT, Row, Add, Relu, Sigmoid, Tanh, Mul,
        Square, ScaleC, SMul, Concat, Softmax, LogSoftmax, Sum, Pick,
    };

    struct Node {
        Op op;
        std::int32_t a = -1, b = -1;
        std::int32_t aux = 0;    // pick/row index
        double c = 0.0;          // ScaleC factor
        std::int32_t rows = 0, cols = 1;
        std::size_t off = 0;     // offset into the value/grad arenas
    };

    std::size_t len(const Node& n) const {
        return static_cast<std::size_t>(n.rows) * static_cast<std::size_t>(n.cols);
    }
    Var push(Node n);
    Var unary_like(Op op, Var a);
    double* val(std::int32_t i) { return vals_.data() + nodes_[i].off; }
    const double* val(std::int32_t i) const { return vals_.data() + nodes_[i].off; }
    double* grd(std::int32_t i) { return grads_.data() + nodes_[i].off; }
    void check(Var v) const;
    [[noreturn]] void shape_fail(const char* op, Var a, Var b) const;

    std::vector<Node> nodes_;
    std::vector<double> vals_;
    std::vector<double> grads_;
};

// Central-difference gradient check. `loss` evaluates the deterministic
// scalar objective at the current parameter values; `analytic` returns the
// gradient per parameter tensor, aligned with `params`. Reports the largest
// |a - n| / max(|a|, |n|, 1e-8) over all coordinates.
struct FiniteDiffResult {
    double max_rel_err = 0.0;
    std::string worst_param;
    std::size_t worst_index = 0;
};

FiniteDiffResult finite_diff_check(
    const std::vector<std::pair<std::string, Tensor*>>& params,
    const std::function<double()>& loss,
    const std::function<std::vector<std::vector<double>>()>& analytic,
    double step = 1e-5);

}  // namespace cmat::ad
