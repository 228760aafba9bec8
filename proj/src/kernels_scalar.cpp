#include "cmat/kernels.hpp"

namespace cmat::kern {
namespace {

double s_dot(const double* a, const double* b, std::size_t n) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
    return acc;
}

double s_sum(const double* x, std::size_t n) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += x[i];
    return acc;
}

double s_max(const double* x, std::size_t n) {
    double m = x[0];
    for (std::size_t i = 1; i < n; ++i)
        if (x[i] > m) m = x[i];
    return m;
}

void s_add(const double* a, const double* b, double* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
}

void s_mul(const double* a, const double* b, double* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
}

void s_mul_acc(const double* a, const double* b, double* acc, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) acc[i] += a[i] * b[i];
}

void s_scale(const double* x, double c, double* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = c * x[i];
}

void s_axpy(double a, const double* x, double* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

void s_relu(const double* x, double* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = x[i] > 0.0 ? x[i] : 0.0;
}

void s_relu_grad_acc(const double* x, const double* g, double* acc, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i)
        if (x[i] > 0.0) acc[i] += g[i];
}

void s_matvec(const double* w, const double* x, double* y,
              std::size_t rows, std::size_t cols) {
    for (std::size_t r = 0; r < rows; ++r) y[r] = s_dot(w + r * cols, x, cols);
}

void s_matvec_t_acc(const double* w, const double* x, double* y,
                    std::size_t rows, std::size_t cols) {
    for (std::size_t r = 0; r < rows; ++r) s_axpy(x[r], w + r * cols, y, cols);
}

void s_outer_acc(const double* x, const double* y, double* a,
                 std::size_t rows, std::size_t cols) {
    for (std::size_t r = 0; r < rows; ++r) s_axpy(x[r], y, a + r * cols, cols);
}

}  // namespace

const Kernels kScalar = {
    "scalar",
    s_dot, s_sum, s_max,
    s_add, s_mul, s_mul_acc, s_scale, s_axpy, s_relu, s_relu_grad_acc,
    s_matvec, s_matvec_t_acc, s_outer_acc,
};

}  // namespace cmat::kern
