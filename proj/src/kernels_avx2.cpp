// AVX2 variants of the tensor kernels. Compiled with -mavx2; only reachable
// through the dispatch table after a runtime cpu check.

#include "cmat/kernels.hpp"

#if defined(__x86_64__) || defined(_M_X64)

#include <immintrin.h>

namespace cmat::kern {
namespace {

inline double hsum(__m256d v) {
    __m128d lo = _mm256_castpd256_pd128(v);
    __m128d hi = _mm256_extractf128_pd(v, 1);
    lo = _mm_add_pd(lo, hi);
    __m128d sw = _mm_unpackhi_pd(lo, lo);
    return _mm_cvtsd_f64(_mm_add_sd(lo, sw));
}

double a_dot(const double* a, const double* b, std::size_t n) {
    __m256d acc = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        __m256d va = _mm256_loadu_pd(a + i);
        __m256d vb = _mm256_loadu_pd(b + i);
        acc = _mm256_fmadd_pd(va, vb, acc);
    }
    double r = hsum(acc);
    for (; i < n; ++i) r += a[i] * b[i];
    return r;
}

double a_sum(const double* x, std::size_t n) {
    __m256d acc = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) acc = _mm256_add_pd(acc, _mm256_loadu_pd(x + i));
    double r = hsum(acc);
    for (; i < n; ++i) r += x[i];
    return r;
}

double a_max(const double* x, std::size_t n) {
    std::size_t i = 0;
    double m = x[0];
    if (n >= 4) {
        __m256d vm = _mm256_loadu_pd(x);
        for (i = 4; i + 4 <= n; i += 4) vm = _mm256_max_pd(vm, _mm256_loadu_pd(x + i));
        alignas(32) double lanes[4];
        _mm256_store_pd(lanes, vm);
        m = lanes[0];
        for (int k = 1; k < 4; ++k)
            if (lanes[k] > m) m = lanes[k];
    }
    for (; i < n; ++i)
        if (x[i] > m) m = x[i];
    return m;
}

void a_add(const double* a, const double* b, double* out, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(out + i, _mm256_add_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
    for (; i < n; ++i) out[i] = a[i] + b[i];
}

void a_mul(const double* a, const double* b, double* out, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(out + i, _mm256_mul_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
    for (; i < n; ++i) out[i] = a[i] * b[i];
}

void a_mul_acc(const double* a, const double* b, double* acc, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        __m256d v = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i),
                                    _mm256_loadu_pd(acc + i));
        _mm256_storeu_pd(acc + i, v);
    }
    for (; i < n; ++i) acc[i] += a[i] * b[i];
}

void a_scale(const double* x, double c, double* out, std::size_t n) {
    __m256d vc = _mm256_set1_pd(c);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(out + i, _mm256_mul_pd(vc, _mm256_loadu_pd(x + i)));
    for (; i < n; ++i) out[i] = c * x[i];
}

void a_axpy(double a, const double* x, double* y, std::size_t n) {
    __m256d va = _mm256_set1_pd(a);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        __m256d v = _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i));
        _mm256_storeu_pd(y + i, v);
    }
    for (; i < n; ++i) y[i] += a * x[i];
}

void a_relu(const double* x, double* out, std::size_t n) {
    __m256d z = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(out + i, _mm256_max_pd(z, _mm256_loadu_pd(x + i)));
    for (; i < n; ++i) out[i] = x[i] > 0.0 ? x[i] : 0.0;
}

void a_relu_grad_acc(const double* x, const double* g, double* acc, std::size_t n) {
    __m256d z = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        __m256d vx = _mm256_loadu_pd(x + i);
        __m256d mask = _mm256_cmp_pd(vx, z, _CMP_GT_OQ);
        __m256d vg = _mm256_and_pd(_mm256_loadu_pd(g + i), mask);
        _mm256_storeu_pd(acc + i, _mm256_add_pd(_mm256_loadu_pd(acc + i), vg));
    }
    for (; i < n; ++i)
        if (x[i] > 0.0) acc[i] += g[i];
}

void a_matvec(const double* w, const double* x, double* y,
              std::size_t rows, std::size_t cols) {
    for (std::size_t r = 0; r < rows; ++r) y[r] = a_dot(w + r * cols, x, cols);
}

void a_matvec_t_acc(const double* w, const double* x, double* y,
                    std::size_t rows, std::size_t cols) {
    for (std::size_t r = 0; r < rows; ++r) a_axpy(x[r], w + r * cols, y, cols);
}

void a_outer_acc(const double* x, const double* y, double* a,
                 std::size_t rows, std::size_t cols) {
    for (std::size_t r = 0; r < rows; ++r) a_axpy(x[r], y, a + r * cols, cols);
}

}  // namespace

const Kernels kAvx2 = {
    "avx2",
    a_dot, a_sum, a_max,
    a_add, a_mul, a_mul_acc, a_scale, a_axpy, a_relu, a_relu_grad_acc,
    a_matvec, a_matvec_t_acc, a_outer_acc,
};

}  // namespace cmat::kern

#endif  // x86_64
