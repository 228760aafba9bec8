#pragma once
// Double-precision kernels behind the tensor engine.
//
// Every hot loop in the project (matvec, reductions, elementwise maps)
// goes through this table. Two backends: a scalar reference and an AVX2
// variant compiled separately with -mavx2 and picked at runtime. Within a
// process the backend is fixed, so results stay bit-reproducible per run.

#include <cstddef>
#include <string>

namespace cmat::kern {

enum class Backend { Auto, Scalar, Avx2 };

struct Kernels {
    const char* name;

    double (*dot)(const double* a, const double* b, std::size_t n);
    double (*sum)(const double* x, std::size_t n);
    double (*max)(const double* x, std::size_t n);  // n >= 1

    void (*add)(const double* a, const double* b, double* out, std::size_t n);
    void (*mul)(const double* a, const double* b, double* out, std::size_t n);
    void (*mul_acc)(const double* a, const double* b, double* acc, std::size_t n);
    void (*scale)(const double* x, double c, double* out, std::size_t n);
    void (*axpy)(double a, const double* x, double* y, std::size_t n);  // y += a*x
    void (*relu)(const double* x, double* out, std::size_t n);
    void (*relu_grad_acc)(const double* x, const double* g, double* acc, std::size_t n);

    // W is rows x cols, row-major.
    void (*matvec)(const double* w, const double* x, double* y,
                   std::size_t rows, std::size_t cols);           // y = W x
    void (*matvec_t_acc)(const double* w, const double* x, double* y,
                         std::size_t rows, std::size_t cols);     // y += W^T x
    void (*outer_acc)(const double* x, const double* y, double* a,
                      std::size_t rows, std::size_t cols);        // A += x y^T
};

extern const Kernels kScalar;
#if defined(__x86_64__) || defined(_M_X64)
extern const Kernels kAvx2;
#endif

// Active table. First call resolves Backend::Auto from cpu features and the
// CMAT_KERNELS environment variable (scalar|avx2|auto).
const Kernels& active();

// Force a backend (throws std::runtime_error if unsupported on this cpu).
void select(Backend b);
Backend parse_backend(const std::string& name);
bool cpu_has_avx2();

}  // namespace cmat::kern
