#include "cmat/kernels.hpp"

#include <cstdlib>
#include <stdexcept>

namespace cmat::kern {
namespace {

const Kernels* g_active = nullptr;

const Kernels* resolve(Backend b) {
    switch (b) {
        case Backend::Scalar:
            return &kScalar;
        case Backend::Avx2:
#if defined(__x86_64__) || defined(_M_X64)
            if (cpu_has_avx2()) return &kAvx2;
#endif
            throw std::runtime_error("kernels: avx2 backend not supported on this cpu");
        case Backend::Auto:
#if defined(__x86_64__) || defined(_M_X64)
            if (cpu_has_avx2()) return &kAvx2;
#endif
            return &kScalar;
    }
    return &kScalar;
}

}  // namespace

bool cpu_has_avx2() {
#if defined(__x86_64__) || defined(_M_X64)
    return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
    return false;
#endif
}

Backend parse_backend(const std::string& name) {
    if (name == "scalar") return Backend::Scalar;
    if (name == "avx2") return Backend::Avx2;
    if (name == "auto" || name.empty()) return Backend::Auto;
    throw std::runtime_error("kernels: unknown backend '" + name + "' (scalar|avx2|auto)");
}

void select(Backend b) { g_active = resolve(b); }

const Kernels& active() {
    if (!g_active) {
        const char* env = std::getenv("CMAT_KERNELS");
        g_active = resolve(parse_backend(env ? env : "auto"));
    }
    return *g_active;
}

}  // namespace cmat::kern
