#include "hm/kernels.hpp"

#include <cmath>
#include <cstdlib>
#include <string>

#include "hm/errors.hpp"

namespace hm::kernels {

namespace detail {

double dot_scalar(const double* a, const double* b, std::size_t n) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
    return acc;
}

void axpy_scalar(double alpha, const double* x, double* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void scale_scalar(double* x, double alpha, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) x[i] *= alpha;
}

double sum_scalar(const double* x, std::size_t n) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += x[i];
    return acc;
}

double sumsq_scalar(const double* x, std::size_t n) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += x[i] * x[i];
    return acc;
}

void hadamard_scalar(double* a, const double* b, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) a[i] *= b[i];
}

void scaled_mul_scalar(double* out, const double* x, const double* g, double s, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = x[i] * g[i] * s;
}

#ifndef HM_HAVE_AVX2_TU
// Stubs keep the dispatch table total on non-AVX2 builds; set_backend
// refuses avx2 before any of these can be reached.
double dot_avx2(const double* a, const double* b, std::size_t n) { return dot_scalar(a, b, n); }
void axpy_avx2(double alpha, const double* x, double* y, std::size_t n) { axpy_scalar(alpha, x, y, n); }
void scale_avx2(double* x, double alpha, std::size_t n) { scale_scalar(x, alpha, n); }
double sum_avx2(const double* x, std::size_t n) { return sum_scalar(x, n); }
double sumsq_avx2(const double* x, std::size_t n) { return sumsq_scalar(x, n); }
void hadamard_avx2(double* a, const double* b, std::size_t n) { hadamard_scalar(a, b, n); }
void scaled_mul_avx2(double* out, const double* x, const double* g, double s, std::size_t n) {
    scaled_mul_scalar(out, x, g, s, n);
}
#endif

} // namespace detail

bool avx2_available() {
#if defined(HM_HAVE_AVX2_TU) && (defined(__x86_64__) || defined(_M_X64))
    return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
    return false;
#endif
}

namespace {
Backend resolve_default() {
    return avx2_available() ? Backend::avx2 : Backend::scalar;
}
Backend g_backend = resolve_default();
} // namespace

Backend backend() { return g_backend; }

void set_backend(Backend b) {
    if (b == Backend::avx2 && !avx2_available()) {
        throw ConfigError("kernel backend 'avx2' not available on this cpu/build");
    }
    g_backend = b;
}

void set_backend_from_env() {
    const char* env = std::getenv("HIERMECH_BACKEND");
    if (env == nullptr) return;
    const std::string v(env);
    if (v == "scalar") {
        set_backend(Backend::scalar);
    } else if (v == "avx2") {
        set_backend(Backend::avx2);
    } else if (!v.empty()) {
        throw ConfigError("HIERMECH_BACKEND must be 'scalar' or 'avx2', got '" + v + "'");
    }
}

std::string backend_name() {
    return g_backend == Backend::avx2 ? "avx2" : "scalar";
}

double dot(const double* a, const double* b, std::size_t n) {
    return g_backend == Backend::avx2 ? detail::dot_avx2(a, b, n) : detail::dot_scalar(a, b, n);
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
    if (g_backend == Backend::avx2) {
        detail::axpy_avx2(alpha, x, y, n);
    } else {
        detail::axpy_scalar(alpha, x, y, n);
    }
}

void scale(double* x, double alpha, std::size_t n) {
    if (g_backend == Backend::avx2) {
        detail::scale_avx2(x, alpha, n);
    } else {
        detail::scale_scalar(x, alpha, n);
    }
}

double sum(const double* x, std::size_t n) {
    return g_backend == Backend::avx2 ? detail::sum_avx2(x, n) : detail::sum_scalar(x, n);
}

double sumsq(const double* x, std::size_t n) {
    return g_backend == Backend::avx2 ? detail::sumsq_avx2(x, n) : detail::sumsq_scalar(x, n);
}

void hadamard(double* a, const double* b, std::size_t n) {
    if (g_backend == Backend::avx2) {
        detail::hadamard_avx2(a, b, n);
    } else {
        detail::hadamard_scalar(a, b, n);
    }
}

void scaled_mul(double* out, const double* x, const double* g, double s, std::size_t n) {
    if (g_backend == Backend::avx2) {
        detail::scaled_mul_avx2(out, x, g, s, n);
    } else {
        detail::scaled_mul_scalar(out, x, g, s, n);
    }
}

void softmax_inplace(double* x, std::size_t n) {
    if (n == 0) return;
    double max_val = x[0];
    for (std::size_t i = 1; i < n; ++i) max_val = std::max(max_val, x[i]);
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        x[i] = std::exp(x[i] - max_val);
        total += x[i];
    }
    const double inv = 1.0 / total;
    for (std::size_t i = 0; i < n; ++i) x[i] *= inv;
}

void silu_inplace(double* x, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
        x[i] = x[i] / (1.0 + std::exp(-x[i]));
    }
}

std::size_t argmax_tie_lowest(const double* x, std::size_t n) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < n; ++i) {
        if (x[i] > x[best]) best = i;
    }
    return best;
}

void gemm_nn(double* c, const double* a, const double* b,
             std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        double* c_row = c + i * n;
        const double* a_row = a + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            axpy(a_row[p], b + p * n, c_row, n);
        }
    }
}

void gemm_tn(double* c, const double* a, const double* b,
             std::size_t m, std::size_t k, std::size_t n) {
    // a is stored k x m; C[i,:] += sum_p a[p,i] * B[p,:]
    for (std::size_t p = 0; p < k; ++p) {
        const double* a_row = a + p * m;
        const double* b_row = b + p * n;
        for (std::size_t i = 0; i < m; ++i) {
            axpy(a_row[i], b_row, c + i * n, n);
        }
    }
}

void gemm_nt(double* c, const double* a, const double* b,
             std::size_t m, std::size_t k, std::size_t n) {
    // b is stored n x k; C[i,j] += dot(A[i,:], B[j,:])
    for (std::size_t i = 0; i < m; ++i) {
        const double* a_row = a + i * k;
        double* c_row = c + i * n;
        for (std::size_t j = 0; j < n; ++j) {
            c_row[j] += dot(a_row, b + j * k, k);
        }
    }
}

} // namespace hm::kernels
