#pragma once

#include <cstddef>
#include <string>

namespace hm::kernels {

// f64 inner-loop kernels behind the whole engine. Every op has a scalar
// reference implementation and (on x86_64) an AVX2+FMA variant; the
// active backend is resolved once at startup from cpuid and can be
// overridden via set_backend() or the HIERMECH_BACKEND env var
// ("scalar" | "avx2"). Scalar and SIMD variants are equivalence-tested
// against each other; within one backend results are bit-stable.

enum class Backend { scalar, avx2 };

bool avx2_available();
Backend backend();
void set_backend(Backend b);          // throws ConfigError if unavailable
void set_backend_from_env();          // honors HIERMECH_BACKEND if set
std::string backend_name();

// sum_i a[i]*b[i]
double dot(const double* a, const double* b, std::size_t n);
// y[i] += alpha * x[i]
void axpy(double alpha, const double* x, double* y, std::size_t n);
// x[i] *= alpha
void scale(double* x, double alpha, std::size_t n);
double sum(const double* x, std::size_t n);
double sumsq(const double* x, std::size_t n);
// a[i] *= b[i]
void hadamard(double* a, const double* b, std::size_t n);
// out[i] = x[i] * g[i] * s   (norm apply)
void scaled_mul(double* out, const double* x, const double* g, double s, std::size_t n);

// The ops below are scalar-only: exp/argmax dominated, no SIMD variant.

// in-place stable softmax over x[0..n)
void softmax_inplace(double* x, std::size_t n);
// x[i] = x[i] * sigmoid(x[i])
void silu_inplace(double* x, std::size_t n);
// index of the maximum; ties resolved to the lowest index
std::size_t argmax_tie_lowest(const double* x, std::size_t n);

// Row-major GEMM built on the vector kernels (ikj / axpy order):
//   C[m x n] += A[m x k] * B[k x n]
void gemm_nn(double* c, const double* a, const double* b,
             std::size_t m, std::size_t k, std::size_t n);
//   C[m x n] += A^T[m x k] * B[k x n]   (A stored k x m)
void gemm_tn(double* c, const double* a, const double* b,
             std::size_t m, std::size_t k, std::size_t n);
//   C[m x n] += A[m x k] * B^T[k x n]   (B stored n x k)
void gemm_nt(double* c, const double* a, const double* b,
             std::size_t m, std::size_t k, std::size_t n);

namespace detail {
// per-backend entry points (exposed for the equivalence tests)
double dot_scalar(const double* a, const double* b, std::size_t n);
void axpy_scalar(double alpha, const double* x, double* y, std::size_t n);
void scale_scalar(double* x, double alpha, std::size_t n);
double sum_scalar(const double* x, std::size_t n);
double sumsq_scalar(const double* x, std::size_t n);
void hadamard_scalar(double* a, const double* b, std::size_t n);
void scaled_mul_scalar(double* out, const double* x, const double* g, double s, std::size_t n);

double dot_avx2(const double* a, const double* b, std::size_t n);
void axpy_avx2(double alpha, const double* x, double* y, std::size_t n);
void scale_avx2(double* x, double alpha, std::size_t n);
double sum_avx2(const double* x, std::size_t n);
double sumsq_avx2(const double* x, std::size_t n);
void hadamard_avx2(double* a, const double* b, std::size_t n);
void scaled_mul_avx2(double* out, const double* x, const double* g, double s, std::size_t n);
} // namespace detail

} // namespace hm::kernels
