#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <vector>

#include "hm/kernels.hpp"
#include "hm/rng.hpp"

using namespace hm;
namespace ker = kernels;

namespace {

std::vector<double> random_vec(std::size_t n, std::uint64_t seed, double scale = 1.0) {
    Rng rng(seed);
    std::vector<double> v(n);
    for (double& x : v) x = scale * rng.gaussian();
    return v;
}

// reference triple-loop gemm used as the oracle for all three layouts
void gemm_ref(std::vector<double>& c, const std::vector<double>& a, const std::vector<double>& b,
              std::size_t m, std::size_t k, std::size_t n, char mode) {
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            double acc = 0.0;
            for (std::size_t p = 0; p < k; ++p) {
                const double av = mode == 't' ? a[p * m + i] : a[i * k + p];
                const double bv = mode == 'b' ? b[j * k + p] : b[p * n + j];
                acc += av * bv;
            }
            c[i * n + j] += acc;
        }
    }
}

} // namespace

TEST_CASE("dot/sum/sumsq hand values") {
    const std::vector<double> a = {1.0, 2.0, 3.0};
    const std::vector<double> b = {4.0, 5.0, 6.0};
    CHECK(ker::dot(a.data(), b.data(), 3) == doctest::Approx(32.0));
    CHECK(ker::sum(a.data(), 3) == doctest::Approx(6.0));
    CHECK(ker::sumsq(b.data(), 3) == doctest::Approx(77.0));
    CHECK(ker::dot(a.data(), b.data(), 0) == 0.0);
}

TEST_CASE("axpy and scale hand values") {
    std::vector<double> y = {1.0, 1.0, 1.0};
    const std::vector<double> x = {1.0, 2.0, 3.0};
    ker::axpy(2.0, x.data(), y.data(), 3);
    CHECK(y == std::vector<double>{3.0, 5.0, 7.0});
    ker::scale(y.data(), 0.5, 3);
    CHECK(y == std::vector<double>{1.5, 2.5, 3.5});
}

TEST_CASE("scalar and avx2 variants agree on every size") {
    if (!ker::avx2_available()) {
        MESSAGE("avx2 not available; skipping equivalence checks");
        return;
    }
    for (std::size_t n : {std::size_t(1), std::size_t(2), std::size_t(3), std::size_t(4),
                          std::size_t(5), std::size_t(7), std::size_t(8), std::size_t(9),
                          std::size_t(15), std::size_t(16), std::size_t(17), std::size_t(63),
                          std::size_t(64), std::size_t(100), std::size_t(1000)}) {
        const auto a = random_vec(n, 100 + n);
        const auto b = random_vec(n, 200 + n);

        CHECK(ker::detail::dot_avx2(a.data(), b.data(), n) ==
              doctest::Approx(ker::detail::dot_scalar(a.data(), b.data(), n)).epsilon(1e-12));
        CHECK(ker::detail::sum_avx2(a.data(), n) ==
              doctest::Approx(ker::detail::sum_scalar(a.data(), n)).epsilon(1e-12));
        CHECK(ker::detail::sumsq_avx2(a.data(), n) ==
              doctest::Approx(ker::detail::sumsq_scalar(a.data(), n)).epsilon(1e-12));

        auto y1 = random_vec(n, 300 + n);
        auto y2 = y1;
        ker::detail::axpy_scalar(0.7, a.data(), y1.data(), n);
        ker::detail::axpy_avx2(0.7, a.data(), y2.data(), n);
        for (std::size_t i = 0; i < n; ++i) CHECK(y1[i] == doctest::Approx(y2[i]).epsilon(1e-14));

        auto s1 = a;
        auto s2 = a;
        ker::detail::scale_scalar(s1.data(), -1.3, n);
        ker::detail::scale_avx2(s2.data(), -1.3, n);
        CHECK(s1 == s2);  // pure elementwise multiply is bit-identical

        auto h1 = a;
        auto h2 = a;
        ker::detail::hadamard_scalar(h1.data(), b.data(), n);
        ker::detail::hadamard_avx2(h2.data(), b.data(), n);
        CHECK(h1 == h2);

        std::vector<double> o1(n), o2(n);
        ker::detail::scaled_mul_scalar(o1.data(), a.data(), b.data(), 1.7, n);
        ker::detail::scaled_mul_avx2(o2.data(), a.data(), b.data(), 1.7, n);
        for (std::size_t i = 0; i < n; ++i) CHECK(o1[i] == doctest::Approx(o2[i]).epsilon(1e-14));
    }
}

TEST_CASE("backend selection") {
    const auto saved = ker::backend();
    ker::set_backend(ker::Backend::scalar);
    CHECK(ker::backend_name() == "scalar");
    if (ker::avx2_available()) {
        ker::set_backend(ker::Backend::avx2);
        CHECK(ker::backend_name() == "avx2");
    }
    ker::set_backend(saved);
}

TEST_CASE("gemm layouts match the reference") {
    const std::size_t m = 5, k = 7, n = 6;

    SUBCASE("nn") {
        const auto a = random_vec(m * k, 1);
        const auto b = random_vec(k * n, 2);
        std::vector<double> c(m * n, 0.25), ref(m * n, 0.25);
        ker::gemm_nn(c.data(), a.data(), b.data(), m, k, n);
        gemm_ref(ref, a, b, m, k, n, 'n');
        for (std::size_t i = 0; i < m * n; ++i)
            CHECK(c[i] == doctest::Approx(ref[i]).epsilon(1e-12));
    }
    SUBCASE("tn: a stored k x m") {
        const auto a = random_vec(k * m, 3);
        const auto b = random_vec(k * n, 4);
        std::vector<double> c(m * n, 0.0), ref(m * n, 0.0);
        ker::gemm_tn(c.data(), a.data(), b.data(), m, k, n);
        gemm_ref(ref, a, b, m, k, n, 't');
        for (std::size_t i = 0; i < m * n; ++i)
            CHECK(c[i] == doctest::Approx(ref[i]).epsilon(1e-12));
    }
    SUBCASE("nt: b stored n x k") {
        const auto a = random_vec(m * k, 5);
        const auto b = random_vec(n * k, 6);
        std::vector<double> c(m * n, 0.0), ref(m * n, 0.0);
        ker::gemm_nt(c.data(), a.data(), b.data(), m, k, n);
        gemm_ref(ref, a, b, m, k, n, 'b');
        for (std::size_t i = 0; i < m * n; ++i)
            CHECK(c[i] == doctest::Approx(ref[i]).epsilon(1e-12));
    }
}

TEST_CASE("softmax is normalized and shift-stable") {
    std::vector<double> x = {1.0, 2.0, 3.0, 4.0};
    ker::softmax_inplace(x.data(), x.size());
    CHECK(ker::sum(x.data(), x.size()) == doctest::Approx(1.0).epsilon(1e-14));
    for (std::size_t i = 1; i < x.size(); ++i) CHECK(x[i] > x[i - 1]);

    std::vector<double> big = {1000.0, 1000.0};
    ker::softmax_inplace(big.data(), 2);
    CHECK(big[0] == doctest::Approx(0.5));

    std::vector<double> one = {3.7};
    ker::softmax_inplace(one.data(), 1);
    CHECK(one[0] == 1.0);
}

TEST_CASE("silu matches x * sigmoid(x)") {
    std::vector<double> x = {-2.0, -0.5, 0.0, 0.5, 2.0};
    const std::vector<double> orig = x;
    ker::silu_inplace(x.data(), x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double expected = orig[i] / (1.0 + std::exp(-orig[i]));
        CHECK(x[i] == doctest::Approx(expected).epsilon(1e-15));
    }
    CHECK(x[2] == 0.0);
}

TEST_CASE("argmax breaks ties to the lowest index") {
    const std::vector<double> x = {0.1, 0.9, 0.9, 0.3};
    CHECK(ker::argmax_tie_lowest(x.data(), x.size()) == 1);
    const std::vector<double> y = {5.0};
    CHECK(ker::argmax_tie_lowest(y.data(), 1) == 0);
}
