#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "hm/errors.hpp"

namespace hm {

using Vec = std::vector<double>;

// Minimal row-major matrix of doubles. All model/analysis math is f64.
struct Mat {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Mat() = default;
    Mat(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

    double& at(std::size_t i, std::size_t j) { return data[i * cols + j]; }
    double at(std::size_t i, std::size_t j) const { return data[i * cols + j]; }

    double* row(std::size_t i) { return data.data() + i * cols; }
    const double* row(std::size_t i) const { return data.data() + i * cols; }

    bool empty() const { return data.empty(); }
    std::size_t size() const { return data.size(); }
};

inline bool all_finite(const double* x, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
        if (!std::isfinite(x[i])) return false;
    }
    return true;
}

inline bool all_finite(const Mat& m) { return all_finite(m.data.data(), m.size()); }
inline bool all_finite(const Vec& v) { return all_finite(v.data(), v.size()); }

} // namespace hm
