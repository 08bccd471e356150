#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "nacd/rng.hpp"
#include "nacd/tensor.hpp"

namespace testutil {

inline double rel_err(double got, double want) {
    const double denom = std::max({std::fabs(got), std::fabs(want), 1e-12});
    return std::fabs(got - want) / denom;
}

// Central finite difference of f along coordinate i of x.
inline double central_diff(const std::function<double(const std::vector<double>&)>& f,
                           std::vector<double> x, size_t i, double h = 1e-5) {
    x[i] += h;
    const double up = f(x);
    x[i] -= 2 * h;
    const double down = f(x);
    return (up - down) / (2 * h);
}

inline std::vector<double> random_vec(nacd::Rng& rng, size_t n, double scale = 1.0) {
    std::vector<double> v(n);
    for (auto& x : v) x = rng.next_normal() * scale;
    return v;
}

}  // namespace testutil
