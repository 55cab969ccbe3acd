#pragma once

// Almost Stochastic Order (ASO) test for comparing two score samples.

#include <cstddef>
#include <cstdint>
#include <span>

namespace weaver {

inline constexpr std::size_t kAsoGridSize = 1000;

struct AsoResult {
    double eps_min = 1.0;
    double violation_ratio = 1.0;  // point estimate on the original samples
    double tau = 0.2;
    double alpha = 0.05;
    std::size_t bootstrap_n = 1000;
    std::uint64_t seed = 0;
    bool dominant = false;  // eps_min < tau
};

// Linear interpolation between order statistics of a sorted sample.
double empirical_quantile(std::span<const double> sorted, double t);

// Share of the squared quantile gap where a's quantile function lies below
// b's, on a uniform grid of `grid_size` points in (0, 1). 0 means a dominates
// b everywhere; when the quantile functions coincide the result is 1.
double violation_ratio(std::span<const double> a, std::span<const double> b, std::size_t grid_size = kAsoGridSize);

// eps_min: one-sided (1 - alpha) upper confidence bound on the violation
// ratio, from a bootstrap estimate of its spread, clamped to [0, 1].
AsoResult aso(std::span<const double> a, std::span<const double> b, double alpha = 0.05, double tau = 0.2,
              std::size_t bootstrap_n = 1000, std::uint64_t seed = 0);

}  // namespace weaver
