#include "weaver/stats.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include <boost/math/distributions/normal.hpp>
#include <fmt/format.h>

#include "weaver/error.hpp"
#include "weaver/rng.hpp"

namespace weaver {

double empirical_quantile(std::span<const double> sorted, double t) {
    const double h = t * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(h));
    if (lo + 1 >= sorted.size()) {
        return sorted.back();
    }
    const double frac = h - static_cast<double>(lo);
    return sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]);
}

namespace {

void require_sample(std::span<const double> s, const char* which) {
    if (s.size() < 2) {
        throw ArgumentError(fmt::format("ASO: sample {} needs at least 2 values, got {}", which, s.size()));
    }
    for (double v : s) {
        if (!std::isfinite(v)) {
            throw ArgumentError(fmt::format("ASO: sample {} contains a non-finite value", which));
        }
    }
}

double violation_ratio_sorted(std::span<const double> a, std::span<const double> b, std::size_t grid) {
    double violation = 0.0;
    double total = 0.0;
    for (std::size_t k = 0; k < grid; ++k) {
        const double t = (static_cast<double>(k) + 0.5) / static_cast<double>(grid);
        const double gap = empirical_quantile(a, t) - empirical_quantile(b, t);
        const double sq = gap * gap;
        total += sq;
        if (gap < 0.0) {
            violation += sq;
        }
    }
    return total > 0.0 ? violation / total : 1.0;
}

std::vector<double> sorted_copy(std::span<const double> s) {
    std::vector<double> v(s.begin(), s.end());
    std::sort(v.begin(), v.end());
    return v;
}

}  // namespace

double violation_ratio(std::span<const double> a, std::span<const double> b, std::size_t grid_size) {
    require_sample(a, "a");
    require_sample(b, "b");
    if (grid_size == 0) {
        throw ArgumentError("ASO: grid size must be positive");
    }
    const auto sa = sorted_copy(a);
    const auto sb = sorted_copy(b);
    return violation_ratio_sorted(sa, sb, grid_size);
}

AsoResult aso(std::span<const double> a, std::span<const double> b, double alpha, double tau, std::size_t bootstrap_n,
              std::uint64_t seed) {
    require_sample(a, "a");
    require_sample(b, "b");
    if (!(alpha > 0.0 && alpha < 1.0)) {
        throw ArgumentError("ASO: alpha must lie in (0, 1)");
    }
    if (bootstrap_n < 100) {
        throw ArgumentError("ASO: bootstrap_n must be >= 100");
    }
    AsoResult result;
    result.tau = tau;
    result.alpha = alpha;
    result.bootstrap_n = bootstrap_n;
    result.seed = seed;

    const auto sa = sorted_copy(a);
    const auto sb = sorted_copy(b);
    const double eps_hat = violation_ratio_sorted(sa, sb, kAsoGridSize);
    result.violation_ratio = eps_hat;

    const auto n = static_cast<double>(a.size());
    const auto m = static_cast<double>(b.size());
    const double scale = std::sqrt(n * m / (n + m));

    // Each iteration has its own derived stream, so iterations are order-free.
    std::vector<double> deviations(bootstrap_n);
    std::vector<double> ra(a.size());
    std::vector<double> rb(b.size());
    for (std::size_t it = 0; it < bootstrap_n; ++it) {
        Rng rng(derive_seed(seed, it));
        for (double& v : ra) {
            v = sa[uniform_index(rng, sa.size())];
        }
        for (double& v : rb) {
            v = sb[uniform_index(rng, sb.size())];
        }
        std::sort(ra.begin(), ra.end());
        std::sort(rb.begin(), rb.end());
        deviations[it] = scale * (violation_ratio_sorted(ra, rb, kAsoGridSize) - eps_hat);
    }
    double mean = 0.0;
    for (double d : deviations) {
        mean += d;
    }
    mean /= static_cast<double>(bootstrap_n);
    double var = 0.0;
    for (double d : deviations) {
        var += (d - mean) * (d - mean);
    }
    const double sigma = std::sqrt(var / static_cast<double>(bootstrap_n));

    const double z = boost::math::quantile(boost::math::normal_distribution<double>(), 1.0 - alpha);
    result.eps_min = std::clamp(eps_hat + z * sigma / scale, 0.0, 1.0);
    result.dominant = result.eps_min < tau;
    return result;
}

}  // namespace weaver
