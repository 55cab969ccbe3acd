#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "weaver/error.hpp"
#include "weaver/rng.hpp"
#include "weaver/stats.hpp"

using namespace weaver;

namespace {

// Order statistic interpolation written out directly.
double oracle_quantile(std::vector<double> s, double t) {
    std::sort(s.begin(), s.end());
    const double pos = t * static_cast<double>(s.size() - 1);
    const std::size_t k = static_cast<std::size_t>(pos);
    if (k + 1 >= s.size()) {
        return s.back();
    }
    return s[k] * (1.0 - (pos - static_cast<double>(k))) + s[k + 1] * (pos - static_cast<double>(k));
}

double oracle_ratio(const std::vector<double>& a, const std::vector<double>& b, std::size_t grid) {
    double below = 0.0;
    double all = 0.0;
    for (std::size_t k = 1; k <= grid; ++k) {
        const double t = (2.0 * static_cast<double>(k) - 1.0) / (2.0 * static_cast<double>(grid));
        const double d = oracle_quantile(a, t) - oracle_quantile(b, t);
        all += d * d;
        below += d < 0.0 ? d * d : 0.0;
    }
    return all == 0.0 ? 1.0 : below / all;
}

std::vector<double> sample(Rng& rng, std::size_t n, double lo, double hi) {
    std::vector<double> v(n);
    for (double& x : v) {
        x = uniform(rng, lo, hi);
    }
    return v;
}

}  // namespace

TEST_CASE("violation_ratio examples") {
    const std::vector<double> b = {0.61, 0.64, 0.58, 0.7, 0.66};
    std::vector<double> a = b;
    for (double& v : a) {
        v += 10.0;
    }
    CHECK(violation_ratio(a, b) == 0.0);
    CHECK(violation_ratio(b, a) == 1.0);
    CHECK(violation_ratio(b, b) == 1.0);
    CHECK(oracle_ratio(a, b, 1000) == 0.0);

    CHECK_THROWS_AS(violation_ratio(std::vector<double>{1.0}, b), ArgumentError);
    CHECK_THROWS_AS(violation_ratio(b, std::vector<double>{}), ArgumentError);
    CHECK_THROWS_AS(violation_ratio(std::vector<double>{1.0, NAN}, b), ArgumentError);
}

TEST_CASE("empirical_quantile interpolates order statistics") {
    const std::vector<double> s = {1.0, 2.0, 4.0};
    CHECK(empirical_quantile(s, 0.0) == 1.0);
    CHECK(empirical_quantile(s, 0.25) == 1.5);
    CHECK(empirical_quantile(s, 0.75) == 3.0);
    CHECK(empirical_quantile(s, 1.0) == 4.0);
}

TEST_CASE("violation_ratio matches the grid oracle, is antisymmetric and monotone (property)") {
    Rng rng(55);
    for (int trial = 0; trial < 200; ++trial) {
        const auto a = sample(rng, 2 + uniform_index(rng, 12), 0.0, 1.0);
        const auto b = sample(rng, 2 + uniform_index(rng, 12), 0.2, 1.1);
        const double ab = violation_ratio(a, b);
        const double ba = violation_ratio(b, a);
        CHECK(ab == doctest::Approx(oracle_ratio(a, b, kAsoGridSize)).epsilon(1e-12));
        CHECK(ab >= 0.0);
        CHECK(ab <= 1.0);
        CHECK(std::abs(ab + ba - 1.0) <= 2.0 / static_cast<double>(kAsoGridSize));

        auto shifted = a;
        const double c = uniform(rng, 0.0, 0.5);
        for (double& v : shifted) {
            v += c;
        }
        CHECK(violation_ratio(shifted, b) <= ab + 1e-12);
    }
}

TEST_CASE("aso examples") {
    const std::vector<double> lo = {0.5, 0.5, 0.5, 0.5, 0.5};
    const std::vector<double> hi = {0.8, 0.8, 0.8, 0.8, 0.8};
    const AsoResult dom = aso(hi, lo);
    CHECK(dom.eps_min == 0.0);
    CHECK(dom.dominant);

    const AsoResult same = aso(lo, lo);
    CHECK(same.eps_min == 1.0);
    CHECK_FALSE(same.dominant);

    const AsoResult rev = aso(lo, hi);
    CHECK(rev.eps_min == 1.0);

    CHECK_THROWS_AS(aso(lo, hi, 0.05, 0.2, 10), ArgumentError);
    CHECK_THROWS_AS(aso(lo, hi, 1.5), ArgumentError);
}

TEST_CASE("aso is deterministic per seed and clamped (property)") {
    Rng rng(77);
    for (int trial = 0; trial < 20; ++trial) {
        const auto a = sample(rng, 10, 0.6, 0.9);
        const auto b = sample(rng, 10, 0.5, 0.85);
        const std::uint64_t seed = rng();
        const AsoResult r1 = aso(a, b, 0.05, 0.2, 200, seed);
        const AsoResult r2 = aso(a, b, 0.05, 0.2, 200, seed);
        CHECK(r1.eps_min == r2.eps_min);
        CHECK(r1.eps_min >= 0.0);
        CHECK(r1.eps_min <= 1.0);
        CHECK(r1.dominant == (r1.eps_min < r1.tau));
        CHECK(r1.violation_ratio == violation_ratio(a, b));
        // The upper bound sits at or above the point estimate.
        CHECK(r1.eps_min >= std::min(1.0, r1.violation_ratio) - 1e-12);
    }
}

TEST_CASE("aso separates clearly ordered samples") {
    const std::vector<double> a = {0.81, 0.83, 0.80, 0.84, 0.82, 0.85, 0.79, 0.83, 0.82, 0.84};
    const std::vector<double> b = {0.70, 0.73, 0.69, 0.74, 0.72, 0.71, 0.75, 0.70, 0.72, 0.73};
    CHECK(aso(a, b).eps_min < 0.2);
    CHECK(aso(b, a).eps_min > 0.8);
}
