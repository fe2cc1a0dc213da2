#pragma once

#include <cmath>
#include <limits>
#include <numbers>

#include <boost/math/distributions/normal.hpp>
#include <boost/math/distributions/students_t.hpp>

#include "vizrisk/error.hpp"

namespace vizrisk::dist {

/// Standard normal CDF through the complementary error function, which keeps
/// full relative precision in both tails.
inline double normal_cdf(double x) {
    return 0.5 * std::erfc(-x / std::numbers::sqrt2);
}

/// Upper tail 1 - Phi(x).
inline double normal_sf(double x) {
    return 0.5 * std::erfc(x / std::numbers::sqrt2);
}

inline double normal_quantile(double p) {
    if (!(p > 0.0 && p < 1.0)) throw input_error("normal_quantile: p must lie in (0, 1)");
    return boost::math::quantile(boost::math::normal_distribution<double>{}, p);
}

/// Survival function of chi-square with one degree of freedom:
/// P(X > w) = 2 (1 - Phi(sqrt w)) = erfc(sqrt(w / 2)).
inline double chi2_1_sf(double w) {
    if (w <= 0.0) return 1.0;
    return std::erfc(std::sqrt(0.5 * w));
}

inline double students_t_quantile(double p, double df) {
    if (!(p > 0.0 && p < 1.0)) throw input_error("students_t_quantile: p must lie in (0, 1)");
    if (!(df > 0.0)) throw input_error("students_t_quantile: df must be positive");
    return boost::math::quantile(boost::math::students_t_distribution<double>{df}, p);
}

/// Two-sided p-value P(|T| >= |t|) for Student t with `df` degrees of freedom.
inline double students_t_two_sided_p(double t, double df) {
    if (std::isnan(t)) return std::numeric_limits<double>::quiet_NaN();
    if (std::isinf(t)) return 0.0;
    const boost::math::students_t_distribution<double> d{df};
    return std::min(1.0, 2.0 * boost::math::cdf(boost::math::complement(d, std::fabs(t))));
}

}  // namespace vizrisk::dist
