#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <stdexcept>
#include <utility>

#include "bbllab/exponent.hpp"

namespace bbllab {

namespace detail {

// Switch to log-domain evaluation once the direct formula risks
// overflow/underflow: values outside [1e-150, 1e150], or |alpha * log a|
// beyond the exponent range.
inline bool needs_log_domain(double a, double b, double alpha) {
    const double lo = 1e-150, hi = 1e150;
    if (a < lo || a > hi || b < lo || b > hi) return true;
    const double biggest = std::max(std::abs(std::log(a)), std::abs(std::log(b)));
    return std::abs(alpha) * biggest > 500.0;
}

// log of ((1-lam) e^{la} + lam e^{lb}) via log-sum-exp.
inline double log_weighted_sum_exp(double la, double lb, double lam) {
    const double mx = std::max(la, lb);
    return mx + std::log((1.0 - lam) * std::exp(la - mx) + lam * std::exp(lb - mx));
}

}  // namespace detail

/// Weighted power mean M_alpha(a, b; lam) of two nonnegative numbers.
/// Returns 0 whenever a*b = 0, for every alpha including the infinities.
/// The alpha -> 0 limit (geometric mean) is taken for |alpha| < 1e-10.
inline double power_mean(double a, double b, double lam, Exponent alpha) {
    if (!(a >= 0.0) || !(b >= 0.0))
        throw std::domain_error("power_mean: arguments must be nonnegative");
    if (!(lam > 0.0 && lam < 1.0))
        throw std::domain_error("power_mean: lambda must lie in (0,1)");
    if (a == 0.0 || b == 0.0) return 0.0;
    if (alpha.is_pos_inf()) return std::max(a, b);
    if (alpha.is_neg_inf()) return std::min(a, b);
    const double al = alpha.value();
    const double la = std::log(a), lb = std::log(b);
    if (std::abs(al) < 1e-10)
        return std::exp((1.0 - lam) * la + lam * lb);
    if (detail::needs_log_domain(a, b, al))
        return std::exp(detail::log_weighted_sum_exp(al * la, al * lb, lam) / al);
    return std::pow((1.0 - lam) * std::pow(a, al) + lam * std::pow(b, al), 1.0 / al);
}

/// k-ary power mean M_alpha(a; w). Zero if any entry of a is zero.
inline double power_mean_k(std::span<const double> a, const WeightVector& w, Exponent alpha) {
    if (a.size() != w.size())
        throw std::invalid_argument("power_mean_k: length mismatch");
    for (double ai : a) {
        if (!(ai >= 0.0)) throw std::domain_error("power_mean_k: arguments must be nonnegative");
        if (ai == 0.0) return 0.0;
    }
    if (alpha.is_pos_inf()) return *std::max_element(a.begin(), a.end());
    if (alpha.is_neg_inf()) return *std::min_element(a.begin(), a.end());
    const double al = alpha.value();
    if (std::abs(al) < 1e-10) {
        double s = 0.0;
        for (std::size_t i = 0; i < a.size(); ++i) s += w[i] * std::log(a[i]);
        return std::exp(s);
    }
    bool log_domain = false;
    for (double ai : a)
        if (detail::needs_log_domain(ai, ai, al)) log_domain = true;
    if (log_domain) {
        double mx = -std::numeric_limits<double>::infinity();
        for (double ai : a) mx = std::max(mx, al * std::log(ai));
        double s = 0.0;
        for (std::size_t i = 0; i < a.size(); ++i)
            s += w[i] * std::exp(al * std::log(a[i]) - mx);
        return std::exp((mx + std::log(s)) / al);
    }
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += w[i] * std::pow(a[i], al);
    return std::pow(s, 1.0 / al);
}

struct ShiftBound {
    double lower = 0.0;
    double upper = 0.0;
};

/// Bracketing of M_alpha(a+s, b+s; lam) - M_alpha(a, b; lam) for alpha < 0:
///   s  <=  difference  <=  s * min{1-lam, lam}^{1/alpha}.
/// Proved only for negative exponents; alpha >= 0 is rejected.
inline ShiftBound mean_shift_bound(double a, double b, double lam, double alpha, double s) {
    if (!(alpha < 0.0) || !std::isfinite(alpha))
        throw std::domain_error("mean_shift_bound: alpha must be finite and negative");
    if (!(s > 0.0)) throw std::domain_error("mean_shift_bound: shift must be positive");
    if (!(a >= 0.0) || !(b >= 0.0))
        throw std::domain_error("mean_shift_bound: arguments must be nonnegative");
    if (!(lam > 0.0 && lam < 1.0))
        throw std::domain_error("mean_shift_bound: lambda must lie in (0,1)");
    ShiftBound out;
    out.lower = s;
    out.upper = s * std::pow(std::min(1.0 - lam, lam), 1.0 / alpha);
    return out;
}

}  // namespace bbllab
