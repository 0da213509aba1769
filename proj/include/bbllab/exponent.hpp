#pragma once

#include <cmath>
#include <compare>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace bbllab {

/// Extended-real exponent for power means. The infinities are tagged states,
/// never large floats: min/max limits and the zero-product clause are branch
/// logic, not arithmetic.
class Exponent {
public:
    Exponent() : kind_(Kind::finite), value_(0.0) {}
    Exponent(double v) : kind_(Kind::finite), value_(v) {
        if (!std::isfinite(v))
            throw std::domain_error("Exponent: finite constructor requires a finite value");
    }

    static Exponent neg_inf() { return Exponent(Kind::neg_inf); }
    static Exponent pos_inf() { return Exponent(Kind::pos_inf); }

    bool is_finite() const { return kind_ == Kind::finite; }
    bool is_neg_inf() const { return kind_ == Kind::neg_inf; }
    bool is_pos_inf() const { return kind_ == Kind::pos_inf; }

    /// Finite value; throws on the infinities.
    double value() const {
        if (!is_finite()) throw std::domain_error("Exponent: value() on infinite exponent");
        return value_;
    }

    /// Value as an IEEE double with +-inf mapped to the IEEE infinities.
    /// Useful only for printing and total-order comparisons.
    double as_double() const {
        switch (kind_) {
            case Kind::neg_inf: return -std::numeric_limits<double>::infinity();
            case Kind::pos_inf: return std::numeric_limits<double>::infinity();
            default: return value_;
        }
    }

    friend bool operator==(const Exponent& a, const Exponent& b) {
        return a.as_double() == b.as_double();
    }
    friend std::partial_ordering operator<=>(const Exponent& a, const Exponent& b) {
        return a.as_double() <=> b.as_double();
    }

    std::string str() const {
        if (is_neg_inf()) return "-inf";
        if (is_pos_inf()) return "+inf";
        return std::to_string(value_);
    }

private:
    enum class Kind { neg_inf, finite, pos_inf };
    explicit Exponent(Kind k) : kind_(k), value_(0.0) {}
    Kind kind_;
    double value_;
};

/// Convex weights (lambda_1, ..., lambda_k), k >= 2, summing to 1.
class WeightVector {
public:
    explicit WeightVector(std::vector<double> w) : weights_(std::move(w)) {
        if (weights_.size() < 2)
            throw std::invalid_argument("WeightVector: need at least two weights");
        double sum = 0.0;
        for (double wi : weights_) {
            if (!(wi >= 0.0 && wi <= 1.0))
                throw std::invalid_argument("WeightVector: weights must lie in [0,1]");
            sum += wi;
        }
        if (std::abs(sum - 1.0) > 1e-12)
            throw std::invalid_argument("WeightVector: weights must sum to 1 within 1e-12");
    }

    /// Binary weights (1-lambda, lambda).
    static WeightVector binary(double lam) {
        return WeightVector({1.0 - lam, lam});
    }

    std::size_t size() const { return weights_.size(); }
    double operator[](std::size_t i) const { return weights_[i]; }
    const std::vector<double>& values() const { return weights_; }

private:
    std::vector<double> weights_;
};

/// The linked constants of one BBL instance:
///   m      = 2*alpha + 1
///   d      = n*(m-1) + 2 = 2*(n*alpha + 1)
///   alpha' = alpha/(1 + n*alpha), with alpha' = -inf at alpha = -1/n
///            and alpha' = 1/n at alpha = +inf.
struct ExponentBundle {
    Exponent alpha;
    double m = 1.0;        // +inf when alpha = +inf
    int n = 1;
    double d = 2.0;        // +inf when alpha = +inf
    Exponent alpha_prime;
    bool supercritical = true;  // d > 0
};

inline ExponentBundle make_bundle(Exponent alpha, int n) {
    if (n < 1) throw std::domain_error("make_bundle: dimension must be >= 1");
    ExponentBundle b;
    b.alpha = alpha;
    b.n = n;
    const double inf = std::numeric_limits<double>::infinity();
    if (alpha.is_pos_inf()) {
        b.m = inf;
        b.d = inf;
        b.alpha_prime = Exponent(1.0 / n);
        b.supercritical = true;
        return b;
    }
    if (alpha.is_neg_inf() || alpha.value() < -1.0 / n - 1e-15)
        throw std::domain_error("make_bundle: alpha must satisfy alpha >= -1/n");
    const double a = alpha.value();
    b.m = 2.0 * a + 1.0;
    b.d = 2.0 * (n * a + 1.0);
    if (n * a + 1.0 <= 1e-15) {
        b.alpha_prime = Exponent::neg_inf();  // boundary case alpha = -1/n
        b.d = 0.0;
    } else {
        b.alpha_prime = Exponent(a / (1.0 + n * a));
    }
    b.supercritical = b.d > 0.0;
    return b;
}

}  // namespace bbllab
