#pragma once

#include <cmath>
#include <fstream>
#include <stdexcept>
#include <vector>

#include "bbllab/diffusion.hpp"
#include "bbllab/grid.hpp"

namespace bbllab {

/// Probe series t^{n/d} u(0,t) with its extrapolated limit. The limit is the
/// intercept of a least-squares fit a + b t^{-2/d} over the last quartile of
/// the series (the profile's next-order correction); quality is the relative
/// spread of the raw probe over that quartile.
struct AsymptoticSeries {
    std::vector<double> times;
    std::vector<double> probe_values;
    double extrapolated_limit = 0.0;
    double convergence_quality = 1.0;
    bool converged = false;
};

namespace detail {

inline void extrapolate_series(AsymptoticSeries& s, double d) {
    const std::size_t n = s.times.size();
    if (n < 4) {
        if (n > 0) s.extrapolated_limit = s.probe_values.back();
        return;
    }
    const std::size_t start = n - std::max<std::size_t>(3, n / 4);
    double mn = std::numeric_limits<double>::infinity(), mx = 0.0, mean = 0.0;
    // least squares on basis (1, t^{-2/d})
    double s11 = 0, s1x = 0, sxx = 0, s1y = 0, sxy = 0;
    for (std::size_t i = start; i < n; ++i) {
        const double x = std::pow(s.times[i], -2.0 / d);
        const double y = s.probe_values[i];
        s11 += 1.0;
        s1x += x;
        sxx += x * x;
        s1y += y;
        sxy += x * y;
        mn = std::min(mn, y);
        mx = std::max(mx, y);
        mean += y;
    }
    mean /= s11;
    const double det = s11 * sxx - s1x * s1x;
    if (std::abs(det) > 1e-300) {
        s.extrapolated_limit = (s1y * sxx - s1x * sxy) / det;
    } else {
        s.extrapolated_limit = mean;
    }
    s.convergence_quality = mean > 0.0 ? (mx - mn) / mean : 1.0;
    s.converged = s.convergence_quality < 0.02;
}

// value of the evolved heat solution at the origin by direct quadrature over
// the initial data's box (needs only the support of phi, not of the solution)
inline double heat_value_at_origin(const GridFn& phi, double t) {
    const Grid& g = phi.grid();
    const int N = g.points;
    const double h = g.spacing();
    const double s2 = 4.0 * t;
    double z1 = 0.0;
    {
        const int reach = int(std::ceil(std::sqrt(500.0 * s2) / h)) + 1;
        for (int j = -reach; j <= reach; ++j) z1 += std::exp(-(j * h) * (j * h) / s2);
    }
    double acc = 0.0;
    if (g.n == 1) {
        for (int j = 0; j < N; ++j) {
            double y = g.coord(j);
            acc += trapezoid_weight(j, N) * std::exp(-y * y / s2) * phi[g.index(j)];
        }
        return acc / z1;
    }
    for (int ix = 0; ix < N; ++ix)
        for (int iy = 0; iy < N; ++iy) {
            double x = g.coord(ix), y = g.coord(iy);
            acc += trapezoid_weight(ix, N) * trapezoid_weight(iy, N) *
                   std::exp(-(x * x + y * y) / s2) * phi[g.index(ix, iy)];
        }
    return acc / (z1 * z1);
}

}  // namespace detail

/// Heat-kernel limit: series of (4 pi t)^{n/2} u(0,t), converging to the mass
/// of phi with error O(1/t).
inline AsymptoticSeries heat_limit_check(const GridFn& phi, const std::vector<double>& times) {
    AsymptoticSeries s;
    const int n = phi.grid().n;
    for (double t : times) {
        if (!(t > 0.0)) throw std::domain_error("heat_limit_check: times must be positive");
        double u0 = detail::heat_value_at_origin(phi, t);
        s.times.push_back(t);
        s.probe_values.push_back(std::pow(4.0 * M_PI * t, 0.5 * n) * u0);
    }
    detail::extrapolate_series(s, 2.0);  // heat: d = 2
    return s;
}

/// Explicit self-similar profile
///   U(x,t) = (2d/(1-m))^{1/(1-m)} (t / (|x|^2 + C t^{2/d}))^{1/(1-m)},
/// with C calibrated so that its mass at t = 1 equals the requested mass
/// (the profile's mass is then time-invariant).
struct BarenblattProfile {
    double m = 0.75;
    int n = 1;
    double mass = 1.0;
    double d = 0.0;
    double C_tilde = 0.0;
    double amplitude = 0.0;  // (2d/(1-m))^{1/(1-m)}

    double operator()(Point x, double t) const {
        const double r2 = x[0] * x[0] + (n == 2 ? x[1] * x[1] : 0.0);
        const double p = 1.0 / (1.0 - m);
        return amplitude * std::pow(t / (r2 + C_tilde * std::pow(t, 2.0 / d)), p);
    }
};

inline BarenblattProfile barenblatt_profile(double m, int n, double mass_target) {
    if (!(m > 0.0 && m < 1.0)) throw std::domain_error("barenblatt_profile: m must lie in (0,1)");
    const double d = n * (m - 1.0) + 2.0;
    if (!(d > 0.0)) throw std::domain_error("barenblatt_profile: supercritical range required");
    if (!(mass_target > 0.0)) throw std::domain_error("barenblatt_profile: mass must be positive");
    BarenblattProfile b;
    b.m = m;
    b.n = n;
    b.mass = mass_target;
    b.d = d;
    const double p = 1.0 / (1.0 - m);
    b.amplitude = std::pow(2.0 * d / (1.0 - m), p);
    // integral of (1+|y|^2)^{-p} over R^n via Gamma functions
    double In;
    if (n == 1)
        In = std::sqrt(M_PI) * std::tgamma(p - 0.5) / std::tgamma(p);
    else
        In = M_PI / (p - 1.0);
    // mass = amplitude * C^{n/2 - p} * In  =>  C = (amplitude In / mass)^{1/(p - n/2)}
    b.C_tilde = std::pow(b.amplitude * In / mass_target, 1.0 / (p - 0.5 * n));
    return b;
}

/// Probe series t^{n/d} u(0,t) from a trajectory of the supercritical Cauchy
/// problem; prefers the per-step probe record when present.
inline AsymptoticSeries general_limit_check(const Trajectory& traj) {
    const ExponentBundle& bundle = traj.problem.bundle;
    if (!bundle.supercritical)
        throw std::domain_error("general_limit_check: supercritical problem required");
    const int n = traj.problem.initial.grid().n;
    const double d = bundle.d;
    AsymptoticSeries s;
    if (traj.step_times.size() > 2) {
        for (std::size_t i = 0; i < traj.step_times.size(); ++i) {
            const double t = traj.step_times[i];
            if (t <= 0.0) continue;
            s.times.push_back(t);
            s.probe_values.push_back(std::pow(t, double(n) / d) * traj.step_probe[i]);
        }
    } else {
        const Grid& g = traj.states[0].grid();
        const int c = (g.points - 1) / 2;
        const std::size_t origin = g.n == 1 ? g.index(c) : g.index(c, c);
        for (std::size_t i = 0; i < traj.times.size(); ++i) {
            const double t = traj.times[i];
            if (t <= 0.0) continue;
            s.times.push_back(t);
            s.probe_values.push_back(std::pow(t, double(n) / d) * traj.states[i][origin]);
        }
    }
    detail::extrapolate_series(s, d);
    return s;
}

struct ScalingLawResult {
    double ratio = 0.0;      // limit(c phi) / limit(phi)
    double predicted = 0.0;  // c^{2/d}
    double relative_error = 0.0;
    AsymptoticSeries base, scaled;
};

/// The limit scales as mass^{2/d}: run the Cauchy problem for phi and c*phi
/// and compare the ratio of extrapolated limits against c^{2/d}.
inline ScalingLawResult mass_scaling_law(const GridFn& phi, double m, int n, double c,
                                         double t_end = 1024.0, StepPolicy policy = {},
                                         std::vector<double> store_times = {}) {
    if (!(c > 0.0)) throw std::domain_error("mass_scaling_law: factor must be positive");
    Exponent alpha((m - 1.0) / 2.0);
    ExponentBundle bundle = make_bundle(alpha, n);
    if (!bundle.supercritical)
        throw std::domain_error("mass_scaling_law: supercritical range required");
    if (store_times.empty())
        for (double t = 1.0; t <= t_end * (1 + 1e-12); t *= 2.0) store_times.push_back(t);

    ScalingLawResult out;
    GridFn scaled = phi.map([c](double v) { return c * v; });
    Trajectory t1 = pme_evolve(make_problem(bundle, DomainKind::cauchy_box, phi), t_end,
                               policy, store_times);
    Trajectory t2 = pme_evolve(make_problem(bundle, DomainKind::cauchy_box, scaled), t_end,
                               policy, store_times);
    out.base = general_limit_check(t1);
    out.scaled = general_limit_check(t2);
    if (!out.base.converged || !out.scaled.converged)
        throw SolverError("mass_scaling_law: probe series did not converge");
    out.ratio = out.scaled.extrapolated_limit / out.base.extrapolated_limit;
    out.predicted = std::pow(c, 2.0 / bundle.d);
    out.relative_error = std::abs(out.ratio - out.predicted) / out.predicted;
    return out;
}

inline void write_csv(const AsymptoticSeries& s, std::ostream& os) {
    os << "t,probe,extrapolated,quality\n";
    for (std::size_t i = 0; i < s.times.size(); ++i)
        os << format_g17(s.times[i]) << ',' << format_g17(s.probe_values[i]) << ','
           << format_g17(s.extrapolated_limit) << ',' << format_g17(s.convergence_quality)
           << '\n';
}

inline void write_csv(const AsymptoticSeries& s, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("write_csv: cannot open " + path);
    write_csv(s, os);
}

}  // namespace bbllab
