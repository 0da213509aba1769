#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include "bbllab/convolution.hpp"
#include "bbllab/exponent.hpp"
#include "bbllab/grid.hpp"

namespace bbllab {

struct SolverError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Time-step policy for the implicit solvers: dt grows geometrically from
/// dt_init (default h^2/4), capped absolutely by dt_max and relatively by
/// dt_rel_cap * t (the latter matters for the self-similar long runs).
struct StepPolicy {
    double dt_init = 0.0;
    double growth = 1.2;
    double dt_max = std::numeric_limits<double>::infinity();
    double dt_rel_cap = std::numeric_limits<double>::infinity();
    double newton_tol = 1e-10;
    int newton_max_iter = 50;
};

enum class DomainKind { cauchy_box, dirichlet_box };

/// One evolution instance of du/dt = (1/m) Lap(u^m).
/// boundary_lift is the delta of the lifted Dirichlet problem (0 for the
/// pure problem). For cauchy_box the box boundary holds the initial data's
/// own tail values, frozen in time.
struct DiffusionProblem {
    ExponentBundle bundle;
    DomainKind domain_kind = DomainKind::cauchy_box;
    double boundary_lift = 0.0;
    GridFn initial;
};

inline DiffusionProblem make_problem(ExponentBundle bundle, DomainKind kind, GridFn initial,
                                     double boundary_lift = 0.0) {
    if (!(bundle.m > -1.0 && bundle.m <= 1.0))
        throw std::domain_error("make_problem: m must lie in (-1, 1]");
    if (kind == DomainKind::cauchy_box && !bundle.supercritical)
        throw std::domain_error("make_problem: Cauchy problem requires the supercritical range");
    if (!(boundary_lift >= 0.0))
        throw std::domain_error("make_problem: boundary lift must be nonnegative");
    if (kind == DomainKind::dirichlet_box) {
        const Grid& g = initial.grid();
        const double tol_b = 1e-9 * std::max(1.0, initial.max_value());
        const int N = g.points;
        auto check = [&](std::size_t idx) {
            if (initial[idx] > boundary_lift + tol_b)
                throw std::domain_error("make_problem: Dirichlet initial data exceeds the lift on the boundary");
        };
        if (g.n == 1) {
            check(g.index(0));
            check(g.index(N - 1));
        } else {
            for (int j = 0; j < N; ++j) {
                check(g.index(0, j));
                check(g.index(N - 1, j));
                check(g.index(j, 0));
                check(g.index(j, N - 1));
            }
        }
    }
    return DiffusionProblem{bundle, kind, boundary_lift, std::move(initial)};
}

/// Time-indexed solver output. `times`/`states`/`masses` are the stored
/// snapshots; the step_* arrays record every step taken (probe = value at the
/// origin, outflow = cumulative discrete boundary outflow so that
/// mass + outflow is conserved by the scheme up to Newton tolerance).
struct Trajectory {
    DiffusionProblem problem;
    std::vector<double> times;
    std::vector<GridFn> states;
    std::vector<double> masses;
    std::optional<double> extinction_time;

    std::vector<double> step_times;
    std::vector<double> step_probe;
    std::vector<double> step_mass;
    std::vector<double> step_outflow;
    std::string boundary_model;
    long newton_iterations_total = 0;
};

/// Signed residual of the discrete operator d_t u + F(u, grad u, Hess u) per
/// interior node; NaN marks nodes where the state is too small for F.
struct ResidualField {
    Grid grid;
    std::vector<double> values;

    double max_abs() const {
        double m = 0.0;
        for (double v : values)
            if (std::isfinite(v)) m = std::max(m, std::abs(v));
        return m;
    }
    std::size_t defined_count() const {
        std::size_t c = 0;
        for (double v : values)
            if (std::isfinite(v)) ++c;
        return c;
    }
};

// --- heat kernel evolution ---------------------------------------------------

namespace detail {

// One 1D Gaussian-kernel pass with trapezoid quadrature. The discrete kernel
// is normalized over the full line so constants map to constants and the
// t -> 0 limit degenerates to the identity instead of blowing up.
inline void heat_pass_1d(const std::vector<double>& in, std::vector<double>& out,
                         int N, double h, double t, int stride, int count, int base_step) {
    const double s2 = 4.0 * t;
    const int reach = std::min<int>(2 * N, int(std::ceil(std::sqrt(500.0 * s2) / h)) + 1);
    std::vector<double> kernel(reach + 1);
    double z = 0.0;
    for (int j = -reach; j <= reach; ++j) {
        double k = std::exp(-(j * h) * (j * h) / s2);
        if (j >= 0) kernel[j] = k;
        z += k;
    }
    for (int row = 0; row < count; ++row) {
        const int rb = row * base_step;
        for (int i = 0; i < N; ++i) {
            double acc = 0.0;
            const int jlo = std::max(0, i - reach), jhi = std::min(N - 1, i + reach);
            for (int j = jlo; j <= jhi; ++j) {
                double w = trapezoid_weight(j, N);
                acc += w * kernel[std::abs(i - j)] * in[rb + j * stride];
            }
            out[rb + i * stride] = acc / z;
        }
    }
}

}  // namespace detail

/// Exact heat semigroup by Gaussian-kernel quadrature over the box
/// (separable passes in 2D). The error against the whole-space solution is
/// controlled by the initial data's tail mass outside the box.
inline GridFn heat_evolve(const GridFn& phi, double t) {
    if (t < 0.0) throw std::domain_error("heat_evolve: negative time");
    if (t == 0.0) return phi;
    const Grid& g = phi.grid();
    const int N = g.points;
    const double h = g.spacing();
    std::vector<double> a = phi.values(), b(a.size());
    if (g.n == 1) {
        detail::heat_pass_1d(a, b, N, h, t, 1, 1, 0);
        return GridFn(g, std::move(b));
    }
    // pass along y (contiguous), then along x
    detail::heat_pass_1d(a, b, N, h, t, 1, N, N);
    detail::heat_pass_1d(b, a, N, h, t, N, N, 1);
    return GridFn(g, std::move(a));
}

/// Trajectory wrapper around heat_evolve at the given stored times.
inline Trajectory heat_trajectory(const GridFn& phi, std::vector<double> times) {
    Trajectory traj;
    traj.problem = make_problem(make_bundle(Exponent(0.0), phi.grid().n),
                                DomainKind::cauchy_box, phi);
    traj.boundary_model = "kernel quadrature, zero extension";
    if (times.empty() || times.front() != 0.0) times.insert(times.begin(), 0.0);
    for (double t : times) {
        GridFn s = heat_evolve(phi, t);
        traj.times.push_back(t);
        traj.masses.push_back(mass(s));
        traj.states.push_back(std::move(s));
    }
    return traj;
}

// --- implicit fast/superfast stepping ----------------------------------------

namespace detail {

constexpr double kPositivityFloor = 1e-300;

// Backward-Euler step on v = u^m: solve v^{1/m} - (dt/m) Lap_h v = u_old at
// interior nodes, v fixed on the boundary. Newton with line search; the
// Jacobian is symmetric tridiagonal (1D) or 5-point (2D).
struct ImplicitStepper {
    const Grid& grid;
    double m;
    double newton_tol;
    int newton_max_iter;
    long newton_total = 0;

    std::vector<int> interior;            // node index per unknown
    std::vector<int> unknown_of;          // -1 for boundary nodes
    Eigen::SparseMatrix<double> jac2d;
    Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt;
    bool pattern_ready = false;

    ImplicitStepper(const Grid& g, double m_, const StepPolicy& pol)
        : grid(g), m(m_), newton_tol(pol.newton_tol), newton_max_iter(pol.newton_max_iter) {
        const int N = g.points;
        unknown_of.assign(g.node_count(), -1);
        if (g.n == 1) {
            for (int j = 1; j < N - 1; ++j) {
                unknown_of[j] = int(interior.size());
                interior.push_back(j);
            }
        } else {
            for (int ix = 1; ix < N - 1; ++ix)
                for (int iy = 1; iy < N - 1; ++iy) {
                    int idx = int(g.index(ix, iy));
                    unknown_of[idx] = int(interior.size());
                    interior.push_back(idx);
                }
        }
    }

    double u_of_v(double v) const { return std::pow(v, 1.0 / m); }

    double lap(const std::vector<double>& v, int idx) const {
        const int N = grid.points;
        const double h2 = grid.spacing() * grid.spacing();
        if (grid.n == 1) return (v[idx - 1] - 2.0 * v[idx] + v[idx + 1]) / h2;
        return (v[idx - N] + v[idx + N] + v[idx - 1] + v[idx + 1] - 4.0 * v[idx]) / h2;
    }

    // returns max |residual|
    double residual(const std::vector<double>& v, const std::vector<double>& u_old,
                    double dt, std::vector<double>& r) const {
        double worst = 0.0;
        for (std::size_t q = 0; q < interior.size(); ++q) {
            const int idx = interior[q];
            r[q] = u_of_v(v[idx]) - u_old[idx] - (dt / m) * lap(v, idx);
            worst = std::max(worst, std::abs(r[q]));
        }
        return worst;
    }

    void solve_1d(const std::vector<double>& diag, double off, std::vector<double>& rhs) const {
        // Thomas; strictly diagonally dominant by construction
        const std::size_t n = rhs.size();
        std::vector<double> c(n);
        double d0 = diag[0];
        c[0] = off / d0;
        rhs[0] /= d0;
        for (std::size_t i = 1; i < n; ++i) {
            double denom = diag[i] - off * c[i - 1];
            c[i] = off / denom;
            rhs[i] = (rhs[i] - off * rhs[i - 1]) / denom;
        }
        for (std::size_t i = n - 1; i-- > 0;) rhs[i] -= c[i] * rhs[i + 1];
    }

    void solve_2d(const std::vector<double>& diag, double off, std::vector<double>& rhs) {
        const int N = grid.points;
        const int n_unknown = int(interior.size());
        if (!pattern_ready) {
            std::vector<Eigen::Triplet<double>> trips;
            trips.reserve(5 * n_unknown);
            for (int q = 0; q < n_unknown; ++q) {
                int idx = interior[q];
                trips.emplace_back(q, q, 1.0);
                for (int nb : {idx - N, idx + N, idx - 1, idx + 1}) {
                    int qq = unknown_of[nb];
                    if (qq >= 0) trips.emplace_back(q, qq, 1.0);
                }
            }
            jac2d.resize(n_unknown, n_unknown);
            jac2d.setFromTriplets(trips.begin(), trips.end());
            ldlt.analyzePattern(jac2d);
            pattern_ready = true;
        }
        for (int q = 0; q < n_unknown; ++q) {
            int idx = interior[q];
            jac2d.coeffRef(q, q) = diag[q];
            for (int nb : {idx - N, idx + N, idx - 1, idx + 1}) {
                int qq = unknown_of[nb];
                if (qq >= 0) jac2d.coeffRef(q, qq) = off;
            }
        }
        ldlt.factorize(jac2d);
        if (ldlt.info() != Eigen::Success) throw SolverError("implicit step: 2D factorization failed");
        Eigen::Map<Eigen::VectorXd> b(rhs.data(), n_unknown);
        Eigen::VectorXd x = ldlt.solve(b);
        for (int q = 0; q < n_unknown; ++q) rhs[q] = x[q];
    }

    // Advance u_old by dt in place; v is the persistent v-state (u^m with
    // boundary entries fixed). Returns the interior mass change computed from
    // the scheme's own flux expression.
    double step(std::vector<double>& u, std::vector<double>& v, double dt, double t_now) {
        const double h2 = grid.spacing() * grid.spacing();
        const double off = -dt / (m * h2);
        const double vfloor = std::pow(kPositivityFloor, m > 0 ? m : 1.0);
        const std::size_t n_unknown = interior.size();
        std::vector<double> r(n_unknown), diag(n_unknown), delta(n_unknown);

        double worst = residual(v, u, dt, r);
        const double tol = newton_tol * std::max(1.0, *std::max_element(u.begin(), u.end()));
        int iter = 0;
        while (worst > tol) {
            if (++iter > newton_max_iter)
                throw SolverError("implicit step: Newton failed at t=" + std::to_string(t_now) +
                                  " dt=" + std::to_string(dt) + " residual=" + std::to_string(worst));
            for (std::size_t q = 0; q < n_unknown; ++q) {
                double vi = std::max(v[interior[q]], vfloor);
                diag[q] = (1.0 / m) * std::pow(vi, 1.0 / m - 1.0) - 2.0 * grid.n * off;
            }
            for (std::size_t q = 0; q < n_unknown; ++q) delta[q] = -r[q];
            if (grid.n == 1)
                solve_1d(diag, off, delta);
            else
                solve_2d(diag, off, delta);
            // damped update keeping v positive
            double s = 1.0;
            for (int back = 0; back < 60; ++back) {
                bool ok = true;
                for (std::size_t q = 0; q < n_unknown; ++q)
                    if (v[interior[q]] + s * delta[q] <= 0.0) {
                        ok = false;
                        break;
                    }
                if (ok) break;
                s *= 0.5;
            }
            for (std::size_t q = 0; q < n_unknown; ++q)
                v[interior[q]] = std::max(v[interior[q]] + s * delta[q], vfloor);
            worst = residual(v, u, dt, r);
            ++newton_total;
        }
        // commit: interior mass change from the flux form of the update
        double dmass = 0.0;
        const double hn = grid.n == 1 ? grid.spacing() : grid.spacing() * grid.spacing();
        for (std::size_t q = 0; q < n_unknown; ++q) {
            const int idx = interior[q];
            const double du = (dt / m) * lap(v, idx);
            dmass += du * hn;
            u[idx] = std::max(u_of_v(v[idx]), kPositivityFloor);
        }
        return dmass;
    }
};

inline std::vector<double> v_from_u(const std::vector<double>& u, double m) {
    std::vector<double> v(u.size());
    for (std::size_t i = 0; i < u.size(); ++i)
        v[i] = std::pow(std::max(u[i], kPositivityFloor), m);
    return v;
}

}  // namespace detail

namespace detail {

inline Trajectory evolve_implicit(const DiffusionProblem& problem, double t_end,
                                  StepPolicy policy, std::vector<double> store_times,
                                  double extinction_threshold) {
    const Grid& g = problem.initial.grid();
    const double h = g.spacing();
    const double m = problem.bundle.m;
    if (policy.dt_init <= 0.0) policy.dt_init = h * h / 4.0;

    Trajectory traj;
    traj.problem = problem;
    traj.boundary_model = problem.domain_kind == DomainKind::dirichlet_box
                              ? "Dirichlet, value = boundary lift"
                              : "frozen-tail Dirichlet (initial boundary values held fixed)";

    const bool store_every_step = store_times.empty();
    std::sort(store_times.begin(), store_times.end());
    store_times.erase(std::unique(store_times.begin(), store_times.end()), store_times.end());
    if (store_times.empty() || store_times.back() < t_end) store_times.push_back(t_end);

    std::vector<double> u = problem.initial.values();
    // boundary values held fixed for the whole run
    const int N = g.points;
    if (problem.domain_kind == DomainKind::dirichlet_box) {
        auto set_b = [&](std::size_t idx) { u[idx] = problem.boundary_lift; };
        if (g.n == 1) {
            set_b(g.index(0));
            set_b(g.index(N - 1));
        } else {
            for (int j = 0; j < N; ++j) {
                set_b(g.index(0, j));
                set_b(g.index(N - 1, j));
                set_b(g.index(j, 0));
                set_b(g.index(j, N - 1));
            }
        }
    }
    std::vector<double> v = v_from_u(u, m);

    ImplicitStepper stepper(g, m, policy);
    const std::size_t origin = g.n == 1 ? g.index((N - 1) / 2) : g.index((N - 1) / 2, (N - 1) / 2);

    auto snapshot = [&](double t) {
        GridFn s(g, u);
        traj.times.push_back(t);
        traj.masses.push_back(mass(s));
        traj.states.push_back(std::move(s));
    };
    double outflow = 0.0;
    auto record_step = [&](double t) {
        traj.step_times.push_back(t);
        traj.step_probe.push_back(u[origin]);
        traj.step_mass.push_back(mass(GridFn(g, u)));
        traj.step_outflow.push_back(outflow);
    };

    snapshot(0.0);
    record_step(0.0);

    double t = 0.0, dt = policy.dt_init;
    std::size_t next_store = 0;
    while (t < t_end - 1e-14 * std::max(1.0, t_end)) {
        double dt_eff = std::min(dt, policy.dt_max);
        dt_eff = std::min(dt_eff, policy.dt_rel_cap * std::max(t, policy.dt_init));
        while (next_store < store_times.size() && store_times[next_store] <= t + 1e-14)
            ++next_store;
        if (next_store < store_times.size())
            dt_eff = std::min(dt_eff, store_times[next_store] - t);
        dt_eff = std::min(dt_eff, t_end - t);

        double dmass = stepper.step(u, v, dt_eff, t);
        outflow -= dmass;
        t += dt_eff;
        record_step(t);

        bool at_store = next_store < store_times.size() &&
                        std::abs(t - store_times[next_store]) <= 1e-12 * std::max(1.0, t);
        if (at_store || store_every_step) snapshot(t);
        if (store_every_step && traj.states.size() > 8192) {
            // halve the stored ladder; the fine step_* records stay complete
            std::vector<double> tt;
            std::vector<GridFn> ss;
            std::vector<double> mm;
            for (std::size_t q = 0; q < traj.states.size(); q += 2) {
                tt.push_back(traj.times[q]);
                ss.push_back(std::move(traj.states[q]));
                mm.push_back(traj.masses[q]);
            }
            traj.times = std::move(tt);
            traj.states = std::move(ss);
            traj.masses = std::move(mm);
        }

        if (!traj.extinction_time && problem.domain_kind == DomainKind::dirichlet_box && m < 1.0) {
            double mx = *std::max_element(u.begin(), u.end());
            if (mx < extinction_threshold) traj.extinction_time = t;
        }
        dt *= policy.growth;
    }
    if (traj.times.back() < t_end - 1e-12) snapshot(t);
    traj.newton_iterations_total = stepper.newton_total;
    return traj;
}

}  // namespace detail

/// Implicit backward-Euler evolution of du/dt = (1/m) Lap(u^m) for the fast
/// diffusion range 0 < m <= 1 (Newton on v = u^m). Snapshots are stored at
/// the requested times (every step when none are given and the run is short).
inline Trajectory pme_evolve(const DiffusionProblem& problem, double t_end,
                             const StepPolicy& policy = {},
                             std::vector<double> store_times = {}) {
    const double m = problem.bundle.m;
    if (!(m > 0.0 && m <= 1.0))
        throw std::domain_error("pme_evolve: m must lie in (0,1]; use superfast_evolve for m < 0");
    if (!(t_end > 0.0)) throw std::domain_error("pme_evolve: t_end must be positive");
    double thr = 1e-8 * problem.initial.max_value();
    return detail::evolve_implicit(problem, t_end, policy, std::move(store_times), thr);
}

/// 1D superfast branch, -1 < m < 0: strictly positive data with the critical
/// power-law tail (tail_exponent must equal 2/(m-1)); far-field boundary
/// values are held at the initial tail.
inline Trajectory superfast_evolve(const GridFn& phi, double m, double t_end,
                                   const StepPolicy& policy = {},
                                   std::vector<double> store_times = {}) {
    if (!(m > -1.0 && m < 0.0))
        throw std::domain_error("superfast_evolve: m must lie in (-1, 0)");
    if (phi.grid().n != 1)
        throw std::domain_error("superfast_evolve: one-dimensional only");
    for (double vht : phi.values())
        if (!(vht > 0.0))
            throw std::domain_error("superfast_evolve: data must be strictly positive");
    if (!phi.tail_exponent() || std::abs(*phi.tail_exponent() - 2.0 / (m - 1.0)) > 1e-9)
        throw std::domain_error("superfast_evolve: tail_exponent must equal 2/(m-1)");
    DiffusionProblem problem{make_bundle(Exponent((m - 1.0) / 2.0), 1),
                             DomainKind::cauchy_box, 0.0, phi};
    return detail::evolve_implicit(problem, t_end, policy, std::move(store_times), 0.0);
}

/// Checks recorded after a superfast run: the pointwise rate bound
/// |d_t u| <= u / ((1-m) t) over the sampled window, the short-time
/// sup|u - phi| / sqrt(t) ratios, the discrete Lipschitz constant of phi^m,
/// and the flux-corrected mass-conservation defect.
struct SuperfastDiagnostics {
    double worst_rate_ratio = 0.0;  // max of |d_t u| * (1-m) * t / u
    bool rate_bound_ok = true;
    std::vector<double> sqrt_t_ratios;   // sup|u(t)-phi| / sqrt(t) at stored times
    double phi_m_lipschitz = 0.0;
    double mass_defect_rel = 0.0;        // max |mass + outflow - mass0| / mass0
};

inline SuperfastDiagnostics superfast_diagnostics(const Trajectory& traj,
                                                  double t_lo, double t_hi,
                                                  double rate_tolerance = 0.05) {
    const double m = traj.problem.bundle.m;
    const Grid& g = traj.problem.initial.grid();
    SuperfastDiagnostics d;
    const int N = g.points;
    // rate bound via centered differences of consecutive stored states
    for (std::size_t i = 1; i + 1 < traj.states.size(); ++i) {
        const double t = traj.times[i];
        if (t < t_lo || t > t_hi) continue;
        const double dpl = traj.times[i + 1] - t, dmi = t - traj.times[i - 1];
        for (int j = 1; j < N - 1; ++j) {
            double up = traj.states[i + 1][j], uc = traj.states[i][j], um = traj.states[i - 1][j];
            double ut = (dmi * dmi * up + (dpl * dpl - dmi * dmi) * uc - dpl * dpl * um) /
                        (dpl * dmi * (dpl + dmi));
            double ratio = std::abs(ut) * (1.0 - m) * t / uc;
            d.worst_rate_ratio = std::max(d.worst_rate_ratio, ratio);
        }
    }
    d.rate_bound_ok = d.worst_rate_ratio <= 1.0 + rate_tolerance;
    for (std::size_t i = 1; i < traj.states.size(); ++i) {
        double sup = linf_distance(traj.states[i], traj.states[0]);
        d.sqrt_t_ratios.push_back(sup / std::sqrt(traj.times[i]));
    }
    const GridFn& phi = traj.problem.initial;
    for (int j = 0; j + 1 < N; ++j)
        d.phi_m_lipschitz = std::max(
            d.phi_m_lipschitz,
            std::abs(std::pow(phi[j + 1], m) - std::pow(phi[j], m)) / g.spacing());
    for (std::size_t k = 0; k < traj.step_mass.size(); ++k)
        d.mass_defect_rel = std::max(
            d.mass_defect_rel,
            std::abs(traj.step_mass[k] + traj.step_outflow[k] - traj.step_mass[0]) /
                traj.step_mass[0]);
    return d;
}

/// First time the solution maximum drops below the threshold, refined by
/// re-integration of the bracketing interval with fine uniform steps.
/// Returns +inf (with no refinement) when no extinction occurs by t_end.
inline double dirichlet_extinction_time(const DiffusionProblem& problem, double threshold,
                                        double t_end = 10.0, StepPolicy policy = {}) {
    if (problem.domain_kind != DomainKind::dirichlet_box)
        throw std::domain_error("dirichlet_extinction_time: Dirichlet problem required");
    const double m = problem.bundle.m;
    if (!(m > 0.0 && m <= 1.0))
        throw std::domain_error("dirichlet_extinction_time: fast diffusion range required");
    Trajectory coarse = detail::evolve_implicit(problem, t_end, policy, {}, 0.0);
    // coarse stores every step only for short runs; rerun storing each step if needed
    std::size_t k = 0;
    auto max_of = [](const GridFn& s) {
        return s.max_value();
    };
    bool found = false;
    for (k = 1; k < coarse.states.size(); ++k)
        if (max_of(coarse.states[k]) < threshold) {
            found = true;
            break;
        }
    if (!found) return std::numeric_limits<double>::infinity();

    double ta = coarse.times[k - 1], tb = coarse.times[k];
    GridFn state_a = coarse.states[k - 1];
    // three refinement rounds of 16 uniform fine steps each
    for (int round = 0; round < 3; ++round) {
        StepPolicy fine = policy;
        fine.dt_init = (tb - ta) / 16.0;
        fine.growth = 1.0;
        DiffusionProblem sub{problem.bundle, problem.domain_kind, problem.boundary_lift, state_a};
        Trajectory refined = detail::evolve_implicit(sub, tb - ta, fine, {}, 0.0);
        std::size_t kk = 0;
        bool hit = false;
        for (kk = 1; kk < refined.states.size(); ++kk)
            if (max_of(refined.states[kk]) < threshold) {
                hit = true;
                break;
            }
        if (!hit) break;  // crossing sits at the right endpoint; keep bracket
        double new_ta = ta + refined.times[kk - 1];
        tb = ta + refined.times[kk];
        state_a = refined.states[kk - 1];
        ta = new_ta;
    }
    return 0.5 * (ta + tb);
}

// --- residual diagnostics ----------------------------------------------------

namespace detail {

inline double fast_diffusion_F(double u, double grad2, double lap, double m) {
    // F(r, theta, A) = -r^{m-1} trace A - (m-1) r^{m-2} |theta|^2
    return -std::pow(u, m - 1.0) * lap - (m - 1.0) * std::pow(u, m - 2.0) * grad2;
}

}  // namespace detail

/// Build a Trajectory from a closed-form space-time evaluator (for residual
/// and asymptotics checks against exact solutions).
inline Trajectory trajectory_from(const Grid& g, double m, const std::vector<double>& times,
                                  const std::function<double(Point, double)>& u) {
    Trajectory traj;
    Exponent alpha((m - 1.0) / 2.0);
    traj.problem = DiffusionProblem{make_bundle(alpha, g.n), DomainKind::cauchy_box, 0.0,
                                    GridFn::sample(g, [&](Point p) { return u(p, times.front()); })};
    traj.boundary_model = "closed form";
    for (double t : times) {
        GridFn s = GridFn::sample(g, [&](Point p) { return u(p, t); });
        traj.times.push_back(t);
        traj.masses.push_back(mass(s));
        traj.states.push_back(std::move(s));
    }
    return traj;
}

/// Centered-difference evaluation of d_t u + F(u, grad u, Hess u) at an
/// interior stored time index.
inline ResidualField residual(const Trajectory& traj, std::size_t i) {
    if (i == 0 || i + 1 >= traj.states.size())
        throw std::invalid_argument("residual: need an interior stored time index");
    const Grid& g = traj.states[i].grid();
    const double m = traj.problem.bundle.m;
    const int N = g.points;
    const double h = g.spacing();
    const double dpl = traj.times[i + 1] - traj.times[i];
    const double dmi = traj.times[i] - traj.times[i - 1];
    ResidualField out{g, std::vector<double>(g.node_count(),
                                             std::numeric_limits<double>::quiet_NaN())};
    const GridFn& uc = traj.states[i];
    const GridFn& up = traj.states[i + 1];
    const GridFn& um = traj.states[i - 1];
    const double cutoff = 1e-250;

    auto eval = [&](std::size_t idx, double lap, double grad2) {
        double ut = (dmi * dmi * up[idx] + (dpl * dpl - dmi * dmi) * uc[idx] -
                     dpl * dpl * um[idx]) /
                    (dpl * dmi * (dpl + dmi));
        out.values[idx] = ut + detail::fast_diffusion_F(uc[idx], grad2, lap, m);
    };
    if (g.n == 1) {
        for (int j = 1; j < N - 1; ++j) {
            std::size_t idx = g.index(j);
            if (uc[idx] <= cutoff) continue;
            double lap = (uc[idx - 1] - 2.0 * uc[idx] + uc[idx + 1]) / (h * h);
            double gx = (uc[idx + 1] - uc[idx - 1]) / (2.0 * h);
            eval(idx, lap, gx * gx);
        }
    } else {
        for (int ix = 1; ix < N - 1; ++ix)
            for (int iy = 1; iy < N - 1; ++iy) {
                std::size_t idx = g.index(ix, iy);
                if (uc[idx] <= cutoff) continue;
                double lap = (uc[idx - N] + uc[idx + N] + uc[idx - 1] + uc[idx + 1] -
                              4.0 * uc[idx]) /
                             (h * h);
                double gx = (uc[idx + N] - uc[idx - N]) / (2.0 * h);
                double gy = (uc[idx + 1] - uc[idx - 1]) / (2.0 * h);
                eval(idx, lap, gx * gx + gy * gy);
            }
    }
    return out;
}

// --- structural checks -------------------------------------------------------

struct SubsolutionReport {
    bool pass = true;
    double worst_excess = 0.0;  // max of d_t ubar + F(ubar) over checked nodes
    std::size_t checked = 0;
    std::size_t skipped = 0;
    double witness_x = 0.0, witness_t = 0.0;
};

/// One-sided residual check of the convolution of two trajectories: at nodes
/// where the supremum is attained in the interior and ubar is numerically C^2,
/// d_t ubar + F(ubar) must not exceed tol. alpha = (m-1)/2 throughout.
/// Only stored times with both neighbors at or above t_lo enter the check
/// (the time derivative needs comparable neighbor gaps).
inline SubsolutionReport subsolution_check(const Trajectory& traj0, const Trajectory& traj1,
                                           double lam, double m, double tol,
                                           double c2_bound = 0.0, double t_lo = 0.0) {
    if (traj0.times.size() != traj1.times.size())
        throw std::invalid_argument("subsolution_check: trajectories store different times");
    for (std::size_t i = 0; i < traj0.times.size(); ++i)
        if (std::abs(traj0.times[i] - traj1.times[i]) > 1e-12 * std::max(1.0, traj0.times[i]))
            throw std::invalid_argument("subsolution_check: trajectories store different times");
    const Grid& g = traj0.states[0].grid();
    if (g.n != 1)
        throw std::invalid_argument("subsolution_check: one-dimensional check");
    Exponent alpha((m - 1.0) / 2.0);

    std::vector<ConvolutionResult> conv;
    conv.reserve(traj0.states.size());
    for (std::size_t i = 0; i < traj0.states.size(); ++i)
        conv.push_back(minkowski_convolve(traj0.states[i], traj1.states[i], lam, alpha));

    // default bound on second differences: 10x the largest one seen in the inputs
    if (c2_bound <= 0.0) {
        double mx = 0.0;
        const double h2 = g.spacing() * g.spacing();
        for (const Trajectory* tr : {&traj0, &traj1})
            for (const GridFn& s : tr->states)
                for (int j = 1; j < g.points - 1; ++j)
                    mx = std::max(mx, std::abs(s[j - 1] - 2.0 * s[j] + s[j + 1]) / h2);
        c2_bound = 10.0 * mx;
    }

    SubsolutionReport rep;
    const double h = g.spacing();
    const double cutoff = 1e-200;
    for (std::size_t i = 1; i + 1 < conv.size(); ++i) {
        if (traj0.times[i - 1] < t_lo) continue;
        const double dpl = traj0.times[i + 1] - traj0.times[i];
        const double dmi = traj0.times[i] - traj0.times[i - 1];
        const GridFn& uc = conv[i].ubar;
        for (int j = 2; j < g.points - 2; ++j) {
            if (!conv[i].attained[j] || uc[j] <= cutoff) {
                ++rep.skipped;
                continue;
            }
            double lap = (uc[j - 1] - 2.0 * uc[j] + uc[j + 1]) / (h * h);
            if (std::abs(lap) > c2_bound) {
                ++rep.skipped;
                continue;
            }
            double gx = (uc[j + 1] - uc[j - 1]) / (2.0 * h);
            double ut = (dmi * dmi * conv[i + 1].ubar[j] +
                         (dpl * dpl - dmi * dmi) * uc[j] - dpl * dpl * conv[i - 1].ubar[j]) /
                        (dpl * dmi * (dpl + dmi));
            double excess = ut + detail::fast_diffusion_F(uc[j], gx * gx, lap, m);
            ++rep.checked;
            if (excess > rep.worst_excess) {
                rep.worst_excess = excess;
                rep.witness_x = g.coord(j);
                rep.witness_t = traj0.times[i];
            }
        }
    }
    rep.pass = rep.worst_excess <= tol;
    return rep;
}

struct ComparisonReport {
    bool pass = true;
    double worst_excess = 0.0;  // max of u - v over all stored states
    double witness_x = 0.0, witness_t = 0.0;
};

/// Order preservation: u(.,t) <= v(.,t) + tol at every stored time, given
/// ordered initial data.
inline ComparisonReport comparison_check(const Trajectory& u_traj, const Trajectory& v_traj,
                                         double tol) {
    if (u_traj.states.size() != v_traj.states.size())
        throw std::invalid_argument("comparison_check: trajectories store different times");
    const Grid& g = u_traj.states[0].grid();
    for (std::size_t j = 0; j < u_traj.states[0].size(); ++j)
        if (u_traj.states[0][j] > v_traj.states[0][j] + 1e-12)
            throw std::invalid_argument("comparison_check: initial ordering violated");
    ComparisonReport rep;
    for (std::size_t i = 0; i < u_traj.states.size(); ++i) {
        for (std::size_t j = 0; j < u_traj.states[i].size(); ++j) {
            double excess = u_traj.states[i][j] - v_traj.states[i][j];
            if (excess > rep.worst_excess) {
                rep.worst_excess = excess;
                rep.witness_x = g.node(j)[0];
                rep.witness_t = u_traj.times[i];
            }
        }
    }
    rep.pass = rep.worst_excess <= tol;
    return rep;
}

// --- trajectory export -------------------------------------------------------

/// Writes `<prefix>_index.csv` (time, mass, max, extinct) and one state CSV
/// per stored time, named `<prefix>_t<k>.csv`.
inline void write_trajectory(const Trajectory& traj, const std::string& prefix) {
    std::ofstream idx(prefix + "_index.csv");
    if (!idx) throw std::runtime_error("write_trajectory: cannot open index for " + prefix);
    idx << "k,time,mass,max,extinct\n";
    for (std::size_t i = 0; i < traj.states.size(); ++i) {
        double mx = traj.states[i].max_value();
        bool ext = traj.extinction_time && traj.times[i] >= *traj.extinction_time;
        idx << i << ',' << format_g17(traj.times[i]) << ',' << format_g17(traj.masses[i]) << ','
            << format_g17(mx) << ',' << (ext ? 1 : 0) << '\n';
        write_csv(traj.states[i], prefix + "_t" + std::to_string(i) + ".csv");
    }
}

}  // namespace bbllab
