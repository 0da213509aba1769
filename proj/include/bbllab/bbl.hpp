#pragma once

#include <cmath>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "bbllab/convolution.hpp"
#include "bbllab/diffusion.hpp"
#include "bbllab/exponent.hpp"
#include "bbllab/gridfn_ops.hpp"
#include "bbllab/grid.hpp"
#include "bbllab/power_mean.hpp"

namespace bbllab {

/// One BBL instance: (f, g, h) on a common grid with weight lam and the
/// exponent bundle of alpha.
struct BBLTriple {
    GridFn f, g, h;
    double lam = 0.5;
    ExponentBundle bundle;
};

inline BBLTriple make_triple(GridFn f, GridFn g, GridFn h, double lam, Exponent alpha) {
    if (!(f.grid() == g.grid()) || !(f.grid() == h.grid()))
        throw std::invalid_argument("make_triple: functions must share a grid");
    if (!(lam > 0.0 && lam < 1.0))
        throw std::domain_error("make_triple: lambda must lie in (0,1)");
    if (!(mass(f) > 0.0) || !(mass(g) > 0.0))
        throw std::domain_error("make_triple: f and g must have positive mass");
    ExponentBundle bundle = make_bundle(alpha, f.grid().n);
    return BBLTriple{std::move(f), std::move(g), std::move(h), lam, bundle};
}

/// Outcome of one verification: the hypothesis check, both sides of the
/// conclusion, and their slack. `conclusion_ok` flags the theorem-level
/// soundness condition slack >= -tol whenever the hypothesis passed (a
/// violation indicates a quadrature or convolution bug, not a counterexample).
struct BBLReport {
    HypothesisReport hypothesis;
    bool vacuous = false;  // hypothesis failed; conclusion still reported
    double lhs = 0.0;      // integral of h
    double rhs = 0.0;      // M_{alpha'}(integral f, integral g; lam)
    double slack = 0.0;
    bool conclusion_ok = true;
    bool near_equality = false;
    double equality_tolerance = 0.0;
};

inline BBLReport verify_bbl(const BBLTriple& t, double tol, double hyp_tol = 0.0,
                            double equality_tol_factor = 1e-3) {
    BBLReport rep;
    rep.hypothesis = check_hypothesis(t.f, t.g, t.h, t.lam, t.bundle.alpha, hyp_tol);
    rep.vacuous = !rep.hypothesis.pass;
    const double F = mass(t.f), G = mass(t.g);
    rep.lhs = mass(t.h);
    rep.rhs = power_mean(F, G, t.lam, t.bundle.alpha_prime);
    rep.slack = rep.lhs - rep.rhs;
    rep.conclusion_ok = rep.vacuous || rep.slack >= -tol;
    rep.equality_tolerance = equality_tol_factor * rep.rhs;
    rep.near_equality = std::abs(rep.slack) <= rep.equality_tolerance;
    return rep;
}

/// Per-time record of the dynamic comparison: worst violation of
/// u_lam >= M_alpha(u_0, u_1; lam) over the grid (equivalently u_lam >= ubar).
struct DynamicReport {
    std::vector<double> times;
    std::vector<double> worst_violation;
    std::vector<double> max_value;  // max of u_lam at that time, for scaling
    bool pass = true;
    double tol = 0.0;
};

/// Evolve the triple and check the comparison of the evolved functions at
/// each stored time. m comes from the bundle; m = 1 uses the exact kernel.
inline DynamicReport verify_theorem_1_3(const BBLTriple& t, const std::vector<double>& times,
                                        double tol, const StepPolicy& policy = {},
                                        double hyp_tol = 1e-12) {
    const double m = t.bundle.m;
    if (!(m > 0.0 && m <= 1.0))
        throw std::domain_error("verify_theorem_1_3: m must lie in (0,1]");
    if (!t.bundle.supercritical)
        throw std::domain_error("verify_theorem_1_3: supercritical range required");
    HypothesisReport hyp = check_hypothesis(t.f, t.g, t.h, t.lam, t.bundle.alpha,
                                            hyp_tol * std::max(1.0, t.h.max_value()));
    if (!hyp.pass)
        throw std::domain_error("verify_theorem_1_3: triple fails the hypothesis at t = 0");

    std::vector<Trajectory> trajs;
    if (m == 1.0) {
        for (const GridFn* phi : {&t.f, &t.g, &t.h})
            trajs.push_back(heat_trajectory(*phi, times));
    } else {
        for (const GridFn* phi : {&t.f, &t.g, &t.h}) {
            DiffusionProblem pb = make_problem(t.bundle, DomainKind::cauchy_box, *phi);
            trajs.push_back(pme_evolve(pb, times.back(), policy, times));
        }
    }
    DynamicReport rep;
    rep.tol = tol;
    for (std::size_t i = 0; i < trajs[0].times.size(); ++i) {
        ConvolutionResult conv =
            minkowski_convolve(trajs[0].states[i], trajs[1].states[i], t.lam, t.bundle.alpha);
        double worst = 0.0;
        for (std::size_t j = 0; j < conv.ubar.size(); ++j)
            worst = std::max(worst, conv.ubar[j] - trajs[2].states[i][j]);
        rep.times.push_back(trajs[0].times[i]);
        rep.worst_violation.push_back(worst);
        rep.max_value.push_back(trajs[2].states[i].max_value());
        if (worst > tol) rep.pass = false;
    }
    return rep;
}

// --- the approximation cascade ------------------------------------------------

namespace detail {

inline double radial(const Grid& g, Point p) {
    return g.n == 1 ? std::abs(p[0]) : std::hypot(p[0], p[1]);
}

// (conv of f^alpha)^{1/alpha} with an exact analytic tail extension in the
// transformed variable; the shared kernel weights make the grid hypothesis
// survive mollification exactly (Jensen in the transformed domain).
inline GridFn mollify_transformed(const GridFn& f, double eps, double alpha,
                                  const std::function<double(Point)>& tail_transformed) {
    GridFn w = f.map([alpha](double v) { return std::pow(v, alpha); });
    GridFn wm = mollify_with_extension(w, eps, tail_transformed);
    return wm.map([alpha](double v) { return std::pow(v, 1.0 / alpha); });
}

inline GridFn mollify_log(const GridFn& f, double eps,
                          const std::function<double(Point)>& tail_log) {
    // log-domain convolution done on shifted values to keep them positive for
    // the GridFn container; the shift is a constant and passes through the
    // unit-mass kernel unchanged.
    double mn = std::numeric_limits<double>::infinity();
    for (double v : f.values()) mn = std::min(mn, v);
    if (!(mn > 0.0)) throw std::domain_error("mollify_log: data must be strictly positive");
    const double shift = -std::log(mn) + 1.0;
    GridFn w = f.map([shift](double v) { return std::log(v) + shift; });
    auto ext = [&, shift](Point p) { return tail_log(p) + shift; };
    GridFn wm = mollify_with_extension(w, eps, ext);
    return wm.map([shift](double v) { return std::exp(v - shift); });
}

}  // namespace detail

/// Parameters chosen by regularize_triple, reported for inspection.
struct RegularizationParams {
    double beta = 0.0;
    double a_const = 1.0;   // the c >= 1 used for h's operator
    double crossover = 0.0; // envelope radius R_delta
};

/// Smooth strictly positive surrogate of the triple that still satisfies the
/// grid hypothesis exactly. alpha < 0 takes the J route (truncation against
/// the power envelope, then mollification of the alpha-th powers); alpha = 0
/// takes the K route (exponential envelope, log-domain mollification). The
/// constant for h's operator comes from the shift bound of the means. beta is
/// chosen as negative as the box and the integrability constraint allow, so
/// the envelope clears the bulk of the data at practical delta.
inline BBLTriple regularize_triple(const BBLTriple& t, double delta, double eps,
                                   RegularizationParams* out_params = nullptr) {
    const Grid& g = t.f.grid();
    const int n = g.n;
    if (!(delta > 0.0 && delta < 1.0))
        throw std::domain_error("regularize_triple: delta must lie in (0,1)");
    if (!(eps > 0.0)) throw std::domain_error("regularize_triple: eps must be positive");

    if (t.bundle.alpha.is_finite() && t.bundle.alpha.value() < 0.0) {
        const double alpha = t.bundle.alpha.value();
        // admissible window: beta > (1 + n alpha)/(n alpha) for integrability
        // and beta >= 1 - log(1 + L - eps)/(|alpha| log(1/delta)) to keep the
        // crossover radius inside the box
        const double b_integrable = (1.0 + n * alpha) / (n * alpha);
        const double b_box =
            1.0 - std::log(1.0 + g.half_width - eps) / (-alpha * std::log(1.0 / delta));
        const double beta = 0.95 * std::max(b_integrable, b_box);
        if (!(beta < 0.0))
            throw std::domain_error(
                "regularize_triple: box too small for the J envelope at this delta");
        const double a = mean_shift_bound(1.0, 1.0, t.lam, alpha, 1.0).upper;  // min{1-lam,lam}^{1/alpha}
        const double R = truncate_J_radius(delta, alpha, beta);
        if (R + eps > g.half_width)
            throw std::domain_error(
                "regularize_triple: box too small for the J envelope (R_delta + eps > L)");
        if (out_params) *out_params = {beta, a, R};
        GridFn jf = truncate_J(t.f, delta, 1.0, alpha, beta);
        GridFn jg = truncate_J(t.g, delta, 1.0, alpha, beta);
        GridFn jh = truncate_J(t.h, delta, a, alpha, beta);
        const double envc = std::pow(delta, alpha * beta);  // (delta^beta)^alpha
        auto tail = [&, envc](Point p) { return envc * (1.0 + detail::radial(g, p)); };
        GridFn rf = detail::mollify_transformed(jf, eps, alpha, tail).with_tail_exponent(1.0 / alpha);
        GridFn rg = detail::mollify_transformed(jg, eps, alpha, tail).with_tail_exponent(1.0 / alpha);
        GridFn rh = detail::mollify_transformed(jh, eps, alpha, tail).with_tail_exponent(1.0 / alpha);
        return BBLTriple{std::move(rf), std::move(rg), std::move(rh), t.lam, t.bundle};
    }

    if (t.bundle.alpha.is_finite() && t.bundle.alpha.value() == 0.0) {
        const double lam0 = std::min(t.lam, 1.0 - t.lam);
        const double ell = std::max(t.f.max_value(), t.g.max_value());
        const double c_ell = std::max({std::pow(ell, t.lam), std::pow(ell, 1.0 - t.lam), 1.0});
        const double beta = -0.5 * lam0;
        const double R = truncate_K_radius(delta, 1.0, beta);  // widest crossover (gamma = 1)
        if (R + eps > g.half_width)
            throw std::domain_error(
                "regularize_triple: box too small for the K envelope (R_delta + eps > L)");
        if (out_params) *out_params = {beta, c_ell, R};
        GridFn kf = truncate_K(t.f, delta, 1.0, 1.0, beta);
        GridFn kg = truncate_K(t.g, delta, 1.0, 1.0, beta);
        GridFn kh = truncate_K(t.h, delta, lam0, c_ell, beta);
        const double logc = beta * std::log(delta);
        auto tail_log = [&, logc](Point p) { return logc - detail::radial(g, p); };
        GridFn rf = detail::mollify_log(kf, eps, tail_log);
        GridFn rg = detail::mollify_log(kg, eps, tail_log);
        GridFn rh = detail::mollify_log(kh, eps, tail_log);
        return BBLTriple{std::move(rf), std::move(rg), std::move(rh), t.lam, t.bundle};
    }

    throw std::domain_error("regularize_triple: routes exist for alpha < 0 and alpha = 0 only");
}

// --- homogeneity reduction (different exponents) -------------------------------

/// The rescaled triple of the homogeneity argument. Each component lives on
/// its own grid (the argument dilations change the box), which keeps the
/// rescaled values exact samples of the originals: unit masses and the slack
/// identity then hold to machine precision.
struct ReducedTriple {
    GridFn f_hat, g_hat, h_hat;
    double mu = 0.5;   // reduced weight
    Exponent p;        // target exponent
    double M = 1.0;    // (1-lam) F^{q'} + lam G^{q'}
    double scale_f = 1.0, scale_g = 1.0;  // argument dilations
    double F = 0.0, G = 0.0, H = 0.0;     // original masses
    double rhs_qprime = 0.0;              // M_{q'}(F, G; lam)
    double reduced_slack = 0.0;           // mass(h_hat); equals 1 + relative slack
};

inline ReducedTriple reduce_exponent(const BBLTriple& t, Exponent p) {
    const int n = t.f.grid().n;
    const Exponent q = t.bundle.alpha;
    if (p > q) throw std::domain_error("reduce_exponent: need p <= q");
    if (p.is_finite() && p.value() < -1.0 / n - 1e-15)
        throw std::domain_error("reduce_exponent: need p >= -1/n");
    if (p.is_neg_inf()) throw std::domain_error("reduce_exponent: need p >= -1/n");
    if (!q.is_finite() || !(q.value() > -1.0 / n))
        throw std::domain_error("reduce_exponent: requires -1/n < q < +inf");

    ReducedTriple out;
    out.p = p;
    out.F = mass(t.f);
    out.G = mass(t.g);
    out.H = mass(t.h);
    if (!(out.F > 0.0 && out.G > 0.0))
        throw std::domain_error("reduce_exponent: positive masses required");
    const double qprime = t.bundle.alpha_prime.value();
    const double inv1nq = 1.0 / (1.0 + n * q.value());
    out.M = (1.0 - t.lam) * std::pow(out.F, qprime) + t.lam * std::pow(out.G, qprime);
    out.mu = t.lam * std::pow(out.G, qprime) / out.M;
    out.rhs_qprime = power_mean(out.F, out.G, t.lam, t.bundle.alpha_prime);
    out.scale_f = std::pow(out.F, qprime) / out.M;
    out.scale_g = std::pow(out.G, qprime) / out.M;

    const double div_f = std::pow(out.M, n) * std::pow(out.F, inv1nq);
    const double div_g = std::pow(out.M, n) * std::pow(out.G, inv1nq);

    const Grid& g0 = t.f.grid();
    Grid gf(g0.n, g0.half_width / out.scale_f, g0.points);
    Grid gg(g0.n, g0.half_width / out.scale_g, g0.points);
    std::vector<double> vf(t.f.size()), vg(t.g.size()), vh(t.h.size());
    for (std::size_t i = 0; i < vf.size(); ++i) vf[i] = t.f[i] / div_f;
    for (std::size_t i = 0; i < vg.size(); ++i) vg[i] = t.g[i] / div_g;
    for (std::size_t i = 0; i < vh.size(); ++i) vh[i] = t.h[i] / out.rhs_qprime;
    out.f_hat = GridFn(gf, std::move(vf));
    out.g_hat = GridFn(gg, std::move(vg));
    out.h_hat = GridFn(g0, std::move(vh));
    out.reduced_slack = mass(out.h_hat);
    return out;
}

/// Pairwise hypothesis check of the reduced triple at exponent p with weight
/// mu; h_hat is interpolated at the mixed points (f_hat and g_hat contribute
/// exact node values).
inline HypothesisReport check_reduced_hypothesis(const ReducedTriple& r, double tol) {
    HypothesisReport rep;
    const Grid& gf = r.f_hat.grid();
    const Grid& gg = r.g_hat.grid();
    for (std::size_t i = 0; i < r.f_hat.size(); ++i) {
        const double fv = r.f_hat[i];
        if (fv == 0.0) continue;
        Point eta = gf.node(i);
        for (std::size_t j = 0; j < r.g_hat.size(); ++j) {
            const double gv = r.g_hat[j];
            if (gv == 0.0) continue;
            Point zeta = gg.node(j);
            Point x = {(1.0 - r.mu) * eta[0] + r.mu * zeta[0],
                       (1.0 - r.mu) * eta[1] + r.mu * zeta[1]};
            const double hv = r.h_hat.interpolate(x);
            const double viol = power_mean(fv, gv, r.mu, r.p) - hv;
            if (viol > rep.worst_violation) {
                rep.worst_violation = viol;
                rep.witness_x = x;
                rep.witness_y = eta;
                rep.witness_z = zeta;
            }
        }
    }
    rep.pass = rep.worst_violation <= tol;
    return rep;
}

/// Boundary exponent alpha = -1/n: the surrogate triple
/// min{phi^{1/(1-n eps)}, 1/eps} at exponent -1/n + eps. The power map
/// preserves the hypothesis exactly; the cap only lowers the left side.
inline BBLTriple boundary_case_reduce(const BBLTriple& t, double eps) {
    const int n = t.f.grid().n;
    if (!(eps > 0.0)) throw std::domain_error("boundary_case_reduce: eps must be positive");
    if (!t.bundle.alpha.is_finite() ||
        std::abs(t.bundle.alpha.value() + 1.0 / n) > 1e-12)
        throw std::domain_error("boundary_case_reduce: requires alpha = -1/n");
    if (!(n * eps < 1.0))
        throw std::domain_error("boundary_case_reduce: need eps < 1/n");
    const double r = 1.0 / (1.0 - n * eps);
    const double capv = 1.0 / eps;
    auto lift = [&](const GridFn& fn) {
        return fn.map([&](double v) { return std::min(std::pow(v, r), capv); });
    };
    return make_triple(lift(t.f), lift(t.g), lift(t.h), t.lam,
                       Exponent(-1.0 / n + eps));
}

// --- random data for the soundness harness ------------------------------------

/// Random mixture of gaussians plus an occasional indicator block; strictly
/// positive mass by construction. Deterministic for a fixed generator state.
/// with_blocks = false restricts to smooth mixtures (useful where h will be
/// interpolated between nodes).
inline GridFn random_mixture(const Grid& g, std::mt19937_64& rng, bool with_blocks = true) {
    std::uniform_int_distribution<int> ncomp(1, 3);
    std::uniform_real_distribution<double> center(-2.0, 2.0);
    std::uniform_real_distribution<double> width(0.6, 1.6);
    std::uniform_real_distribution<double> amp(0.4, 1.5);
    std::uniform_real_distribution<double> coin(0.0, 1.0);
    const int k = ncomp(rng);
    std::vector<std::array<double, 3>> gaussians;
    for (int i = 0; i < k; ++i) gaussians.push_back({center(rng), width(rng), amp(rng)});
    bool with_block = with_blocks && coin(rng) < 0.4;
    double ba = center(rng), bw = 0.5 + coin(rng), bh = 0.3 + 0.7 * coin(rng);
    return GridFn::sample(g, [&](Point p) {
        double v = 0.0;
        for (const auto& c : gaussians) {
            double r2 = (p[0] - c[0]) * (p[0] - c[0]) + (g.n == 2 ? p[1] * p[1] : 0.0);
            v += c[2] * std::exp(-r2 / (c[1] * c[1]));
        }
        if (with_block && p[0] >= ba && p[0] <= ba + bw) v += bh;
        return v;
    });
}

}  // namespace bbllab
