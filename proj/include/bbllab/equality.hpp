#pragma once

#include <cmath>
#include <limits>
#include <optional>
#include <vector>

#include "bbllab/bbl.hpp"
#include "bbllab/diffusion.hpp"
#include "bbllab/grid.hpp"

namespace bbllab {

/// Convex potential W = -log u restricted to the positivity window
/// u >= cutoff * max(u); nodes outside the window carry W = +inf.
struct Potential {
    Grid grid;
    std::vector<double> w;
    std::vector<bool> in_window;

    bool interior(std::size_t idx, int margin_cells = 1) const {
        const int N = grid.points;
        auto ok = [&](int j) { return j >= margin_cells && j < N - margin_cells; };
        int ix = grid.n == 1 ? int(idx) : int(idx) / N;
        int iy = grid.n == 1 ? 0 : int(idx) % N;
        if (!ok(ix) || (grid.n == 2 && !ok(iy))) return false;
        for (int dx = -margin_cells; dx <= margin_cells; ++dx)
            for (int dy = -margin_cells; dy <= margin_cells; ++dy) {
                if (grid.n == 1 && dy != 0) continue;
                if (!in_window[grid.index(ix + dx, grid.n == 2 ? iy + dy : 0)]) return false;
            }
        return true;
    }
};

inline Potential log_potential(const GridFn& u, double cutoff_rel = 1e-12) {
    Potential p;
    p.grid = u.grid();
    p.w.assign(u.size(), std::numeric_limits<double>::infinity());
    p.in_window.assign(u.size(), false);
    const double cutoff = cutoff_rel * u.max_value();
    for (std::size_t i = 0; i < u.size(); ++i)
        if (u[i] >= cutoff && u[i] > 0.0) {
            p.w[i] = -std::log(u[i]);
            p.in_window[i] = true;
        }
    return p;
}

/// Discrete Legendre transform on a dual grid: W*(xi) = max over window nodes
/// of <x, xi> - W(x), with the argmax node recorded and boundary clamping
/// flagged (argmax on the window edge means the true supremum sits outside).
struct ConjugatePair {
    Potential W;
    Grid dual_grid;
    std::vector<double> w_star;
    std::vector<std::size_t> argmax;
    std::vector<bool> attained_interior;
};

inline ConjugatePair legendre_transform(const Potential& W, const Grid& dual_grid) {
    bool any = false;
    for (bool b : W.in_window) any = any || b;
    if (!any) throw std::invalid_argument("legendre_transform: empty window");
    ConjugatePair pair;
    pair.W = W;
    pair.dual_grid = dual_grid;
    const std::size_t nd = dual_grid.node_count();
    pair.w_star.resize(nd);
    pair.argmax.resize(nd);
    pair.attained_interior.resize(nd);
    for (std::size_t q = 0; q < nd; ++q) {
        Point xi = dual_grid.node(q);
        double best = -std::numeric_limits<double>::infinity();
        std::size_t arg = 0;
        for (std::size_t i = 0; i < W.w.size(); ++i) {
            if (!W.in_window[i]) continue;
            Point x = W.grid.node(i);
            double val = x[0] * xi[0] + (W.grid.n == 2 ? x[1] * xi[1] : 0.0) - W.w[i];
            if (val > best) {
                best = val;
                arg = i;
            }
        }
        pair.w_star[q] = best;
        pair.argmax[q] = arg;
        pair.attained_interior[q] = W.interior(arg);
    }
    return pair;
}

/// Double conjugate evaluated back on the primal grid; dominated by W on the
/// window (discrete Fenchel-Moreau).
inline std::vector<double> biconjugate(const ConjugatePair& pair) {
    const Grid& g = pair.W.grid;
    std::vector<double> out(g.node_count(), -std::numeric_limits<double>::infinity());
    for (std::size_t i = 0; i < out.size(); ++i) {
        Point x = g.node(i);
        for (std::size_t q = 0; q < pair.w_star.size(); ++q) {
            Point xi = pair.dual_grid.node(q);
            double val = x[0] * xi[0] + (g.n == 2 ? x[1] * xi[1] : 0.0) - pair.w_star[q];
            out[i] = std::max(out[i], val);
        }
    }
    return out;
}

// --- eventual strong log-concavity ---------------------------------------------

namespace detail {

// max eigenvalue of the symmetric 2x2 matrix [[a, b], [b, c]]
inline double sym2_max_eig(double a, double b, double c) {
    double tr = 0.5 * (a + c);
    double disc = std::sqrt(0.25 * (a - c) * (a - c) + b * b);
    return tr + disc;
}

inline bool strongly_logconcave(const GridFn& u, double sigma, double cutoff_rel) {
    Potential p = log_potential(u, cutoff_rel);
    const Grid& g = u.grid();
    const int N = g.points;
    const double h2 = g.spacing() * g.spacing();
    bool any = false;
    if (g.n == 1) {
        for (int j = 1; j < N - 1; ++j) {
            std::size_t idx = g.index(j);
            if (!p.interior(idx)) continue;
            any = true;
            double vxx = -(p.w[idx - 1] - 2.0 * p.w[idx] + p.w[idx + 1]) / h2;
            if (!(vxx <= -sigma)) return false;
        }
        return any;
    }
    for (int ix = 1; ix < N - 1; ++ix)
        for (int iy = 1; iy < N - 1; ++iy) {
            std::size_t idx = g.index(ix, iy);
            if (!p.interior(idx)) continue;
            any = true;
            auto w = [&](int dx, int dy) { return p.w[g.index(ix + dx, iy + dy)]; };
            double vxx = -(w(-1, 0) - 2.0 * w(0, 0) + w(1, 0)) / h2;
            double vyy = -(w(0, -1) - 2.0 * w(0, 0) + w(0, 1)) / h2;
            double vxy = -(w(1, 1) - w(1, -1) - w(-1, 1) + w(-1, -1)) / (4.0 * h2);
            if (!(sym2_max_eig(vxx, vxy, vyy) <= -sigma)) return false;
        }
    return any;
}

}  // namespace detail

/// First stored time at which all interior second differences of log u on the
/// positivity window are <= -sigma; nullopt when never reached.
inline std::optional<double> detect_strong_logconcavity(const Trajectory& traj, double sigma,
                                                        double cutoff_rel = 1e-12) {
    for (std::size_t i = 0; i < traj.states.size(); ++i) {
        if (traj.times[i] <= 0.0) continue;
        if (detail::strongly_logconcave(traj.states[i], sigma, cutoff_rel))
            return traj.times[i];
    }
    return std::nullopt;
}

// --- homothety recovery ----------------------------------------------------------

/// Recovered relation u1(x) = k u0(x - eta) (and u_lam(x) = k^lam u0(x - lam eta)),
/// i.e. W1* = W0* + <eta, xi> + log k on the common dual window. fit_residual
/// is the worst affine deviation, including the lambda-interpolated cross-check.
struct HomothetyFit {
    double k = 1.0;
    Point eta{0.0, 0.0};
    double b = 0.0;  // log k
    double fit_residual = 0.0;
    std::size_t used_nodes = 0;
};

namespace detail {

inline double grad_bound(const Potential& p) {
    const Grid& g = p.grid;
    const int N = g.points;
    const double h = g.spacing();
    double mx = 0.0;
    for (std::size_t i = 0; i < p.w.size(); ++i) {
        if (!p.interior(i)) continue;
        int ix = g.n == 1 ? int(i) : int(i) / N;
        int iy = g.n == 1 ? 0 : int(i) % N;
        double gx = (p.w[g.index(ix + 1, iy)] - p.w[g.index(ix - 1, iy)]) / (2.0 * h);
        double gy = g.n == 2 ? (p.w[g.index(ix, iy + 1)] - p.w[g.index(ix, iy - 1)]) / (2.0 * h)
                             : 0.0;
        mx = std::max(mx, std::max(std::abs(gx), std::abs(gy)));
    }
    return mx;
}

}  // namespace detail

inline HomothetyFit recover_homothety(const GridFn& u0_t, const GridFn& u1_t,
                                      const GridFn& ul_t, double lam,
                                      int dual_points = 201, double cutoff_rel = 1e-12) {
    const int n = u0_t.grid().n;
    if (n == 2 && dual_points > 61) dual_points = 41;
    Potential w0 = log_potential(u0_t, cutoff_rel);
    Potential w1 = log_potential(u1_t, cutoff_rel);
    Potential wl = log_potential(ul_t, cutoff_rel);
    double xi_max = std::min({detail::grad_bound(w0), detail::grad_bound(w1),
                              detail::grad_bound(wl)}) * 0.8;
    if (!(xi_max > 0.0))
        throw std::invalid_argument("recover_homothety: degenerate dual window");
    Grid dual(n, xi_max, dual_points | 1);
    ConjugatePair c0 = legendre_transform(w0, dual);
    ConjugatePair c1 = legendre_transform(w1, dual);
    ConjugatePair cl = legendre_transform(wl, dual);

    // least squares of (w1* - w0*) against <eta, xi> + b over interior-attained nodes
    double sxx[3][3] = {{0}}, sxy[3] = {0};
    std::size_t used = 0;
    for (std::size_t q = 0; q < dual.node_count(); ++q) {
        if (!c0.attained_interior[q] || !c1.attained_interior[q]) continue;
        Point xi = dual.node(q);
        const double y = c1.w_star[q] - c0.w_star[q];
        const double basis[3] = {xi[0], n == 2 ? xi[1] : 0.0, 1.0};
        const int dims = n + 1;
        for (int r = 0; r < dims; ++r) {
            int rr = r == n ? 2 : r;
            for (int c = 0; c < dims; ++c) {
                int cc = c == n ? 2 : c;
                sxx[rr][cc] += basis[rr] * basis[cc];
            }
            sxy[rr] += basis[rr] * y;
        }
        ++used;
    }
    if (used < std::size_t(n + 2))
        throw std::invalid_argument("recover_homothety: dual windows are disjoint");

    HomothetyFit fit;
    fit.used_nodes = used;
    if (n == 1) {
        const double det = sxx[0][0] * sxx[2][2] - sxx[0][2] * sxx[2][0];
        fit.eta[0] = (sxy[0] * sxx[2][2] - sxx[0][2] * sxy[2]) / det;
        fit.b = (sxx[0][0] * sxy[2] - sxx[2][0] * sxy[0]) / det;
    } else {
        // 3x3 normal equations solved by Cramer's rule
        double A[3][3] = {{sxx[0][0], sxx[0][1], sxx[0][2]},
                          {sxx[1][0], sxx[1][1], sxx[1][2]},
                          {sxx[2][0], sxx[2][1], sxx[2][2]}};
        auto det3 = [](double M[3][3]) {
            return M[0][0] * (M[1][1] * M[2][2] - M[1][2] * M[2][1]) -
                   M[0][1] * (M[1][0] * M[2][2] - M[1][2] * M[2][0]) +
                   M[0][2] * (M[1][0] * M[2][1] - M[1][1] * M[2][0]);
        };
        double d0 = det3(A);
        double sol[3];
        for (int c = 0; c < 3; ++c) {
            double B[3][3];
            std::memcpy(B, A, sizeof(B));
            for (int r = 0; r < 3; ++r) B[r][c] = sxy[r];
            sol[c] = det3(B) / d0;
        }
        fit.eta = {sol[0], sol[1]};
        fit.b = sol[2];
    }
    fit.k = std::exp(fit.b);

    double worst = 0.0;
    for (std::size_t q = 0; q < dual.node_count(); ++q) {
        Point xi = dual.node(q);
        const double aff = fit.eta[0] * xi[0] + (n == 2 ? fit.eta[1] * xi[1] : 0.0) + fit.b;
        if (c0.attained_interior[q] && c1.attained_interior[q])
            worst = std::max(worst, std::abs(c1.w_star[q] - c0.w_star[q] - aff));
        // lambda-interpolated identity: Wl* = W0* + lam <eta, xi> + lam b
        if (c0.attained_interior[q] && cl.attained_interior[q])
            worst = std::max(worst, std::abs(cl.w_star[q] - c0.w_star[q] - lam * aff));
    }
    fit.fit_residual = worst;
    return fit;
}

// --- full pipeline ----------------------------------------------------------------

struct EqualityOptions {
    double sigma = 0.05;
    std::vector<double> ladder;  // default geometric {0.05 * 2^k, k = 0..6}
    double residual_tol = 5e-3;
    double back_substitution_tol = 0.02;  // relative L1
    double equality_tol_factor = 1e-3;
    double concavity_tol_factor = 1e-9;
    int dual_points = 201;
};

struct EqualityReport {
    double t_star = 0.0;
    double sigma = 0.0;
    double k = 1.0;
    Point eta{0.0, 0.0};
    double fit_residual = 0.0;
    bool certified = false;
    double back_substitution_err = 0.0;
    bool logconcavity_ok = false;
};

/// Near-equality PL pipeline (alpha = 0): evolve the triple under the heat
/// flow, wait for strong log-concavity, recover (k, eta) through the concave
/// conjugates, and certify only when the time-0 identity and the log-concavity
/// of the original data both check out.
inline EqualityReport equality_pipeline(const BBLTriple& triple, EqualityOptions opt = {}) {
    if (!triple.bundle.alpha.is_finite() || triple.bundle.alpha.value() != 0.0)
        throw std::domain_error("equality_pipeline: alpha = 0 required");
    BBLReport rep = verify_bbl(triple, 1e-6 * std::max(1.0, mass(triple.h)),
                               1e-9 * std::max(1.0, triple.h.max_value()),
                               opt.equality_tol_factor);
    if (rep.vacuous)
        throw std::invalid_argument("equality_pipeline: hypothesis fails at t = 0");
    if (!rep.near_equality)
        throw std::invalid_argument("equality_pipeline: triple is not near equality");

    if (opt.ladder.empty())
        for (double t = 0.05; t < 3.3; t *= 2.0) opt.ladder.push_back(t);
    Trajectory tf = heat_trajectory(triple.f, opt.ladder);
    Trajectory tg = heat_trajectory(triple.g, opt.ladder);
    Trajectory th = heat_trajectory(triple.h, opt.ladder);

    EqualityReport out;
    out.sigma = opt.sigma;
    std::size_t star = 0;
    bool found = false;
    for (std::size_t i = 1; i < tf.states.size() && !found; ++i) {
        if (detail::strongly_logconcave(tf.states[i], opt.sigma, 1e-12) &&
            detail::strongly_logconcave(tg.states[i], opt.sigma, 1e-12) &&
            detail::strongly_logconcave(th.states[i], opt.sigma, 1e-12)) {
            star = i;
            found = true;
        }
    }
    if (!found) return out;  // not certified; t_star = 0 marks no detection
    out.t_star = tf.times[star];

    HomothetyFit fit = recover_homothety(tf.states[star], tg.states[star], th.states[star],
                                         triple.lam, opt.dual_points);
    out.k = fit.k;
    out.eta = fit.eta;
    out.fit_residual = fit.fit_residual;

    // back-substitution of the recovered homothety at time zero
    const Grid& g = triple.f.grid();
    GridFn f_shift = GridFn::sample(g, [&](Point p) {
        return triple.f.interpolate({p[0] - fit.eta[0], g.n == 2 ? p[1] - fit.eta[1] : 0.0});
    });
    GridFn f_shift_l = GridFn::sample(g, [&](Point p) {
        return triple.f.interpolate({p[0] - triple.lam * fit.eta[0],
                                     g.n == 2 ? p[1] - triple.lam * fit.eta[1] : 0.0});
    });
    double err_g = 0.0, err_h = 0.0;
    {
        GridFn kg = f_shift.map([&](double v) { return fit.k * v; });
        GridFn kh = f_shift_l.map([&](double v) { return std::pow(fit.k, triple.lam) * v; });
        err_g = l1_distance(triple.g, kg) / mass(triple.g);
        err_h = l1_distance(triple.h, kh) / mass(triple.h);
    }
    out.back_substitution_err = std::max(err_g, err_h);

    auto concave = [&](const GridFn& u) {
        return check_alpha_concavity(u, Exponent(0.0),
                                     opt.concavity_tol_factor * std::max(1.0, u.max_value()))
            .pass;
    };
    out.logconcavity_ok = concave(triple.f) && concave(triple.g) && concave(triple.h);
    out.certified = fit.fit_residual <= opt.residual_tol &&
                    out.back_substitution_err <= opt.back_substitution_tol &&
                    out.logconcavity_ok;
    return out;
}

// --- matrix diagnostics -------------------------------------------------------------

struct PointDiagnostic {
    Point x{0.0, 0.0};
    bool matched = false;
    double harmonic_margin = 0.0;  // min eig of Y - ((1-lam) X1^{-1} + lam X2^{-1})^{-1}
    double rigidity = 0.0;         // Frobenius norm of X1 - X2
};

struct MatrixDiagnostics {
    std::vector<PointDiagnostic> points;
    std::size_t skipped = 0;
};

/// At gradient-matched sample points, compare the log-potential Hessians of
/// the pair against the convolution's: the harmonic-mean inequality margin and
/// the rigidity gap |X1 - X2| (near zero exactly in the equality case).
inline MatrixDiagnostics matrix_equality_diagnostics(const GridFn& u0_t, const GridFn& u1_t,
                                                     const GridFn& ul_t, double lam,
                                                     const std::vector<Point>& samples,
                                                     int dual_points = 201,
                                                     double cutoff_rel = 1e-12) {
    const Grid& g = ul_t.grid();
    const int n = g.n;
    if (n == 2 && dual_points > 61) dual_points = 41;
    Potential w0 = log_potential(u0_t, cutoff_rel);
    Potential w1 = log_potential(u1_t, cutoff_rel);
    Potential wl = log_potential(ul_t, cutoff_rel);
    double xi_max = std::min({detail::grad_bound(w0), detail::grad_bound(w1)}) * 0.95;
    Grid dual(n, xi_max, dual_points | 1);
    ConjugatePair c0 = legendre_transform(w0, dual);
    ConjugatePair c1 = legendre_transform(w1, dual);

    const double h = g.spacing();
    const int N = g.points;
    auto hessian = [&](const Potential& p, std::size_t idx, double H[3]) -> bool {
        if (!p.interior(idx, 2)) return false;
        int ix = n == 1 ? int(idx) : int(idx) / N;
        int iy = n == 1 ? 0 : int(idx) % N;
        auto w = [&](int dx, int dy) { return p.w[g.index(ix + dx, n == 2 ? iy + dy : 0)]; };
        H[0] = -(w(-1, 0) - 2.0 * w(0, 0) + w(1, 0)) / (h * h);
        if (n == 2) {
            H[1] = -(w(1, 1) - w(1, -1) - w(-1, 1) + w(-1, -1)) / (4.0 * h * h);
            H[2] = -(w(0, -1) - 2.0 * w(0, 0) + w(0, 1)) / (h * h);
        }
        return true;
    };
    auto gradient = [&](const Potential& p, std::size_t idx, Point& out) -> bool {
        if (!p.interior(idx)) return false;
        int ix = n == 1 ? int(idx) : int(idx) / N;
        int iy = n == 1 ? 0 : int(idx) % N;
        out[0] = -(p.w[g.index(ix + 1, iy)] - p.w[g.index(ix - 1, iy)]) / (2.0 * h);
        out[1] = n == 2 ? -(p.w[g.index(ix, iy + 1)] - p.w[g.index(ix, iy - 1)]) / (2.0 * h) : 0.0;
        return true;
    };

    MatrixDiagnostics diag;
    for (Point x : samples) {
        PointDiagnostic pd;
        pd.x = x;
        // nearest grid node for the convolution sample
        auto nearest = [&](double c) { return int(std::lround((c + g.half_width) / h)); };
        int ix = nearest(x[0]), iy = n == 2 ? nearest(x[1]) : 0;
        if (ix < 0 || ix >= N || (n == 2 && (iy < 0 || iy >= N))) {
            ++diag.skipped;
            continue;
        }
        std::size_t idx = g.index(ix, iy);
        Point grad_l;
        double Y[3] = {0, 0, 0};
        if (!gradient(wl, idx, grad_l) || !hessian(wl, idx, Y)) {
            ++diag.skipped;
            continue;
        }
        // dual lookup of the gradient-matched points (note W = -v, so dual of
        // W matches xi = -grad v)
        Point xi = {-grad_l[0], -grad_l[1]};
        if (std::abs(xi[0]) > dual.half_width || (n == 2 && std::abs(xi[1]) > dual.half_width)) {
            ++diag.skipped;
            continue;
        }
        auto dual_nearest = [&](double c) {
            return std::min(dual.points - 1,
                            std::max(0, int(std::lround((c + dual.half_width) / dual.spacing()))));
        };
        std::size_t qd = dual.index(dual_nearest(xi[0]), n == 2 ? dual_nearest(xi[1]) : 0);
        if (!c0.attained_interior[qd] || !c1.attained_interior[qd]) {
            ++diag.skipped;
            continue;
        }
        double X1[3] = {0, 0, 0}, X2[3] = {0, 0, 0};
        if (!hessian(w0, c0.argmax[qd], X1) || !hessian(w1, c1.argmax[qd], X2)) {
            ++diag.skipped;
            continue;
        }
        if (n == 1) {
            if (!(X1[0] < 0.0 && X2[0] < 0.0)) {
                ++diag.skipped;
                continue;
            }
            double H = 1.0 / ((1.0 - lam) / X1[0] + lam / X2[0]);
            pd.harmonic_margin = Y[0] - H;
            pd.rigidity = std::abs(X1[0] - X2[0]);
        } else {
            auto inv2 = [](const double A[3], double out[3]) -> bool {
                double det = A[0] * A[2] - A[1] * A[1];
                if (std::abs(det) < 1e-300) return false;
                out[0] = A[2] / det;
                out[1] = -A[1] / det;
                out[2] = A[0] / det;
                return true;
            };
            double I1[3], I2[3], S[3], H[3];
            if (!inv2(X1, I1) || !inv2(X2, I2)) {
                ++diag.skipped;
                continue;
            }
            for (int c = 0; c < 3; ++c) S[c] = (1.0 - lam) * I1[c] + lam * I2[c];
            if (!inv2(S, H)) {
                ++diag.skipped;
                continue;
            }
            double D[3] = {Y[0] - H[0], Y[1] - H[1], Y[2] - H[2]};
            double tr = 0.5 * (D[0] + D[2]);
            double disc = std::sqrt(0.25 * (D[0] - D[2]) * (D[0] - D[2]) + D[1] * D[1]);
            pd.harmonic_margin = tr - disc;  // min eigenvalue
            double dx0 = X1[0] - X2[0], dx1 = X1[1] - X2[1], dx2 = X1[2] - X2[2];
            pd.rigidity = std::sqrt(dx0 * dx0 + 2.0 * dx1 * dx1 + dx2 * dx2);
        }
        pd.matched = true;
        diag.points.push_back(pd);
    }
    return diag;
}

}  // namespace bbllab
