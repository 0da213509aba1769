#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "bbllab/grid.hpp"
#include "bbllab/power_mean.hpp"

namespace bbllab {

// --- mollification ---------------------------------------------------------

namespace detail {

/// Integral of exp(-1/(1-|x|^2)) over the unit ball, dimension 1 or 2.
/// The integrand is smooth with compact support, so composite Simpson
/// converges fast; cached after the first call.
inline double bump_integral(int n) {
    static double cache[3] = {0.0, 0.0, 0.0};
    if (cache[n] != 0.0) return cache[n];
    const int M = 200000;
    auto bump1 = [](double r) {
        double s = 1.0 - r * r;
        return s > 0.0 ? std::exp(-1.0 / s) : 0.0;
    };
    double sum = 0.0;
    const double h = 1.0 / M;
    if (n == 1) {
        // int_{-1}^{1} = 2 int_0^1
        for (int j = 0; j < M; ++j) {
            double a = j * h, b = a + h;
            sum += (bump1(a) + 4.0 * bump1(0.5 * (a + b)) + bump1(b)) * h / 6.0;
        }
        cache[n] = 2.0 * sum;
    } else {
        // 2*pi int_0^1 r e^{-1/(1-r^2)} dr
        auto f = [&](double r) { return r * bump1(r); };
        for (int j = 0; j < M; ++j) {
            double a = j * h, b = a + h;
            sum += (f(a) + 4.0 * f(0.5 * (a + b)) + f(b)) * h / 6.0;
        }
        cache[n] = 2.0 * M_PI * sum;
    }
    return cache[n];
}

}  // namespace detail

/// Normalization constant c_n with ||rho||_L1 = 1 for the standard bump
/// rho(x) = c_n exp(-1/(1-|x|^2)) on the unit ball.
inline double bump_normalization(int n) { return 1.0 / detail::bump_integral(n); }

/// Unnormalized bump profile at radius fraction r = |x|/eps in [0,1).
inline double bump_profile(double r2) {
    const double s = 1.0 - r2;
    return s > 0.0 ? std::exp(-1.0 / s) : 0.0;
}

/// Node-offset kernel for rho_eps, normalized so the discrete weights sum
/// to one; keeps constants exact and discrete mass conserved away from the
/// boundary.
struct MollifierKernel {
    std::vector<std::array<int, 2>> offsets;
    std::vector<double> weights;
};

inline MollifierKernel make_bump_kernel(const Grid& g, double eps) {
    MollifierKernel k;
    const double h = g.spacing();
    const int r = int(std::ceil(eps / h));
    double total = 0.0;
    if (g.n == 1) {
        for (int j = -r; j <= r; ++j) {
            double w = bump_profile((j * h / eps) * (j * h / eps));
            if (w > 0.0) {
                k.offsets.push_back({j, 0});
                k.weights.push_back(w);
                total += w;
            }
        }
    } else {
        for (int jx = -r; jx <= r; ++jx)
            for (int jy = -r; jy <= r; ++jy) {
                double rr = (jx * jx + jy * jy) * h * h / (eps * eps);
                double w = bump_profile(rr);
                if (w > 0.0) {
                    k.offsets.push_back({jx, jy});
                    k.weights.push_back(w);
                    total += w;
                }
            }
    }
    for (double& w : k.weights) w /= total;
    return k;
}

/// Discrete convolution with the normalized bump kernel. `outside` supplies
/// values beyond the box (exact tail models in the regularization routes);
/// when absent the function is extended by zero.
inline GridFn mollify_with_extension(const GridFn& f, double eps,
                                     const std::function<double(Point)>& outside) {
    if (!(eps > 0.0)) throw std::domain_error("mollify: eps must be positive");
    const Grid& g = f.grid();
    const double h = g.spacing();
    if (eps < h) return f.without_tail();  // below grid resolution: identity
    MollifierKernel k = make_bump_kernel(g, eps);
    const int N = g.points;
    std::vector<double> out(g.node_count(), 0.0);
    for (std::size_t i = 0; i < out.size(); ++i) {
        int ix = g.n == 1 ? int(i) : int(i) / N;
        int iy = g.n == 1 ? 0 : int(i) % N;
        double s = 0.0;
        for (std::size_t q = 0; q < k.offsets.size(); ++q) {
            int jx = ix - k.offsets[q][0];
            int jy = iy - k.offsets[q][1];
            double v;
            if (jx >= 0 && jx < N && (g.n == 1 || (jy >= 0 && jy < N))) {
                v = f[g.index(jx, jy)];
            } else if (outside) {
                // jx/jy may lie outside [0,N); the coordinate arithmetic still applies
                Point p = {-g.half_width + jx * h,
                           g.n == 2 ? -g.half_width + jy * h : 0.0};
                v = outside(p);
            } else {
                v = 0.0;
            }
            s += k.weights[q] * v;
        }
        out[i] = std::max(0.0, s);
    }
    return GridFn(g, std::move(out));
}

/// Mollification with the compactly supported bump of unit L1 mass,
/// zero-extended beyond the box.
inline GridFn mollify(const GridFn& f, double eps) {
    return mollify_with_extension(f, eps, nullptr);
}

// --- truncation operators ---------------------------------------------------

/// Pointwise cap min{f, ell}.
inline GridFn cap(const GridFn& f, double ell) {
    if (!(ell > 0.0)) throw std::domain_error("cap: level must be positive");
    return f.map([ell](double v) { return std::min(v, ell); });
}

/// J-operator: min{f(x) + c*delta, delta^beta (1+|x|)^{1/alpha}}.
/// Handles -1/n < alpha < 0 (general n) and n = 1 with -1 < alpha < -1/2,
/// requiring beta < 0 and 1 + n*alpha*(1-beta) > 0. The output carries the
/// power-law tail exponent 1/alpha.
inline GridFn truncate_J(const GridFn& f, double delta, double c, double alpha, double beta) {
    const int n = f.grid().n;
    if (!(delta > 0.0)) throw std::domain_error("truncate_J: delta must be positive");
    if (!(c >= 1.0)) throw std::domain_error("truncate_J: c must be >= 1");
    if (!(alpha < 0.0)) throw std::domain_error("truncate_J: alpha must be negative");
    if (!(beta < 0.0)) throw std::domain_error("truncate_J: beta must be negative");
    bool case1 = alpha > -1.0 / n;
    bool case2 = n == 1 && alpha > -1.0 && alpha < -0.5;
    if (!case1 && !case2)
        throw std::domain_error("truncate_J: alpha outside the handled ranges");
    if (!(1.0 + n * alpha * (1.0 - beta) > 0.0))
        throw std::domain_error("truncate_J: need 1 + n*alpha*(1-beta) > 0");
    const Grid& g = f.grid();
    std::vector<double> out(g.node_count());
    const double db = std::pow(delta, beta);
    for (std::size_t i = 0; i < out.size(); ++i) {
        Point p = g.node(i);
        double r = g.n == 1 ? std::abs(p[0]) : std::hypot(p[0], p[1]);
        out[i] = std::min(f[i] + c * delta, db * std::pow(1.0 + r, 1.0 / alpha));
    }
    return GridFn(g, std::move(out)).with_tail_exponent(1.0 / alpha);
}

/// Crossover radius of truncate_J: the envelope is active beyond
/// R_delta = delta^{alpha(1-beta)} - 1.
inline double truncate_J_radius(double delta, double alpha, double beta) {
    return std::pow(delta, alpha * (1.0 - beta)) - 1.0;
}

/// K-operator: min{max{f(x), c*delta^gamma}, delta^beta e^{-|x|}},
/// gamma in (0,1], -gamma < beta < 0.
inline GridFn truncate_K(const GridFn& f, double delta, double gamma, double c, double beta) {
    if (!(delta > 0.0)) throw std::domain_error("truncate_K: delta must be positive");
    if (!(gamma > 0.0 && gamma <= 1.0)) throw std::domain_error("truncate_K: gamma must lie in (0,1]");
    if (!(c >= 1.0)) throw std::domain_error("truncate_K: c must be >= 1");
    if (!(beta > -gamma && beta < 0.0))
        throw std::domain_error("truncate_K: beta must lie in (-gamma, 0)");
    const Grid& g = f.grid();
    std::vector<double> out(g.node_count());
    const double floor_v = c * std::pow(delta, gamma);
    const double db = std::pow(delta, beta);
    for (std::size_t i = 0; i < out.size(); ++i) {
        Point p = g.node(i);
        double r = g.n == 1 ? std::abs(p[0]) : std::hypot(p[0], p[1]);
        out[i] = std::min(std::max(f[i], floor_v), db * std::exp(-r));
    }
    return GridFn(g, std::move(out));
}

/// Crossover radius of truncate_K: (beta - gamma) * log(delta).
inline double truncate_K_radius(double delta, double gamma, double beta) {
    return (beta - gamma) * std::log(delta);
}

// --- alpha-concavity check ---------------------------------------------------

struct ConcavityReport {
    bool pass = true;
    double worst_violation = 0.0;  // max of M_alpha(f(y), f(z); 1/2) - f(mid)
    Point witness_y{0.0, 0.0};
    Point witness_z{0.0, 0.0};
};

/// Exhaustive midpoint test f((y+z)/2) >= M_alpha(f(y), f(z); 1/2) - tol over
/// all node pairs whose midpoint is itself a node, so every failure is an
/// exact witness.
inline ConcavityReport check_alpha_concavity(const GridFn& f, Exponent alpha, double tol) {
    const Grid& g = f.grid();
    const int N = g.points;
    ConcavityReport rep;
    auto consider = [&](std::size_t iy, std::size_t iz, std::size_t imid) {
        const double fy = f[iy], fz = f[iz];
        if (fy == 0.0 || fz == 0.0) return;  // zero-product clause: trivially satisfied
        double m = power_mean(fy, fz, 0.5, alpha);
        double viol = m - f[imid];
        if (viol > rep.worst_violation) {
            rep.worst_violation = viol;
            rep.witness_y = g.node(iy);
            rep.witness_z = g.node(iz);
        }
    };
    if (g.n == 1) {
        for (int i = 0; i < N; ++i)
            for (int j = i; j < N; ++j) {
                if ((i + j) % 2 != 0) continue;
                consider(g.index(i), g.index(j), g.index((i + j) / 2));
            }
    } else {
        for (std::size_t a = 0; a < g.node_count(); ++a)
            for (std::size_t b = a; b < g.node_count(); ++b) {
                int ax = int(a) / N, ay = int(a) % N;
                int bx = int(b) / N, by = int(b) % N;
                if ((ax + bx) % 2 != 0 || (ay + by) % 2 != 0) continue;
                consider(a, b, g.index((ax + bx) / 2, (ay + by) / 2));
            }
    }
    rep.pass = rep.worst_violation <= tol;
    return rep;
}

}  // namespace bbllab
