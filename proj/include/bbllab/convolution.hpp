#pragma once

#include <cmath>
#include <fstream>
#include <vector>

#include "bbllab/grid.hpp"
#include "bbllab/power_mean.hpp"

namespace bbllab {

/// Spatial Minkowski convolution with witnesses. For each node x the stored
/// pair (y*, z*) satisfies (1-lam) y* + lam z* = x and
/// ubar(x) = M_alpha(u0(y*), u1(z*); lam). attained is false when the best
/// pair touches or leaves the box.
struct ConvolutionResult {
    GridFn ubar;
    std::vector<Point> y_star;
    std::vector<Point> z_star;
    std::vector<bool> attained;
};

namespace detail {

inline bool strictly_inside(const Grid& g, Point p) {
    const double L = g.half_width, h = g.spacing();
    if (!(p[0] > -L + 0.5 * h && p[0] < L - 0.5 * h)) return false;
    if (g.n == 2 && !(p[1] > -L + 0.5 * h && p[1] < L - 0.5 * h)) return false;
    return true;
}

}  // namespace detail

/// Brute-force supremal convolution: for each output node x, the supremum of
/// M_alpha(u0(y), u1(z); lam) over y-nodes with z = (x - (1-lam) y)/lam solved
/// and u1 linearly interpolated (zero outside the box). Deterministic
/// tie-break: smallest |y - x| wins, then smallest y.
inline ConvolutionResult minkowski_convolve(const GridFn& u0, const GridFn& u1,
                                            double lam, Exponent alpha) {
    if (!(u0.grid() == u1.grid()))
        throw std::invalid_argument("minkowski_convolve: grids differ");
    if (!(lam > 0.0 && lam < 1.0))
        throw std::domain_error("minkowski_convolve: lambda must lie in (0,1)");
    const Grid& g = u0.grid();
    const std::size_t count = g.node_count();
    ConvolutionResult res;
    std::vector<double> best(count, 0.0);
    res.y_star.resize(count);
    res.z_star.resize(count);
    res.attained.assign(count, false);

    for (std::size_t ix = 0; ix < count; ++ix) {
        Point x = g.node(ix);
        double best_val = -1.0;
        double best_dist = 0.0, best_key = 0.0;
        Point by{0, 0}, bz{0, 0};
        for (std::size_t iy = 0; iy < count; ++iy) {
            Point y = g.node(iy);
            Point z = {(x[0] - (1.0 - lam) * y[0]) / lam,
                       g.n == 2 ? (x[1] - (1.0 - lam) * y[1]) / lam : 0.0};
            const double vy = u0[iy];
            const double vz = u1.interpolate(z);
            const double m = (vy == 0.0 || vz == 0.0) ? 0.0 : power_mean(vy, vz, lam, alpha);
            const double dist = std::hypot(y[0] - x[0], g.n == 2 ? y[1] - x[1] : 0.0);
            const double key = g.n == 2 ? y[0] * 4.0 * g.half_width + y[1] : y[0];
            bool better = m > best_val;
            if (!better && m == best_val) {
                better = dist < best_dist || (dist == best_dist && key < best_key);
            }
            if (better) {
                best_val = m;
                best_dist = dist;
                best_key = key;
                by = y;
                bz = z;
            }
        }
        best[ix] = std::max(best_val, 0.0);
        res.y_star[ix] = by;
        res.z_star[ix] = bz;
        res.attained[ix] = detail::strictly_inside(g, by) && detail::strictly_inside(g, bz);
    }
    res.ubar = GridFn(g, std::move(best));
    return res;
}

/// k-ary supremal convolution over all (k-1)-tuples of free nodes with the
/// last argument solved and interpolated. Delegates to the binary routine for
/// k = 2, so the two agree bit-for-bit there.
inline ConvolutionResult minkowski_convolve_k(const std::vector<GridFn>& us,
                                              const WeightVector& w, Exponent alpha) {
    if (us.size() != w.size())
        throw std::invalid_argument("minkowski_convolve_k: weight/function count mismatch");
    const std::size_t k = us.size();
    for (std::size_t i = 1; i < k; ++i)
        if (!(us[i].grid() == us[0].grid()))
            throw std::invalid_argument("minkowski_convolve_k: grids differ");
    if (k == 2) return minkowski_convolve(us[0], us[1], w[1], alpha);

    const Grid& g = us[0].grid();
    if (g.n != 1)
        throw std::invalid_argument("minkowski_convolve_k: k > 2 supported in 1D only");
    const std::size_t count = g.node_count();
    ConvolutionResult res;
    std::vector<double> best(count, 0.0);
    res.y_star.resize(count);
    res.z_star.resize(count);
    res.attained.assign(count, false);
    const double wk = w[k - 1];
    if (!(wk > 0.0))
        throw std::domain_error("minkowski_convolve_k: last weight must be positive");

    std::vector<std::size_t> idx(k - 1, 0);
    std::vector<double> args(k);
    for (std::size_t ix = 0; ix < count; ++ix) {
        const double x = g.node(ix)[0];
        double best_val = -1.0;
        Point by{0, 0}, bz{0, 0};
        bool best_inside = false;
        std::fill(idx.begin(), idx.end(), 0);
        while (true) {
            double partial = 0.0;
            bool inside = true;
            for (std::size_t i = 0; i + 1 < k; ++i) {
                double yi = g.node(idx[i])[0];
                partial += w[i] * yi;
                args[i] = us[i][idx[i]];
                inside = inside && detail::strictly_inside(g, {yi, 0.0});
            }
            const double yk = (x - partial) / wk;
            args[k - 1] = us[k - 1].interpolate({yk, 0.0});
            inside = inside && detail::strictly_inside(g, {yk, 0.0});
            bool zero = false;
            for (double a : args) zero = zero || a == 0.0;
            const double m = zero ? 0.0 : power_mean_k(args, w, alpha);
            if (m > best_val) {
                best_val = m;
                by = {g.node(idx[0])[0], 0.0};
                bz = {yk, 0.0};
                best_inside = inside;
            }
            // advance the tuple of free indices
            std::size_t pos = 0;
            while (pos < idx.size()) {
                if (++idx[pos] < count) break;
                idx[pos] = 0;
                ++pos;
            }
            if (pos == idx.size()) break;
        }
        best[ix] = std::max(best_val, 0.0);
        res.y_star[ix] = by;
        res.z_star[ix] = bz;
        res.attained[ix] = best_inside;
    }
    res.ubar = GridFn(g, std::move(best));
    return res;
}

/// Result of checking h(x) >= M_alpha(f(y), g(z); lam) on the grid.
struct HypothesisReport {
    bool pass = true;
    double worst_violation = 0.0;  // max over nodes of ubar(x) - h(x)
    Point witness_x{0, 0}, witness_y{0, 0}, witness_z{0, 0};
};

/// Verify the pointwise hypothesis by comparing h against the supremal
/// convolution of (f, g); the worst violating pair is reported via the
/// convolution witnesses.
inline HypothesisReport check_hypothesis(const GridFn& f, const GridFn& g, const GridFn& h,
                                         double lam, Exponent alpha, double tol) {
    if (!(f.grid() == h.grid()))
        throw std::invalid_argument("check_hypothesis: grids differ");
    ConvolutionResult conv = minkowski_convolve(f, g, lam, alpha);
    HypothesisReport rep;
    const Grid& gr = f.grid();
    for (std::size_t i = 0; i < h.size(); ++i) {
        double viol = conv.ubar[i] - h[i];
        if (viol > rep.worst_violation) {
            rep.worst_violation = viol;
            rep.witness_x = gr.node(i);
            rep.witness_y = conv.y_star[i];
            rep.witness_z = conv.z_star[i];
        }
    }
    rep.pass = rep.worst_violation <= tol;
    return rep;
}

/// The pointwise-smallest admissible h for the hypothesis: exactly ubar.
inline GridFn minimal_h(const GridFn& f, const GridFn& g, double lam, Exponent alpha) {
    return minkowski_convolve(f, g, lam, alpha).ubar;
}

inline void write_csv(const ConvolutionResult& r, std::ostream& os) {
    const Grid& g = r.ubar.grid();
    if (g.n == 1) {
        os << "x,ubar,y_star,z_star,attained\n";
        for (std::size_t i = 0; i < r.ubar.size(); ++i)
            os << format_g17(g.node(i)[0]) << ',' << format_g17(r.ubar[i]) << ','
               << format_g17(r.y_star[i][0]) << ',' << format_g17(r.z_star[i][0]) << ','
               << (r.attained[i] ? 1 : 0) << '\n';
        return;
    }
    os << "x,y,ubar,y_star_x,y_star_y,z_star_x,z_star_y,attained\n";
    for (std::size_t i = 0; i < r.ubar.size(); ++i) {
        Point p = g.node(i);
        os << format_g17(p[0]) << ',' << format_g17(p[1]) << ',' << format_g17(r.ubar[i]) << ','
           << format_g17(r.y_star[i][0]) << ',' << format_g17(r.y_star[i][1]) << ','
           << format_g17(r.z_star[i][0]) << ',' << format_g17(r.z_star[i][1]) << ','
           << (r.attained[i] ? 1 : 0) << '\n';
    }
}

inline void write_csv(const ConvolutionResult& r, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("write_csv: cannot open " + path);
    write_csv(r, os);
}

}  // namespace bbllab
