#pragma once

#include <array>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <functional>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace bbllab {

/// A point of the box; the second coordinate is unused in 1D.
using Point = std::array<double, 2>;

/// Uniform symmetric box grid in dimension 1 or 2. The node count per axis is
/// odd so that the origin (the asymptotics probe point) is always a node.
struct Grid {
    int n = 1;                // dimension, 1 or 2
    double half_width = 1.0;  // box is [-L, L]^n
    int points = 3;           // nodes per axis, odd

    Grid() = default;
    Grid(int dim, double L, int N) : n(dim), half_width(L), points(N) {
        if (n != 1 && n != 2) throw std::invalid_argument("Grid: dimension must be 1 or 2");
        if (!(L > 0.0)) throw std::invalid_argument("Grid: half_width must be positive");
        if (N < 3 || N % 2 == 0) throw std::invalid_argument("Grid: points per axis must be odd and >= 3");
    }

    double spacing() const { return 2.0 * half_width / (points - 1); }
    double coord(int j) const { return -half_width + j * spacing(); }
    std::size_t node_count() const { return n == 1 ? points : std::size_t(points) * points; }

    // Row-major in 2D: index = ix * points + iy.
    std::size_t index(int ix, int iy = 0) const {
        return n == 1 ? std::size_t(ix) : std::size_t(ix) * points + iy;
    }
    Point node(std::size_t idx) const {
        if (n == 1) return {coord(int(idx)), 0.0};
        return {coord(int(idx) / points), coord(int(idx) % points)};
    }

    bool operator==(const Grid& o) const {
        return n == o.n && half_width == o.half_width && points == o.points;
    }
};

/// Nonnegative function sampled on a Grid. tail_exponent, when set, records
/// power-law decay ~ (1+|x|)^{tail_exponent} beyond the box; operators that
/// construct a known tail set it, all others clear it.
class GridFn {
public:
    GridFn() = default;
    GridFn(Grid g, std::vector<double> values)
        : grid_(g), values_(std::move(values)) {
        if (values_.size() != grid_.node_count())
            throw std::invalid_argument("GridFn: value count does not match grid");
        for (double v : values_)
            if (!(v >= 0.0) || !std::isfinite(v))
                throw std::invalid_argument("GridFn: values must be nonnegative and finite");
    }

    static GridFn sample(const Grid& g, const std::function<double(Point)>& f) {
        std::vector<double> vals(g.node_count());
        for (std::size_t i = 0; i < vals.size(); ++i) vals[i] = f(g.node(i));
        return GridFn(g, std::move(vals));
    }

    const Grid& grid() const { return grid_; }
    const std::vector<double>& values() const { return values_; }
    double operator[](std::size_t i) const { return values_[i]; }
    std::size_t size() const { return values_.size(); }

    std::optional<double> tail_exponent() const { return tail_exponent_; }
    GridFn with_tail_exponent(double p) const {
        GridFn out = *this;
        out.tail_exponent_ = p;
        return out;
    }
    GridFn without_tail() const {
        GridFn out = *this;
        out.tail_exponent_.reset();
        return out;
    }

    double max_value() const {
        double m = 0.0;
        for (double v : values_) m = std::max(m, v);
        return m;
    }

    /// Linear (bilinear in 2D) interpolation; zero outside the box.
    double interpolate(Point p) const {
        const double L = grid_.half_width, h = grid_.spacing();
        const int N = grid_.points;
        auto locate = [&](double x, int& j, double& frac) -> bool {
            if (x < -L - 1e-12 * h || x > L + 1e-12 * h) return false;
            double s = (x + L) / h;
            j = int(std::floor(s));
            if (j >= N - 1) { j = N - 2; }
            if (j < 0) j = 0;
            frac = s - j;
            // snap to the lattice so node-coincident queries read node values
            if (frac < 1e-12) frac = 0.0;
            if (frac > 1.0 - 1e-12) frac = 1.0;
            return true;
        };
        int jx;
        double fx;
        if (!locate(p[0], jx, fx)) return 0.0;
        if (grid_.n == 1) {
            return (1.0 - fx) * values_[jx] + fx * values_[jx + 1];
        }
        int jy;
        double fy;
        if (!locate(p[1], jy, fy)) return 0.0;
        const double v00 = values_[grid_.index(jx, jy)];
        const double v01 = values_[grid_.index(jx, jy + 1)];
        const double v10 = values_[grid_.index(jx + 1, jy)];
        const double v11 = values_[grid_.index(jx + 1, jy + 1)];
        return (1.0 - fx) * ((1.0 - fy) * v00 + fy * v01) + fx * ((1.0 - fy) * v10 + fy * v11);
    }

    GridFn map(const std::function<double(double)>& f) const {
        std::vector<double> vals(values_.size());
        for (std::size_t i = 0; i < vals.size(); ++i) vals[i] = f(values_[i]);
        return GridFn(grid_, std::move(vals));
    }

private:
    Grid grid_;
    std::vector<double> values_;
    std::optional<double> tail_exponent_;
};

namespace detail {
inline double trapezoid_weight(int j, int N) { return (j == 0 || j == N - 1) ? 0.5 : 1.0; }
}

/// Trapezoidal quadrature over the box; exact for piecewise-linear interpolants.
inline double mass(const GridFn& f) {
    const Grid& g = f.grid();
    const int N = g.points;
    const double h = g.spacing();
    double s = 0.0;
    if (g.n == 1) {
        for (int j = 0; j < N; ++j) s += detail::trapezoid_weight(j, N) * f[g.index(j)];
        return s * h;
    }
    for (int ix = 0; ix < N; ++ix)
        for (int iy = 0; iy < N; ++iy)
            s += detail::trapezoid_weight(ix, N) * detail::trapezoid_weight(iy, N) * f[g.index(ix, iy)];
    return s * h * h;
}

inline double linf_distance(const GridFn& a, const GridFn& b) {
    if (!(a.grid() == b.grid())) throw std::invalid_argument("linf_distance: grids differ");
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

inline double l1_distance(const GridFn& a, const GridFn& b) {
    if (!(a.grid() == b.grid())) throw std::invalid_argument("l1_distance: grids differ");
    const Grid& g = a.grid();
    const int N = g.points;
    const double h = g.spacing();
    double s = 0.0;
    if (g.n == 1) {
        for (int j = 0; j < N; ++j)
            s += detail::trapezoid_weight(j, N) * std::abs(a[g.index(j)] - b[g.index(j)]);
        return s * h;
    }
    for (int ix = 0; ix < N; ++ix)
        for (int iy = 0; iy < N; ++iy)
            s += detail::trapezoid_weight(ix, N) * detail::trapezoid_weight(iy, N) *
                 std::abs(a[g.index(ix, iy)] - b[g.index(ix, iy)]);
    return s * h * h;
}

// --- CSV serialization: header `x[,y],value`, 17 significant digits -------

inline std::string format_g17(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

inline void write_csv(const GridFn& f, std::ostream& os) {
    const Grid& g = f.grid();
    os << (g.n == 1 ? "x,value\n" : "x,y,value\n");
    for (std::size_t i = 0; i < f.size(); ++i) {
        Point p = g.node(i);
        os << format_g17(p[0]);
        if (g.n == 2) os << ',' << format_g17(p[1]);
        os << ',' << format_g17(f[i]) << '\n';
    }
}

inline void write_csv(const GridFn& f, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("write_csv: cannot open " + path);
    write_csv(f, os);
}

inline GridFn read_csv(std::istream& is) {
    std::string header;
    if (!std::getline(is, header)) throw std::runtime_error("read_csv: empty input");
    int dim = header.find(",y,") != std::string::npos || header == "x,y,value" ? 2 : 1;
    std::vector<double> xs, ys, vals;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string tok;
        std::vector<double> row;
        while (std::getline(ls, tok, ',')) row.push_back(std::strtod(tok.c_str(), nullptr));
        if (int(row.size()) != dim + 1) throw std::runtime_error("read_csv: malformed row: " + line);
        xs.push_back(row[0]);
        if (dim == 2) ys.push_back(row[1]);
        vals.push_back(row.back());
    }
    if (vals.empty()) throw std::runtime_error("read_csv: no data rows");
    // Reconstruct the grid from the coordinate columns.
    double L = 0.0;
    for (double x : xs) L = std::max(L, std::abs(x));
    std::size_t count = vals.size();
    int N = dim == 1 ? int(count) : int(std::lround(std::sqrt(double(count))));
    if (dim == 2 && std::size_t(N) * N != count)
        throw std::runtime_error("read_csv: 2D node count is not a perfect square");
    Grid g(dim, L, N);
    const double h = g.spacing();
    for (std::size_t i = 0; i < count; ++i) {
        Point expect = g.node(i);
        if (std::abs(xs[i] - expect[0]) > 1e-9 * h ||
            (dim == 2 && std::abs(ys[i] - expect[1]) > 1e-9 * h))
            throw std::runtime_error("read_csv: nodes are not a uniform symmetric grid");
    }
    return GridFn(g, std::move(vals));
}

inline GridFn read_csv(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("read_csv: cannot open " + path);
    return read_csv(is);
}

}  // namespace bbllab
