#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "bbllab/grid.hpp"
#include "bbllab/gridfn_ops.hpp"

namespace bbllab {

/// Named initial-data presets used by configs and tests.
///   gaussian(center,width,amplitude)   a * exp(-|x - c e1|^2 / w^2)
///   indicator(a,b)                     1 on [a,b] (interval / square)
///   bump                               unit-mass mollifier bump
///   two_bumps(sep)                     unit gaussians at +-sep/2 on the first axis
///   from_csv(path)                     load a stored GridFn
namespace presets {

inline GridFn gaussian(const Grid& g, double center, double width, double amplitude) {
    if (!(width > 0.0)) throw std::domain_error("gaussian preset: width must be positive");
    if (!(amplitude >= 0.0)) throw std::domain_error("gaussian preset: amplitude must be nonnegative");
    return GridFn::sample(g, [&](Point p) {
        double r2 = (p[0] - center) * (p[0] - center);
        if (g.n == 2) r2 += p[1] * p[1];
        return amplitude * std::exp(-r2 / (width * width));
    });
}

inline GridFn indicator(const Grid& g, double a, double b) {
    if (!(a < b)) throw std::domain_error("indicator preset: need a < b");
    // half values on lattice-exact edges keep the trapezoid mass at (b - a)
    auto axis = [&](double x) {
        const double tol = 1e-12 * g.spacing();
        if (x < a - tol || x > b + tol) return 0.0;
        if (std::abs(x - a) <= tol || std::abs(x - b) <= tol) return 0.5;
        return 1.0;
    };
    return GridFn::sample(g, [&](Point p) {
        double v = axis(p[0]);
        if (g.n == 2) v *= axis(p[1]);
        return v;
    });
}

inline GridFn bump(const Grid& g) {
    const double c = bump_normalization(g.n);
    return GridFn::sample(g, [&](Point p) {
        double r2 = p[0] * p[0] + (g.n == 2 ? p[1] * p[1] : 0.0);
        return c * bump_profile(r2);
    });
}

inline GridFn two_bumps(const Grid& g, double sep) {
    if (!(sep >= 0.0)) throw std::domain_error("two_bumps preset: separation must be nonnegative");
    return GridFn::sample(g, [&](Point p) {
        double y2 = g.n == 2 ? p[1] * p[1] : 0.0;
        double a = (p[0] - sep / 2) * (p[0] - sep / 2) + y2;
        double b = (p[0] + sep / 2) * (p[0] + sep / 2) + y2;
        return std::exp(-a) + std::exp(-b);
    });
}

}  // namespace presets

/// Parse a preset expression like "gaussian(0,1,1)" onto the given grid.
/// from_csv(path) must match the grid exactly.
inline GridFn make_preset(const Grid& g, const std::string& expr) {
    auto fail = [&]() -> GridFn {
        throw std::invalid_argument("unknown or malformed preset: " + expr);
    };
    std::string name = expr;
    std::vector<std::string> args;
    auto lp = expr.find('(');
    if (lp != std::string::npos) {
        if (expr.back() != ')') return fail();
        name = expr.substr(0, lp);
        std::string body = expr.substr(lp + 1, expr.size() - lp - 2);
        std::size_t start = 0;
        while (start <= body.size() && !body.empty()) {
            auto comma = body.find(',', start);
            if (comma == std::string::npos) {
                args.push_back(body.substr(start));
                break;
            }
            args.push_back(body.substr(start, comma - start));
            start = comma + 1;
        }
    }
    auto num = [&](std::size_t i) {
        std::size_t pos = 0;
        double v = std::stod(args.at(i), &pos);
        if (pos != args[i].size()) throw std::invalid_argument("bad numeric argument in preset: " + expr);
        return v;
    };
    if (name == "gaussian" && args.size() == 3) return presets::gaussian(g, num(0), num(1), num(2));
    if (name == "indicator" && args.size() == 2) return presets::indicator(g, num(0), num(1));
    if (name == "bump" && args.empty()) return presets::bump(g);
    if (name == "two_bumps" && args.size() == 1) return presets::two_bumps(g, num(0));
    if (name == "from_csv" && args.size() == 1) {
        GridFn f = read_csv(args[0]);
        if (!(f.grid() == g))
            throw std::invalid_argument("from_csv preset: stored grid does not match config grid");
        return f;
    }
    return fail();
}

}  // namespace bbllab
