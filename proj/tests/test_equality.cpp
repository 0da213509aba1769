#include "catch_amalgamated.hpp"

#include <cmath>
#include <random>

#include "bbllab/equality.hpp"
#include "bbllab/presets.hpp"

using namespace bbllab;
using Catch::Approx;

namespace {

Potential quadratic_potential(const Grid& g, double shift = 0.0) {
    Potential p;
    p.grid = g;
    p.w.resize(g.node_count());
    p.in_window.assign(g.node_count(), true);
    for (std::size_t i = 0; i < p.w.size(); ++i) {
        double x = g.node(i)[0] - shift;
        p.w[i] = 0.5 * x * x;
    }
    return p;
}

}  // namespace

TEST_CASE("legendre_transform of x^2/2 is self-dual") {
    Grid g(1, 4.0, 161);
    Potential W = quadratic_potential(g);
    Grid dual(1, 2.0, 81);
    ConjugatePair pair = legendre_transform(W, dual);
    for (int q = 0; q < dual.points; ++q) {
        double xi = dual.coord(q);
        // discrete max of <x, xi> - x^2/2 differs from xi^2/2 by at most h^2/8
        CHECK(std::abs(pair.w_star[q] - 0.5 * xi * xi) <= g.spacing() * g.spacing() / 8 + 1e-12);
        CHECK(pair.attained_interior[q]);
    }
}

TEST_CASE("legendre_transform shift rule is exact on the lattice") {
    Grid g(1, 4.0, 161);
    const double eta = 0.5;  // a lattice shift (h = 0.05)
    Potential W1 = quadratic_potential(g);
    Potential W2 = quadratic_potential(g, eta);
    // restrict both windows so the shifted max stays interior
    for (std::size_t i = 0; i < W1.w.size(); ++i) {
        double x = g.node(i)[0];
        if (std::abs(x) > 3.0) W1.in_window[i] = W2.in_window[i] = false;
    }
    Grid dual(1, 1.5, 61);
    ConjugatePair c1 = legendre_transform(W1, dual);
    ConjugatePair c2 = legendre_transform(W2, dual);
    for (int q = 0; q < dual.points; ++q) {
        if (!c1.attained_interior[q] || !c2.attained_interior[q]) continue;
        double xi = dual.coord(q);
        // W2(x) = W1(x - eta)  =>  W2*(xi) = W1*(xi) + eta xi, exactly
        CHECK(c2.w_star[q] == Approx(c1.w_star[q] + eta * xi).margin(1e-12));
    }
}

TEST_CASE("legendre_transform clamps at the window edge") {
    Grid g(1, 2.0, 81);
    Potential W = quadratic_potential(g);
    Grid dual(1, 3.0, 25);
    ConjugatePair pair = legendre_transform(W, dual);
    // at xi = 3 the true argmax x = 3 is outside the window [-2, 2]
    int q = dual.points - 1;
    CHECK(dual.coord(q) == Approx(3.0));
    CHECK(pair.w_star[q] == Approx(3.0 * 2.0 - 2.0));  // clamped value 4, not 4.5
    CHECK_FALSE(pair.attained_interior[q]);
}

TEST_CASE("double conjugate is dominated by the potential") {
    Grid g(1, 3.0, 121);
    std::mt19937_64 rng(71);
    std::uniform_real_distribution<double> U(0.0, 0.3);
    Potential W = quadratic_potential(g);
    for (auto& w : W.w) w += U(rng);  // roughen; biconjugate is the convex envelope
    Grid dual(1, 2.5, 101);
    ConjugatePair pair = legendre_transform(W, dual);
    std::vector<double> bc = biconjugate(pair);
    for (std::size_t i = 0; i < W.w.size(); ++i)
        if (W.in_window[i]) CHECK(bc[i] <= W.w[i] + 1e-12);
}

TEST_CASE("empty window is rejected") {
    Grid g(1, 1.0, 41);
    Potential W;
    W.grid = g;
    W.w.assign(g.node_count(), std::numeric_limits<double>::infinity());
    W.in_window.assign(g.node_count(), false);
    CHECK_THROWS_AS(legendre_transform(W, Grid(1, 1.0, 11)), std::invalid_argument);
}

TEST_CASE("detect_strong_logconcavity") {
    Grid g(1, 12.0, 481);
    SECTION("gaussians are strongly log-concave from the start") {
        GridFn phi = presets::gaussian(g, 0.0, 1.0, 1.0);
        Trajectory traj = heat_trajectory(phi, {0.1, 0.2, 0.4});
        // second derivative of log u is -2/(1+4t)
        auto t_star = detect_strong_logconcavity(traj, 0.05);
        REQUIRE(t_star.has_value());
        CHECK(*t_star == Approx(0.1));
        // too demanding a modulus is never reached
        CHECK_FALSE(detect_strong_logconcavity(traj, 3.0).has_value());
    }
    SECTION("two bumps become log-concave at a finite time") {
        GridFn phi = presets::two_bumps(g, 3.0);
        std::vector<double> ladder;
        for (double t = 0.01; t < 3.0; t *= 2.0) ladder.push_back(t);
        Trajectory traj = heat_trajectory(phi, ladder);
        // not log-concave early: the valley between the bumps is convex
        bool early_concave = detail::strongly_logconcave(traj.states[1], 0.0, 1e-12);
        CHECK_FALSE(early_concave);
        auto t_star = detect_strong_logconcavity(traj, 0.05);
        REQUIRE(t_star.has_value());
        // the gaussian mixture with unit width becomes log-concave near
        // sep^2/4 = 1/2 + 2t, i.e. t ~ 0.8 for sep = 3
        CHECK(*t_star >= 0.3);
        CHECK(*t_star <= 1.5);
    }
    SECTION("evolved indicator is log-concave for all t > 0") {
        GridFn phi = presets::indicator(g, -1.0, 1.0);
        Trajectory traj = heat_trajectory(phi, {0.05, 0.1});
        auto t_star = detect_strong_logconcavity(traj, 0.01);
        REQUIRE(t_star.has_value());
        CHECK(*t_star == Approx(0.05));
    }
}

TEST_CASE("recover_homothety on closed-form gaussians") {
    Grid g(1, 10.0, 401);
    SECTION("scaled translate") {
        GridFn u0 = presets::gaussian(g, 0.0, 1.0, 1.0);
        GridFn u1 = presets::gaussian(g, 1.0, 1.0, 3.0);
        GridFn ul = presets::gaussian(g, 0.5, 1.0, std::sqrt(3.0));
        HomothetyFit fit = recover_homothety(u0, u1, ul, 0.5);
        CHECK(std::abs(fit.eta[0] - 1.0) <= g.spacing());
        CHECK(std::abs(fit.b - std::log(3.0)) <= 1e-2);
        CHECK(fit.k == Approx(3.0).epsilon(2e-2));
        CHECK(fit.fit_residual <= 1e-2);
    }
    SECTION("identical inputs") {
        GridFn u0 = presets::gaussian(g, 0.0, 1.0, 1.0);
        HomothetyFit fit = recover_homothety(u0, u0, u0, 0.5);
        CHECK(std::abs(fit.eta[0]) <= 1e-10);
        CHECK(fit.k == Approx(1.0).epsilon(1e-10));
        CHECK(fit.fit_residual <= 1e-10);
    }
    SECTION("non-homothetic pair has a large residual") {
        // different widths: the conjugate difference is genuinely quadratic
        GridFn u0 = presets::gaussian(g, 0.0, 1.0, 1.0);
        GridFn u1 = presets::gaussian(g, 0.0, 1.3, 1.0);
        GridFn ul = minimal_h(u0, u1, 0.5, Exponent(0.0));
        HomothetyFit fit = recover_homothety(u0, u1, ul, 0.5);
        CHECK(fit.fit_residual > 5e-2);
    }
}

TEST_CASE("equality_pipeline certifies constructed homotheties") {
    Grid g(1, 12.0, 961);
    SECTION("pure translates") {
        GridFn f = presets::gaussian(g, 0.0, 1.0, 1.0);
        GridFn gg = presets::gaussian(g, 1.0, 1.0, 1.0);
        GridFn h = presets::gaussian(g, 0.5, 1.0, 1.0);
        BBLTriple t = make_triple(f, gg, h, 0.5, Exponent(0.0));
        EqualityReport rep = equality_pipeline(t);
        CHECK(rep.certified);
        CHECK(rep.t_star > 0.0);
        CHECK(std::abs(rep.eta[0] - 1.0) <= 2 * g.spacing());
        CHECK(rep.k == Approx(1.0).epsilon(0.02));
    }
    SECTION("scaled translate with k = 3") {
        GridFn f = presets::gaussian(g, 0.0, 1.0, 1.0);
        GridFn gg = presets::gaussian(g, 1.0, 1.0, 3.0);
        GridFn h = presets::gaussian(g, 0.5, 1.0, std::sqrt(3.0));
        BBLTriple t = make_triple(f, gg, h, 0.5, Exponent(0.0));
        EqualityReport rep = equality_pipeline(t);
        CHECK(rep.certified);
        CHECK(rep.k == Approx(3.0).epsilon(0.02));
        CHECK(std::abs(rep.eta[0] - 1.0) <= 2 * g.spacing());
    }
    SECTION("strict-slack triples are rejected up front") {
        GridFn f = presets::indicator(g, 0.0, 1.0);
        GridFn gg = presets::indicator(g, 0.0, 2.0);
        GridFn h = presets::indicator(g, 0.0, 1.5);
        BBLTriple t = make_triple(f, gg, h, 0.5, Exponent(0.0));
        CHECK_THROWS_AS(equality_pipeline(t), std::invalid_argument);
    }
    SECTION("near-equality decoys are refused, not certified") {
        // widths tuned so the slack sits inside the near-equality tolerance
        // while the pair is genuinely non-homothetic
        GridFn f = presets::gaussian(g, 0.0, 1.0, 1.0);
        GridFn gg = presets::gaussian(g, 0.0, 1.06, 1.0);
        GridFn h = minimal_h(f, gg, 0.5, Exponent(0.0));
        BBLTriple t = make_triple(f, gg, h, 0.5, Exponent(0.0));
        BBLReport check = verify_bbl(t, 1e-9);
        REQUIRE(check.near_equality);  // the decoy passes the slack screen
        EqualityReport rep = equality_pipeline(t);
        CHECK_FALSE(rep.certified);
    }
}

TEST_CASE("equality_pipeline randomized soundness and refusal") {
    std::mt19937_64 rng(5150);
    Grid g(1, 12.0, 961);
    std::uniform_real_distribution<double> shift(-1.0, 1.0), scale(0.5, 2.0),
        width(0.8, 1.3);
    int certified = 0;
    for (int i = 0; i < 4; ++i) {
        double w = width(rng), eta = std::round(shift(rng) / 0.5) * 0.5, k = scale(rng);
        GridFn f = presets::gaussian(g, 0.0, w, 1.0);
        GridFn gg = presets::gaussian(g, eta, w, k);
        GridFn h = presets::gaussian(g, 0.5 * eta, w, std::sqrt(k));
        BBLTriple t = make_triple(f, gg, h, 0.5, Exponent(0.0));
        EqualityReport rep = equality_pipeline(t);
        CHECK(rep.certified);
        if (rep.certified) {
            ++certified;
            CHECK(std::abs(rep.k / k - 1.0) <= 0.02);
            CHECK(std::abs(rep.eta[0] - eta) <= 2 * g.spacing());
        }
    }
    CHECK(certified == 4);
}

TEST_CASE("matrix diagnostics at gradient-matched points") {
    Grid g(1, 10.0, 401);
    SECTION("gaussian equality case: equal Hessians, zero margin") {
        const double t = 0.5;
        auto evolved = [&](double center) {
            return GridFn::sample(g, [&](Point p) {
                return std::pow(1 + 4 * t, -0.5) *
                       std::exp(-(p[0] - center) * (p[0] - center) / (1 + 4 * t));
            });
        };
        GridFn u0 = evolved(0.0), u1 = evolved(1.0), ul = evolved(0.5);
        MatrixDiagnostics diag = matrix_equality_diagnostics(
            u0, u1, ul, 0.5, {{0.0, 0.0}, {0.5, 0.0}, {1.0, 0.0}});
        REQUIRE(diag.points.size() >= 2);
        const double expect = -2.0 / (1 + 4 * t);
        for (const auto& pd : diag.points) {
            CHECK(std::abs(pd.harmonic_margin) <= 2e-2 * std::abs(expect));
            CHECK(pd.rigidity <= 2e-2 * std::abs(expect));
        }
    }
    SECTION("non-equality pair shows rigidity") {
        GridFn u0 = presets::gaussian(g, 0.0, 1.0, 1.0);
        GridFn u1 = presets::gaussian(g, 0.0, 1.4, 1.0);
        GridFn ul = minimal_h(u0, u1, 0.5, Exponent(0.0));
        MatrixDiagnostics diag = matrix_equality_diagnostics(
            u0, u1, ul, 0.5, {{0.0, 0.0}, {0.4, 0.0}});
        bool rigid = false;
        for (const auto& pd : diag.points)
            if (pd.rigidity > 0.1) rigid = true;
        CHECK(rigid);
    }
}

TEST_CASE("pipeline requires alpha = 0") {
    Grid g(1, 6.0, 241);
    GridFn f = presets::gaussian(g, 0.0, 1.0, 1.0);
    BBLTriple t = make_triple(f, f, f, 0.5, Exponent(-0.25));
    CHECK_THROWS_AS(equality_pipeline(t), std::domain_error);
}
