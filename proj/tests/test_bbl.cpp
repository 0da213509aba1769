#include "catch_amalgamated.hpp"

#include <cmath>
#include <random>

#include "bbllab/bbl.hpp"
#include "bbllab/presets.hpp"

using namespace bbllab;
using Catch::Approx;

namespace {

BBLTriple gaussian_equality_triple(double half_width = 8.0, int N = 641) {
    Grid g(1, half_width, N);
    return make_triple(presets::gaussian(g, 0.0, 1.0, 1.0), presets::gaussian(g, 1.0, 1.0, 1.0),
                       presets::gaussian(g, 0.5, 1.0, 1.0), 0.5, Exponent(0.0));
}

BBLTriple indicator_triple() {
    Grid g(1, 4.0, 161);
    return make_triple(presets::indicator(g, 0.0, 1.0), presets::indicator(g, 0.0, 2.0),
                       presets::indicator(g, 0.0, 1.5), 0.5, Exponent(0.0));
}

}  // namespace

TEST_CASE("verify_bbl on the equality and strict cases") {
    SECTION("identical indicators give equality") {
        Grid g(1, 2.0, 81);
        GridFn ind = presets::indicator(g, 0.0, 1.0);
        BBLTriple t = make_triple(ind, ind, ind, 0.3, Exponent(0.0));
        BBLReport rep = verify_bbl(t, 1e-9);
        CHECK(rep.hypothesis.pass);
        CHECK(rep.slack == Approx(0.0).margin(1e-12));
        CHECK(rep.near_equality);
        CHECK(rep.conclusion_ok);
    }
    SECTION("nested indicators give the analytic slack 1.5 - sqrt(2)") {
        BBLReport rep = verify_bbl(indicator_triple(), 1e-9);
        CHECK(rep.hypothesis.pass);
        CHECK(rep.lhs == Approx(1.5).epsilon(1e-12));
        CHECK(rep.rhs == Approx(std::sqrt(2.0)).epsilon(1e-12));
        CHECK(rep.slack == Approx(1.5 - std::sqrt(2.0)).epsilon(1e-9));
        CHECK_FALSE(rep.near_equality);
    }
    SECTION("gaussian equality triple") {
        BBLReport rep = verify_bbl(gaussian_equality_triple(), 1e-9, 1e-12);
        CHECK(rep.hypothesis.pass);
        CHECK(rep.lhs == Approx(std::sqrt(M_PI)).epsilon(1e-9));
        CHECK(rep.rhs == Approx(std::sqrt(M_PI)).epsilon(1e-9));
        CHECK(rep.near_equality);
    }
    SECTION("failed hypothesis is reported as vacuous") {
        Grid g(1, 4.0, 161);
        GridFn f = presets::gaussian(g, 0.0, 1.0, 1.0);
        GridFn h = f.map([](double v) { return 0.5 * v; });
        BBLTriple t = make_triple(f, f, h, 0.5, Exponent(0.0));
        BBLReport rep = verify_bbl(t, 1e-9);
        CHECK(rep.vacuous);
        CHECK_FALSE(rep.hypothesis.pass);
    }
}

TEST_CASE("soundness harness: randomized minimal triples never break the bound") {
    std::mt19937_64 rng(20240817);
    Grid g(1, 8.0, 321);
    std::uniform_real_distribution<double> alpha_draw(-0.45, 0.0);
    int near_zero_slack = 0;
    for (int i = 0; i < 100; ++i) {
        GridFn f = random_mixture(g, rng);
        GridFn gg = random_mixture(g, rng);
        double lam = (i % 2 == 0) ? 0.5 : 0.25;
        Exponent alpha(alpha_draw(rng));
        GridFn h = minimal_h(f, gg, lam, alpha);
        BBLTriple t = make_triple(f, gg, std::move(h), lam, alpha);
        BBLReport rep = verify_bbl(t, 0.0);
        REQUIRE(rep.hypothesis.pass);
        CHECK(rep.slack >= -1e-6 * std::max(rep.lhs, rep.rhs));
        if (rep.slack < 1e-3 * rep.rhs) ++near_zero_slack;
    }
    // the generator should produce genuinely strict cases
    CHECK(near_zero_slack < 10);
}

TEST_CASE("conclusion exponent is monotone in alpha") {
    Grid g(1, 6.0, 241);
    GridFn f = presets::gaussian(g, 0.0, 1.0, 1.0);
    GridFn gg = presets::gaussian(g, 0.5, 1.2, 0.8);
    double F = mass(f), G = mass(gg);
    double prev = 0.0;
    bool first = true;
    for (double a : {-0.45, -0.25, -0.1, 0.0, 0.5, 2.0}) {
        ExponentBundle b = make_bundle(Exponent(a), 1);
        double rhs = power_mean(F, G, 0.5, b.alpha_prime);
        if (!first) CHECK(rhs >= prev * (1.0 - 1e-12));
        prev = rhs;
        first = false;
    }
}

TEST_CASE("verify_theorem_1_3 under heat flow") {
    SECTION("gaussian equality triple stays within 1e-3") {
        BBLTriple t = gaussian_equality_triple();
        DynamicReport rep = verify_theorem_1_3(t, {0.1, 0.5, 1.0}, 1e-3);
        CHECK(rep.pass);
        for (double v : rep.worst_violation) CHECK(v <= 1e-3);
    }
    SECTION("indicator triple becomes strictly ordered for t > 0") {
        BBLTriple t = indicator_triple();
        DynamicReport rep = verify_theorem_1_3(t, {0.1, 0.5, 1.0}, 1e-6);
        CHECK(rep.pass);
    }
    SECTION("hypothesis failure at t = 0 is a precondition error") {
        Grid g(1, 4.0, 161);
        GridFn f = presets::gaussian(g, 0.0, 1.0, 1.0);
        GridFn h = f.map([](double v) { return 0.5 * v; });
        BBLTriple t = make_triple(f, f, h, 0.5, Exponent(0.0));
        CHECK_THROWS_AS(verify_theorem_1_3(t, {0.1}, 1e-3), std::domain_error);
    }
}

TEST_CASE("verify_theorem_1_3 under fast diffusion") {
    const double m = 0.75;
    Grid g(1, 20.0, 801);
    GridFn base = presets::indicator(g, -1.0, 1.0);
    GridFn f = mollify(cap(base, 1.0), 0.2);
    GridFn gg = mollify(cap(presets::indicator(g, -1.5, 1.5), 1.0), 0.2);
    Exponent alpha((m - 1.0) / 2.0);
    GridFn h = minimal_h(f, gg, 0.5, alpha);
    BBLTriple t = make_triple(f, gg, h, 0.5, alpha);
    StepPolicy pol;
    pol.dt_max = 5e-3;
    DynamicReport rep = verify_theorem_1_3(t, {0.1, 1.0}, 1e-3, pol);
    CHECK(rep.pass);
    for (std::size_t i = 0; i < rep.times.size(); ++i)
        CHECK(rep.worst_violation[i] <= 1e-3 * rep.max_value[i]);
}

TEST_CASE("regularize_triple keeps the hypothesis exactly (J route, alpha < 0)") {
    Grid g(1, 10.0, 401);
    Exponent alpha(-0.25);
    GridFn f = cap(presets::gaussian(g, 0.0, 1.0, 1.0), 0.8);
    GridFn gg = cap(presets::gaussian(g, 0.5, 1.2, 0.9), 0.8);
    GridFn h = minimal_h(f, gg, 0.5, alpha);
    BBLTriple t = make_triple(f, gg, h, 0.5, alpha);

    RegularizationParams params;
    BBLTriple r = regularize_triple(t, 1e-3, 0.2, &params);
    for (double v : r.f.values()) CHECK(v > 0.0);
    for (double v : r.g.values()) CHECK(v > 0.0);
    for (double v : r.h.values()) CHECK(v > 0.0);
    // exact in real arithmetic; the guard absorbs pow/exp rounding only
    HypothesisReport hyp = check_hypothesis(r.f, r.g, r.h, 0.5, alpha,
                                            1e-14 * r.h.max_value());
    CHECK(hyp.pass);
    CHECK(params.a_const >= 1.0);
    // tails follow the envelope exactly beyond the crossover radius
    CHECK(r.f.tail_exponent().has_value());
    CHECK(*r.f.tail_exponent() == Approx(-4.0));
    const double db = std::pow(1e-3, params.beta);
    for (int j = 0; j < g.points; ++j) {
        double x = std::abs(g.coord(j));
        if (x > params.crossover + 0.25)
            CHECK(r.f[j] == Approx(db * std::pow(1.0 + x, -4.0)).epsilon(1e-12));
    }
}

TEST_CASE("regularize_triple J route converges in L1") {
    Grid g(1, 20.0, 801);
    Exponent alpha(-0.25);
    GridFn f = cap(presets::gaussian(g, 0.0, 1.0, 1.0), 0.8);
    GridFn gg = cap(presets::gaussian(g, 0.5, 1.2, 0.9), 0.8);
    GridFn h = minimal_h(f, gg, 0.5, alpha);
    BBLTriple t = make_triple(f, gg, h, 0.5, alpha);
    double prev = 1e300;
    for (double delta : {1e-2, 1e-3, 1e-4}) {
        BBLTriple r = regularize_triple(t, delta, 10 * delta + 0.05);
        double drift = l1_distance(r.f.without_tail(), f) + l1_distance(r.g.without_tail(), gg) +
                       l1_distance(r.h.without_tail(), h);
        CHECK(drift < prev);
        prev = drift;
    }
    CHECK(prev < 0.1);
}

TEST_CASE("regularize_triple keeps the hypothesis exactly (K route, alpha = 0)") {
    Grid g(1, 14.0, 561);
    GridFn f = presets::indicator(g, -1.0, 1.0);
    GridFn gg = presets::indicator(g, -0.5, 1.5);
    GridFn h = minimal_h(f, gg, 0.5, Exponent(0.0));
    BBLTriple t = make_triple(f, gg, h, 0.5, Exponent(0.0));

    BBLTriple r = regularize_triple(t, 1e-3, 0.05);
    for (double v : r.f.values()) CHECK(v > 0.0);
    // exact in real arithmetic; the guard absorbs log/exp rounding only
    HypothesisReport hyp = check_hypothesis(r.f, r.g, r.h, 0.5, Exponent(0.0),
                                            1e-14 * r.h.max_value());
    CHECK(hyp.pass);
    double drift = l1_distance(r.f, f);
    CHECK(drift < 2e-2);

    // smaller parameters drift less
    BBLTriple r2 = regularize_triple(t, 1e-4, 0.05);
    CHECK(l1_distance(r2.f, f) <= drift + 1e-12);
}

TEST_CASE("regularize_triple rejects unsupported exponents and bad boxes") {
    Grid g(1, 4.0, 161);
    GridFn f = presets::gaussian(g, 0.0, 1.0, 1.0);
    BBLTriple t = make_triple(f, f, f, 0.5, Exponent(0.5));
    CHECK_THROWS_AS(regularize_triple(t, 1e-3, 0.1), std::domain_error);
    // the J envelope crossover must fit inside the box
    BBLTriple t2 = make_triple(f, f, f, 0.5, Exponent(-0.25));
    CHECK_THROWS_AS(regularize_triple(t2, 1e-9, 0.1), std::domain_error);
}

TEST_CASE("reduce_exponent: Appendix-style rescaling") {
    SECTION("normalized masses are exact and the weight is preserved at F = G = 1") {
        Grid g(1, 8.0, 321);
        GridFn f = presets::gaussian(g, 0.0, 1.0, 1.0);
        double F = mass(f);
        GridFn fn = f.map([&](double v) { return v / F; });
        GridFn h = minimal_h(fn, fn, 0.3, Exponent(0.2));
        BBLTriple t = make_triple(fn, fn, h, 0.3, Exponent(0.2));
        ReducedTriple r = reduce_exponent(t, Exponent(0.0));
        CHECK(r.M == Approx(1.0).epsilon(1e-12));
        CHECK(r.mu == Approx(0.3).epsilon(1e-12));
        CHECK(r.scale_f == Approx(1.0).epsilon(1e-12));
        CHECK(mass(r.f_hat) == Approx(1.0).epsilon(1e-12));
        CHECK(mass(r.g_hat) == Approx(1.0).epsilon(1e-12));
    }
    SECTION("gaussian equality triple at q = 0 reduced to p = -1/4") {
        BBLTriple t = gaussian_equality_triple();
        ReducedTriple r = reduce_exponent(t, Exponent(-0.25));
        CHECK(mass(r.f_hat) == Approx(1.0).epsilon(1e-6));
        CHECK(mass(r.g_hat) == Approx(1.0).epsilon(1e-6));
        HypothesisReport hyp = check_reduced_hypothesis(r, 1e-9);
        CHECK(hyp.pass);
    }
    SECTION("slack identity: reduced slack equals 1 + relative slack") {
        std::mt19937_64 rng(99);
        Grid g(1, 8.0, 321);
        for (int i = 0; i < 20; ++i) {
            GridFn f = random_mixture(g, rng);
            GridFn gg = random_mixture(g, rng);
            double q = -0.3 + 0.05 * i;
            Exponent alpha(q);
            GridFn h = minimal_h(f, gg, 0.5, alpha).map([](double v) { return v * 1.001; });
            BBLTriple t = make_triple(f, gg, h, 0.5, alpha);
            BBLReport rep = verify_bbl(t, 1e-9);
            REQUIRE(rep.hypothesis.pass);
            ReducedTriple r = reduce_exponent(t, Exponent(q - 0.1));
            CHECK(mass(r.f_hat) == Approx(1.0).epsilon(1e-6));
            CHECK(mass(r.g_hat) == Approx(1.0).epsilon(1e-6));
            double relative_slack = rep.slack / rep.rhs;
            CHECK(std::abs(r.reduced_slack - (1.0 + relative_slack)) <= 1e-6);
        }
    }
    SECTION("precondition checks") {
        BBLTriple t = gaussian_equality_triple();
        CHECK_THROWS_AS(reduce_exponent(t, Exponent(0.5)), std::domain_error);   // p > q
        CHECK_THROWS_AS(reduce_exponent(t, Exponent(-1.5)), std::domain_error);  // p < -1/n
    }
}

TEST_CASE("reduced triples pass the p-hypothesis with margin") {
    // smooth data: the mixed-grid check interpolates h_hat between nodes, so
    // the hypothesis must hold in the continuum, not just on lattice fibers
    std::mt19937_64 rng(2718);
    Grid g(1, 8.0, 641);
    for (int i = 0; i < 20; ++i) {
        GridFn f = random_mixture(g, rng, false);
        GridFn gg = random_mixture(g, rng, false);
        double q = (i % 2 == 0) ? 0.0 : -0.2;
        Exponent alpha(q);
        GridFn h = minimal_h(f, gg, 0.5, alpha).map([](double v) { return v * 1.02; });
        BBLTriple t = make_triple(f, gg, h, 0.5, alpha);
        ReducedTriple r = reduce_exponent(t, Exponent(q - 0.15));
        HypothesisReport hyp = check_reduced_hypothesis(r, 1e-6 * r.h_hat.max_value());
        CHECK(hyp.pass);
    }
}

TEST_CASE("boundary_case_reduce at alpha = -1/n") {
    Grid g(1, 6.0, 241);
    Exponent alpha(-1.0);
    GridFn f = cap(presets::gaussian(g, 0.0, 1.0, 1.0), 0.9);
    GridFn gg = cap(presets::gaussian(g, 0.3, 1.1, 0.85), 0.9);
    GridFn h = minimal_h(f, gg, 0.5, alpha);
    BBLTriple t = make_triple(f, gg, h, 0.5, alpha);

    SECTION("bounded-by-one data only shrinks under the power lift") {
        BBLTriple s = boundary_case_reduce(t, 1e-3);
        for (std::size_t j = 0; j < s.f.size(); ++j) CHECK(s.f[j] <= t.f[j] + 1e-15);
    }
    SECTION("surrogate masses approach the originals") {
        double prev = 1e300;
        for (double eps : {1e-1, 1e-2, 1e-3}) {
            BBLTriple s = boundary_case_reduce(t, eps);
            double gap = std::abs(mass(s.f) - mass(t.f)) + std::abs(mass(s.g) - mass(t.g));
            CHECK(gap < prev);
            prev = gap;
        }
        BBLTriple s = boundary_case_reduce(t, 1e-3);
        CHECK(mass(s.f) == Approx(mass(t.f)).epsilon(1e-2));
    }
    SECTION("hypothesis is preserved at the lifted exponent") {
        for (double eps : {1e-1, 1e-2, 1e-3}) {
            BBLTriple s = boundary_case_reduce(t, eps);
            HypothesisReport hyp =
                check_hypothesis(s.f, s.g, s.h, 0.5, s.bundle.alpha, 1e-12);
            CHECK(hyp.pass);
        }
    }
    SECTION("requires the boundary exponent") {
        BBLTriple other = make_triple(f, gg, h, 0.5, Exponent(-0.5));
        CHECK_THROWS_AS(boundary_case_reduce(other, 1e-3), std::domain_error);
        CHECK_THROWS_AS(boundary_case_reduce(t, -1.0), std::domain_error);
    }
}

TEST_CASE("make_triple validation") {
    Grid g(1, 2.0, 81);
    GridFn pos = presets::gaussian(g, 0.0, 1.0, 1.0);
    GridFn zero = GridFn::sample(g, [](Point) { return 0.0; });
    CHECK_THROWS_AS(make_triple(zero, pos, pos, 0.5, Exponent(0.0)), std::domain_error);
    CHECK_THROWS_AS(make_triple(pos, pos, pos, 1.5, Exponent(0.0)), std::domain_error);
    Grid g2(1, 2.0, 41);
    GridFn other = presets::gaussian(g2, 0.0, 1.0, 1.0);
    CHECK_THROWS_AS(make_triple(pos, other, pos, 0.5, Exponent(0.0)), std::invalid_argument);
}
