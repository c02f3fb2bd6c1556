#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <vector>

#include "difflab/localpoly.hpp"
#include "difflab/rng.hpp"
#include "difflab/schedule.hpp"
#include "difflab/targets.hpp"

using namespace difflab;

namespace {

constexpr double kInvSqrt2Pi = 0.39894228040143268;

GaussianMixtureFamily standard_1d() {
    return GaussianMixtureFamily(1, 1, {{1.0, {Mat(1, 1, 0.0), Vec{0.0}}, 1.0}});
}

GaussianMixtureFamily shifted_1d(double mean) {
    return GaussianMixtureFamily(1, 1, {{1.0, {Mat(1, 1, 0.0), Vec{mean}}, 1.0}});
}

GaussianMixtureFamily bimodal_1d() {
    Mat a1(1, 1, 0.0), a2(1, 1, 0.0);
    a1(0, 0) = 0.6;
    a2(0, 0) = -0.3;
    return GaussianMixtureFamily(
        1, 1, {{0.4, {a1, Vec{-0.8}}, 0.7}, {0.6, {a2, Vec{0.9}}, 1.1}});
}

// The polynomial value the table claims for a given cell and y node, without
// the hat weights. Straight re-expansion from the stored coefficients.
double cell_poly(const DiffusedPoly& poly, double x0n, int v, double y, int w) {
    const int n_mono = int(poly.monomials.size());
    const std::size_t base =
        (std::size_t(v - 1) * std::size_t(poly.grid.N + 1) + std::size_t(w)) * n_mono;
    double total = 0.0;
    for (int m = 0; m < n_mono; ++m) {
        const auto& mono = poly.monomials[m];
        total += poly.coeffs[base + m] * std::pow(x0n - double(v) / poly.grid.N, mono[0]) *
                 std::pow(y - double(w) / poly.grid.N, mono[1]);
    }
    return total;
}

// Brute-force reference for f1 (u_power = 0) and f2 (u_power = 1): per-cell
// Simpson quadrature of the gridded polynomial against the truncated kernel.
// Only shares the coefficient table with the closed form, not the integral.
double quad_reference(const DiffusedPoly& poly, double x, double y, double t, int u_power) {
    const ScheduleValue sch = noise_schedule(t);
    const int N = poly.grid.N;
    const double hw = poly.grid.half_width();
    const double rb = poly.grid.box_width();
    const double lo = std::max((x - sch.sigma * hw) / sch.alpha, -hw);
    const double hi = std::min((x + sch.sigma * hw) / sch.alpha, hw);
    if (lo >= hi) return 0.0;

    double total = 0.0;
    for (int w = 0; w <= N; ++w) {
        const double phi = trapezoid(3.0 * N * (y - double(w) / N));
        if (phi <= 0.0) continue;
        for (int v = 1; v <= N; ++v) {
            const double a = std::max(rb * ((v - 1.0) / N - 0.5), lo);
            const double b = std::min(rb * (double(v) / N - 0.5), hi);
            if (a >= b) continue;
            const int steps = 2000;
            const double h = (b - a) / steps;
            double acc = 0.0;
            for (int k = 0; k <= steps; ++k) {
                const double x0 = a + k * h;
                const double u = (sch.alpha * x0 - x) / sch.sigma;
                double ker = 0.0, term = 1.0;
                for (int m = 0; m <= poly.holder.k2; ++m) {
                    ker += term;
                    term *= -0.5 * u * u / (m + 1);
                }
                double val = cell_poly(poly, x0 / rb + 0.5, v, y, w) * ker;
                if (u_power == 1) val *= u;
                acc += ((k == 0 || k == steps) ? 1.0 : (k % 2 ? 4.0 : 2.0)) * val;
            }
            total += phi * acc * h / 3.0 * kInvSqrt2Pi / sch.sigma;
        }
    }
    return total;
}

}  // namespace

TEST_CASE("trapezoid window shape") {
    CHECK(trapezoid(0.0) == 1.0);
    CHECK(trapezoid(0.999) == 1.0);
    CHECK(trapezoid(1.0) == 1.0);
    CHECK(trapezoid(1.5) == 0.5);
    CHECK(trapezoid(-1.5) == 0.5);
    CHECK(trapezoid(2.0) == 0.0);
    CHECK(trapezoid(-2.7) == 0.0);
    for (double a = -3.0; a <= 3.0; a += 0.01) {
        const double v = trapezoid(a);
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }
}

TEST_CASE("hat weights form a partition of unity") {
    RngStream rng = RngStream::named(71, "partition");
    for (int N : {2, 5, 16}) {
        for (int rep = 0; rep < 1000; ++rep) {
            // product weight over a 2-axis y grid times the single x indicator
            const double y0 = rng.uniform(), y1 = rng.uniform();
            const double x0n = rng.uniform_pos();
            double sum_y = 0.0;
            for (int w0 = 0; w0 <= N; ++w0)
                for (int w1 = 0; w1 <= N; ++w1)
                    sum_y += trapezoid(3.0 * N * (y0 - double(w0) / N)) *
                             trapezoid(3.0 * N * (y1 - double(w1) / N));
            int hits = 0;
            for (int v = 1; v <= N; ++v)
                if (x0n > (v - 1.0) / N && x0n <= double(v) / N) ++hits;
            CHECK(hits == 1);
            CHECK(sum_y == doctest::Approx(1.0).epsilon(1e-12));
        }
    }
}

TEST_CASE("holder parameter schedule") {
    HolderParams h = make_holder(2.5, 8);
    CHECK(h.k1 == 2);
    CHECK(h.k2 == 6);  // ceil(2.5 ln 8)
    CHECK(make_holder(0.5, 2).k2 == 3);  // floor at 3
    CHECK(make_holder(8.0, 16).k2 == 20);  // cap at 20
    CHECK(make_holder(4.0, 2).k2 == 3);
    CHECK(make_holder(4.0, 4).k2 == 6);
    CHECK(make_holder(4.0, 8).k2 == 9);
    CHECK(make_holder(4.0, 16).k2 == 12);

    CHECK_THROWS_AS(make_holder(0.0, 8), std::invalid_argument);
    CHECK_THROWS_AS(make_holder(1.0, 1), std::invalid_argument);
    HolderParams bad = h;
    bad.k1 = 1;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = h;
    bad.k2 = 0;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);

    GridSpec g{8, 1.0, 1, 1};
    CHECK_NOTHROW(g.validate());
    CHECK(g.half_width() == doctest::Approx(std::sqrt(std::log(8.0))).epsilon(1e-15));
    CHECK(g.box_width() == doctest::Approx(2.0 * std::sqrt(std::log(8.0))).epsilon(1e-15));
    CHECK_THROWS_AS((GridSpec{1, 1.0, 1, 1}).validate(), std::invalid_argument);
    CHECK_THROWS_AS((GridSpec{8, 0.0, 1, 1}).validate(), std::invalid_argument);
    CHECK_THROWS_AS((GridSpec{8, 1.0, 0, 1}).validate(), std::invalid_argument);
}

TEST_CASE("clip domain examples") {
    GridSpec g{8, 1.0, 1, 1};

    // small t: a tight interval around x/alpha
    Box b = clip_domain(Vec{0.0}, g, 0.01);
    const double hw = g.half_width();
    {
        const ScheduleValue s = noise_schedule(0.01);
        const double r = s.sigma * hw / s.alpha;
        CHECK(b.lo[0] == doctest::Approx(-r).epsilon(1e-14));
        CHECK(b.hi[0] == doctest::Approx(r).epsilon(1e-14));
        CHECK(b.hi[0] - b.lo[0] < 0.3);
        CHECK(!b.empty());
    }

    // large t: the window swallows the global box
    b = clip_domain(Vec{0.0}, g, 50.0);
    CHECK(b.lo[0] == -hw);
    CHECK(b.hi[0] == hw);

    // worked example at t = ln 4
    GridSpec g4{4, 2.0, 1, 1};
    b = clip_domain(Vec{1.0}, g4, std::log(4.0));
    {
        const double hw4 = 2.0 * std::sqrt(std::log(4.0));
        const double sigma = std::sqrt(0.75);
        CHECK(b.lo[0] == doctest::Approx((1.0 - sigma * hw4) / 0.5).epsilon(1e-13));
        CHECK(b.hi[0] == doctest::Approx(hw4).epsilon(1e-13));
    }

    // far outside the reachable set: empty
    b = clip_domain(Vec{100.0}, g, 0.5);
    CHECK(b.empty());

    CHECK_THROWS_AS(clip_domain(Vec{0.0, 0.0}, g, 0.5), std::invalid_argument);
    CHECK_THROWS_AS(clip_domain(Vec{0.0}, g, 0.0), std::invalid_argument);
}

TEST_CASE("taylor table stores scaled density derivatives") {
    GaussianMixtureFamily fam = standard_1d();
    GridSpec g{4, 1.5, 1, 1};
    HolderParams h = make_holder(2.2, 4);
    CHECK(h.k1 == 2);
    DiffusedPoly poly = taylor_table(fam, g, h);

    // structural count: N^dx (N+1)^dy C(dx+dy+k1, k1)
    CHECK(poly.monomials.size() == 6);
    CHECK(poly.coeffs.size() == std::size_t(4) * 5 * 6);

    const double rb = g.box_width();
    // cell 2 has its expansion point at x = 0
    CHECK(poly.coeff_at({2}, {0}, {0, 0}) == doctest::Approx(kInvSqrt2Pi).epsilon(1e-13));
    CHECK(std::abs(poly.coeff_at({2}, {3}, {1, 0})) < 1e-14);
    CHECK(poly.coeff_at({2}, {1}, {2, 0}) ==
          doctest::Approx(-0.5 * rb * rb * kInvSqrt2Pi).epsilon(1e-12));
    CHECK(std::abs(poly.coeff_at({2}, {0}, {0, 1})) < 1e-14);

    // B_est picks up the largest derivative magnitude on the grid
    CHECK(poly.holder.B_est == doctest::Approx(kInvSqrt2Pi).epsilon(1e-10));

    // y-dependent family: the stored constants follow the conditional mean
    GaussianMixtureFamily dep(1, 1, {{1.0, {Mat(1, 1, 1.0), Vec{0.0}}, 1.0}});
    DiffusedPoly pd = taylor_table(dep, g, h);
    const double expect = std::exp(-0.125) * kInvSqrt2Pi;  // N(0; 0.5, 1)
    CHECK(pd.coeff_at({2}, {2}, {0, 0}) == doctest::Approx(expect).epsilon(1e-12));

    // degree-0 table holds plain density values
    HolderParams h0 = make_holder(0.9, 4);
    DiffusedPoly p0 = taylor_table(fam, g, h0);
    CHECK(p0.monomials.size() == 1);
    CHECK(p0.coeff_at({3}, {0}, {0, 0}) ==
          doctest::Approx(fam.density0(Vec{rb * 0.25}, Vec{0.0})).epsilon(1e-13));

    // 2-D x grid structural count
    GaussianMixtureFamily fam2(2, 1, {{1.0, {Mat(2, 1, 0.0), Vec{0.0, 0.0}}, 1.0}});
    DiffusedPoly p2 = taylor_table(fam2, GridSpec{2, 1.0, 2, 1}, make_holder(1.5, 2));
    CHECK(p2.monomials.size() == 4);  // C(3+1, 1)
    CHECK(p2.coeffs.size() == std::size_t(4) * 3 * 4);

    CHECK_THROWS_AS(taylor_table(fam2, g, h), std::invalid_argument);
}

TEST_CASE("closed-form moments match brute-force quadrature") {
    GaussianMixtureFamily fam = bimodal_1d();
    GridSpec g{4, 1.5, 1, 1};
    DiffusedPoly poly = taylor_table(fam, g, make_holder(2.2, 4));

    for (double t : {0.3, 1.2}) {
        for (double x : {-1.1, 0.0, 0.7, 2.0}) {
            for (double y : {0.13, 0.5}) {
                const double ref1 = quad_reference(poly, x, y, t, 0);
                const double got1 = f1_eval(poly, Vec{x}, Vec{y}, t);
                CHECK(std::abs(got1 - ref1) <= 1e-8 * std::max(std::abs(ref1), 1e-4));

                const double ref2 = quad_reference(poly, x, y, t, 1);
                const Vec got2 = f2_eval(poly, Vec{x}, Vec{y}, t);
                CHECK(std::abs(got2[0] - ref2) <= 1e-8 * std::max(std::abs(ref2), 1e-4));
            }
        }
    }
}

TEST_CASE("two-cell degree-zero table evaluates to the hand-built sum") {
    GaussianMixtureFamily fam = standard_1d();
    GridSpec g{2, 1.0, 1, 1};
    HolderParams h{0.5, 0, 1, 0.0};
    DiffusedPoly poly = taylor_table(fam, g, h);

    const double x = 0.3, y = 0.25, t = 0.8;
    const double alpha = std::exp(-0.4);
    const double sigma = std::sqrt(-std::expm1(-0.8));
    const double hw = std::sqrt(std::log(2.0));

    const double lo = std::max((x - sigma * hw) / alpha, -hw);
    const double hi = std::min((x + sigma * hw) / alpha, hw);
    REQUIRE(lo > -hw);
    REQUIRE(hi == hw);

    // two cells (-hw, 0] and (0, hw]; k2 = 1 keeps the truncated kernel short
    auto moment = [&](double rlo, double rhi, int u_power) {
        const double ul = (alpha * rlo - x) / sigma;
        const double uh = (alpha * rhi - x) / sigma;
        auto ipow = [](double u, int p) { return std::pow(u, p); };
        double val;
        if (u_power == 0)
            val = (uh - ul) - (ipow(uh, 3) - ipow(ul, 3)) / 6.0;
        else
            val = (ipow(uh, 2) - ipow(ul, 2)) / 2.0 - (ipow(uh, 4) - ipow(ul, 4)) / 8.0;
        return val * kInvSqrt2Pi / alpha;
    };
    const double p1 = kInvSqrt2Pi;                         // density at x = 0
    const double p2 = kInvSqrt2Pi * std::exp(-0.5 * hw * hw);  // density at x = hw
    // y = 0.25 sits halfway between nodes 0 and 1: both carry weight 1/2
    const double yw = 0.5 + 0.5;
    const double f1_hand =
        yw * (p1 * moment(std::max(lo, -hw), 0.0, 0) + p2 * moment(0.0, hi, 0));
    const double f2_hand =
        yw * (p1 * moment(std::max(lo, -hw), 0.0, 1) + p2 * moment(0.0, hi, 1));

    CHECK(f1_eval(poly, Vec{x}, Vec{y}, t) == doctest::Approx(f1_hand).epsilon(1e-13));
    CHECK(f2_eval(poly, Vec{x}, Vec{y}, t)[0] == doctest::Approx(f2_hand).epsilon(1e-13));
}

TEST_CASE("f1 converges to the diffused density as the grid refines") {
    GaussianMixtureFamily fam = standard_1d();
    const double t = 0.5;
    std::vector<double> sup_err;
    for (int N : {2, 4, 8, 16}) {
        GridSpec g{N, 1.5, 1, 1};
        DiffusedPoly poly = taylor_table(fam, g, make_holder(4.0, N));
        double worst = 0.0;
        for (int i = 0; i <= 80; ++i) {
            const double x = -2.0 + 4.0 * i / 80.0;
            const double err =
                std::abs(f1_eval(poly, Vec{x}, Vec{0.5}, t) - fam.density(Vec{x}, Vec{0.5}, t));
            worst = std::max(worst, err);
        }
        sup_err.push_back(worst);
    }
    for (std::size_t i = 1; i < sup_err.size(); ++i) CHECK(sup_err[i] < sup_err[i - 1]);
    // the N = 16 floor is the mass outside the clip window at x = +-2
    CHECK(sup_err.back() < 1e-2);
}

TEST_CASE("f1 ignores y when the family does") {
    GaussianMixtureFamily fam = standard_1d();
    GridSpec g{8, 1.5, 1, 1};
    DiffusedPoly poly = taylor_table(fam, g, make_holder(2.2, 8));
    for (double x : {-0.7, 0.2, 1.4}) {
        const double a = f1_eval(poly, Vec{x}, Vec{0.2}, 0.6);
        const double b = f1_eval(poly, Vec{x}, Vec{0.77}, 0.6);
        CHECK(std::abs(a - b) < 1e-6);
    }
}

TEST_CASE("f2 tracks the scaled density gradient") {
    GaussianMixtureFamily fam = standard_1d();
    // the wide box keeps the moving clip edge in the far kernel tail, so the
    // centered difference of the clipped integral matches the closed form;
    // the long series keeps the kernel accurate out to the box corner
    GridSpec g{16, 2.0, 1, 1};
    HolderParams hp = make_holder(4.0, 16);
    hp.k2 = 20;
    DiffusedPoly poly = taylor_table(fam, g, hp);
    const double t = 0.5;
    const ScheduleValue sch = noise_schedule(t);

    // symmetric density: the gradient at the origin is zero up to the Taylor
    // truncation (cells expand at their upper edge, so the table is not even)
    CHECK(std::abs(f2_eval(poly, Vec{0.0}, Vec{0.5}, t)[0]) < 1e-4);

    // centered difference of f1 against the closed-form moment
    const double h = 1e-3;
    for (double x : {-1.0, 0.5, 1.2}) {
        const double fd = sch.sigma *
                          (f1_eval(poly, Vec{x + h}, Vec{0.5}, t) -
                           f1_eval(poly, Vec{x - h}, Vec{0.5}, t)) /
                          (2.0 * h);
        const double got = f2_eval(poly, Vec{x}, Vec{0.5}, t)[0];
        CHECK(std::abs(got - fd) <= 5e-2 * std::abs(fd));
    }

    // mean-2 data at t = ln 4 diffuses to N(1, 1): the gradient changes sign at 1.
    // The wide box needs a long kernel series, so k2 is raised past the default.
    GaussianMixtureFamily shifted = shifted_1d(2.0);
    GridSpec gs{8, 2.0, 1, 1};
    HolderParams hs = make_holder(2.2, 8);
    hs.k2 = 20;
    DiffusedPoly ps = taylor_table(shifted, gs, hs);
    for (double x : {0.0, 0.4, 0.8}) CHECK(f2_eval(ps, Vec{x}, Vec{0.5}, std::log(4.0))[0] > 0.0);
    for (double x : {1.2, 1.6, 2.0}) CHECK(f2_eval(ps, Vec{x}, Vec{0.5}, std::log(4.0))[0] < 0.0);
}

TEST_CASE("generic assembly clamps and floors") {
    const double t = 0.25;
    const ScheduleValue sch = noise_schedule(t);
    ScoreAssemblyConfig cfg{1e-3, 100.0};

    Vec out = assemble_generic(0.5, Vec{0.3, -0.2}, t, cfg);
    CHECK(out[0] == doctest::Approx(0.3 / (sch.sigma * 0.5)).epsilon(1e-15));
    CHECK(out[1] == doctest::Approx(-0.2 / (sch.sigma * 0.5)).epsilon(1e-15));

    // tiny f1 falls back to the floor (0.04 keeps the result under the cap)
    out = assemble_generic(1e-9, Vec{0.04}, t, cfg);
    CHECK(out[0] == doctest::Approx(0.04 / (sch.sigma * 1e-3)).epsilon(1e-15));

    // the cap binds with the sign preserved
    out = assemble_generic(1e-9, Vec{5.0, -5.0}, t, cfg);
    CHECK(out[0] == 100.0);
    CHECK(out[1] == -100.0);

    ScoreAssemblyConfig bad{0.0, 1.0};
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("assembly config follows the grid and schedule") {
    GaussianMixtureFamily fam = standard_1d();
    GridSpec g{8, 1.0, 1, 1};
    HolderParams h = make_holder(2.2, 8);
    const double t = 0.5;
    ScoreAssemblyConfig cfg = make_assembly_config(fam, g, h, t);

    const double rb = g.box_width();
    double min_density = 1e300;
    for (int v = 1; v <= 8; ++v)
        for (int w = 0; w <= 8; ++w)
            min_density = std::min(
                min_density, fam.density0(Vec{rb * (v / 8.0 - 0.5)}, Vec{w / 8.0}));
    const double logn = std::log(8.0);
    CHECK(cfg.eps_low == doctest::Approx(0.5 * min_density * std::pow(8.0, -2.2) *
                                         std::pow(logn, 1.5))
                             .epsilon(1e-12));
    const double sig2 = -std::expm1(-t);
    CHECK(cfg.k_cap == doctest::Approx((std::sqrt(logn) + 1.0) / sig2).epsilon(1e-12));
}

TEST_CASE("generic score saturates at the cap outside the reachable box") {
    GaussianMixtureFamily fam = standard_1d();
    GridSpec g{8, 1.0, 1, 1};
    HolderParams h = make_holder(2.2, 8);
    DiffusedPoly poly = taylor_table(fam, g, h);
    const double t = 0.5;
    ScoreAssemblyConfig cfg = make_assembly_config(fam, g, h, t);

    Vec far = generic_score(poly, Vec{50.0}, Vec{0.5}, t, cfg);
    CHECK(far[0] == -cfg.k_cap);
    far = generic_score(poly, Vec{-50.0}, Vec{0.5}, t, cfg);
    CHECK(far[0] == cfg.k_cap);

    // interior point: plain assembly of the two moment values
    Vec mid = generic_score(poly, Vec{0.4}, Vec{0.5}, t, cfg);
    const double f1 = f1_eval(poly, Vec{0.4}, Vec{0.5}, t);
    const Vec f2 = f2_eval(poly, Vec{0.4}, Vec{0.5}, t);
    CHECK(mid[0] == assemble_generic(f1, f2, t, cfg)[0]);
}

TEST_CASE("generic score approaches the oracle score as the grid refines") {
    GaussianMixtureFamily fam = standard_1d();
    const double t = 0.5, y = 0.3;
    std::vector<double> mse;
    for (int N : {2, 4, 8, 16}) {
        GridSpec g{N, 1.5, 1, 1};
        HolderParams h = make_holder(4.0, N);
        DiffusedPoly poly = taylor_table(fam, g, h);
        ScoreAssemblyConfig cfg = make_assembly_config(fam, g, h, t);
        double num = 0.0, den = 0.0;
        for (int i = 0; i <= 80; ++i) {
            const double x = -2.0 + 4.0 * i / 80.0;
            const double wgt = fam.density(Vec{x}, Vec{y}, t);
            const Vec got = generic_score(poly, Vec{x}, Vec{y}, t, cfg);
            const Vec want = fam.score(Vec{x}, Vec{y}, t);
            num += wgt * (got[0] - want[0]) * (got[0] - want[0]);
            den += wgt;
        }
        mse.push_back(num / den);
    }
    for (std::size_t i = 1; i < mse.size(); ++i) CHECK(mse[i] < mse[i - 1]);
    CHECK(mse.back() < 1e-3);
}

TEST_CASE("hat coefficients of the envelope decomposition") {
    // C2 = 1 reproduces the forward schedule
    for (double t : {0.1, 0.7, 2.0}) {
        const ScheduleValue sch = noise_schedule(t);
        StrongDecomp d = hat_coeffs(t, 1.0);
        CHECK(d.hat_alpha == doctest::Approx(sch.alpha).epsilon(1e-15));
        CHECK(d.hat_sigma == doctest::Approx(sch.sigma).epsilon(1e-15));
    }

    StrongDecomp d = hat_coeffs(std::log(4.0), 2.0);
    CHECK(d.hat_alpha == doctest::Approx(0.5 / 1.75).epsilon(1e-14));
    CHECK(d.hat_sigma == doctest::Approx(std::sqrt(0.75 / 1.75)).epsilon(1e-14));

    // long-time limit: alpha hat dies, sigma hat tends to 1/sqrt(C2)
    d = hat_coeffs(60.0, 2.0);
    CHECK(d.hat_alpha < 1e-12);
    CHECK(d.hat_sigma == doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-9));

    CHECK_THROWS_AS(hat_coeffs(0.5, 0.0), std::invalid_argument);
}

TEST_CASE("strong assembly recovers the envelope score") {
    const double t = std::log(4.0);
    StrongDecomp d = hat_coeffs(t, 1.0);

    CHECK(assemble_strong(Vec{0.0, 0.0}, 1.0, Vec{0.0, 0.0}, d) == Vec{0.0, 0.0});

    // alpha^2 + sigma^2 = 1 at C2 = 1, so a flat smooth factor gives -x
    Vec out = assemble_strong(Vec{1.0, 0.0}, 2.0, Vec{0.0, 0.0}, d);
    CHECK(out[0] == doctest::Approx(-1.0).epsilon(1e-15));
    CHECK(out[1] == 0.0);

    CHECK_THROWS_AS(assemble_strong(Vec{1.0}, 0.0, Vec{0.0}, d), std::runtime_error);
    CHECK_THROWS_AS(assemble_strong(Vec{1.0}, -2.0, Vec{0.0}, d), std::runtime_error);
}

TEST_CASE("smooth-factor pipeline beats the raw-density pipeline") {
    StrongHolderFamily fam(1, 1, 1.0, 1.0, 0.5, Vec{2.0});
    const double t = 0.5, y = 0.3;
    const int N = 16;
    GridSpec g{N, 1.5, 1, 1};
    // identical smoothness budget on both sides, default kernel series
    HolderParams h = make_holder(2.0, N);

    DiffusedPoly strong = taylor_table_strong(fam, g, h);
    DiffusedPoly generic = taylor_table(fam, g, h);
    ScoreAssemblyConfig cfg = make_assembly_config(fam, g, h, t);

    double worst_strong = 0.0, worst_generic = 0.0;
    double mse_strong = 0.0, mse_generic = 0.0, weight = 0.0;
    for (int i = 0; i <= 100; ++i) {
        const double x = -2.0 + 4.0 * i / 100.0;
        const double wgt = fam.density(Vec{x}, Vec{y}, t);
        const Vec want = fam.score(Vec{x}, Vec{y}, t);
        const Vec ss = strong_score(strong, Vec{x}, Vec{y}, t);
        const Vec gs = generic_score(generic, Vec{x}, Vec{y}, t, cfg);
        const double es = std::abs(ss[0] - want[0]);
        const double eg = std::abs(gs[0] - want[0]);
        worst_strong = std::max(worst_strong, es);
        worst_generic = std::max(worst_generic, eg);
        mse_strong += wgt * es * es;
        mse_generic += wgt * eg * eg;
        weight += wgt;
    }
    CHECK(worst_strong < worst_generic);
    CHECK(mse_strong / weight <= mse_generic / weight);
    CHECK(worst_strong < 0.5);

    // the smooth factor respects its pointwise bounds wherever we probe it
    RngStream rng = RngStream::named(71, "h-bounds");
    for (int rep = 0; rep < 500; ++rep) {
        const Vec x{rng.uniform(-3.0, 3.0)};
        const Vec yv{rng.uniform()};
        const double tt = rng.uniform(0.05, 3.0);
        const double hv = fam.h_value(x, yv, tt);
        CHECK(hv >= fam.f_lower() - 1e-12);
        CHECK(hv <= fam.f_upper() + 1e-12);
        CHECK(hv <= strong.holder.B_est + 1e-12);
    }

    CHECK_THROWS_AS(strong_score(generic, Vec{0.0}, Vec{y}, t), std::invalid_argument);
    CHECK_THROWS_AS(generic_score(strong, Vec{0.0}, Vec{y}, t, cfg), std::invalid_argument);
}

TEST_CASE("table cache round-trips and rejects mismatches") {
    GaussianMixtureFamily fam = bimodal_1d();
    GridSpec g{4, 1.5, 1, 1};
    HolderParams h = make_holder(2.2, 4);
    DiffusedPoly poly = taylor_table(fam, g, h);

    const std::string path = "poly_cache_test.bin";
    save_poly(poly, path);

    auto loaded = try_load_poly(path, fam.content_hash(), g, h, false);
    REQUIRE(loaded.has_value());
    CHECK(loaded->coeffs == poly.coeffs);
    CHECK(loaded->monomials == poly.monomials);
    CHECK(loaded->holder.B_est == poly.holder.B_est);
    CHECK(f1_eval(*loaded, Vec{0.4}, Vec{0.3}, 0.7) == f1_eval(poly, Vec{0.4}, Vec{0.3}, 0.7));

    // key mismatches
    GridSpec g8 = g;
    g8.N = 8;
    CHECK(!try_load_poly(path, fam.content_hash(), g8, h, false).has_value());
    CHECK(!try_load_poly(path, fam.content_hash() + 1, g, h, false).has_value());
    CHECK(!try_load_poly(path, fam.content_hash(), g, h, true).has_value());
    HolderParams h2 = make_holder(3.2, 4);
    CHECK(!try_load_poly(path, fam.content_hash(), g, h2, false).has_value());
    CHECK(!try_load_poly("no_such_table.bin", fam.content_hash(), g, h, false).has_value());

    // corrupted magic
    {
        std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(0);
        f.write("XX", 2);
    }
    CHECK(!try_load_poly(path, fam.content_hash(), g, h, false).has_value());
    save_poly(poly, path);

    // trailing garbage
    {
        std::ofstream f(path, std::ios::app | std::ios::binary);
        f.put('\0');
    }
    CHECK(!try_load_poly(path, fam.content_hash(), g, h, false).has_value());

    // truncation
    save_poly(poly, path);
    {
        std::ifstream in(path, std::ios::binary);
        std::vector<char> bytes((std::istreambuf_iterator<char>(in)),
                                std::istreambuf_iterator<char>());
        bytes.resize(bytes.size() / 2);
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        out.write(bytes.data(), std::streamsize(bytes.size()));
    }
    CHECK(!try_load_poly(path, fam.content_hash(), g, h, false).has_value());
    std::remove(path.c_str());
}

TEST_CASE("evaluation rejects malformed arguments") {
    GaussianMixtureFamily fam = standard_1d();
    GridSpec g{4, 1.0, 1, 1};
    DiffusedPoly poly = taylor_table(fam, g, make_holder(1.5, 4));
    CHECK_THROWS_AS(f1_eval(poly, Vec{0.0, 0.0}, Vec{0.5}, 0.5), std::invalid_argument);
    CHECK_THROWS_AS(f1_eval(poly, Vec{0.0}, Vec{}, 0.5), std::invalid_argument);
    CHECK_THROWS_AS(f1_eval(poly, Vec{0.0}, Vec{0.5}, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(f2_eval(poly, Vec{0.0}, Vec{0.5}, -1.0), std::invalid_argument);
}
