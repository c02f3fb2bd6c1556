#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "difflab/evaluation.hpp"
#include "difflab/rng.hpp"

using namespace difflab;

namespace {

CoverInputs unit_inputs() {
    CoverInputs inp;
    inp.eps_c = 1.0;
    inp.n = std::exp(1.0);
    inp.L = std::exp(1.0);
    inp.d = 1;
    inp.R_T = 0.0;
    inp.C_F = inp.C_F_2inf = inp.C_OV = inp.C_OV_2inf = 1.0;
    inp.C_KQ = inp.C_KQ_2inf = 1.0;
    inp.C_E = 1.0;
    return inp;
}

ScoreFn additive_score() {
    return [](const Vec& x, const Cond& y, double) {
        Vec out(x.size());
        for (std::size_t i = 0; i < x.size(); ++i)
            out[i] = y ? x[i] + (*y)[0] : 2.0 * x[i];
        return out;
    };
}

std::vector<Vec> gaussian_cloud(int n, double shift, std::uint64_t root, const char* purpose) {
    RngStream rng = RngStream::named(root, purpose, std::uint64_t(n));
    std::vector<Vec> out;
    out.reserve(std::size_t(n));
    for (int i = 0; i < n; ++i) out.push_back(Vec{shift + rng.normal()});
    return out;
}

int count_lines(const std::string& s) {
    int n = 0;
    for (char c : s)
        if (c == '\n') ++n;
    return n;
}

TrendConfig tiny_trend_config() {
    TrendConfig cfg;
    cfg.t_max = 4.0;
    cfg.s = 2;
    cfg.r = 4;
    cfg.n_train = 48;
    cfg.batch = 12;
    cfg.lr = 5e-3;
    cfg.epochs = 3;
    cfg.n_test = 32;
    cfg.risk_points = 64;
    cfg.root_seed = 9001;
    return cfg;
}

bool cells_match(const TrendCell& a, const TrendCell& b) {
    return a.setting == b.setting && a.seed == b.seed && a.ok == b.ok && a.status == b.status &&
           a.test_loss == b.test_loss && a.risk == b.risk && a.std_error == b.std_error &&
           a.norm_WO_2inf == b.norm_WO_2inf && a.norm_WV_2inf == b.norm_WV_2inf;
}

}  // namespace

TEST_CASE("covering bound matches the hand-evaluated reference point") {
    CoverInputs inp = unit_inputs();
    const double expected = 50.0 * std::pow(3.0 + std::cbrt(4.0), 3.0);
    CHECK(covering_bound(inp) == doctest::Approx(expected).epsilon(1e-12));
    CHECK(covering_bound(inp) == doctest::Approx(4826.9203650624549).epsilon(1e-12));
}

TEST_CASE("covering bound is exactly quadratic in the inverse resolution") {
    CoverInputs inp = unit_inputs();
    inp.R_T = 0.5;
    const double base = covering_bound(inp);
    for (double eps : {0.5, 2.0, 4.0}) {
        CoverInputs scaled = inp;
        scaled.eps_c = eps;
        // eps is a power of two, so the rescaling is exact in binary
        CHECK(covering_bound(scaled) * eps * eps == base);
    }
    CoverInputs half = inp;
    half.eps_c = 0.5;
    CHECK(covering_bound(half) == 4.0 * base);
}

TEST_CASE("covering bound scales quadratically in the output radius block") {
    CoverInputs inp = unit_inputs();
    inp.R_T = 1.0;
    inp.C_E = 1.0;
    const double base = covering_bound(inp);
    CoverInputs tripled = inp;
    tripled.R_T = 3.0;
    tripled.C_E = 3.0;
    CHECK(covering_bound(tripled) == doctest::Approx(9.0 * base).epsilon(1e-14));
}

TEST_CASE("covering bound grows with every capacity constant") {
    CoverInputs inp = unit_inputs();
    inp.R_T = 0.25;
    const double base = covering_bound(inp);
    auto bump = [&](auto setter) {
        CoverInputs up = inp;
        setter(up);
        return covering_bound(up);
    };
    CHECK(bump([](CoverInputs& c) { c.C_F *= 1.5; }) > base);
    CHECK(bump([](CoverInputs& c) { c.C_F_2inf *= 1.5; }) > base);
    CHECK(bump([](CoverInputs& c) { c.C_OV *= 1.5; }) > base);
    CHECK(bump([](CoverInputs& c) { c.C_OV_2inf *= 1.5; }) > base);
    CHECK(bump([](CoverInputs& c) { c.C_KQ *= 1.5; }) > base);
    CHECK(bump([](CoverInputs& c) { c.C_KQ_2inf *= 1.5; }) > base);
    CHECK(bump([](CoverInputs& c) { c.C_E *= 1.5; }) > base);
    CHECK(bump([](CoverInputs& c) { c.R_T *= 1.5; }) > base);
    CHECK(bump([](CoverInputs& c) { c.n *= 1.5; }) > base);
    CHECK(bump([](CoverInputs& c) { c.L *= 1.5; }) > base);
    CHECK(bump([](CoverInputs& c) { c.d = 2; }) > base);
}

TEST_CASE("covering bound input validation") {
    CHECK_THROWS_AS(
        [] {
            CoverInputs bad = unit_inputs();
            bad.eps_c = 0.0;
            covering_bound(bad);
        }(),
        std::invalid_argument);
    CHECK_THROWS_AS(
        [] {
            CoverInputs bad = unit_inputs();
            bad.R_T = -1.0;
            covering_bound(bad);
        }(),
        std::invalid_argument);
    CHECK_THROWS_AS(
        [] {
            CoverInputs bad = unit_inputs();
            bad.C_OV = 0.0;
            covering_bound(bad);
        }(),
        std::invalid_argument);
    CHECK_THROWS_AS(
        [] {
            CoverInputs bad = unit_inputs();
            bad.d = 0;
            covering_bound(bad);
        }(),
        std::invalid_argument);
    // log(nL) must be positive for the bound to mean anything
    CHECK_THROWS_AS(
        [] {
            CoverInputs bad = unit_inputs();
            bad.n = 0.5;
            bad.L = 1.0;
            covering_bound(bad);
        }(),
        std::invalid_argument);
}

TEST_CASE("guided score interpolates and extrapolates the two branches") {
    ScoreFn s = additive_score();
    Vec x{0.3, -1.2};
    Vec y{0.5};

    Vec cond = s(x, Cond(y), 0.7);
    Vec uncond = s(x, Cond{}, 0.7);

    Vec g0 = guided_score(s, x, y, 0.7, 0.0);
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(g0[i] == cond[i]);

    Vec g1 = guided_score(s, x, y, 0.7, 1.0);
    for (std::size_t i = 0; i < x.size(); ++i)
        CHECK(g1[i] == doctest::Approx(2.0 * cond[i] - uncond[i]).epsilon(1e-14));

    // the output is affine in the guidance strength
    Vec g2 = guided_score(s, x, y, 0.7, 2.0);
    for (std::size_t i = 0; i < x.size(); ++i)
        CHECK(g2[i] - g1[i] == doctest::Approx(g1[i] - g0[i]).epsilon(1e-12));
}

TEST_CASE("guided score collapses when the model ignores the condition") {
    ScoreFn s = [](const Vec& x, const Cond&, double) {
        Vec out(x.size());
        for (std::size_t i = 0; i < x.size(); ++i) out[i] = -0.5 * x[i];
        return out;
    };
    Vec x{1.0, 2.0, -0.25};
    Vec y{0.9};
    Vec base = guided_score(s, x, y, 1.0, 0.0);
    for (double eta : {0.3, 1.0, 4.0}) {
        Vec g = guided_score(s, x, y, 1.0, eta);
        for (std::size_t i = 0; i < x.size(); ++i) CHECK(g[i] == base[i]);
    }
}

TEST_CASE("guided score argument validation") {
    ScoreFn s = additive_score();
    Vec x{0.0};
    Vec y{0.0};
    CHECK_THROWS_AS(guided_score(s, x, y, 0.5, -0.1), std::invalid_argument);
    CHECK_THROWS_AS(guided_score(ScoreFn{}, x, y, 0.5, 1.0), std::invalid_argument);
}

TEST_CASE("tv estimate vanishes on identical samples") {
    auto a = gaussian_cloud(400, 0.0, 7, "tv-same");
    TVReport rep = tv_estimate(a, a, 64);
    CHECK(rep.tv == 0.0);
    CHECK(rep.bins == 64);
    CHECK(rep.samples_per_side == 400);
}

TEST_CASE("tv estimate saturates on disjoint supports") {
    RngStream rng = RngStream::named(3, "tv-disjoint");
    std::vector<Vec> a, b;
    for (int i = 0; i < 1000; ++i) {
        a.push_back(Vec{rng.uniform(0.0, 1.0)});
        b.push_back(Vec{rng.uniform(2.0, 3.0)});
    }
    TVReport rep = tv_estimate(a, b, 200);
    CHECK(rep.tv >= 1.0 - 1e-9);
    CHECK(rep.tv <= 1.0);
}

TEST_CASE("tv estimate recovers the unit-shift Gaussian distance") {
    // TV(N(0,1), N(1,1)) = 2 Phi(1/2) - 1
    const double truth = 0.3829249225480262;
    auto a = gaussian_cloud(100000, 0.0, 11, "tv-a");
    auto b = gaussian_cloud(100000, 1.0, 11, "tv-b");
    TVReport rep = tv_estimate(a, b, 200);
    CHECK(std::fabs(rep.tv - truth) < 0.02);
}

TEST_CASE("tv estimate error contracts as the sample count doubles") {
    const double truth = 0.3829249225480262;
    double prev = 1.0;
    for (int n : {12500, 25000, 50000, 100000}) {
        auto a = gaussian_cloud(n, 0.0, 11, "tv-a");
        auto b = gaussian_cloud(n, 1.0, 11, "tv-b");
        double err = std::fabs(tv_estimate(a, b, 200).tv - truth);
        CHECK(err <= prev);
        prev = err;
    }
    CHECK(prev < 0.01);
}

TEST_CASE("tv estimate handles planar samples") {
    RngStream rng = RngStream::named(17, "tv-2d");
    std::vector<Vec> a, b;
    for (int i = 0; i < 4000; ++i) {
        a.push_back(Vec{rng.normal(), rng.normal()});
        b.push_back(Vec{rng.normal(), rng.normal()});
    }
    TVReport same = tv_estimate(a, a, 20);
    CHECK(same.tv == 0.0);

    // same law, independent draws: small but nonzero distance
    TVReport close = tv_estimate(a, b, 20);
    CHECK(close.tv < 0.2);

    std::vector<Vec> far;
    for (const Vec& v : a) far.push_back(Vec{v[0] + 50.0, v[1] + 50.0});
    TVReport rep = tv_estimate(a, far, 20);
    CHECK(rep.tv >= 1.0 - 1e-9);
}

TEST_CASE("tv estimate rejects unsupported inputs") {
    std::vector<Vec> a{Vec{0.0}}, b{Vec{1.0}};
    CHECK_THROWS_AS(tv_estimate({}, b, 10), std::invalid_argument);
    CHECK_THROWS_AS(tv_estimate(a, {}, 10), std::invalid_argument);
    CHECK_THROWS_AS(tv_estimate(a, b, 0), std::invalid_argument);

    std::vector<Vec> cube{Vec{0.0, 0.0, 0.0}};
    CHECK_THROWS_AS(tv_estimate(cube, cube, 10), std::invalid_argument);

    std::vector<Vec> ragged{Vec{0.0}, Vec{0.0, 1.0}};
    CHECK_THROWS_AS(tv_estimate(ragged, b, 10), std::invalid_argument);
}

TEST_CASE("subspace error compares projectors, not bases") {
    // orthonormal 3x2 frame built by hand
    Mat U(3, 2);
    U(0, 0) = 1.0 / std::sqrt(2.0);
    U(1, 0) = 1.0 / std::sqrt(2.0);
    U(2, 0) = 0.0;
    U(0, 1) = 1.0 / std::sqrt(6.0);
    U(1, 1) = -1.0 / std::sqrt(6.0);
    U(2, 1) = 2.0 / std::sqrt(6.0);

    CHECK(subspace_error(U, U) == 0.0);

    // rotating the basis inside the plane leaves the projector unchanged
    const double c = std::cos(0.7), s = std::sin(0.7);
    Mat W(3, 2);
    for (int i = 0; i < 3; ++i) {
        W(i, 0) = c * U(i, 0) + s * U(i, 1);
        W(i, 1) = -s * U(i, 0) + c * U(i, 1);
    }
    CHECK(subspace_error(W, U) < 1e-20);
}

TEST_CASE("subspace error separates orthogonal directions") {
    Mat e1(2, 1), e2(2, 1);
    e1(0, 0) = 1.0;
    e2(1, 0) = 1.0;
    CHECK(subspace_error(e1, e2) == 2.0);

    // dropping one direction of a 2-frame costs exactly its projector
    Mat U(3, 2), W(3, 1);
    U(0, 0) = 1.0;
    U(1, 1) = 1.0;
    W(0, 0) = 1.0;
    CHECK(subspace_error(W, U) == 1.0);

    Mat tall(4, 1);
    CHECK_THROWS_AS(subspace_error(tall, U), std::invalid_argument);
    CHECK_THROWS_AS(subspace_error(Mat{}, Mat{}), std::invalid_argument);
}

TEST_CASE("trend layout factors the signal dimension near square") {
    auto check = [](int d_x, int d, int L) {
        ReshapeSpec spec = trend_layout(d_x);
        CHECK(spec.d_x == d_x);
        CHECK(spec.d == d);
        CHECK(spec.L == L);
    };
    check(1, 1, 1);
    check(4, 2, 2);
    check(6, 3, 2);
    check(7, 7, 1);
    check(12, 4, 3);
    check(16, 4, 4);
    check(64, 8, 8);
    CHECK_THROWS_AS(trend_layout(0), std::invalid_argument);
}

TEST_CASE("trend cells are a pure function of setting name, seed and config") {
    TrendConfig cfg = tiny_trend_config();
    TrendSetting s{"dx2", 2, 0.5};
    TrendCell a = run_trend_cell(s, 42, cfg);
    TrendCell b = run_trend_cell(s, 42, cfg);
    CHECK(cells_match(a, b));
    CHECK(a.ok);
    CHECK(a.status == "ok");
    CHECK(std::isfinite(a.test_loss));
    CHECK(a.test_loss > 0.0);
    CHECK(a.std_error > 0.0);
    CHECK(a.risk >= 0.0);
    CHECK(std::isfinite(a.risk));
    CHECK(a.norm_WV_2inf > 0.0);
    CHECK(a.norm_WO_2inf >= 0.0);

    TrendCell other = run_trend_cell(s, 43, cfg);
    CHECK(other.test_loss != a.test_loss);
}

TEST_CASE("trend cell records divergence instead of crashing") {
    TrendConfig cfg = tiny_trend_config();
    cfg.lr = 1e9;
    TrendSetting s{"explode", 2, 0.5};
    TrendCell c = run_trend_cell(s, 1, cfg);
    CHECK_FALSE(c.ok);
    CHECK(c.status == "diverged");
}

TEST_CASE("trend experiment gives identical rows for a repeated setting") {
    TrendConfig cfg = tiny_trend_config();
    std::vector<TrendSetting> settings{{"same", 2, 0.5}, {"same", 2, 0.5}, {"same", 2, 0.5}};
    std::vector<std::uint64_t> seeds{1, 2, 3};
    TrendTable table = trend_experiment(settings, seeds, cfg);

    REQUIRE(table.cells.size() == 9);
    for (int k = 0; k < 3; ++k) {
        CHECK(cells_match(table.cells[std::size_t(k)], table.cells[std::size_t(k + 3)]));
        CHECK(cells_match(table.cells[std::size_t(k)], table.cells[std::size_t(k + 6)]));
    }
    REQUIRE(table.medians.size() == 3);
    for (int k = 1; k < 3; ++k) {
        CHECK(table.medians[std::size_t(k)].test_loss == table.medians[0].test_loss);
        CHECK(table.medians[std::size_t(k)].risk == table.medians[0].risk);
        CHECK(table.medians[std::size_t(k)].norm_WO_2inf == table.medians[0].norm_WO_2inf);
        CHECK(table.medians[std::size_t(k)].norm_WV_2inf == table.medians[0].norm_WV_2inf);
    }
}

TEST_CASE("trend experiment sweeps dimensions and emits well-formed tables") {
    TrendConfig cfg = tiny_trend_config();
    std::vector<TrendSetting> settings{{"dx2", 2, 0.5}, {"dx4", 4, 0.5}, {"dx8", 8, 0.5}};
    std::vector<std::uint64_t> seeds{11, 12, 13};
    TrendTable table = trend_experiment(settings, seeds, cfg);

    REQUIRE(table.cells.size() == 9);
    for (const TrendCell& c : table.cells) {
        CHECK(c.ok);
        CHECK(std::isfinite(c.test_loss));
        CHECK(std::isfinite(c.risk));
    }
    REQUIRE(table.medians.size() == 3);
    for (const TrendSummary& m : table.medians) {
        CHECK(m.cells == 3);
        CHECK(std::isfinite(m.test_loss));
        CHECK(m.std_error > 0.0);
    }

    std::string csv = trend_csv(table);
    CHECK(csv.rfind("setting,seed,test_loss,risk,stderr,norm_WO_2inf,norm_WV_2inf,status\n", 0) ==
          0);
    CHECK(count_lines(csv) == 10);
    CHECK(csv.find("dx4,12,") != std::string::npos);
    CHECK(csv.find(",ok\n") != std::string::npos);

    std::string med = trend_median_csv(table);
    CHECK(med.rfind("setting,test_loss,risk,stderr,norm_WO_2inf,norm_WV_2inf,cells\n", 0) == 0);
    CHECK(count_lines(med) == 4);
    CHECK(med.find("dx8,") != std::string::npos);
}

TEST_CASE("trend experiment rejects undersized designs") {
    TrendConfig cfg = tiny_trend_config();
    std::vector<TrendSetting> two{{"a", 2, 0.5}, {"b", 4, 0.5}};
    std::vector<TrendSetting> three{{"a", 2, 0.5}, {"b", 4, 0.5}, {"c", 8, 0.5}};
    std::vector<std::uint64_t> seeds{1, 2, 3};
    CHECK_THROWS_AS(trend_experiment(two, seeds, cfg), std::invalid_argument);
    CHECK_THROWS_AS(trend_experiment(three, {1, 2}, cfg), std::invalid_argument);

    TrendConfig bad = cfg;
    bad.lr = 0.0;
    CHECK_THROWS_AS(trend_experiment(three, seeds, bad), std::invalid_argument);

    CHECK_THROWS_AS(run_trend_cell({"neg", 0, 0.5}, 1, cfg), std::invalid_argument);
    CHECK_THROWS_AS(run_trend_cell({"late", 2, 9.0}, 1, cfg), std::invalid_argument);
}
