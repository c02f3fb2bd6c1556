#pragma once

#include "difflab/linalg.hpp"
#include "difflab/schedule.hpp"
#include "difflab/targets.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace difflab {

// Piecewise-polynomial score estimator. The conditional density (or, for the
// smooth-factor pipeline, the bounded factor f of the stationary family) is
// expanded into local Taylor polynomials on a uniform grid over a box whose
// radius grows like sqrt(log N); convolving each piece with the forward
// Gaussian kernel, truncated to its first k2+1 exponential-series terms,
// yields closed-form moment integrals, so the diffused density f1 and the
// scaled gradient f2 evaluate without any runtime quadrature.

struct HolderParams {
    double beta = 1.0;  // smoothness order; k1 = floor(beta)
    int k1 = 1;         // Taylor degree
    int k2 = 3;         // kernel series truncation
    double B_est = 0.0; // estimated envelope (max |derivative| on the grid)

    void validate() const;
};

// k1 = floor(beta), k2 = min(20, ceil(max(beta * ln N, 3))).
HolderParams make_holder(double beta, int N);

struct GridSpec {
    int N = 2;          // cells per axis
    double C_x = 1.0;   // box radius multiplier
    int d_x = 1;
    int d_y = 0;

    // half-width C_x * sqrt(log N) of the global box
    double half_width() const;
    // full edge length R_B = 2 * half_width()
    double box_width() const;
    void validate() const;
};

struct Box {
    Vec lo, hi;
    bool empty() const;
};

// Per-axis integration window: the preimage of the sqrt(log N) noise ball
// under the forward map, intersected with the global box. May be empty when
// x lies far outside the box.
Box clip_domain(const Vec& x, const GridSpec& grid, double t);

// hat function: 1 on |a| < 1, linear down to 0 on 1 <= |a| <= 2
double trapezoid(double a);

struct DiffusedPoly {
    GridSpec grid;
    HolderParams holder;
    bool strong = false;     // table expands the bounded factor f, not p0
    double strong_c2 = 1.0;  // envelope exponent of the stationary family
    std::uint64_t family_hash = 0;

    // monomial exponents (n_x | n_y), each of length d_x + d_y, total degree <= k1
    std::vector<std::vector<int>> monomials;
    // coefficient of each monomial per cell, laid out [x-cell][y-cell][monomial];
    // x cells index v in [1, N]^d_x, y nodes w in [0, N]^d_y
    std::vector<double> coeffs;

    std::size_t x_cells() const;
    std::size_t y_cells() const;
    double coeff_at(const std::vector<int>& v, const std::vector<int>& w,
                    const std::vector<int>& mono) const;
};

// Tabulate Taylor coefficients of the conditional density at the grid points
// (R_B (v/N - 1/2), w/N). Derivatives come from family.density0_partial,
// which is exact for mixture families and nested central differences (step
// 1e-3 of a cell width) otherwise. Fills holder.B_est with the largest
// derivative magnitude seen when it was left at zero.
DiffusedPoly taylor_table(const ConditionalFamily& family, const GridSpec& grid,
                          const HolderParams& holder);

// Same table for the bounded factor f of a stationary-envelope family; f1
// then approximates the smooth factor h and the kernel uses the rescaled
// coefficients of the envelope decomposition.
DiffusedPoly taylor_table_strong(const StrongHolderFamily& family, const GridSpec& grid,
                                 const HolderParams& holder);

// diffused density estimate at (x, y, t); 0 when the clip window is empty
double f1_eval(const DiffusedPoly& poly, const Vec& x, const Vec& y, double t);

// sigma_t * gradient estimate of the diffused density
Vec f2_eval(const DiffusedPoly& poly, const Vec& x, const Vec& y, double t);

struct ScoreAssemblyConfig {
    double eps_low = 0.0;  // denominator floor
    double k_cap = 0.0;    // magnitude cap

    void validate() const;
};

// eps_low = C3 N^-beta (log N)^{(d_x + k1)/2} with C3 = half the smallest
// grid density; k_cap = K (C_x sqrt(d_x log N) + 1) / sigma_t^2.
ScoreAssemblyConfig make_assembly_config(const ConditionalFamily& family, const GridSpec& grid,
                                         const HolderParams& holder, double t, double K = 1.0);

// clamp(f2 / (sigma_t * max(f1, eps_low)), +-k_cap), entrywise and sign-preserving
Vec assemble_generic(double f1, const Vec& f2, double t, const ScoreAssemblyConfig& cfg);

// f1/f2 evaluation plus assembly; when x lies outside the reachable box the
// result is +-k_cap with signs taken from f2 at x clamped onto the box edge
Vec generic_score(const DiffusedPoly& poly, const Vec& x, const Vec& y, double t,
                  const ScoreAssemblyConfig& cfg);

struct StrongDecomp {
    double c2 = 1.0;
    double t = 0.0;
    double hat_alpha = 0.0;
    double hat_sigma = 0.0;
};

// hat_alpha = alpha / (alpha^2 + C2 sigma^2), hat_sigma = sigma / sqrt(alpha^2 + C2 sigma^2)
StrongDecomp hat_coeffs(double t, double c2);

// score = -C2 x / (alpha^2 + C2 sigma^2) + (hat_alpha / hat_sigma) * f2_h / f1_h;
// throws when f1_h <= 0 (the smooth factor has a positive lower bound, so a
// nonpositive estimate means the table resolution is too coarse)
Vec assemble_strong(const Vec& x, double f1_h, const Vec& f2_h, const StrongDecomp& decomp);

Vec strong_score(const DiffusedPoly& poly, const Vec& x, const Vec& y, double t);

// binary table cache; loading checks family hash, grid, smoothness params and
// the strong flag, and reports any mismatch or malformed file as nullopt
void save_poly(const DiffusedPoly& poly, const std::string& path);
std::optional<DiffusedPoly> try_load_poly(const std::string& path, std::uint64_t family_hash,
                                          const GridSpec& grid, const HolderParams& holder,
                                          bool strong);

}  // namespace difflab
