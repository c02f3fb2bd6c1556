#include "difflab/localpoly.hpp"

#include "difflab/binio.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <functional>
#include <limits>
#include <stdexcept>

namespace difflab {

namespace {

constexpr double kInvSqrt2Pi = 0.39894228040143268;

void require_time(double t) {
    if (!(t > 0.0) || !std::isfinite(t))
        throw std::invalid_argument("local polynomial: singular at t = 0, need t > 0");
}

double factorial(int n) {
    double f = 1.0;
    for (int i = 2; i <= n; ++i) f *= i;
    return f;
}

double binom(int n, int k) {
    double b = 1.0;
    for (int i = 0; i < k; ++i) b = b * (n - i) / (i + 1);
    return b;
}

std::size_t pow_sz(int base, int exp) {
    std::size_t r = 1;
    for (int i = 0; i < exp; ++i) r *= std::size_t(base);
    return r;
}

// all exponent vectors over `dims` variables with total degree <= k1,
// ordered lexicographically so the layout is reproducible
void enumerate_rec(int dims, int budget, std::vector<int>& cur,
                   std::vector<std::vector<int>>& out) {
    if (int(cur.size()) == dims) {
        out.push_back(cur);
        return;
    }
    for (int n = 0; n <= budget; ++n) {
        cur.push_back(n);
        enumerate_rec(dims, budget - n, cur, out);
        cur.pop_back();
    }
}

std::vector<std::vector<int>> enumerate_monomials(int dims, int degree) {
    std::vector<std::vector<int>> out;
    std::vector<int> cur;
    enumerate_rec(dims, degree, cur, out);
    return out;
}

// odometer over per-axis index ranges [lo, hi]; returns false once exhausted
bool advance(std::vector<int>& idx, int lo, int hi) {
    for (int i = int(idx.size()) - 1; i >= 0; --i) {
        if (idx[i] < hi) {
            ++idx[i];
            for (std::size_t j = i + 1; j < idx.size(); ++j) idx[j] = lo;
            return true;
        }
    }
    return false;
}

using DerivFn =
    std::function<double(const Vec&, const Vec&, const std::vector<int>&, const std::vector<int>&)>;

DiffusedPoly build_table(const GridSpec& grid, const HolderParams& holder, const DerivFn& deriv,
                         bool strong, double strong_c2, std::uint64_t hash) {
    grid.validate();
    holder.validate();
    DiffusedPoly poly;
    poly.grid = grid;
    poly.holder = holder;
    poly.strong = strong;
    poly.strong_c2 = strong_c2;
    poly.family_hash = hash;
    poly.monomials = enumerate_monomials(grid.d_x + grid.d_y, holder.k1);

    const double rb = grid.box_width();
    const std::size_t n_mono = poly.monomials.size();
    const std::size_t nxc = pow_sz(grid.N, grid.d_x);
    const std::size_t nyc = pow_sz(grid.N + 1, grid.d_y);
    poly.coeffs.assign(nxc * nyc * n_mono, 0.0);

    double max_deriv = 0.0;
    std::vector<int> v(grid.d_x, 1), w(grid.d_y, 0);
    Vec xg(grid.d_x), yg(grid.d_y);
    std::size_t iv = 0;
    do {
        for (int i = 0; i < grid.d_x; ++i) xg[i] = rb * (double(v[i]) / grid.N - 0.5);
        std::fill(w.begin(), w.end(), 0);
        std::size_t iw = 0;
        do {
            for (int j = 0; j < grid.d_y; ++j) yg[j] = double(w[j]) / grid.N;
            double* slot = poly.coeffs.data() + (iv * nyc + iw) * n_mono;
            for (std::size_t m = 0; m < n_mono; ++m) {
                const auto& mono = poly.monomials[m];
                std::vector<int> nx(mono.begin(), mono.begin() + grid.d_x);
                std::vector<int> ny(mono.begin() + grid.d_x, mono.end());
                double d = deriv(xg, yg, nx, ny);
                max_deriv = std::max(max_deriv, std::abs(d));
                int ord_x = 0;
                double fact = 1.0;
                for (int n : nx) {
                    ord_x += n;
                    fact *= factorial(n);
                }
                for (int n : ny) fact *= factorial(n);
                slot[m] = d * std::pow(rb, ord_x) / fact;
            }
            ++iw;
        } while (grid.d_y > 0 && advance(w, 0, grid.N));
        ++iv;
    } while (advance(v, 1, grid.N));

    if (poly.holder.B_est == 0.0) poly.holder.B_est = max_deriv;
    check_finite(poly.coeffs, "taylor table");
    return poly;
}

// nested central differences for the smooth-factor table; x and y steps are
// scaled to their own cell widths
double fd_partial(const StrongHolderFamily& fam, Vec x, Vec y, std::vector<int> nx,
                  std::vector<int> ny, double hx, double hy) {
    for (std::size_t i = 0; i < nx.size(); ++i) {
        if (nx[i] > 0) {
            --nx[i];
            Vec xp = x, xm = x;
            xp[i] += hx;
            xm[i] -= hx;
            return (fd_partial(fam, xp, y, nx, ny, hx, hy) -
                    fd_partial(fam, xm, y, nx, ny, hx, hy)) /
                   (2.0 * hx);
        }
    }
    for (std::size_t j = 0; j < ny.size(); ++j) {
        if (ny[j] > 0) {
            --ny[j];
            Vec yp = y, ym = y;
            yp[j] += hy;
            ym[j] -= hy;
            return (fd_partial(fam, x, yp, nx, ny, hx, hy) -
                    fd_partial(fam, x, ym, nx, ny, hx, hy)) /
                   (2.0 * hy);
        }
    }
    return fam.f_value(x, y);
}

struct AxisTable {
    std::vector<int> cells;
    // I[cell][n][e]: moment of (a u + c)^n u^e against the truncated kernel
    std::vector<std::vector<std::array<double, 2>>> moments;
};

struct YAxisTable {
    std::vector<int> nodes;
    std::vector<double> phi;
    std::vector<double> delta;
};

// Evaluates f1 (returned) and optionally f2 into *f2_out; *empty_out is set
// when some axis window misses the global box entirely.
double eval_core(const DiffusedPoly& poly, const Vec& x, const Vec& y, double t, Vec* f2_out,
                 bool* empty_out) {
    const GridSpec& g = poly.grid;
    require_time(t);
    if (int(x.size()) != g.d_x) throw std::invalid_argument("local polynomial: x has wrong size");
    if (int(y.size()) != g.d_y) throw std::invalid_argument("local polynomial: y has wrong size");

    if (f2_out) f2_out->assign(g.d_x, 0.0);
    if (empty_out) *empty_out = false;

    const ScheduleValue sch = noise_schedule(t);
    const double hw = g.half_width();
    const double rb = g.box_width();
    double kc = sch.alpha, ks = sch.sigma;
    if (poly.strong) {
        StrongDecomp d = hat_coeffs(t, poly.strong_c2);
        kc = d.hat_alpha;
        ks = d.hat_sigma;
    }

    const int k1 = poly.holder.k1;
    const int k2 = poly.holder.k2;
    const int max_pow = k1 + 2 * k2 + 2;

    std::vector<AxisTable> axes(g.d_x);
    for (int i = 0; i < g.d_x; ++i) {
        double wlo, whi;
        if (poly.strong) {
            wlo = kc * x[i] - ks * hw;
            whi = kc * x[i] + ks * hw;
        } else {
            wlo = (x[i] - sch.sigma * hw) / sch.alpha;
            whi = (x[i] + sch.sigma * hw) / sch.alpha;
        }
        const double lo = std::max(wlo, -0.5 * rb);
        const double hi = std::min(whi, 0.5 * rb);
        if (!(lo <= hi)) {
            if (empty_out) *empty_out = true;
            return 0.0;
        }
        const double lon = lo / rb + 0.5, hin = hi / rb + 0.5;
        const int v_first = std::max(1, int(std::floor(lon * g.N)) + 1);
        const int v_last = std::min(g.N, int(std::ceil(hin * g.N)));
        const double a = poly.strong ? ks / rb : sch.sigma / (sch.alpha * rb);
        const double pref = poly.strong ? kInvSqrt2Pi : kInvSqrt2Pi / sch.alpha;
        AxisTable& ax = axes[i];
        std::vector<double> up_lo(max_pow + 1), up_hi(max_pow + 1);
        std::vector<double> apow(k1 + 1), cpow(k1 + 1);
        for (int v = v_first; v <= v_last; ++v) {
            const double cell_lo = rb * ((v - 1.0) / g.N - 0.5);
            const double cell_hi = rb * (double(v) / g.N - 0.5);
            const double rlo = std::max(cell_lo, lo);
            const double rhi = std::min(cell_hi, hi);
            if (!(rlo < rhi)) continue;
            double u_lo, u_hi;
            if (poly.strong) {
                u_lo = (rlo - kc * x[i]) / ks;
                u_hi = (rhi - kc * x[i]) / ks;
            } else {
                u_lo = (sch.alpha * rlo - x[i]) / sch.sigma;
                u_hi = (sch.alpha * rhi - x[i]) / sch.sigma;
            }
            up_lo[0] = up_hi[0] = 1.0;
            for (int p = 1; p <= max_pow; ++p) {
                up_lo[p] = up_lo[p - 1] * u_lo;
                up_hi[p] = up_hi[p - 1] * u_hi;
            }
            const double c = (poly.strong ? kc * x[i] / rb : x[i] / (sch.alpha * rb)) + 0.5 -
                             double(v) / g.N;
            apow[0] = cpow[0] = 1.0;
            for (int p = 1; p <= k1; ++p) {
                apow[p] = apow[p - 1] * a;
                cpow[p] = cpow[p - 1] * c;
            }
            std::vector<std::array<double, 2>> mom(k1 + 1, {0.0, 0.0});
            for (int n = 0; n <= k1; ++n) {
                for (int e = 0; e < 2; ++e) {
                    double total = 0.0;
                    double cm = 1.0;  // (-1/2)^m / m!
                    for (int m = 0; m <= k2; ++m) {
                        double inner = 0.0;
                        for (int k = 0; k <= n; ++k) {
                            const int p = k + 2 * m + e + 1;
                            inner += binom(n, k) * apow[k] * cpow[n - k] *
                                     (up_hi[p] - up_lo[p]) / p;
                        }
                        total += cm * inner;
                        cm *= -0.5 / (m + 1);
                    }
                    mom[n][e] = pref * total;
                }
            }
            ax.cells.push_back(v);
            ax.moments.push_back(std::move(mom));
        }
        if (ax.cells.empty()) return 0.0;
    }

    std::vector<YAxisTable> yaxes(g.d_y);
    for (int j = 0; j < g.d_y; ++j) {
        const int base = int(std::floor(y[j] * g.N));
        for (int w = std::max(0, base - 1); w <= std::min(g.N, base + 1); ++w) {
            const double delta = y[j] - double(w) / g.N;
            const double phi = trapezoid(3.0 * g.N * delta);
            if (phi > 0.0) {
                yaxes[j].nodes.push_back(w);
                yaxes[j].phi.push_back(phi);
                yaxes[j].delta.push_back(delta);
            }
        }
        if (yaxes[j].nodes.empty()) return 0.0;
    }

    const std::size_t n_mono = poly.monomials.size();
    const std::size_t nyc = pow_sz(g.N + 1, g.d_y);
    std::vector<std::size_t> xstride(g.d_x), ystride(g.d_y);
    {
        std::size_t s = 1;
        for (int i = g.d_x - 1; i >= 0; --i) {
            xstride[i] = s;
            s *= std::size_t(g.N);
        }
        s = 1;
        for (int j = g.d_y - 1; j >= 0; --j) {
            ystride[j] = s;
            s *= std::size_t(g.N + 1);
        }
    }

    double f1 = 0.0;
    std::vector<int> iv(g.d_x, 0), iw(g.d_y, 0);
    bool more_v = true;
    while (more_v) {
        std::size_t v_flat = 0;
        for (int i = 0; i < g.d_x; ++i) v_flat += std::size_t(axes[i].cells[iv[i]] - 1) * xstride[i];
        std::fill(iw.begin(), iw.end(), 0);
        bool more_w = true;
        while (more_w) {
            std::size_t w_flat = 0;
            double phi_prod = 1.0;
            for (int j = 0; j < g.d_y; ++j) {
                w_flat += std::size_t(yaxes[j].nodes[iw[j]]) * ystride[j];
                phi_prod *= yaxes[j].phi[iw[j]];
            }
            const double* slot = poly.coeffs.data() + (v_flat * nyc + w_flat) * n_mono;
            for (std::size_t m = 0; m < n_mono; ++m) {
                double term = slot[m];
                if (term == 0.0) continue;
                const auto& mono = poly.monomials[m];
                term *= phi_prod;
                for (int j = 0; j < g.d_y; ++j) {
                    const int p = mono[g.d_x + j];
                    if (p > 0) term *= std::pow(yaxes[j].delta[iw[j]], p);
                }
                double prod0 = 1.0;
                for (int i = 0; i < g.d_x; ++i) prod0 *= axes[i].moments[iv[i]][mono[i]][0];
                f1 += term * prod0;
                if (f2_out) {
                    for (int slot_i = 0; slot_i < g.d_x; ++slot_i) {
                        double p = 1.0;
                        for (int i = 0; i < g.d_x; ++i)
                            p *= axes[i].moments[iv[i]][mono[i]][i == slot_i ? 1 : 0];
                        (*f2_out)[slot_i] += term * p;
                    }
                }
            }
            if (g.d_y == 0) break;
            more_w = false;
            for (int j = g.d_y - 1; j >= 0; --j) {
                if (iw[j] + 1 < int(yaxes[j].nodes.size())) {
                    ++iw[j];
                    for (int j2 = j + 1; j2 < g.d_y; ++j2) iw[j2] = 0;
                    more_w = true;
                    break;
                }
            }
        }
        more_v = false;
        for (int i = g.d_x - 1; i >= 0; --i) {
            if (iv[i] + 1 < int(axes[i].cells.size())) {
                ++iv[i];
                for (int i2 = i + 1; i2 < g.d_x; ++i2) iv[i2] = 0;
                more_v = true;
                break;
            }
        }
    }
    return f1;
}

}  // namespace

void HolderParams::validate() const {
    if (!(beta > 0.0) || !std::isfinite(beta))
        throw std::invalid_argument("HolderParams: need beta > 0");
    if (k1 != int(std::floor(beta)))
        throw std::invalid_argument("HolderParams: need k1 = floor(beta)");
    if (k2 < 1) throw std::invalid_argument("HolderParams: need k2 >= 1");
    if (!(B_est >= 0.0)) throw std::invalid_argument("HolderParams: need B_est >= 0");
}

HolderParams make_holder(double beta, int N) {
    if (!(beta > 0.0)) throw std::invalid_argument("make_holder: need beta > 0");
    if (N < 2) throw std::invalid_argument("make_holder: need N >= 2");
    HolderParams h;
    h.beta = beta;
    h.k1 = int(std::floor(beta));
    h.k2 = std::min(20, int(std::ceil(std::max(beta * std::log(double(N)), 3.0))));
    h.B_est = 0.0;
    return h;
}

double GridSpec::half_width() const { return C_x * std::sqrt(std::log(double(N))); }

double GridSpec::box_width() const { return 2.0 * half_width(); }

void GridSpec::validate() const {
    if (N < 2) throw std::invalid_argument("GridSpec: need N >= 2");
    if (!(C_x > 0.0) || !std::isfinite(C_x)) throw std::invalid_argument("GridSpec: need C_x > 0");
    if (d_x < 1) throw std::invalid_argument("GridSpec: need d_x >= 1");
    if (d_y < 0) throw std::invalid_argument("GridSpec: need d_y >= 0");
}

bool Box::empty() const {
    for (std::size_t i = 0; i < lo.size(); ++i)
        if (lo[i] > hi[i]) return true;
    return false;
}

Box clip_domain(const Vec& x, const GridSpec& grid, double t) {
    grid.validate();
    require_time(t);
    if (int(x.size()) != grid.d_x) throw std::invalid_argument("clip_domain: x has wrong size");
    const ScheduleValue sch = noise_schedule(t);
    const double hw = grid.half_width();
    Box box;
    box.lo.resize(grid.d_x);
    box.hi.resize(grid.d_x);
    for (int i = 0; i < grid.d_x; ++i) {
        box.lo[i] = std::max((x[i] - sch.sigma * hw) / sch.alpha, -hw);
        box.hi[i] = std::min((x[i] + sch.sigma * hw) / sch.alpha, hw);
    }
    return box;
}

double trapezoid(double a) {
    a = std::abs(a);
    if (a <= 1.0) return 1.0;
    if (a <= 2.0) return 2.0 - a;
    return 0.0;
}

std::size_t DiffusedPoly::x_cells() const { return pow_sz(grid.N, grid.d_x); }

std::size_t DiffusedPoly::y_cells() const { return pow_sz(grid.N + 1, grid.d_y); }

double DiffusedPoly::coeff_at(const std::vector<int>& v, const std::vector<int>& w,
                              const std::vector<int>& mono) const {
    if (int(v.size()) != grid.d_x || int(w.size()) != grid.d_y)
        throw std::invalid_argument("coeff_at: wrong index rank");
    std::size_t v_flat = 0, w_flat = 0;
    for (int i = 0; i < grid.d_x; ++i) {
        if (v[i] < 1 || v[i] > grid.N) throw std::out_of_range("coeff_at: x cell out of range");
        v_flat = v_flat * grid.N + std::size_t(v[i] - 1);
    }
    for (int j = 0; j < grid.d_y; ++j) {
        if (w[j] < 0 || w[j] > grid.N) throw std::out_of_range("coeff_at: y node out of range");
        w_flat = w_flat * (grid.N + 1) + std::size_t(w[j]);
    }
    for (std::size_t m = 0; m < monomials.size(); ++m) {
        if (monomials[m] == mono) return coeffs[(v_flat * y_cells() + w_flat) * monomials.size() + m];
    }
    throw std::out_of_range("coeff_at: monomial not in table");
}

DiffusedPoly taylor_table(const ConditionalFamily& family, const GridSpec& grid,
                          const HolderParams& holder) {
    if (family.dim_x() != grid.d_x || family.dim_y() != grid.d_y)
        throw std::invalid_argument("taylor_table: grid does not match family dimensions");
    const double step = 1e-3 * std::min(grid.box_width(), 1.0) / grid.N;
    DerivFn deriv = [&family, step](const Vec& x, const Vec& y, const std::vector<int>& nx,
                                    const std::vector<int>& ny) {
        return family.density0_partial(x, y, nx, ny, step);
    };
    return build_table(grid, holder, deriv, false, 1.0, family.content_hash());
}

DiffusedPoly taylor_table_strong(const StrongHolderFamily& family, const GridSpec& grid,
                                 const HolderParams& holder) {
    if (family.dim_x() != grid.d_x || family.dim_y() != grid.d_y)
        throw std::invalid_argument("taylor_table: grid does not match family dimensions");
    const double hx = 1e-3 * grid.box_width() / grid.N;
    const double hy = 1e-3 / grid.N;
    DerivFn deriv = [&family, hx, hy](const Vec& x, const Vec& y, const std::vector<int>& nx,
                                      const std::vector<int>& ny) {
        return fd_partial(family, x, y, nx, ny, hx, hy);
    };
    return build_table(grid, holder, deriv, true, family.C2, family.content_hash());
}

double f1_eval(const DiffusedPoly& poly, const Vec& x, const Vec& y, double t) {
    return eval_core(poly, x, y, t, nullptr, nullptr);
}

Vec f2_eval(const DiffusedPoly& poly, const Vec& x, const Vec& y, double t) {
    Vec f2;
    eval_core(poly, x, y, t, &f2, nullptr);
    return f2;
}

void ScoreAssemblyConfig::validate() const {
    if (!(eps_low > 0.0) || !std::isfinite(eps_low))
        throw std::invalid_argument("ScoreAssemblyConfig: need eps_low > 0");
    if (!(k_cap > 0.0) || !std::isfinite(k_cap))
        throw std::invalid_argument("ScoreAssemblyConfig: need k_cap > 0");
}

ScoreAssemblyConfig make_assembly_config(const ConditionalFamily& family, const GridSpec& grid,
                                         const HolderParams& holder, double t, double K) {
    grid.validate();
    holder.validate();
    require_time(t);
    const double rb = grid.box_width();
    double min_density = std::numeric_limits<double>::infinity();
    std::vector<int> v(grid.d_x, 1), w(grid.d_y, 0);
    Vec xg(grid.d_x), yg(grid.d_y);
    do {
        for (int i = 0; i < grid.d_x; ++i) xg[i] = rb * (double(v[i]) / grid.N - 0.5);
        std::fill(w.begin(), w.end(), 0);
        do {
            for (int j = 0; j < grid.d_y; ++j) yg[j] = double(w[j]) / grid.N;
            min_density = std::min(min_density, family.density0(xg, yg));
        } while (grid.d_y > 0 && advance(w, 0, grid.N));
    } while (advance(v, 1, grid.N));

    const double logn = std::log(double(grid.N));
    ScoreAssemblyConfig cfg;
    cfg.eps_low = 0.5 * min_density * std::pow(double(grid.N), -holder.beta) *
                  std::pow(logn, 0.5 * (grid.d_x + holder.k1));
    const ScheduleValue sch = noise_schedule(t);
    cfg.k_cap = K * (grid.C_x * std::sqrt(grid.d_x * logn) + 1.0) / (sch.sigma * sch.sigma);
    cfg.validate();
    return cfg;
}

Vec assemble_generic(double f1, const Vec& f2, double t, const ScoreAssemblyConfig& cfg) {
    cfg.validate();
    require_time(t);
    const ScheduleValue sch = noise_schedule(t);
    const double den = sch.sigma * std::max(f1, cfg.eps_low);
    Vec out(f2.size());
    for (std::size_t i = 0; i < f2.size(); ++i) {
        const double s = f2[i] / den;
        out[i] = std::clamp(s, -cfg.k_cap, cfg.k_cap);
    }
    return out;
}

Vec generic_score(const DiffusedPoly& poly, const Vec& x, const Vec& y, double t,
                  const ScoreAssemblyConfig& cfg) {
    if (poly.strong)
        throw std::invalid_argument("generic_score: table was built for the smooth factor");
    Vec f2;
    bool outside = false;
    const double f1 = eval_core(poly, x, y, t, &f2, &outside);
    if (!outside) return assemble_generic(f1, f2, t, cfg);

    // unreachable point: keep the cap but take signs from the box edge,
    // pulled in far enough that the edge window still spans half a cell
    const ScheduleValue sch = noise_schedule(t);
    const double hw = poly.grid.half_width();
    const double limit = (sch.alpha + sch.sigma) * hw - sch.alpha * hw / poly.grid.N;
    Vec xe(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) xe[i] = std::clamp(x[i], -limit, limit);
    Vec f2e;
    eval_core(poly, xe, y, t, &f2e, nullptr);
    Vec out(x.size(), 0.0);
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (f2e[i] > 0.0) out[i] = cfg.k_cap;
        else if (f2e[i] < 0.0) out[i] = -cfg.k_cap;
    }
    return out;
}

StrongDecomp hat_coeffs(double t, double c2) {
    if (!(t >= 0.0) || !std::isfinite(t)) throw std::invalid_argument("hat_coeffs: need t >= 0");
    if (!(c2 > 0.0)) throw std::invalid_argument("hat_coeffs: need C2 > 0");
    const ScheduleValue sch = noise_schedule(t);
    const double denom = sch.alpha * sch.alpha + c2 * sch.sigma * sch.sigma;
    StrongDecomp d;
    d.c2 = c2;
    d.t = t;
    d.hat_alpha = sch.alpha / denom;
    d.hat_sigma = sch.sigma / std::sqrt(denom);
    return d;
}

Vec assemble_strong(const Vec& x, double f1_h, const Vec& f2_h, const StrongDecomp& decomp) {
    require_time(decomp.t);
    if (x.size() != f2_h.size()) throw std::invalid_argument("assemble_strong: size mismatch");
    if (!(f1_h > 0.0))
        throw std::runtime_error(
            "assemble_strong: smooth-factor estimate is not positive; refine the grid");
    const ScheduleValue sch = noise_schedule(decomp.t);
    const double denom = sch.alpha * sch.alpha + decomp.c2 * sch.sigma * sch.sigma;
    const double ratio = decomp.hat_alpha / decomp.hat_sigma;
    Vec out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i)
        out[i] = -decomp.c2 * x[i] / denom + ratio * f2_h[i] / f1_h;
    return out;
}

Vec strong_score(const DiffusedPoly& poly, const Vec& x, const Vec& y, double t) {
    if (!poly.strong)
        throw std::invalid_argument("strong_score: table was built for the raw density");
    Vec f2;
    const double f1 = eval_core(poly, x, y, t, &f2, nullptr);
    return assemble_strong(x, f1, f2, hat_coeffs(t, poly.strong_c2));
}

namespace {
constexpr char kPolyMagic[8] = {'D', 'L', 'P', 'O', 'L', 'Y', '0', '1'};
}

void save_poly(const DiffusedPoly& poly, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("save_poly: cannot open " + path);
    os.write(kPolyMagic, 8);
    put_u64(os, poly.family_hash);
    put_u64(os, std::uint64_t(poly.grid.N));
    put_f64(os, poly.grid.C_x);
    put_u64(os, std::uint64_t(poly.grid.d_x));
    put_u64(os, std::uint64_t(poly.grid.d_y));
    put_f64(os, poly.holder.beta);
    put_u64(os, std::uint64_t(poly.holder.k1));
    put_u64(os, std::uint64_t(poly.holder.k2));
    put_f64(os, poly.holder.B_est);
    put_u64(os, poly.strong ? 1 : 0);
    put_f64(os, poly.strong_c2);
    put_u64(os, poly.monomials.size());
    for (const auto& m : poly.monomials)
        for (int n : m) put_u64(os, std::uint64_t(n));
    put_u64(os, poly.coeffs.size());
    put_doubles(os, poly.coeffs.data(), poly.coeffs.size());
    if (!os) throw std::runtime_error("save_poly: write failed for " + path);
}

std::optional<DiffusedPoly> try_load_poly(const std::string& path, std::uint64_t family_hash,
                                          const GridSpec& grid, const HolderParams& holder,
                                          bool strong) {
    std::ifstream is(path, std::ios::binary);
    if (!is) return std::nullopt;
    try {
        char magic[8];
        is.read(magic, 8);
        if (!is || std::memcmp(magic, kPolyMagic, 8) != 0) return std::nullopt;
        DiffusedPoly poly;
        poly.family_hash = get_u64(is);
        poly.grid.N = int(get_u64(is));
        poly.grid.C_x = get_f64(is);
        poly.grid.d_x = int(get_u64(is));
        poly.grid.d_y = int(get_u64(is));
        poly.holder.beta = get_f64(is);
        poly.holder.k1 = int(get_u64(is));
        poly.holder.k2 = int(get_u64(is));
        poly.holder.B_est = get_f64(is);
        poly.strong = get_u64(is) != 0;
        poly.strong_c2 = get_f64(is);
        if (poly.family_hash != family_hash || poly.grid.N != grid.N ||
            poly.grid.C_x != grid.C_x || poly.grid.d_x != grid.d_x ||
            poly.grid.d_y != grid.d_y || poly.holder.beta != holder.beta ||
            poly.holder.k1 != holder.k1 || poly.holder.k2 != holder.k2 ||
            poly.strong != strong)
            return std::nullopt;
        const std::size_t n_mono = get_u64(is);
        const std::size_t expect =
            std::size_t(binom(grid.d_x + grid.d_y + holder.k1, holder.k1) + 0.5);
        if (n_mono != expect) return std::nullopt;
        poly.monomials.assign(n_mono, std::vector<int>(grid.d_x + grid.d_y));
        for (auto& m : poly.monomials)
            for (int& n : m) n = int(get_u64(is));
        const std::size_t n_coef = get_u64(is);
        if (n_coef != poly.x_cells() * poly.y_cells() * n_mono) return std::nullopt;
        poly.coeffs.resize(n_coef);
        get_doubles(is, poly.coeffs.data(), n_coef);
        is.peek();
        if (!is.eof()) return std::nullopt;
        return poly;
    } catch (const std::exception&) {
        return std::nullopt;
    }
}

}  // namespace difflab
