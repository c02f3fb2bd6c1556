#include "difflab/targets.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <mutex>
#include <stdexcept>

#include "difflab/schedule.hpp"

namespace difflab {

namespace {

constexpr double kPi = 3.141592653589793238462643383279;

double log_sum_exp(const Vec& v) {
    double m = *std::max_element(v.begin(), v.end());
    if (!std::isfinite(m)) return m;
    double s = 0.0;
    for (double x : v) s += std::exp(x - m);
    return m + std::log(s);
}

void require_t_positive(double t) {
    if (!(t > 0.0)) throw std::invalid_argument("score: singular at t = 0, need t > 0");
}

std::uint64_t hash_doubles(std::uint64_t h, const double* p, std::size_t n) {
    return fnv1a64(p, n * sizeof(double), h);
}

// hat-transformed kernel parameters for the Gaussian-envelope decomposition;
// the public op lives in the local-polynomial module, this copy keeps the
// target families self-contained.
struct HatPair {
    double denom;  // alpha^2 + C2 sigma^2
    double hat_alpha;
    double hat_sigma;
};

HatPair hat_pair(double t, double c2) {
    ScheduleValue s = noise_schedule(t);
    double denom = s.alpha * s.alpha + c2 * s.sigma * s.sigma;
    return {denom, s.alpha / denom, s.sigma / std::sqrt(denom)};
}

}  // namespace

double ConditionalFamily::density0_partial(const Vec& x0, const Vec& y,
                                           const std::vector<int>& nx, const std::vector<int>& ny,
                                           double fd_step) const {
    if (int(nx.size()) != dim_x() || int(ny.size()) != dim_y())
        throw std::invalid_argument("density0_partial: order vector size mismatch");
    if (!(fd_step > 0.0)) throw std::invalid_argument("density0_partial: need a positive step");
    // peel one derivative order at a time with a central difference
    for (std::size_t i = 0; i < nx.size(); ++i) {
        if (nx[i] > 0) {
            auto lower = nx;
            lower[i] -= 1;
            Vec xp = x0, xm = x0;
            xp[i] += fd_step;
            xm[i] -= fd_step;
            return (density0_partial(xp, y, lower, ny, fd_step) -
                    density0_partial(xm, y, lower, ny, fd_step)) /
                   (2.0 * fd_step);
        }
    }
    for (std::size_t j = 0; j < ny.size(); ++j) {
        if (ny[j] > 0) {
            auto lower = ny;
            lower[j] -= 1;
            Vec yp = y, ym = y;
            yp[j] += fd_step;
            ym[j] -= fd_step;
            return (density0_partial(x0, yp, nx, lower, fd_step) -
                    density0_partial(x0, ym, nx, lower, fd_step)) /
                   (2.0 * fd_step);
        }
    }
    return density0(x0, y);
}

// ---------------------------------------------------------------- mixtures

GaussianMixtureFamily::GaussianMixtureFamily(int dx, int dy, std::vector<MixtureComponent> comps)
    : d_x(dx), d_y(dy), components(std::move(comps)) {
    if (dx < 1 || dy < 1) throw std::invalid_argument("GaussianMixtureFamily: bad dimensions");
    if (components.empty()) throw std::invalid_argument("GaussianMixtureFamily: no components");
    double wsum = 0.0;
    for (const auto& c : components) {
        if (!(c.variance > 0.0))
            throw std::invalid_argument("GaussianMixtureFamily: variance must be positive");
        if (c.mean_map.A.rows != dx || c.mean_map.A.cols != dy || int(c.mean_map.b.size()) != dx)
            throw std::invalid_argument("GaussianMixtureFamily: mean map shape mismatch");
        if (c.weight < 0.0) throw std::invalid_argument("GaussianMixtureFamily: negative weight");
        wsum += c.weight;
    }
    if (std::abs(wsum - 1.0) > 1e-9)
        throw std::invalid_argument("GaussianMixtureFamily: weights must sum to 1");
}

Vec GaussianMixtureFamily::sample_x0(const Vec& y, RngStream& rng) const {
    double u = rng.uniform();
    std::size_t k = 0;
    double acc = 0.0;
    for (; k < components.size(); ++k) {
        acc += components[k].weight;
        if (u < acc) break;
    }
    if (k == components.size()) k = components.size() - 1;
    const auto& c = components[k];
    Vec x = c.mean_map(y);
    double s = std::sqrt(c.variance);
    for (auto& v : x) v += s * rng.normal();
    return x;
}

namespace {

// log N(x; alpha*mu_k(y), (alpha^2 s_k^2 + sigma^2) I) for every component
void mixture_log_comps(const GaussianMixtureFamily& f, const Vec& x, const Vec& y, double alpha,
                       double sigma2, Vec& logp, std::vector<double>& vars, std::vector<Vec>& means) {
    logp.resize(f.components.size());
    vars.resize(f.components.size());
    means.resize(f.components.size());
    for (std::size_t k = 0; k < f.components.size(); ++k) {
        const auto& c = f.components[k];
        Vec m = c.mean_map(y);
        for (auto& v : m) v *= alpha;
        double var = alpha * alpha * c.variance + sigma2;
        double q = 0.0;
        for (int i = 0; i < f.d_x; ++i) q += (x[i] - m[i]) * (x[i] - m[i]);
        logp[k] = std::log(c.weight) - 0.5 * f.d_x * std::log(2.0 * kPi * var) - 0.5 * q / var;
        vars[k] = var;
        means[k] = std::move(m);
    }
}

}  // namespace

Vec GaussianMixtureFamily::score(const Vec& x, const Vec& y, double t) const {
    require_t_positive(t);
    ScheduleValue s = noise_schedule(t);
    Vec logp;
    std::vector<double> vars;
    std::vector<Vec> means;
    mixture_log_comps(*this, x, y, s.alpha, s.sigma * s.sigma, logp, vars, means);
    double lse = log_sum_exp(logp);
    Vec out(d_x, 0.0);
    for (std::size_t k = 0; k < components.size(); ++k) {
        double r = std::exp(logp[k] - lse);  // responsibility
        for (int i = 0; i < d_x; ++i) out[i] += r * (means[k][i] - x[i]) / vars[k];
    }
    return out;
}

double GaussianMixtureFamily::density(const Vec& x, const Vec& y, double t) const {
    if (t < 0.0) throw std::invalid_argument("density: negative time");
    ScheduleValue s = noise_schedule(t);
    Vec logp;
    std::vector<double> vars;
    std::vector<Vec> means;
    mixture_log_comps(*this, x, y, s.alpha, s.sigma * s.sigma, logp, vars, means);
    return std::exp(log_sum_exp(logp));
}

double GaussianMixtureFamily::density0(const Vec& x0, const Vec& y) const {
    return density(x0, y, 0.0);
}

double GaussianMixtureFamily::density0_partial(const Vec& x0, const Vec& y,
                                               const std::vector<int>& nx,
                                               const std::vector<int>& ny, double) const {
    if (int(nx.size()) != d_x || int(ny.size()) != d_y)
        throw std::invalid_argument("density0_partial: order vector size mismatch");
    // Every y-derivative enters through the component means, which are affine
    // in y, so d/dy_j = -sum_i A[i,j] d/dx_i on each Gaussian. Expanding those
    // directional derivatives leaves a weighted list of pure-x derivative
    // orders, each of which is a Hermite-recurrence closed form.
    double total = 0.0;
    for (const auto& c : components) {
        std::vector<std::pair<double, std::vector<int>>> terms{{1.0, nx}};
        for (int j = 0; j < d_y; ++j) {
            for (int rep = 0; rep < ny[j]; ++rep) {
                std::vector<std::pair<double, std::vector<int>>> next;
                next.reserve(terms.size() * d_x);
                for (const auto& [coef, ord] : terms) {
                    for (int i = 0; i < d_x; ++i) {
                        double a = c.mean_map.A(i, j);
                        if (a == 0.0) continue;
                        auto o2 = ord;
                        o2[i] += 1;
                        next.emplace_back(-a * coef, std::move(o2));
                    }
                }
                terms = std::move(next);
            }
        }
        Vec mu = c.mean_map(y);
        double s = std::sqrt(c.variance);
        // per-coordinate normal density values and Hermite polynomials
        double dens = 1.0;
        Vec z(d_x);
        for (int i = 0; i < d_x; ++i) {
            z[i] = (x0[i] - mu[i]) / s;
            dens *= std::exp(-0.5 * z[i] * z[i]) / (s * std::sqrt(2.0 * kPi));
        }
        for (const auto& [coef, ord] : terms) {
            double fac = 1.0;
            for (int i = 0; i < d_x; ++i) {
                int m = ord[i];
                if (m == 0) continue;
                // probabilists' Hermite He_m(z)
                double h0 = 1.0, h1 = z[i];
                for (int n = 1; n < m; ++n) {
                    double h2 = z[i] * h1 - n * h0;
                    h0 = h1;
                    h1 = h2;
                }
                double he = (m == 0) ? h0 : h1;
                fac *= ((m % 2) ? -1.0 : 1.0) * he / std::pow(s, m);
            }
            total += c.weight * coef * fac * dens;
        }
    }
    return total;
}

std::optional<std::pair<double, double>> GaussianMixtureFamily::tail_constants() const {
    // p_0(x|y) <= sum_k w_k (2 pi s_k^2)^{-d/2} exp(|mu|^2/(2 s_k^2)) exp(-|x|^2/(4 s_k^2))
    // via |x - mu|^2 >= |x|^2/2 - |mu|^2; mu ranges over an affine image of the
    // unit cube, so its norm is maximized at a vertex.
    double c2 = std::numeric_limits<double>::infinity();
    double c1 = 0.0;
    for (const auto& c : components) c2 = std::min(c2, 1.0 / (2.0 * c.variance));
    for (const auto& c : components) {
        double mu_max = 0.0;
        for (std::uint64_t mask = 0; mask < (1ull << d_y); ++mask) {
            Vec y(d_y);
            for (int j = 0; j < d_y; ++j) y[j] = (mask >> j) & 1 ? 1.0 : 0.0;
            mu_max = std::max(mu_max, norm2(c.mean_map(y)));
        }
        c1 += c.weight * std::pow(2.0 * kPi * c.variance, -0.5 * d_x) *
              std::exp(mu_max * mu_max / (2.0 * c.variance));
    }
    return std::make_pair(c1, c2);
}

std::uint64_t GaussianMixtureFamily::content_hash() const {
    std::uint64_t h = fnv1a64("gaussian-mixture");
    h = fnv1a64(&d_x, sizeof d_x, h);
    h = fnv1a64(&d_y, sizeof d_y, h);
    for (const auto& c : components) {
        h = hash_doubles(h, &c.weight, 1);
        h = hash_doubles(h, &c.variance, 1);
        h = hash_doubles(h, c.mean_map.A.a.data(), c.mean_map.A.a.size());
        h = hash_doubles(h, c.mean_map.b.data(), c.mean_map.b.size());
    }
    return h;
}

// ---------------------------------------------------------------- products

ProductMixtureFamily::ProductMixtureFamily(GaussianMixtureFamily base_family, int n_copies)
    : base(std::move(base_family)), copies(n_copies) {
    if (base.d_x != 1)
        throw std::invalid_argument("ProductMixtureFamily: base family must be one-dimensional");
    if (copies < 1) throw std::invalid_argument("ProductMixtureFamily: need at least one copy");
}

Vec ProductMixtureFamily::sample_x0(const Vec& y, RngStream& rng) const {
    Vec x(copies);
    for (int i = 0; i < copies; ++i) x[i] = base.sample_x0(y, rng)[0];
    return x;
}

Vec ProductMixtureFamily::score(const Vec& x, const Vec& y, double t) const {
    require_t_positive(t);
    Vec out(copies);
    for (int i = 0; i < copies; ++i) out[i] = base.score(Vec{x[i]}, y, t)[0];
    return out;
}

double ProductMixtureFamily::density(const Vec& x, const Vec& y, double t) const {
    double p = 1.0;
    for (int i = 0; i < copies; ++i) p *= base.density(Vec{x[i]}, y, t);
    return p;
}

double ProductMixtureFamily::density0(const Vec& x0, const Vec& y) const {
    return density(x0, y, 0.0);
}

std::optional<std::pair<double, double>> ProductMixtureFamily::tail_constants() const {
    auto base_tc = base.tail_constants();
    if (!base_tc) return std::nullopt;
    return std::make_pair(std::pow(base_tc->first, copies), base_tc->second);
}

std::uint64_t ProductMixtureFamily::content_hash() const {
    std::uint64_t h = fnv1a64("product-mixture");
    h = fnv1a64(&copies, sizeof copies, h);
    std::uint64_t bh = base.content_hash();
    return fnv1a64(&bh, sizeof bh, h);
}

// ------------------------------------------------------------ gauss-hermite

const std::pair<Vec, Vec>& gauss_hermite(int order) {
    static std::map<int, std::pair<Vec, Vec>> cache;
    static std::mutex mu;
    std::lock_guard<std::mutex> lock(mu);
    auto it = cache.find(order);
    if (it != cache.end()) return it->second;
    if (order < 1) throw std::invalid_argument("gauss_hermite: order must be positive");

    Vec x(order), w(order);
    const int m = (order + 1) / 2;
    double z = 0.0;
    for (int i = 0; i < m; ++i) {
        // standard initial guesses, largest root first
        if (i == 0)
            z = std::sqrt(2.0 * order + 1.0) - 1.85575 * std::pow(2.0 * order + 1.0, -1.0 / 6.0);
        else if (i == 1)
            z -= 1.14 * std::pow(double(order), 0.426) / z;
        else if (i == 2)
            z = 1.86 * z - 0.86 * x[0];
        else if (i == 3)
            z = 1.91 * z - 0.91 * x[1];
        else
            z = 2.0 * z - x[i - 2];

        double pp = 0.0;
        for (int iter = 0; iter < 100; ++iter) {
            // orthonormal Hermite recurrence, stable at order 64
            double p1 = std::pow(kPi, -0.25);
            double p2 = 0.0;
            for (int j = 0; j < order; ++j) {
                double p3 = p2;
                p2 = p1;
                p1 = z * std::sqrt(2.0 / (j + 1)) * p2 - std::sqrt(double(j) / (j + 1)) * p3;
            }
            pp = std::sqrt(2.0 * order) * p2;
            double dz = p1 / pp;
            z -= dz;
            if (std::abs(dz) < 1e-15) break;
        }
        x[i] = z;
        x[order - 1 - i] = -z;
        w[i] = 2.0 / (pp * pp);
        w[order - 1 - i] = w[i];
    }
    return cache.emplace(order, std::make_pair(std::move(x), std::move(w))).first->second;
}

// ------------------------------------------------------------- strong family

StrongHolderFamily::StrongHolderFamily(int dx, int dy, double c2, double c, double amp, Vec omegas)
    : d_x(dx), d_y(dy), C2(c2), base_c(c), amplitude(amp), omega(std::move(omegas)) {
    if (dx < 1 || dx > 2)
        throw std::invalid_argument("StrongHolderFamily: only d_x in {1,2} is supported");
    if (dy < 1) throw std::invalid_argument("StrongHolderFamily: bad d_y");
    if (!(c2 > 0.0)) throw std::invalid_argument("StrongHolderFamily: C2 must be positive");
    if (!(amp >= 0.0) || !(amp < c))
        throw std::invalid_argument("StrongHolderFamily: need 0 <= amplitude < C");
    if (int(omega.size()) != dx)
        throw std::invalid_argument("StrongHolderFamily: omega size mismatch");

    // Z(y) = z_const + z_mod * g(y), both by quadrature against the envelope
    const auto& [u, wq] = gauss_hermite(64);
    double scale = std::sqrt(2.0 / C2);
    double plain = 0.0;
    for (std::size_t j = 0; j < u.size(); ++j) plain += wq[j];
    plain *= scale;  // integral of exp(-C2 x^2/2) over one axis
    z_const = base_c * std::pow(plain, d_x);
    double mod = amplitude;
    for (int i = 0; i < d_x; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < u.size(); ++j) s += wq[j] * std::cos(omega[i] * scale * u[j]);
        mod *= scale * s;
    }
    z_mod = mod;
}

double StrongHolderFamily::g_value(const Vec& y) const {
    double g = 1.0;
    for (int j = 0; j < d_y; ++j) g *= std::cos(kPi * y[j]);
    return g;
}

double StrongHolderFamily::f_value(const Vec& x0, const Vec& y) const {
    double prod = 1.0;
    for (int i = 0; i < d_x; ++i) prod *= std::cos(omega[i] * x0[i]);
    return base_c + amplitude * prod * g_value(y);
}

double StrongHolderFamily::h_value(const Vec& x, const Vec& y, double t) const {
    HatPair hp = hat_pair(t, C2);
    const auto& [u, wq] = gauss_hermite(64);
    double step = std::sqrt(2.0) * hp.hat_sigma;
    // h = C + amplitude g(y) * prod_i E[cos(omega_i X_i)], X_i ~ N(hat_alpha x_i, hat_sigma^2)
    double prod = 1.0;
    for (int i = 0; i < d_x; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < u.size(); ++j)
            s += wq[j] * std::cos(omega[i] * (hp.hat_alpha * x[i] + step * u[j]));
        prod *= s / std::sqrt(kPi);
    }
    return base_c + amplitude * g_value(y) * prod;
}

Vec StrongHolderFamily::h_gradient(const Vec& x, const Vec& y, double t) const {
    HatPair hp = hat_pair(t, C2);
    const auto& [u, wq] = gauss_hermite(64);
    double step = std::sqrt(2.0) * hp.hat_sigma;
    // factor E[cos] per axis, and E[cos * (X - m)] for the differentiated axis
    Vec plain(d_x), weighted(d_x);
    for (int i = 0; i < d_x; ++i) {
        double s0 = 0.0, s1 = 0.0;
        for (std::size_t j = 0; j < u.size(); ++j) {
            double c = std::cos(omega[i] * (hp.hat_alpha * x[i] + step * u[j]));
            s0 += wq[j] * c;
            s1 += wq[j] * c * (step * u[j]);
        }
        plain[i] = s0 / std::sqrt(kPi);
        weighted[i] = s1 / std::sqrt(kPi);
    }
    Vec grad(d_x);
    double common = amplitude * g_value(y);
    double hs2 = hp.hat_sigma * hp.hat_sigma;
    for (int i = 0; i < d_x; ++i) {
        double prod = common;
        for (int j = 0; j < d_x; ++j) prod *= (j == i) ? weighted[j] : plain[j];
        grad[i] = prod * hp.hat_alpha / hs2;
    }
    return grad;
}

Vec StrongHolderFamily::score(const Vec& x, const Vec& y, double t) const {
    require_t_positive(t);
    HatPair hp = hat_pair(t, C2);
    double h = h_value(x, y, t);
    Vec gh = h_gradient(x, y, t);
    Vec out(d_x);
    for (int i = 0; i < d_x; ++i) out[i] = -C2 * x[i] / hp.denom + gh[i] / h;
    return out;
}

double StrongHolderFamily::density(const Vec& x, const Vec& y, double t) const {
    if (t < 0.0) throw std::invalid_argument("density: negative time");
    HatPair hp = hat_pair(t, C2);
    double q = sq_norm(x);
    double z = z_const + z_mod * g_value(y);
    return std::pow(hp.denom, -0.5 * d_x) * std::exp(-0.5 * C2 * q / hp.denom) *
           h_value(x, y, t) / z;
}

double StrongHolderFamily::density0(const Vec& x0, const Vec& y) const {
    double z = z_const + z_mod * g_value(y);
    return std::exp(-0.5 * C2 * sq_norm(x0)) * f_value(x0, y) / z;
}

Vec StrongHolderFamily::sample_x0(const Vec& y, RngStream& rng) const {
    // rejection from the Gaussian envelope; acceptance >= (C - amp)/(C + amp)
    double s = 1.0 / std::sqrt(C2);
    for (int iter = 0; iter < 100000; ++iter) {
        Vec x(d_x);
        for (auto& v : x) v = s * rng.normal();
        if (rng.uniform() * f_upper() < f_value(x, y)) return x;
    }
    throw std::runtime_error("StrongHolderFamily: rejection sampler stalled");
}

std::optional<std::pair<double, double>> StrongHolderFamily::tail_constants() const {
    double z_min = z_const - std::abs(z_mod);
    return std::make_pair(f_upper() / z_min, C2);
}

std::uint64_t StrongHolderFamily::content_hash() const {
    std::uint64_t h = fnv1a64("strong-holder");
    h = fnv1a64(&d_x, sizeof d_x, h);
    h = fnv1a64(&d_y, sizeof d_y, h);
    h = hash_doubles(h, &C2, 1);
    h = hash_doubles(h, &base_c, 1);
    h = hash_doubles(h, &amplitude, 1);
    h = hash_doubles(h, omega.data(), omega.size());
    return h;
}

// -------------------------------------------------------------- latent

LatentFamily::LatentFamily(Mat u, GaussianMixtureFamily latent_family)
    : U(std::move(u)), latent(std::move(latent_family)) {
    if (U.cols != latent.d_x)
        throw std::invalid_argument("LatentFamily: latent dimension mismatch");
    if (U.rows < U.cols) throw std::invalid_argument("LatentFamily: U must be tall");
    for (int a = 0; a < U.cols; ++a)
        for (int b = 0; b < U.cols; ++b) {
            double s = 0.0;
            for (int i = 0; i < U.rows; ++i) s += U(i, a) * U(i, b);
            if (std::abs(s - (a == b ? 1.0 : 0.0)) > 1e-10)
                throw std::invalid_argument("LatentFamily: columns of U are not orthonormal");
        }
}

Vec LatentFamily::sample_x0(const Vec& y, RngStream& rng) const {
    Vec h = latent.sample_x0(y, rng);
    return matvec(U, h);
}

Vec LatentFamily::score(const Vec& x, const Vec& y, double t) const {
    require_t_positive(t);
    ScheduleValue s = noise_schedule(t);
    Vec xp = matvec_t(U, x);
    Vec sh = latent.score(xp, y, t);
    Vec out = matvec(U, sh);
    Vec back = matvec(U, xp);  // U U^T x
    double inv = 1.0 / (s.sigma * s.sigma);
    for (int i = 0; i < U.rows; ++i) out[i] -= (x[i] - back[i]) * inv;
    return out;
}

double LatentFamily::density(const Vec& x, const Vec& y, double t) const {
    require_t_positive(t);  // degenerate (singular) at t = 0
    ScheduleValue s = noise_schedule(t);
    double s2 = s.sigma * s.sigma;
    int dx = U.rows, d0 = U.cols;
    Vec xp = matvec_t(U, x);
    double perp2 = sq_norm(x) - sq_norm(xp);
    perp2 = std::max(perp2, 0.0);
    // component covariances are sigma^2 I + alpha^2 s_k^2 U U^T: isotropic in
    // the orthogonal complement, inflated along the latent subspace
    Vec logp(latent.components.size());
    for (std::size_t k = 0; k < latent.components.size(); ++k) {
        const auto& c = latent.components[k];
        Vec m = c.mean_map(y);
        double vpar = s.alpha * s.alpha * c.variance + s2;
        double q = perp2 / s2;
        for (int i = 0; i < d0; ++i) {
            double diff = xp[i] - s.alpha * m[i];
            q += diff * diff / vpar;
        }
        double logdet = (dx - d0) * std::log(s2) + d0 * std::log(vpar);
        logp[k] = std::log(c.weight) - 0.5 * (dx * std::log(2.0 * kPi) + logdet + q);
    }
    return std::exp(log_sum_exp(logp));
}

double LatentFamily::density0(const Vec&, const Vec&) const {
    throw std::runtime_error("LatentFamily: clean-data density is singular on the subspace");
}

std::optional<std::pair<double, double>> LatentFamily::tail_constants() const {
    return std::nullopt;
}

std::uint64_t LatentFamily::content_hash() const {
    std::uint64_t h = fnv1a64("latent-subspace");
    h = hash_doubles(h, U.a.data(), U.a.size());
    std::uint64_t lh = latent.content_hash();
    return fnv1a64(&lh, sizeof lh, h);
}

// ----------------------------------------------------------------- free ops

std::pair<Vec, Vec> sample_pair(const ConditionalFamily& family, RngStream& rng) {
    Vec y = rng.uniform_vec(family.dim_y());
    Vec x0 = family.sample_x0(y, rng);
    return {std::move(x0), std::move(y)};
}

Vec oracle_score(const ConditionalFamily& family, const Vec& x, const Vec& y, double t) {
    if (int(x.size()) != family.dim_x() || int(y.size()) != family.dim_y())
        throw std::invalid_argument("oracle_score: dimension mismatch");
    return family.score(x, y, t);
}

double oracle_density(const ConditionalFamily& family, const Vec& x, const Vec& y, double t) {
    if (int(x.size()) != family.dim_x() || int(y.size()) != family.dim_y())
        throw std::invalid_argument("oracle_density: dimension mismatch");
    return family.density(x, y, t);
}

}  // namespace difflab
