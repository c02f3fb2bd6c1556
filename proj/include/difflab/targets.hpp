#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <utility>
#include <vector>

#include "difflab/linalg.hpp"
#include "difflab/rng.hpp"

namespace difflab {

struct AffineMap {
    Mat A;  // m x d_y
    Vec b;  // m

    Vec operator()(const Vec& y) const {
        Vec out = matvec(A, y);
        add_scaled(out, b, 1.0);
        return out;
    }
};

struct MixtureComponent {
    double weight;
    AffineMap mean_map;  // y -> component mean in R^{d_x}
    double variance;     // isotropic
};

// A synthetic conditional data distribution with an exact sampler, an
// analytic time-t density under the forward noising process, and the exact
// conditional score. Every stochastic query is driven by a caller-owned
// stream, so families are immutable and freely shared across workers.
struct ConditionalFamily {
    virtual ~ConditionalFamily() = default;

    virtual int dim_x() const = 0;
    virtual int dim_y() const = 0;

    virtual Vec sample_x0(const Vec& y, RngStream& rng) const = 0;

    // exact grad_x log p_t(x|y); t > 0
    virtual Vec score(const Vec& x, const Vec& y, double t) const = 0;

    // exact p_t(x|y)
    virtual double density(const Vec& x, const Vec& y, double t) const = 0;

    // clean-data conditional density p_0(x0|y)
    virtual double density0(const Vec& x0, const Vec& y) const = 0;

    // d^{|nx|+|ny|} p_0 / dx^{nx} dy^{ny}. The base implementation nests
    // central differences with the given step; mixtures override it with the
    // closed form.
    virtual double density0_partial(const Vec& x0, const Vec& y, const std::vector<int>& nx,
                                    const std::vector<int>& ny, double fd_step) const;

    // (C1, C2) with p_0(x|y) <= C1 exp(-C2 |x|^2 / 2) when such an envelope
    // exists for the family.
    virtual std::optional<std::pair<double, double>> tail_constants() const = 0;

    virtual std::uint64_t content_hash() const = 0;
};

struct GaussianMixtureFamily : ConditionalFamily {
    int d_x;
    int d_y;
    std::vector<MixtureComponent> components;

    GaussianMixtureFamily(int dx, int dy, std::vector<MixtureComponent> comps);

    int dim_x() const override { return d_x; }
    int dim_y() const override { return d_y; }
    Vec sample_x0(const Vec& y, RngStream& rng) const override;
    Vec score(const Vec& x, const Vec& y, double t) const override;
    double density(const Vec& x, const Vec& y, double t) const override;
    double density0(const Vec& x0, const Vec& y) const override;
    double density0_partial(const Vec& x0, const Vec& y, const std::vector<int>& nx,
                            const std::vector<int>& ny, double fd_step) const override;
    std::optional<std::pair<double, double>> tail_constants() const override;
    std::uint64_t content_hash() const override;
};

// d_x independent copies of a one-dimensional mixture, all conditioned on
// the same y. Keeps per-coordinate difficulty constant while the overall
// dimension sweeps, which is what the dimension-trend experiment needs.
struct ProductMixtureFamily : ConditionalFamily {
    GaussianMixtureFamily base;  // base.d_x == 1
    int copies;

    ProductMixtureFamily(GaussianMixtureFamily base_family, int n_copies);

    int dim_x() const override { return copies; }
    int dim_y() const override { return base.d_y; }
    Vec sample_x0(const Vec& y, RngStream& rng) const override;
    Vec score(const Vec& x, const Vec& y, double t) const override;
    double density(const Vec& x, const Vec& y, double t) const override;
    double density0(const Vec& x0, const Vec& y) const override;
    std::optional<std::pair<double, double>> tail_constants() const override;
    std::uint64_t content_hash() const override;
};

// p_0(x0|y) = exp(-C2 |x0|^2 / 2) f(x0, y) / Z(y) with the smooth bounded
// perturbation f(x0, y) = C + amplitude * prod_i cos(omega_i x0_i) * g(y),
// g(y) = prod_j cos(pi y_j) and amplitude < C. The normalization splits as
// Z(y) = z_const + z_mod * g(y); both pieces are computed once at
// construction by Gauss-Hermite quadrature and cached.
struct StrongHolderFamily : ConditionalFamily {
    int d_x;  // 1 or 2
    int d_y;
    double C2;
    double base_c;
    double amplitude;
    Vec omega;

    double z_const = 0.0;
    double z_mod = 0.0;

    StrongHolderFamily(int dx, int dy, double c2, double c, double amp, Vec omegas);

    double f_value(const Vec& x0, const Vec& y) const;
    double g_value(const Vec& y) const;

    // h(x,y,t) = integral of f(x0,y) against N(x0; hat_alpha x, hat_sigma^2 I),
    // and its x-gradient; both by Gauss-Hermite quadrature (64 nodes per axis).
    double h_value(const Vec& x, const Vec& y, double t) const;
    Vec h_gradient(const Vec& x, const Vec& y, double t) const;

    // pointwise bounds on f: (C - amplitude, C + amplitude)
    double f_lower() const { return base_c - amplitude; }
    double f_upper() const { return base_c + amplitude; }

    int dim_x() const override { return d_x; }
    int dim_y() const override { return d_y; }
    Vec sample_x0(const Vec& y, RngStream& rng) const override;
    Vec score(const Vec& x, const Vec& y, double t) const override;
    double density(const Vec& x, const Vec& y, double t) const override;
    double density0(const Vec& x0, const Vec& y) const override;
    std::optional<std::pair<double, double>> tail_constants() const override;
    std::uint64_t content_hash() const override;
};

// x0 = U h with U column-orthonormal and h from a mixture over R^{d_0}.
struct LatentFamily : ConditionalFamily {
    Mat U;  // d_x x d_0, orthonormal columns to 1e-10
    GaussianMixtureFamily latent;

    LatentFamily(Mat u, GaussianMixtureFamily latent_family);

    int dim_x() const override { return U.rows; }
    int dim_y() const override { return latent.d_y; }
    Vec sample_x0(const Vec& y, RngStream& rng) const override;
    Vec score(const Vec& x, const Vec& y, double t) const override;
    double density(const Vec& x, const Vec& y, double t) const override;
    double density0(const Vec& x0, const Vec& y) const override;
    std::optional<std::pair<double, double>> tail_constants() const override;
    std::uint64_t content_hash() const override;
};

// Draws y uniform on [0,1]^{d_y}, then x_0 from the family conditional law.
std::pair<Vec, Vec> sample_pair(const ConditionalFamily& family, RngStream& rng);

Vec oracle_score(const ConditionalFamily& family, const Vec& x, const Vec& y, double t);

double oracle_density(const ConditionalFamily& family, const Vec& x, const Vec& y, double t);

// Gauss-Hermite nodes/weights for integrals against exp(-u^2); computed by
// Newton iteration on the recurrence and cached per order.
const std::pair<Vec, Vec>& gauss_hermite(int order);

}  // namespace difflab
