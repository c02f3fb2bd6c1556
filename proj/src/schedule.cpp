#include "difflab/schedule.hpp"

#include <cmath>
#include <string>

namespace difflab {

ScheduleValue noise_schedule(double t) {
    if (t < 0.0) throw std::invalid_argument("noise_schedule: negative time");
    // -expm1(-t) = 1 - e^{-t} without cancellation; the t0 sweeps go down to
    // t = 0.05 where the naive form loses digits.
    double var = -std::expm1(-t);
    return {std::exp(-0.5 * t), std::sqrt(var), t};
}

Vec kernel_score(const Vec& x_t, const Vec& x_0, double t) {
    if (x_t.size() != x_0.size()) throw std::invalid_argument("kernel_score: dimension mismatch");
    if (!(t > 0.0)) throw std::invalid_argument("kernel_score: t must be positive (sigma_t = 0)");
    ScheduleValue sv = noise_schedule(t);
    double inv_var = 1.0 / (sv.sigma * sv.sigma);
    Vec g(x_t.size());
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = -(x_t[i] - sv.alpha * x_0[i]) * inv_var;
    return g;
}

Vec forward_sample(const Vec& x_0, double t, RngStream& rng) {
    ScheduleValue sv = noise_schedule(t);
    Vec x(x_0.size());
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = sv.alpha * x_0[i] + sv.sigma * rng.normal();
    return x;
}

Vec backward_sample(const ScoreFn& score, const TimeWindow& window, const Cond& y, int d_x,
                    RngStream& rng) {
    window.validate();
    if (d_x < 1) throw std::invalid_argument("backward_sample: d_x must be positive");

    Vec x = rng.normal_vec(d_x);
    double h = (window.T - window.t0) / window.steps;
    double sqrt_h = std::sqrt(h);
    for (int k = 0; k < window.steps; ++k) {
        double s = window.T - k * h;  // forward time of the current state
        Vec sc = score(x, y, s);
        if (sc.size() != x.size())
            throw std::runtime_error("backward_sample: score dimension mismatch");
        for (std::size_t i = 0; i < x.size(); ++i) {
            if (!std::isfinite(sc[i]))
                throw std::runtime_error("backward_sample: non-finite score at step " +
                                         std::to_string(k) + " (forward time " +
                                         std::to_string(s) + ")");
            x[i] += h * (0.5 * x[i] + sc[i]) + sqrt_h * rng.normal();
        }
    }
    return x;
}

}  // namespace difflab
