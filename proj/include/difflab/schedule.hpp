#pragma once

#include <functional>
#include <optional>

#include "difflab/linalg.hpp"
#include "difflab/rng.hpp"

namespace difflab {

// Forward noising follows the variance-preserving Ornstein-Uhlenbeck process
// dX = -X/2 dt + dW, whose marginal at time t is N(alpha_t x_0, sigma_t^2 I)
// with alpha_t = exp(-t/2) and sigma_t^2 = 1 - exp(-t).

struct ScheduleValue {
    double alpha;
    double sigma;
    double t;
};

struct TimeWindow {
    double t0;   // early-stopping time, > 0
    double T;    // terminal time, > t0
    int steps;   // backward discretization steps, >= 1

    void validate() const {
        if (!(t0 > 0.0) || !(T > t0) || steps < 1)
            throw std::invalid_argument("TimeWindow: need 0 < t0 < T and steps >= 1");
    }
};

// Conditioning label. Empty optional means the unconditional branch (the
// masked case of classifier-free guidance).
using Cond = std::optional<Vec>;

// score(x, y, t) with t the forward time; shared by samplers, training and
// evaluation so there is a single time convention in the code base.
using ScoreFn = std::function<Vec(const Vec&, const Cond&, double)>;

ScheduleValue noise_schedule(double t);

Vec kernel_score(const Vec& x_t, const Vec& x_0, double t);

Vec forward_sample(const Vec& x_0, double t, RngStream& rng);

// Euler-Maruyama for the time-reversed process
//   dXr = [Xr/2 + score(Xr, y, T - t)] dt + dWbar
// integrated from t=0 (where Xr ~ N(0,I)) down to forward time t0, with
// uniform step (T - t0)/steps. Returns the terminal state.
Vec backward_sample(const ScoreFn& score, const TimeWindow& window, const Cond& y, int d_x,
                    RngStream& rng);

}  // namespace difflab
