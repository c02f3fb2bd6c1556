#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "difflab/schedule.hpp"
#include "difflab/targets.hpp"
#include "difflab/transformer.hpp"

namespace difflab {

struct TrainConfig {
    int n = 0;      // training sample count
    int batch = 0;  // minibatch size
    double lr = 0.0;
    int epochs = 0;
    TimeWindow window{};
    double mask_prob = 0.5;  // probability the condition is dropped per draw
    int time_draws = 1;      // Monte-Carlo time draws per sample
    std::uint64_t seed = 0;

    void validate() const;
};

struct RiskReport {
    double risk = 0.0;
    int mc_points = 0;
    double std_error = 0.0;
};

// one sampled noising event; injectable so tests can pin the randomness
struct LossDraw {
    double t;
    bool masked;
    Vec eps;
};

// draw order per event: t uniform on (t0, T), mask Bernoulli(mask_prob),
// then the d_x-dimensional standard normal noise
std::vector<LossDraw> draw_loss_noise(int d_x, const TimeWindow& window, RngStream& rng,
                                      double mask_prob, int time_draws);

// squared-error regression of the score network onto the forward kernel score
// -eps/sigma_t at x_t = alpha_t x0 + sigma_t eps, averaged over the draws
double cfg_loss_with_draws(const ScoreFn& score, const Vec& x0, const Vec& y,
                           const std::vector<LossDraw>& draws);

double cfg_loss(const ScoreFn& score, const Vec& x0, const Vec& y, const TimeWindow& window,
                RngStream& rng, double mask_prob = 0.5, int time_draws = 1);

struct BlockGrads {
    Mat W_Q, W_K, W_V, W_O, W_1, W_2;
    Vec b_1, b_2;
    Mat E;
};

struct ModelGrads {
    Mat y_embed_W;
    Vec y_embed_b;
    Mat t_embed_W;
    Vec t_embed_b;
    Vec null_token;
    std::vector<BlockGrads> blocks;
    Mat head_W;
    Vec head_b;
    Mat W_U;  // empty for standard models
};

ModelGrads zero_grads(const DiTModel& model);
double grad_global_norm(const ModelGrads& g);
void scale_grads(ModelGrads& g, double c);
void apply_update(DiTModel& model, const ModelGrads& g, double lr);

using Sample = std::pair<Vec, Vec>;  // (x0, y)

struct GradResult {
    ModelGrads grads;
    double loss = 0.0;
};

// exact reverse-accumulation gradient of the mean batch loss; draws[i] are
// the noising events of batch[i]
GradResult gradients_with_draws(const DiTModel& model, const std::vector<Sample>& batch,
                                const std::vector<std::vector<LossDraw>>& draws);

GradResult gradients(const DiTModel& model, const std::vector<Sample>& batch,
                     const TimeWindow& window, RngStream& rng, double mask_prob = 0.5,
                     int time_draws = 1);

struct TrainResult {
    std::vector<double> epoch_loss;
    // training halts as soon as a batch loss exceeds 1e6 or stops being
    // finite; the trace up to and including the offending value survives
    bool diverged = false;
};

TrainResult train(DiTModel& model, const ConditionalFamily& family, const TrainConfig& cfg);

// Monte-Carlo estimate of the time-averaged squared score error against the
// family oracle; draw order per point: t, y, x0, forward noise
RiskReport score_risk(const ScoreFn& score, const ConditionalFamily& family,
                      const TimeWindow& window, int mc_points, RngStream& rng);

// same integrand gated by the sup-norm ball of radius r_trunc; infinity is a
// valid sentinel and reproduces score_risk bit for bit on a shared stream
RiskReport truncated_risk(const ScoreFn& score, const ConditionalFamily& family,
                          const TimeWindow& window, double r_trunc, int mc_points,
                          RngStream& rng);

}  // namespace difflab
