#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "difflab/linalg.hpp"
#include "difflab/schedule.hpp"
#include "difflab/targets.hpp"
#include "difflab/training.hpp"
#include "difflab/transformer.hpp"

namespace difflab {

// Norm-bound inputs for the covering-number calculator. The C_ fields bound
// the spectral and (2,inf) norms of the attention and feed-forward weights;
// they can come from a measured NormReport or be hypothetical.
struct CoverInputs {
    double eps_c = 0.0;  // covering radius
    double n = 0.0;      // sample count
    double L = 0.0;      // token count
    int d = 1;           // token dimension
    double R_T = 0.0;    // input truncation radius
    double C_F = 0.0;
    double C_F_2inf = 0.0;
    double C_OV = 0.0;
    double C_OV_2inf = 0.0;
    double C_KQ = 0.0;
    double C_KQ_2inf = 0.0;
    double C_E = 0.0;

    void validate() const;
};

// log covering number of the one-block transformer class:
//   (log(n L) / eps_c^2) * alpha^2 * S^3
// with alpha = C_F^2 C_OV (1 + 4 C_KQ) (R_T + C_E) and S the three-term sum
//   d^{2/3} C_F_2inf^{4/3}
//   + d^{2/3} (2 C_F^2 C_OV C_KQ_2inf)^{2/3}
//   + 2 (C_F^2 C_OV_2inf)^{2/3}.
double covering_bound(const CoverInputs& inp);

// classifier-free guidance: (1 + eta) s(x, y, t) - eta s(x, null, t);
// needs eta >= 0
Vec guided_score(const ScoreFn& score, const Vec& x, const Vec& y, double t, double eta);

struct TVReport {
    double tv = 0.0;
    int bins = 0;
    int samples_per_side = 0;  // smaller of the two sample counts
};

// Total-variation estimate: half the L1 distance between normalized
// histograms of the two sample sets on a shared bin grid spanning their joint
// range. Supports 1-D and 2-D samples; clamped to [0, 1].
TVReport tv_estimate(const std::vector<Vec>& a, const std::vector<Vec>& b, int bins);

// || W_U W_U^T - U U^T ||_F^2. Row counts must match; the column counts may
// differ since only the projectors are compared.
double subspace_error(const Mat& W_U, const Mat& U);

// One cell of a trend sweep. Exactly one of the two knobs is swept at a time;
// the other stays at its TrendConfig default.
struct TrendSetting {
    std::string name;  // CSV key, also salts the cell's random streams
    int d_x = 0;
    double t0 = 0.0;
};

// Training recipe shared by every sweep cell. The data distribution is d_x
// independent copies of the same two-component 1-D mixture (means at
// +-mix_shift plus cond_gain * y), so per-coordinate difficulty is constant
// and only the dimension changes across a d_x sweep.
struct TrendConfig {
    double t_max = 8.0;
    int d_y = 1;
    double mix_shift = 0.8;
    double mix_var = 1.0;
    double cond_gain = 0.5;
    int s = 4;
    int r = 16;
    int n_blocks = 1;
    double init_scale = 0.05;
    int n_train = 256;
    int batch = 32;
    double lr = 1e-3;
    int epochs = 20;
    double mask_prob = 0.15;
    int time_draws = 1;
    int n_test = 256;
    int risk_points = 512;
    std::uint64_t root_seed = 0;

    void validate() const;
};

// Loss, risk and stderr are reported per coordinate (divided by d_x) so cells
// of different dimension share a scale.
struct TrendCell {
    std::string setting;
    std::uint64_t seed = 0;
    double test_loss = 0.0;
    double risk = 0.0;
    double std_error = 0.0;  // held-out loss standard error
    double norm_WO_2inf = 0.0;
    double norm_WV_2inf = 0.0;
    bool ok = false;
    std::string status;  // "ok" or the abort reason
};

// Per-setting medians over the seeds that finished; std_error here is the
// across-seed standard error of the test loss.
struct TrendSummary {
    std::string setting;
    double test_loss = 0.0;
    double risk = 0.0;
    double std_error = 0.0;
    double norm_WO_2inf = 0.0;
    double norm_WV_2inf = 0.0;
    int cells = 0;
};

struct TrendTable {
    std::vector<TrendCell> cells;
    std::vector<TrendSummary> medians;
};

// token layout for a given input dimension: the divisor pair closest to a
// square, token dimension at least the sequence length
ReshapeSpec trend_layout(int d_x);

// One sweep cell: build the matched family at the cell's dimension, train a
// fresh model over (t0, t_max), and measure the held-out loss, oracle risk
// and weight norms. Aborts (divergence, errors) are recorded in `status`.
TrendCell run_trend_cell(const TrendSetting& setting, std::uint64_t seed, const TrendConfig& cfg);

// Per-setting medians over the ok cells. Exposed separately so callers that
// schedule cells themselves (e.g. across a worker pool) share the summary.
TrendTable summarize_trend(std::vector<TrendCell> cells, const std::vector<TrendSetting>& settings);

// needs settings.size() >= 3 and seeds.size() >= 3
TrendTable trend_experiment(const std::vector<TrendSetting>& settings,
                            const std::vector<std::uint64_t>& seeds, const TrendConfig& cfg);

// stable column order: setting, seed, test_loss, risk, stderr, norm_WO_2inf,
// norm_WV_2inf, status
std::string trend_csv(const TrendTable& table);
std::string trend_median_csv(const TrendTable& table);

}  // namespace difflab
