#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "difflab/linalg.hpp"
#include "difflab/rng.hpp"
#include "difflab/schedule.hpp"

namespace difflab {

// column-major patching: column l of the d x L matrix holds the contiguous
// slice x[l*d .. l*d + d - 1]
struct ReshapeSpec {
    int d_x = 0;
    int d = 0;
    int L = 0;

    void validate() const;
};

Mat reshape(const Vec& x, const ReshapeSpec& spec);
Vec unreshape(const Mat& Z, const ReshapeSpec& spec);

struct TransformerParams {
    Mat W_Q, W_K, W_V;  // s x d
    Mat W_O;            // d x s
    Mat W_1;            // r x d
    Mat W_2;            // d x r
    Vec b_1;            // r
    Vec b_2;            // d
    Mat E;              // d x L' positional encoding, L' = L + 2
    int heads = 1;
    int hidden = 0;  // s
    int mlp = 0;     // r
};

struct AffineEmbed {
    Mat W;
    Vec b;
};

struct LatentSpec {
    Mat W_U;             // d_x x d_0, column-orthonormal at init, trained tied
    ReshapeSpec reshape;  // trunk reshape over d_0
};

// Score network: reshape into tokens, append a condition token (learned null
// token when y is absent) and a time token, add the learned positional
// encoding once at the input, run residual attention + feed-forward blocks,
// drop the two condition tokens, apply the shared per-token affine head, and
// flatten back. With `latent` set the trunk runs on W_U^T x and the output is
// decoded as (W_U g - x) / sigma_t^2.
struct DiTModel {
    ReshapeSpec reshape;  // trunk reshape (over d_0 when latent is set)
    AffineEmbed y_embed;  // d x d_y
    AffineEmbed t_embed;  // d x (number of time features)
    Vec null_token;       // d, used when the condition is masked
    std::vector<TransformerParams> blocks;
    AffineEmbed head;  // d x d, applied to every retained token column
    std::optional<LatentSpec> latent;

    int dim_x() const { return latent ? latent->W_U.rows : reshape.d_x; }
    int dim_y() const { return y_embed.W.cols; }
};

struct DiTConfig {
    int d_x = 0;
    int d_y = 0;
    int d = 0;  // token dimension
    int L = 0;  // sequence length (d * L = d_x, or d_0 for latent models)
    int s = 4;  // attention width
    int r = 16; // feed-forward width
    int n_blocks = 1;
    int d_0 = 0;  // latent dimension; 0 disables the latent path
    double init_scale = 0.05;
};

// Zero-output initialization: W_O, W_2, b_2 and the head are zero, so the
// standard model is identically 0 and the latent model is exactly -x/sigma^2
// at init. Inner matrices are uniform +-init_scale; the first block's
// positional encoding is a deterministic ramp (column k gets the constant
// 2 (k+1) sqrt(d) in every row), later blocks start at zero.
DiTModel make_dit(const DiTConfig& cfg, RngStream& rng);

// [sin(k log t), cos(k log t)] for k in {1, 2, 4, 8}; needs t > 0
Vec time_features(double t);
inline constexpr int kTimeFeatures = 8;

Mat attention_forward(const TransformerParams& p, const Mat& Z);
Mat ffn_forward(const TransformerParams& p, const Mat& Z);

// intermediate state kept for backpropagation
struct BlockCache {
    Mat Zin;   // block input, d x L'
    Mat Q, K, V;  // s x L'
    Mat P;     // column-stochastic attention weights, L' x L'
    Mat A;     // V P, s x L'
    Mat Zmid;  // after the attention residual
    Mat H;     // W_1 Zmid + b_1 pre-activations, r x L'
};

struct ForwardCache {
    Vec trunk_in;  // vector fed to the trunk (x, or W_U^T x for latent models)
    Vec t_feats;
    bool masked = false;
    Vec y_used;       // raw condition when not masked
    Mat Z_embedded;   // tokens plus positional encoding, input to block 0
    std::vector<BlockCache> blocks;
    Mat head_in;      // d x L after dropping the two condition tokens
    Vec trunk_out;
    double t = 0.0;
};

// trunk evaluation on an arbitrary input vector matching `spec`; cache may be
// null when no backward pass will follow
Vec trunk_forward(const DiTModel& model, const ReshapeSpec& spec, const Vec& v, const Cond& y,
                  double t, ForwardCache* cache);

Vec dit_forward(const DiTModel& model, const Vec& x, const Cond& y, double t);

Vec latent_forward(const DiTModel& model, const Vec& x, const Cond& y, double t);

// dispatches to latent_forward when the latent spec is present
ScoreFn make_score_fn(const DiTModel& model);

struct MatrixNorms {
    std::string name;
    double spectral = 0.0;
    double two_inf = 0.0;  // max row 2-norm
};

struct NormReport {
    std::vector<MatrixNorms> entries;
    double output_bound = 0.0;     // max output 2-norm over sampled inputs
    double block_lipschitz = 0.0;  // max sampled difference quotient per block
};

struct NormReportOptions {
    double box_radius = 1.0;  // inputs sampled uniformly on [-r, r]^{d_x}
    double t_lo = 0.1;
    double t_hi = 1.0;
    int samples = 1000;
    std::uint64_t seed = 0;
};

NormReport norm_report(const DiTModel& model, const NormReportOptions& opt = {});

// flat little-endian binary checkpoint; see save_checkpoint for the layout
void save_checkpoint(const DiTModel& model, const std::string& path);
DiTModel load_checkpoint(const std::string& path);

void validate_model(const DiTModel& model);

}  // namespace difflab
