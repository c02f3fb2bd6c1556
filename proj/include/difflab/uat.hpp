#pragma once

#include <functional>
#include <limits>
#include <map>
#include <vector>

#include "difflab/linalg.hpp"
#include "difflab/transformer.hpp"

namespace difflab {

// Closed-form universal-approximation pipeline: a stacked-ReLU grid
// quantizer, one attention layer whose softmax mixture tags each token with
// its sequence context, and a bump-function lookup that memorizes one label
// per quantized cell. Nothing here is trained; every block is constructed
// explicitly so its guarantees can be checked directly.

// Labels on the quantized grid. Keys hold d*L cell indices in [1, D], column
// major: entry j*d + i is the index of coordinate i of token j.
struct GridFunction {
    int D = 0;
    int d = 0;
    int L = 0;
    std::map<std::vector<int>, double> labels;

    void validate() const;
};

// Knobs for the context-tagging attention layer.
struct ContextConfig {
    int rho = 1;             // weight rank, at most the token dimension
    double delta = 0.0;      // separation target, canonically 4 log L
    double gamma_min = 0.0;  // smallest admissible token norm
    double gamma_max = 0.0;  // largest admissible token norm
    double eps_sep = 0.0;    // minimum pairwise token distance
    // Cap on the largest attention logit. The nominal query scale grows like
    // (|V|+1)^4 and saturates double precision: softmax tails underflow and
    // distinct contexts collapse onto one output. Pipeline builders pass a
    // finite cap so the context information stays representable.
    double logit_cap = std::numeric_limits<double>::infinity();

    void validate() const;
};

// Entrywise grid quantizer realized with stacked ReLU steps, plus a ReLU
// penalty that is exactly 0 when an entry lies in [delta_q, 1] and reaches -1
// per entry outside [0, 1 + delta_q].
struct QuantizerNet {
    int D = 0;
    double delta_q = 0.0;

    double quantize(double x) const;     // one entry through the ReLU stack
    Mat apply(const Mat& Z) const;       // entrywise
    double penalty(const Mat& Z) const;  // summed over entries, <= 0
};

// Reference cell map (floor(x D) + 1) / D clamped to [0, 1]. Matches the ReLU
// stack away from cell boundaries; at a boundary the stack keeps the lower
// cell while this map takes the upper one.
double quant_exact(double x, int D);

// needs 0 < delta_q < 1/D
QuantizerNet build_quantizer(int D, double delta_q);

// Single-head attention layer with logits c (u^T z_a)(u^T z_b) for a unit
// direction u that keeps all vocabulary projections apart. The rank-rho
// key/query factors occupy disjoint slots so every cross term vanishes, and
// the value/output factors are sized so each token moves by less than
// eps_sep / 4.
struct ContextAttention {
    TransformerParams params;    // attention weights only, empty FFN slots
    Vec u;                       // separating direction
    double logit_scale = 0.0;    // realized c
    double nominal_scale = 0.0;  // c before the logit cap
    double gamma = 0.0;          // largest attainable |logit|
    double delta_prime = 0.0;    // guaranteed context separation at that scale
    ContextConfig cfg;
    int dim = 0;

    Mat apply(const Mat& Z) const;
    double context_id(const Mat& attended, int col) const;  // u^T column
};

// vocab: distinct tokens of one dimension with norms inside
// [gamma_min, gamma_max] and pairwise distances >= eps_sep (checked).
// seq_len enters the separation scale delta_prime. Throws if no separating
// direction exists among the deterministic candidates.
ContextAttention build_context_attention(const std::vector<Vec>& vocab, const ContextConfig& cfg,
                                         int seq_len);

// Bump-function lookup: apply(s) sums label_k * phi(R (s - c_k)) where phi is
// the symmetric trapezoid equal to 1 on [-1, 1] and 0 outside [-2, 2].
// Centers clear floor_id by more than 2/R, so ids below the floor map to 0.
struct MemorizerNet {
    double R = 0.0;
    double floor_id = 0.0;
    std::vector<double> centers;
    std::vector<double> labels;

    double apply(double id) const;
};

// Canonical layout: the cells of `gf` in key order get ids (k+1)/(n+1) with
// floor 1/(4D). Throws a resolution error unless
// R * min(center gap, lowest center - floor) > 2.
MemorizerNet build_memorizer(const GridFunction& gf, double R);

// Explicit centers and labels. `forbidden` ids (cells that must return 0) are
// checked to lie outside every bump's support.
MemorizerNet build_memorizer(const std::vector<double>& ids, const std::vector<double>& labels,
                             const std::vector<double>& forbidden, double floor_id, double R);

using SeqTarget = std::function<double(const Mat&)>;

// Quantize, context-tag, memorize. apply() returns the stored value of the
// quantized cell as a sum over columns of the bump lookup at each column's
// context id. Out-of-range inputs pick up the broadcast ReLU penalty, which
// drags every context id below the memorizer floor.
struct UatNetwork {
    QuantizerNet quant;
    ContextAttention context;
    MemorizerNet memorizer;
    int d = 0;
    int L = 0;
    int D = 0;
    double penalty_gain = 0.0;

    double apply(const Mat& Z) const;
};

// Memorizes target / L per column over every duplicate-free quantized cell of
// [0,1]^(d x L). Cells with repeated token columns stay out of the table and
// return 0. Labels of cells that share a context id (permuted copies) must
// agree, so the target has to be permutation invariant. needs L >= 2.
UatNetwork assemble_uat(const SeqTarget& target, int d, int L, int D, double delta_q, double R);

}  // namespace difflab
