#include "difflab/uat.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "difflab/rng.hpp"

namespace difflab {

namespace {

double relu(double x) { return x > 0.0 ? x : 0.0; }

// ramp that rises from 0 at x = 0 to 1 at x = delta and stays there
double unit_step(double x, double delta) { return relu(x / delta) - relu(x / delta - 1.0); }

// Direction whose projections keep all vocabulary differences visible:
// |u^T (v - v')| >= ||v - v'|| / ((|V|+1)^2 sqrt(d)). Tried candidates are
// deterministic: positive geometric ladders first (a ladder projection kills
// a rational difference vector for only finitely many bases), then a seeded
// random fallback.
Vec find_direction(const std::vector<Vec>& vocab, int d) {
    const double v1 = double(vocab.size()) + 1.0;
    const double bound_scale = 1.0 / (v1 * v1 * std::sqrt(double(d)));
    auto admissible = [&](const Vec& u) {
        for (std::size_t i = 0; i < vocab.size(); ++i)
            for (std::size_t j = i + 1; j < vocab.size(); ++j) {
                Vec diff = vocab[i];
                add_scaled(diff, vocab[j], -1.0);
                if (std::abs(dot(u, diff)) < norm2(diff) * bound_scale) return false;
            }
        return true;
    };
    auto normalized = [](Vec u) {
        double n = norm2(u);
        for (auto& x : u) x /= n;
        return u;
    };
    for (int m = 0; m < 32; ++m) {
        Vec u(d);
        double p = 1.0;
        for (int i = 0; i < d; ++i) {
            u[i] = p;
            p *= m + 2.0;
        }
        u = normalized(std::move(u));
        if (admissible(u)) return u;
    }
    RngStream rng = RngStream::named(0x7A61, "uat-direction");
    for (int m = 0; m < 512; ++m) {
        Vec u(d);
        for (auto& x : u) x = rng.normal();
        if (norm2(u) < 1e-6) continue;
        u = normalized(std::move(u));
        if (admissible(u)) return u;
    }
    throw std::runtime_error("build_context_attention: no separating direction found");
}

// Closed form of the four-ReLU trapezoid
//   relu(a+2) - relu(a+1) - relu(a-1) + relu(a-2),
// evaluated piecewise so far-away bumps are exactly zero instead of a
// cancellation residual of order eps * |a|.
double trapezoid_bump(double a) {
    double m = std::abs(a);
    if (m >= 2.0) return 0.0;
    if (m <= 1.0) return 1.0;
    return 2.0 - m;
}

void check_resolution(const MemorizerNet& net) {
    const double R = net.R;
    for (double c : net.centers)
        if (!(R * (c - net.floor_id) > 2.0))
            throw std::invalid_argument(
                "build_memorizer: a context id sits too close to the floor for this R");
    for (std::size_t k = 1; k < net.centers.size(); ++k)
        if (!(R * (net.centers[k] - net.centers[k - 1]) > 2.0))
            throw std::invalid_argument(
                "build_memorizer: R too small to separate neighbouring context ids");
}

// odometer over index vectors with entries in [1, D]; returns false after the
// last combination
bool advance_cell(std::vector<int>& idx, int D) {
    for (std::size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] < D) {
            ++idx[i];
            std::fill(idx.begin(), idx.begin() + i, 1);
            return true;
        }
    }
    return false;
}

}  // namespace

void GridFunction::validate() const {
    if (D < 1 || d < 1 || L < 1)
        throw std::invalid_argument("GridFunction: D, d and L must be positive");
    for (const auto& [key, val] : labels) {
        if (int(key.size()) != d * L)
            throw std::invalid_argument("GridFunction: key size must be d * L");
        for (int k : key)
            if (k < 1 || k > D) throw std::invalid_argument("GridFunction: cell index out of range");
        if (!std::isfinite(val)) throw std::invalid_argument("GridFunction: non-finite label");
    }
}

void ContextConfig::validate() const {
    if (rho < 1) throw std::invalid_argument("ContextConfig: rho must be at least 1");
    if (!(delta > 0.0) || !std::isfinite(delta))
        throw std::invalid_argument("ContextConfig: delta must be positive");
    if (!(gamma_min > 0.0) || !(gamma_max >= gamma_min) || !std::isfinite(gamma_max))
        throw std::invalid_argument("ContextConfig: need 0 < gamma_min <= gamma_max");
    if (!(eps_sep > 0.0) || !std::isfinite(eps_sep))
        throw std::invalid_argument("ContextConfig: eps_sep must be positive");
    if (!(logit_cap > 0.0)) throw std::invalid_argument("ContextConfig: logit_cap must be positive");
}

double QuantizerNet::quantize(double x) const {
    double acc = 0.0;
    for (int t = 0; t < D; ++t) acc += unit_step(x - double(t) / D, delta_q);
    return acc / D;
}

Mat QuantizerNet::apply(const Mat& Z) const {
    check_finite(Z, "QuantizerNet::apply");
    Mat out(Z.rows, Z.cols);
    for (int i = 0; i < Z.rows; ++i)
        for (int j = 0; j < Z.cols; ++j) out(i, j) = quantize(Z(i, j));
    return out;
}

double QuantizerNet::penalty(const Mat& Z) const {
    check_finite(Z, "QuantizerNet::penalty");
    double acc = 0.0;
    for (int i = 0; i < Z.rows; ++i)
        for (int j = 0; j < Z.cols; ++j) {
            double x = Z(i, j);
            acc += -1.0 + unit_step(x, delta_q) - unit_step(x - 1.0, delta_q);
        }
    return acc;
}

double quant_exact(double x, int D) {
    if (D < 1) throw std::invalid_argument("quant_exact: D must be positive");
    if (x < 0.0) return 0.0;
    if (x >= 1.0) return 1.0;
    return (std::floor(x * D) + 1.0) / D;
}

QuantizerNet build_quantizer(int D, double delta_q) {
    if (D < 1) throw std::invalid_argument("build_quantizer: D must be positive");
    if (!(delta_q > 0.0) || !(delta_q < 1.0 / D))
        throw std::invalid_argument("build_quantizer: need 0 < delta_q < 1/D");
    return QuantizerNet{D, delta_q};
}

Mat ContextAttention::apply(const Mat& Z) const { return attention_forward(params, Z); }

double ContextAttention::context_id(const Mat& attended, int col) const {
    if (attended.rows != dim || col < 0 || col >= attended.cols)
        throw std::invalid_argument("ContextAttention::context_id: bad column");
    double acc = 0.0;
    for (int i = 0; i < dim; ++i) acc += u[i] * attended(i, col);
    return acc;
}

ContextAttention build_context_attention(const std::vector<Vec>& vocab, const ContextConfig& cfg,
                                         int seq_len) {
    cfg.validate();
    if (seq_len < 1) throw std::invalid_argument("build_context_attention: seq_len must be positive");
    if (vocab.empty()) throw std::invalid_argument("build_context_attention: empty vocabulary");
    const int d = int(vocab.front().size());
    if (d < 1) throw std::invalid_argument("build_context_attention: zero-dimensional tokens");
    if (cfg.rho > d)
        throw std::invalid_argument("build_context_attention: rho exceeds the token dimension");
    for (const Vec& v : vocab) {
        if (int(v.size()) != d)
            throw std::invalid_argument("build_context_attention: ragged vocabulary");
        check_finite(v, "build_context_attention");
        double n = norm2(v);
        if (n < cfg.gamma_min - 1e-12 || n > cfg.gamma_max + 1e-12)
            throw std::invalid_argument(
                "build_context_attention: token norm outside [gamma_min, gamma_max]");
    }
    for (std::size_t i = 0; i < vocab.size(); ++i)
        for (std::size_t j = i + 1; j < vocab.size(); ++j) {
            Vec diff = vocab[i];
            add_scaled(diff, vocab[j], -1.0);
            if (norm2(diff) < cfg.eps_sep - 1e-12)
                throw std::invalid_argument(
                    "build_context_attention: vocabulary is not eps_sep-separated");
        }

    ContextAttention out;
    out.cfg = cfg;
    out.dim = d;
    out.u = find_direction(vocab, d);

    const double vodd = double(vocab.size()) + 1.0;
    const double v4 = vodd * vodd * vodd * vodd;
    out.nominal_scale = 5.0 * v4 * d * cfg.delta / (cfg.eps_sep * cfg.gamma_min);
    out.logit_scale = std::min(out.nominal_scale, cfg.logit_cap / (cfg.gamma_max * cfg.gamma_max));
    out.gamma = out.logit_scale * cfg.gamma_max * cfg.gamma_max;
    const double lnL = std::log(double(seq_len));
    out.delta_prime = lnL * lnL * std::exp(-2.0 * out.gamma) * cfg.eps_sep * cfg.eps_sep *
                      cfg.gamma_min / (4.0 * v4 * d * cfg.delta * cfg.gamma_max * cfg.gamma_max);

    const int rho = cfg.rho;
    const int s = 2 * rho - 1;
    Mat W_K(s, d), W_Q(s, d), W_V(s, d), W_O(d, s);
    // key slot 0 carries u, query slot 0 carries the scaled copy; the
    // remaining key and query ranks live in disjoint slots so their cross
    // terms cancel and the logits are exactly c (u^T z_a)(u^T z_b)
    for (int j = 0; j < d; ++j) {
        W_K(0, j) = out.u[j];
        W_Q(0, j) = out.logit_scale * out.u[j];
    }
    for (int i = 1; i < rho; ++i) {
        W_K(i, (i - 1) % d) = 1.0;
        W_Q(rho + i - 1, (i - 1) % d) = 1.0;
    }
    const double out_norm = cfg.eps_sep / (4.0 * rho * cfg.gamma_max);
    for (int k = 0; k < rho; ++k) {
        W_V(k, k % d) = 1.0;
        W_O(k % d, k) = out_norm;
    }

    TransformerParams p;
    p.W_Q = std::move(W_Q);
    p.W_K = std::move(W_K);
    p.W_V = std::move(W_V);
    p.W_O = std::move(W_O);
    p.W_1 = Mat(0, d);
    p.W_2 = Mat(d, 0);
    p.b_1 = Vec{};
    p.b_2 = Vec(d, 0.0);
    p.E = Mat(d, 0);
    p.heads = 1;
    p.hidden = s;
    p.mlp = 0;
    out.params = std::move(p);
    return out;
}

double MemorizerNet::apply(double id) const {
    if (!std::isfinite(id)) throw std::invalid_argument("MemorizerNet::apply: non-finite id");
    double acc = 0.0;
    for (std::size_t k = 0; k < centers.size(); ++k)
        acc += labels[k] * trapezoid_bump(R * (id - centers[k]));
    return acc;
}

MemorizerNet build_memorizer(const GridFunction& gf, double R) {
    gf.validate();
    std::vector<double> ids, labels;
    ids.reserve(gf.labels.size());
    labels.reserve(gf.labels.size());
    const double n = double(gf.labels.size());
    std::size_t k = 0;
    for (const auto& [key, val] : gf.labels) {
        ids.push_back((double(k) + 1.0) / (n + 1.0));
        labels.push_back(val);
        ++k;
    }
    return build_memorizer(ids, labels, {}, 1.0 / (4.0 * gf.D), R);
}

MemorizerNet build_memorizer(const std::vector<double>& ids, const std::vector<double>& labels,
                             const std::vector<double>& forbidden, double floor_id, double R) {
    if (ids.size() != labels.size())
        throw std::invalid_argument("build_memorizer: ids and labels differ in length");
    if (!(R > 0.0) || !std::isfinite(R))
        throw std::invalid_argument("build_memorizer: R must be positive and finite");
    if (!std::isfinite(floor_id)) throw std::invalid_argument("build_memorizer: non-finite floor");
    for (double v : ids)
        if (!std::isfinite(v)) throw std::invalid_argument("build_memorizer: non-finite id");
    for (double v : labels)
        if (!std::isfinite(v)) throw std::invalid_argument("build_memorizer: non-finite label");

    std::vector<std::size_t> order(ids.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return ids[a] < ids[b]; });

    MemorizerNet net;
    net.R = R;
    net.floor_id = floor_id;
    net.centers.reserve(ids.size());
    net.labels.reserve(ids.size());
    for (std::size_t k : order) {
        net.centers.push_back(ids[k]);
        net.labels.push_back(labels[k]);
    }
    check_resolution(net);
    for (double f : forbidden) {
        if (!std::isfinite(f)) throw std::invalid_argument("build_memorizer: non-finite zero id");
        for (double c : net.centers)
            if (!(R * std::abs(f - c) > 2.0))
                throw std::invalid_argument(
                    "build_memorizer: a zero cell falls inside a memorized bump");
    }
    return net;
}

double UatNetwork::apply(const Mat& Z) const {
    if (Z.rows != d || Z.cols != L)
        throw std::invalid_argument("UatNetwork::apply: input must be d x L");
    const double pen = quant.penalty(Z);
    Mat Zq = quant.apply(Z);
    if (pen != 0.0)
        for (auto& v : Zq.a) v += penalty_gain * pen;
    Mat A = context.apply(Zq);
    double out = 0.0;
    for (int j = 0; j < L; ++j) out += memorizer.apply(context.context_id(A, j));
    return out;
}

UatNetwork assemble_uat(const SeqTarget& target, int d, int L, int D, double delta_q, double R) {
    if (!target) throw std::invalid_argument("assemble_uat: target is empty");
    if (d < 1 || D < 1) throw std::invalid_argument("assemble_uat: need d >= 1 and D >= 1");
    if (L < 2) throw std::invalid_argument("assemble_uat: need at least two tokens per sequence");

    UatNetwork net;
    net.d = d;
    net.L = L;
    net.D = D;
    net.quant = build_quantizer(D, delta_q);

    std::vector<Vec> vocab;
    {
        std::vector<int> idx(d, 1);
        do {
            Vec v(d);
            for (int i = 0; i < d; ++i) v[i] = double(idx[i]) / D;
            vocab.push_back(std::move(v));
        } while (advance_cell(idx, D));
    }
    ContextConfig cfg;
    cfg.rho = d;
    cfg.delta = 4.0 * std::log(double(L));
    cfg.gamma_min = 1.0 / D;
    cfg.gamma_max = std::sqrt(double(d));
    cfg.eps_sep = 1.0 / D;
    // keeps the softmax tails above the double-precision floor so distinct
    // contexts keep distinct ids; the worst pair is a duplicate cell (v, v)
    // against (w, v) with w at the far end of the grid
    cfg.logit_cap = 25.0;
    net.context = build_context_attention(vocab, cfg, L);
    net.penalty_gain = 2.0 * cfg.gamma_max;

    std::vector<double> ids, labels, forbidden;
    std::vector<int> key(std::size_t(d) * L, 1);
    do {
        Mat Z(d, L);
        for (int j = 0; j < L; ++j)
            for (int i = 0; i < d; ++i) Z(i, j) = double(key[std::size_t(j) * d + i]) / D;
        bool dup = false;
        for (int a = 0; a < L && !dup; ++a)
            for (int b = a + 1; b < L && !dup; ++b) {
                bool same = true;
                for (int i = 0; i < d; ++i)
                    if (key[std::size_t(a) * d + i] != key[std::size_t(b) * d + i]) same = false;
                dup = same;
            }
        Mat A = net.context.apply(Z);
        if (dup) {
            for (int j = 0; j < L; ++j) forbidden.push_back(net.context.context_id(A, j));
            continue;
        }
        double f = target(Z);
        if (!std::isfinite(f))
            throw std::invalid_argument("assemble_uat: target returned a non-finite value");
        for (int j = 0; j < L; ++j) {
            ids.push_back(net.context.context_id(A, j));
            labels.push_back(f / L);
        }
    } while (advance_cell(key, D));

    // permuted cells revisit the same (token, context) pair; merge their
    // entries and insist on a consistent label
    std::vector<std::size_t> order(ids.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return ids[a] < ids[b]; });
    std::vector<double> mids, mlabels;
    for (std::size_t k : order) {
        const double tol =
            64.0 * std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(ids[k]));
        if (!mids.empty() && ids[k] - mids.back() <= tol) {
            if (std::abs(labels[k] - mlabels.back()) > 1e-9 * std::max(1.0, std::abs(mlabels.back())))
                throw std::invalid_argument(
                    "assemble_uat: cells sharing a context id carry different labels; the target "
                    "is not permutation invariant on the grid");
            continue;
        }
        mids.push_back(ids[k]);
        mlabels.push_back(labels[k]);
    }

    net.memorizer = build_memorizer(mids, mlabels, forbidden, 1.0 / (4.0 * D), R);
    return net;
}

}  // namespace difflab
