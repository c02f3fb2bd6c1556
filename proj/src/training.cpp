#include "difflab/training.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace difflab {

void TrainConfig::validate() const {
    window.validate();
    if (n < 1 || batch < 1 || epochs < 1) throw std::invalid_argument("TrainConfig: bad counts");
    if (!(lr >= 0.0)) throw std::invalid_argument("TrainConfig: lr must be nonnegative");
    if (!(mask_prob >= 0.0 && mask_prob <= 1.0))
        throw std::invalid_argument("TrainConfig: mask_prob outside [0,1]");
    if (time_draws < 1) throw std::invalid_argument("TrainConfig: time_draws must be positive");
}

std::vector<LossDraw> draw_loss_noise(int d_x, const TimeWindow& window, RngStream& rng,
                                      double mask_prob, int time_draws) {
    window.validate();
    std::vector<LossDraw> draws(time_draws);
    for (auto& d : draws) {
        d.t = window.t0 + rng.uniform() * (window.T - window.t0);
        d.masked = rng.uniform() < mask_prob;
        d.eps = rng.normal_vec(d_x);
    }
    return draws;
}

double cfg_loss_with_draws(const ScoreFn& score, const Vec& x0, const Vec& y,
                           const std::vector<LossDraw>& draws) {
    if (draws.empty()) throw std::invalid_argument("cfg_loss: no draws");
    double total = 0.0;
    for (const auto& d : draws) {
        ScheduleValue s = noise_schedule(d.t);
        Vec x_t(x0.size());
        for (std::size_t i = 0; i < x0.size(); ++i) x_t[i] = s.alpha * x0[i] + s.sigma * d.eps[i];
        Cond cond = d.masked ? Cond{} : Cond{y};
        Vec pred = score(x_t, cond, d.t);
        double e = 0.0;
        for (std::size_t i = 0; i < x0.size(); ++i) {
            double diff = pred[i] + d.eps[i] / s.sigma;  // target is -eps/sigma
            e += diff * diff;
        }
        total += e;
    }
    return total / double(draws.size());
}

double cfg_loss(const ScoreFn& score, const Vec& x0, const Vec& y, const TimeWindow& window,
                RngStream& rng, double mask_prob, int time_draws) {
    return cfg_loss_with_draws(score, x0, y,
                               draw_loss_noise(int(x0.size()), window, rng, mask_prob, time_draws));
}

// ------------------------------------------------------------ grad records

ModelGrads zero_grads(const DiTModel& model) {
    ModelGrads g;
    int d = model.reshape.d;
    g.y_embed_W = Mat(d, model.y_embed.W.cols);
    g.y_embed_b = Vec(d, 0.0);
    g.t_embed_W = Mat(d, kTimeFeatures);
    g.t_embed_b = Vec(d, 0.0);
    g.null_token = Vec(d, 0.0);
    g.blocks.resize(model.blocks.size());
    for (std::size_t b = 0; b < model.blocks.size(); ++b) {
        const auto& p = model.blocks[b];
        auto& gb = g.blocks[b];
        gb.W_Q = Mat(p.W_Q.rows, p.W_Q.cols);
        gb.W_K = Mat(p.W_K.rows, p.W_K.cols);
        gb.W_V = Mat(p.W_V.rows, p.W_V.cols);
        gb.W_O = Mat(p.W_O.rows, p.W_O.cols);
        gb.W_1 = Mat(p.W_1.rows, p.W_1.cols);
        gb.W_2 = Mat(p.W_2.rows, p.W_2.cols);
        gb.b_1 = Vec(p.b_1.size(), 0.0);
        gb.b_2 = Vec(p.b_2.size(), 0.0);
        gb.E = Mat(p.E.rows, p.E.cols);
    }
    g.head_W = Mat(d, d);
    g.head_b = Vec(d, 0.0);
    if (model.latent) g.W_U = Mat(model.latent->W_U.rows, model.latent->W_U.cols);
    return g;
}

namespace {

template <typename F>
void for_each_tensor(ModelGrads& g, F&& f) {
    f(g.y_embed_W.a);
    f(g.y_embed_b);
    f(g.t_embed_W.a);
    f(g.t_embed_b);
    f(g.null_token);
    for (auto& b : g.blocks) {
        f(b.W_Q.a);
        f(b.W_K.a);
        f(b.W_V.a);
        f(b.W_O.a);
        f(b.W_1.a);
        f(b.W_2.a);
        f(b.b_1);
        f(b.b_2);
        f(b.E.a);
    }
    f(g.head_W.a);
    f(g.head_b);
    f(g.W_U.a);
}

}  // namespace

double grad_global_norm(const ModelGrads& g) {
    double s = 0.0;
    for_each_tensor(const_cast<ModelGrads&>(g), [&s](const std::vector<double>& v) {
        for (double x : v) s += x * x;
    });
    return std::sqrt(s);
}

void scale_grads(ModelGrads& g, double c) {
    for_each_tensor(g, [c](std::vector<double>& v) {
        for (auto& x : v) x *= c;
    });
}

void apply_update(DiTModel& model, const ModelGrads& g, double lr) {
    auto step_m = [lr](Mat& p, const Mat& gm) { add_scaled(p, gm, -lr); };
    auto step_v = [lr](Vec& p, const Vec& gv) { add_scaled(p, gv, -lr); };
    step_m(model.y_embed.W, g.y_embed_W);
    step_v(model.y_embed.b, g.y_embed_b);
    step_m(model.t_embed.W, g.t_embed_W);
    step_v(model.t_embed.b, g.t_embed_b);
    step_v(model.null_token, g.null_token);
    for (std::size_t b = 0; b < model.blocks.size(); ++b) {
        auto& p = model.blocks[b];
        const auto& gb = g.blocks[b];
        step_m(p.W_Q, gb.W_Q);
        step_m(p.W_K, gb.W_K);
        step_m(p.W_V, gb.W_V);
        step_m(p.W_O, gb.W_O);
        step_m(p.W_1, gb.W_1);
        step_m(p.W_2, gb.W_2);
        step_v(p.b_1, gb.b_1);
        step_v(p.b_2, gb.b_2);
        step_m(p.E, gb.E);
    }
    step_m(model.head.W, g.head_W);
    step_v(model.head.b, g.head_b);
    if (model.latent) step_m(model.latent->W_U, g.W_U);
}

// -------------------------------------------------------------- backward

namespace {

// reverse pass through the trunk; dout is the gradient at the trunk output
// vector, returns the gradient at the trunk input vector
Vec trunk_backward(const DiTModel& model, const ReshapeSpec& spec, const ForwardCache& cache,
                   const Vec& dout, ModelGrads& g) {
    const int d = spec.d, L = spec.L, Lp = spec.L + 2;
    Mat dheaded = reshape(dout, spec);

    // shared per-token head
    Mat dhead_in(d, L);
    for (int l = 0; l < L; ++l)
        for (int i = 0; i < d; ++i) {
            double dv = dheaded(i, l);
            g.head_b[i] += dv;
            for (int j = 0; j < d; ++j) {
                g.head_W(i, j) += dv * cache.head_in(j, l);
                dhead_in(j, l) += model.head.W(i, j) * dv;
            }
        }

    Mat dZ(d, Lp);
    for (int l = 0; l < L; ++l)
        for (int i = 0; i < d; ++i) dZ(i, l) = dhead_in(i, l);

    for (int b = int(model.blocks.size()) - 1; b >= 0; --b) {
        const auto& p = model.blocks[b];
        const auto& bc = cache.blocks[b];
        auto& gb = g.blocks[b];

        // feed-forward: out = Zmid + W_2 relu(W_1 Zmid + b_1) + b_2
        Mat R = bc.H;
        for (auto& v : R.a) v = std::max(v, 0.0);
        add_scaled(gb.W_2, matmul(dZ, transpose(R)), 1.0);
        for (int i = 0; i < d; ++i)
            for (int j = 0; j < Lp; ++j) gb.b_2[i] += dZ(i, j);
        Mat dH = matmul(transpose(p.W_2), dZ);
        for (std::size_t i = 0; i < dH.a.size(); ++i)
            if (bc.H.a[i] <= 0.0) dH.a[i] = 0.0;
        add_scaled(gb.W_1, matmul(dH, transpose(bc.Zmid)), 1.0);
        for (int i = 0; i < dH.rows; ++i)
            for (int j = 0; j < Lp; ++j) gb.b_1[i] += dH(i, j);
        Mat dZmid = dZ;
        add_scaled(dZmid, matmul(transpose(p.W_1), dH), 1.0);

        // attention: out = Zin + W_O (W_V Zin) softmax((W_K Zin)^T (W_Q Zin))
        add_scaled(gb.W_O, matmul(dZmid, transpose(bc.A)), 1.0);
        Mat dA = matmul(transpose(p.W_O), dZmid);
        Mat dV = matmul(dA, transpose(bc.P));
        Mat dP = matmul(transpose(bc.V), dA);
        Mat dS(Lp, Lp);
        for (int j = 0; j < Lp; ++j) {
            double inner = 0.0;
            for (int i = 0; i < Lp; ++i) inner += bc.P(i, j) * dP(i, j);
            for (int i = 0; i < Lp; ++i) dS(i, j) = bc.P(i, j) * (dP(i, j) - inner);
        }
        Mat dK = matmul(bc.Q, transpose(dS));
        Mat dQ = matmul(bc.K, dS);
        add_scaled(gb.W_Q, matmul(dQ, transpose(bc.Zin)), 1.0);
        add_scaled(gb.W_K, matmul(dK, transpose(bc.Zin)), 1.0);
        add_scaled(gb.W_V, matmul(dV, transpose(bc.Zin)), 1.0);
        Mat dZin = dZmid;
        add_scaled(dZin, matmul(transpose(p.W_Q), dQ), 1.0);
        add_scaled(dZin, matmul(transpose(p.W_K), dK), 1.0);
        add_scaled(dZin, matmul(transpose(p.W_V), dV), 1.0);
        dZ = std::move(dZin);
    }

    // embedding layer: tokens plus the positional encoding of block 0
    add_scaled(g.blocks[0].E, dZ, 1.0);
    for (int i = 0; i < d; ++i) {
        double dy = dZ(i, L);
        if (cache.masked) {
            g.null_token[i] += dy;
        } else {
            g.y_embed_b[i] += dy;
            for (int j = 0; j < int(cache.y_used.size()); ++j)
                g.y_embed_W(i, j) += dy * cache.y_used[j];
        }
        double dt = dZ(i, L + 1);
        g.t_embed_b[i] += dt;
        for (int j = 0; j < kTimeFeatures; ++j) g.t_embed_W(i, j) += dt * cache.t_feats[j];
    }

    Mat dpatches(d, L);
    for (int l = 0; l < L; ++l)
        for (int i = 0; i < d; ++i) dpatches(i, l) = dZ(i, l);
    return unreshape(dpatches, spec);
}

}  // namespace

GradResult gradients_with_draws(const DiTModel& model, const std::vector<Sample>& batch,
                                const std::vector<std::vector<LossDraw>>& draws) {
    if (batch.empty()) throw std::invalid_argument("gradients: empty batch");
    if (draws.size() != batch.size())
        throw std::invalid_argument("gradients: one draw list per sample required");
    GradResult out;
    out.grads = zero_grads(model);
    const bool latent = model.latent.has_value();
    const ReshapeSpec& spec = latent ? model.latent->reshape : model.reshape;

    for (std::size_t b = 0; b < batch.size(); ++b) {
        const Vec& x0 = batch[b].first;
        const Vec& y = batch[b].second;
        if (draws[b].empty()) throw std::invalid_argument("gradients: no draws for a sample");
        const double draw_w = 1.0 / double(draws[b].size());
        for (const auto& dr : draws[b]) {
            ScheduleValue s = noise_schedule(dr.t);
            Vec x_t(x0.size());
            for (std::size_t i = 0; i < x0.size(); ++i)
                x_t[i] = s.alpha * x0[i] + s.sigma * dr.eps[i];
            Cond cond = dr.masked ? Cond{} : Cond{y};

            ForwardCache cache;
            if (latent) {
                const Mat& U = model.latent->W_U;
                Vec xe = matvec_t(U, x_t);
                Vec gvec = trunk_forward(model, spec, xe, cond, dr.t, &cache);
                double inv = 1.0 / (s.sigma * s.sigma);
                Vec pred(x_t.size());
                Vec ug = matvec(U, gvec);
                for (std::size_t i = 0; i < x_t.size(); ++i) pred[i] = (ug[i] - x_t[i]) * inv;

                Vec dpred(x_t.size());
                double e = 0.0;
                for (std::size_t i = 0; i < x_t.size(); ++i) {
                    double diff = pred[i] + dr.eps[i] / s.sigma;
                    e += diff * diff;
                    dpred[i] = 2.0 * diff * draw_w;
                }
                out.loss += e * draw_w;

                // decode path: pred = (U g - x)/sigma^2, tied encoder below
                Vec dg = matvec_t(U, dpred);
                for (auto& v : dg) v *= inv;
                for (int i = 0; i < U.rows; ++i)
                    for (int j = 0; j < U.cols; ++j)
                        out.grads.W_U(i, j) += dpred[i] * inv * gvec[j];
                Vec dxe = trunk_backward(model, spec, cache, dg, out.grads);
                for (int i = 0; i < U.rows; ++i)
                    for (int j = 0; j < U.cols; ++j) out.grads.W_U(i, j) += x_t[i] * dxe[j];
            } else {
                Vec pred = trunk_forward(model, spec, x_t, cond, dr.t, &cache);
                Vec dpred(x_t.size());
                double e = 0.0;
                for (std::size_t i = 0; i < x_t.size(); ++i) {
                    double diff = pred[i] + dr.eps[i] / s.sigma;
                    e += diff * diff;
                    dpred[i] = 2.0 * diff * draw_w;
                }
                out.loss += e * draw_w;
                trunk_backward(model, spec, cache, dpred, out.grads);
            }
        }
    }
    double inv_b = 1.0 / double(batch.size());
    out.loss *= inv_b;
    scale_grads(out.grads, inv_b);
    if (!std::isfinite(grad_global_norm(out.grads)))
        throw std::runtime_error("gradients: non-finite gradient after backward pass");
    return out;
}

GradResult gradients(const DiTModel& model, const std::vector<Sample>& batch,
                     const TimeWindow& window, RngStream& rng, double mask_prob,
                     int time_draws) {
    int d_x = model.dim_x();
    std::vector<std::vector<LossDraw>> draws;
    draws.reserve(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i)
        draws.push_back(draw_loss_noise(d_x, window, rng, mask_prob, time_draws));
    return gradients_with_draws(model, batch, draws);
}

// ---------------------------------------------------------------- training

TrainResult train(DiTModel& model, const ConditionalFamily& family, const TrainConfig& cfg) {
    cfg.validate();
    if (model.dim_x() != family.dim_x() || model.dim_y() != family.dim_y())
        throw std::invalid_argument("train: model and family dimensions disagree");

    RngStream data_rng = RngStream::named(cfg.seed, "train-data");
    std::vector<Sample> data;
    data.reserve(cfg.n);
    for (int i = 0; i < cfg.n; ++i) {
        auto [x0, y] = sample_pair(family, data_rng);
        data.emplace_back(std::move(x0), std::move(y));
    }

    TrainResult result;
    constexpr double kClip = 10.0;
    constexpr double kDivergence = 1e6;
    std::vector<int> order(data.size());
    std::iota(order.begin(), order.end(), 0);
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        RngStream order_rng = RngStream::named(cfg.seed, "train-order", std::uint64_t(epoch));
        for (std::size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[std::size_t(order_rng.uniform_int(int(i)))]);

        double epoch_sum = 0.0;
        int epoch_count = 0;
        std::uint64_t batch_index = 0;
        for (std::size_t start = 0; start < data.size(); start += std::size_t(cfg.batch)) {
            std::size_t end = std::min(start + std::size_t(cfg.batch), data.size());
            std::vector<Sample> batch;
            batch.reserve(end - start);
            for (std::size_t i = start; i < end; ++i) batch.push_back(data[order[i]]);

            RngStream draw_rng = RngStream::named(
                cfg.seed, "train-draws", std::uint64_t(epoch) * 1000003ull + batch_index);
            GradResult gr =
                gradients(model, batch, cfg.window, draw_rng, cfg.mask_prob, cfg.time_draws);
            if (!std::isfinite(gr.loss) || gr.loss > kDivergence) {
                result.epoch_loss.push_back(gr.loss);
                result.diverged = true;
                return result;
            }
            double gn = grad_global_norm(gr.grads);
            if (gn > kClip) scale_grads(gr.grads, kClip / gn);
            apply_update(model, gr.grads, cfg.lr);

            epoch_sum += gr.loss * double(end - start);
            epoch_count += int(end - start);
            ++batch_index;
        }
        result.epoch_loss.push_back(epoch_sum / double(epoch_count));
    }
    return result;
}

// ------------------------------------------------------------------- risk

namespace {

RiskReport risk_core(const ScoreFn& score, const ConditionalFamily& family,
                     const TimeWindow& window, double r_trunc, int mc_points, RngStream& rng) {
    window.validate();
    if (mc_points < 2) throw std::invalid_argument("score_risk: need at least 2 points");
    if (!(r_trunc >= 0.0)) throw std::invalid_argument("truncated_risk: radius must be >= 0");
    double sum = 0.0, sum_sq = 0.0;
    for (int m = 0; m < mc_points; ++m) {
        double t = window.t0 + rng.uniform() * (window.T - window.t0);
        Vec y = rng.uniform_vec(family.dim_y());
        Vec x0 = family.sample_x0(y, rng);
        Vec x = forward_sample(x0, t, rng);
        Vec pred = score(x, Cond{y}, t);
        Vec truth = family.score(x, y, t);
        double e = 0.0;
        for (std::size_t i = 0; i < pred.size(); ++i) {
            double d = pred[i] - truth[i];
            e += d * d;
        }
        double gate = 1.0;
        for (double xi : x)
            if (std::abs(xi) > r_trunc) gate = 0.0;
        e *= gate;
        sum += e;
        sum_sq += e * e;
    }
    RiskReport rep;
    rep.mc_points = mc_points;
    rep.risk = sum / mc_points;
    double var = (sum_sq - sum * sum / mc_points) / double(mc_points - 1);
    rep.std_error = std::sqrt(std::max(var, 0.0) / mc_points);
    return rep;
}

}  // namespace

RiskReport score_risk(const ScoreFn& score, const ConditionalFamily& family,
                      const TimeWindow& window, int mc_points, RngStream& rng) {
    return risk_core(score, family, window, std::numeric_limits<double>::infinity(), mc_points,
                     rng);
}

RiskReport truncated_risk(const ScoreFn& score, const ConditionalFamily& family,
                          const TimeWindow& window, double r_trunc, int mc_points,
                          RngStream& rng) {
    return risk_core(score, family, window, r_trunc, mc_points, rng);
}

}  // namespace difflab
