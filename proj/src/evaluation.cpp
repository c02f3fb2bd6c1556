#include "difflab/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <memory>
#include <stdexcept>

#include "difflab/rng.hpp"

namespace difflab {

namespace {

void require_positive(double v, const char* name) {
    if (!(v > 0.0) || !std::isfinite(v))
        throw std::invalid_argument(std::string("CoverInputs: ") + name + " must be positive");
}

double median_of(std::vector<double> v) {
    if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
    std::sort(v.begin(), v.end());
    std::size_t m = v.size() / 2;
    return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

std::string format_cell(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

// histogram bin index on [lo, hi] split into `bins` cells; the top edge
// belongs to the last bin
int bin_index(double x, double lo, double hi, int bins) {
    if (hi <= lo) return 0;
    int k = int(std::floor((x - lo) / (hi - lo) * bins));
    return std::clamp(k, 0, bins - 1);
}

}  // namespace

void CoverInputs::validate() const {
    require_positive(eps_c, "eps_c");
    require_positive(n, "n");
    require_positive(L, "L");
    if (d < 1) throw std::invalid_argument("CoverInputs: d must be at least 1");
    if (!(R_T >= 0.0) || !std::isfinite(R_T))
        throw std::invalid_argument("CoverInputs: R_T must be nonnegative");
    require_positive(C_F, "C_F");
    require_positive(C_F_2inf, "C_F_2inf");
    require_positive(C_OV, "C_OV");
    require_positive(C_OV_2inf, "C_OV_2inf");
    require_positive(C_KQ, "C_KQ");
    require_positive(C_KQ_2inf, "C_KQ_2inf");
    require_positive(C_E, "C_E");
    if (!(n * L > 1.0))
        throw std::invalid_argument("CoverInputs: n * L must exceed 1 for a positive log factor");
}

double covering_bound(const CoverInputs& inp) {
    inp.validate();
    const double alpha =
        inp.C_F * inp.C_F * inp.C_OV * (1.0 + 4.0 * inp.C_KQ) * (inp.R_T + inp.C_E);
    const double d23 = std::pow(double(inp.d), 2.0 / 3.0);
    const double S = d23 * std::pow(inp.C_F_2inf, 4.0 / 3.0) +
                     d23 * std::pow(2.0 * inp.C_F * inp.C_F * inp.C_OV * inp.C_KQ_2inf, 2.0 / 3.0) +
                     2.0 * std::pow(inp.C_F * inp.C_F * inp.C_OV_2inf, 2.0 / 3.0);
    return std::log(inp.n * inp.L) / (inp.eps_c * inp.eps_c) * alpha * alpha * S * S * S;
}

Vec guided_score(const ScoreFn& score, const Vec& x, const Vec& y, double t, double eta) {
    if (!score) throw std::invalid_argument("guided_score: empty score function");
    if (!(eta >= 0.0) || !std::isfinite(eta))
        throw std::invalid_argument("guided_score: eta must be nonnegative");
    Vec cond = score(x, Cond(y), t);
    if (eta == 0.0) return cond;
    Vec uncond = score(x, Cond{}, t);
    if (cond.size() != uncond.size())
        throw std::invalid_argument("guided_score: conditional and unconditional sizes differ");
    Vec out(cond.size());
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = (1.0 + eta) * cond[i] - eta * uncond[i];
    return out;
}

TVReport tv_estimate(const std::vector<Vec>& a, const std::vector<Vec>& b, int bins) {
    if (a.empty() || b.empty()) throw std::invalid_argument("tv_estimate: empty sample set");
    if (bins < 1) throw std::invalid_argument("tv_estimate: bins must be positive");
    const int dim = int(a.front().size());
    if (dim < 1 || dim > 2)
        throw std::invalid_argument("tv_estimate: only 1-D and 2-D samples are supported");
    for (const auto* set : {&a, &b})
        for (const Vec& v : *set) {
            if (int(v.size()) != dim) throw std::invalid_argument("tv_estimate: ragged samples");
            check_finite(v, "tv_estimate");
        }

    Vec lo(dim, std::numeric_limits<double>::infinity());
    Vec hi(dim, -std::numeric_limits<double>::infinity());
    for (const auto* set : {&a, &b})
        for (const Vec& v : *set)
            for (int k = 0; k < dim; ++k) {
                lo[k] = std::min(lo[k], v[k]);
                hi[k] = std::max(hi[k], v[k]);
            }

    const std::size_t total = dim == 1 ? std::size_t(bins) : std::size_t(bins) * bins;
    std::vector<double> pa(total, 0.0), pb(total, 0.0);
    auto cell_of = [&](const Vec& v) {
        std::size_t idx = std::size_t(bin_index(v[0], lo[0], hi[0], bins));
        if (dim == 2) idx = idx * bins + std::size_t(bin_index(v[1], lo[1], hi[1], bins));
        return idx;
    };
    for (const Vec& v : a) pa[cell_of(v)] += 1.0 / double(a.size());
    for (const Vec& v : b) pb[cell_of(v)] += 1.0 / double(b.size());

    double acc = 0.0;
    for (std::size_t k = 0; k < total; ++k) acc += std::abs(pa[k] - pb[k]);
    TVReport rep;
    rep.tv = std::clamp(0.5 * acc, 0.0, 1.0);
    rep.bins = bins;
    rep.samples_per_side = int(std::min(a.size(), b.size()));
    return rep;
}

double subspace_error(const Mat& W_U, const Mat& U) {
    if (W_U.rows != U.rows) throw std::invalid_argument("subspace_error: row counts differ");
    if (W_U.rows == 0) throw std::invalid_argument("subspace_error: empty matrices");
    const int n = W_U.rows;
    double acc = 0.0;
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            double pw = 0.0, pu = 0.0;
            for (int k = 0; k < W_U.cols; ++k) pw += W_U(i, k) * W_U(j, k);
            for (int k = 0; k < U.cols; ++k) pu += U(i, k) * U(j, k);
            double diff = pw - pu;
            acc += diff * diff;
        }
    return acc;
}

void TrendConfig::validate() const {
    if (!(t_max > 0.0)) throw std::invalid_argument("TrendConfig: t_max must be positive");
    if (d_y < 1) throw std::invalid_argument("TrendConfig: d_y must be at least 1");
    if (!(mix_var > 0.0)) throw std::invalid_argument("TrendConfig: mix_var must be positive");
    if (s < 1 || r < 0 || n_blocks < 1)
        throw std::invalid_argument("TrendConfig: bad model widths");
    if (n_train < 1 || batch < 1 || epochs < 1 || n_test < 2 || risk_points < 2)
        throw std::invalid_argument("TrendConfig: bad sample counts");
    if (!(lr > 0.0)) throw std::invalid_argument("TrendConfig: lr must be positive");
    if (!(mask_prob >= 0.0 && mask_prob <= 1.0))
        throw std::invalid_argument("TrendConfig: mask_prob must lie in [0,1]");
    if (time_draws < 1) throw std::invalid_argument("TrendConfig: time_draws must be positive");
}

ReshapeSpec trend_layout(int d_x) {
    if (d_x < 1) throw std::invalid_argument("trend_layout: d_x must be positive");
    int best = d_x;  // token dimension; falls back to one token
    for (int l = 1; l * l <= d_x; ++l)
        if (d_x % l == 0) best = d_x / l;
    ReshapeSpec spec;
    spec.d_x = d_x;
    spec.d = best;
    spec.L = d_x / best;
    return spec;
}

TrendCell run_trend_cell(const TrendSetting& setting, std::uint64_t seed, const TrendConfig& cfg) {
    cfg.validate();
    if (setting.d_x < 1) throw std::invalid_argument("run_trend_cell: setting needs d_x >= 1");
    if (!(setting.t0 > 0.0 && setting.t0 < cfg.t_max))
        throw std::invalid_argument("run_trend_cell: setting needs 0 < t0 < t_max");

    TrendCell cell;
    cell.setting = setting.name;
    cell.seed = seed;

    try {
        Mat gain(1, cfg.d_y, cfg.cond_gain);
        GaussianMixtureFamily base(
            1, cfg.d_y,
            {{0.5, {gain, Vec{-cfg.mix_shift}}, cfg.mix_var},
             {0.5, {gain, Vec{cfg.mix_shift}}, cfg.mix_var}});
        ProductMixtureFamily family(std::move(base), setting.d_x);

        ReshapeSpec layout = trend_layout(setting.d_x);
        DiTConfig mc;
        mc.d_x = setting.d_x;
        mc.d_y = cfg.d_y;
        mc.d = layout.d;
        mc.L = layout.L;
        mc.s = cfg.s;
        mc.r = cfg.r;
        mc.n_blocks = cfg.n_blocks;
        mc.init_scale = cfg.init_scale;
        // streams are keyed by (setting name, seed) so cells are reproducible
        // regardless of sweep order or scheduling
        RngStream init = RngStream::named(cfg.root_seed ^ seed, "trend-init:" + setting.name);
        DiTModel model = make_dit(mc, init);

        TimeWindow window{setting.t0, cfg.t_max, 1};
        TrainConfig tc;
        tc.n = cfg.n_train;
        tc.batch = cfg.batch;
        tc.lr = cfg.lr;
        tc.epochs = cfg.epochs;
        tc.window = window;
        tc.mask_prob = cfg.mask_prob;
        tc.time_draws = cfg.time_draws;
        tc.seed = seed ^ fnv1a64(setting.name);
        TrainResult tr = train(model, family, tc);
        if (tr.diverged) {
            cell.status = "diverged";
            return cell;
        }

        ScoreFn score = make_score_fn(model);
        RngStream test = RngStream::named(cfg.root_seed ^ seed, "trend-test:" + setting.name);
        double mean = 0.0, m2 = 0.0;
        for (int i = 0; i < cfg.n_test; ++i) {
            auto [x0, y] = sample_pair(family, test);
            double v = cfg_loss(score, x0, y, window, test, cfg.mask_prob, cfg.time_draws) /
                       double(setting.d_x);
            double delta = v - mean;
            mean += delta / double(i + 1);
            m2 += delta * (v - mean);
        }
        cell.test_loss = mean;
        cell.std_error = std::sqrt(m2 / double(cfg.n_test - 1) / double(cfg.n_test));

        RngStream riskrng = RngStream::named(cfg.root_seed ^ seed, "trend-risk:" + setting.name);
        RiskReport rr = score_risk(score, family, window, cfg.risk_points, riskrng);
        cell.risk = rr.risk / double(setting.d_x);

        NormReportOptions nro;
        nro.box_radius = 2.0;
        nro.t_lo = setting.t0;
        nro.t_hi = cfg.t_max;
        nro.samples = 64;
        nro.seed = seed;
        NormReport norms = norm_report(model, nro);
        for (const auto& e : norms.entries) {
            if (e.name == "block0.W_O") cell.norm_WO_2inf = e.two_inf;
            if (e.name == "block0.W_V") cell.norm_WV_2inf = e.two_inf;
        }
        cell.ok = true;
        cell.status = "ok";
    } catch (const std::exception& e) {
        cell.ok = false;
        cell.status = e.what();
    }
    return cell;
}

TrendTable summarize_trend(std::vector<TrendCell> cells, const std::vector<TrendSetting>& settings) {
    TrendTable table;
    table.cells = std::move(cells);

    for (const TrendSetting& s : settings) {
        TrendSummary sum;
        sum.setting = s.name;
        std::vector<double> loss, risk, wo, wv;
        for (const TrendCell& c : table.cells) {
            if (c.setting != s.name || !c.ok) continue;
            loss.push_back(c.test_loss);
            risk.push_back(c.risk);
            wo.push_back(c.norm_WO_2inf);
            wv.push_back(c.norm_WV_2inf);
        }
        sum.cells = int(loss.size());
        sum.test_loss = median_of(loss);
        sum.risk = median_of(risk);
        sum.norm_WO_2inf = median_of(wo);
        sum.norm_WV_2inf = median_of(wv);
        if (loss.size() >= 2) {
            double mean = 0.0, m2 = 0.0;
            for (std::size_t i = 0; i < loss.size(); ++i) {
                double delta = loss[i] - mean;
                mean += delta / double(i + 1);
                m2 += delta * (loss[i] - mean);
            }
            sum.std_error = std::sqrt(m2 / double(loss.size() - 1) / double(loss.size()));
        }
        table.medians.push_back(std::move(sum));
    }
    return table;
}

TrendTable trend_experiment(const std::vector<TrendSetting>& settings,
                            const std::vector<std::uint64_t>& seeds, const TrendConfig& cfg) {
    if (settings.size() < 3)
        throw std::invalid_argument("trend_experiment: need at least 3 settings");
    if (seeds.size() < 3) throw std::invalid_argument("trend_experiment: need at least 3 seeds");
    cfg.validate();

    std::vector<TrendCell> cells;
    for (const TrendSetting& s : settings)
        for (std::uint64_t seed : seeds) cells.push_back(run_trend_cell(s, seed, cfg));
    return summarize_trend(std::move(cells), settings);
}

std::string trend_csv(const TrendTable& table) {
    std::string out = "setting,seed,test_loss,risk,stderr,norm_WO_2inf,norm_WV_2inf,status\n";
    for (const TrendCell& c : table.cells) {
        out += c.setting;
        out += ',';
        out += std::to_string(c.seed);
        out += ',';
        out += format_cell(c.test_loss);
        out += ',';
        out += format_cell(c.risk);
        out += ',';
        out += format_cell(c.std_error);
        out += ',';
        out += format_cell(c.norm_WO_2inf);
        out += ',';
        out += format_cell(c.norm_WV_2inf);
        out += ',';
        out += c.status;
        out += '\n';
    }
    return out;
}

std::string trend_median_csv(const TrendTable& table) {
    std::string out = "setting,test_loss,risk,stderr,norm_WO_2inf,norm_WV_2inf,cells\n";
    for (const TrendSummary& s : table.medians) {
        out += s.setting;
        out += ',';
        out += format_cell(s.test_loss);
        out += ',';
        out += format_cell(s.risk);
        out += ',';
        out += format_cell(s.std_error);
        out += ',';
        out += format_cell(s.norm_WO_2inf);
        out += ',';
        out += format_cell(s.norm_WV_2inf);
        out += ',';
        out += std::to_string(s.cells);
        out += '\n';
    }
    return out;
}

}  // namespace difflab
