#include "difflab/harness.hpp"

#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <memory>
#include <mutex>
#include <ostream>
#include <sstream>
#include <thread>

#include <CLI11.hpp>

#include "difflab/evaluation.hpp"
#include "difflab/localpoly.hpp"
#include "difflab/rng.hpp"
#include "difflab/schedule.hpp"
#include "difflab/targets.hpp"
#include "difflab/training.hpp"
#include "difflab/transformer.hpp"
#include "difflab/uat.hpp"

namespace fs = std::filesystem;

namespace difflab {

// ------------------------------------------------------------------ config

namespace {

std::string trimmed(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    std::size_t e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> parts;
    std::size_t start = 0;
    while (true) {
        std::size_t comma = s.find(',', start);
        parts.push_back(trimmed(s.substr(start, comma - start)));
        if (comma == std::string::npos) break;
        start = comma + 1;
    }
    return parts;
}

}  // namespace

Config Config::parse_string(const std::string& text, const std::string& name) {
    Config cfg;
    cfg.name_ = name;
    cfg.raw_ = text;

    std::istringstream in(text);
    std::string line, section;
    int ln = 0;
    while (std::getline(in, line)) {
        ++ln;
        line = trimmed(line);
        if (line.empty() || line[0] == '#' || line[0] == ';') continue;
        if (line[0] == '[') {
            if (line.back() != ']')
                throw ConfigError(name + ":" + std::to_string(ln) + ": unterminated section header");
            section = trimmed(line.substr(1, line.size() - 2));
            if (section.empty())
                throw ConfigError(name + ":" + std::to_string(ln) + ": empty section name");
            continue;
        }
        std::size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError(name + ":" + std::to_string(ln) + ": expected 'key = value'");
        std::string key = trimmed(line.substr(0, eq));
        std::string value = trimmed(line.substr(eq + 1));
        if (key.empty())
            throw ConfigError(name + ":" + std::to_string(ln) + ": empty key");
        std::string full = section.empty() ? key : section + "." + key;
        auto [it, fresh] = cfg.entries_.emplace(full, Entry{value, ln});
        if (!fresh)
            throw ConfigError(name + ":" + std::to_string(ln) + ": duplicate key '" + full +
                              "' (first set on line " + std::to_string(it->second.line) + ")");
    }
    return cfg;
}

Config Config::parse_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot read config file '" + path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_string(buf.str(), path);
}

const Config::Entry& Config::at(const std::string& key) const {
    auto it = entries_.find(key);
    if (it == entries_.end())
        throw ConfigError(name_ + ": missing required key '" + key + "'");
    it->second.used = true;
    return it->second;
}

void Config::fail(const std::string& key, const std::string& what) const {
    auto it = entries_.find(key);
    int line = it == entries_.end() ? 0 : it->second.line;
    throw ConfigError(name_ + ":" + std::to_string(line) + ": key '" + key + "': " + what);
}

bool Config::has(const std::string& key) const { return entries_.count(key) != 0; }

std::string Config::get_str(const std::string& key) const { return at(key).value; }

std::string Config::get_str(const std::string& key, const std::string& fallback) const {
    return has(key) ? get_str(key) : fallback;
}

double Config::get_double(const std::string& key) const {
    const std::string& v = at(key).value;
    char* end = nullptr;
    double x = std::strtod(v.c_str(), &end);
    if (v.empty() || end != v.c_str() + v.size())
        fail(key, "expected a number, got '" + v + "'");
    return x;
}

double Config::get_double(const std::string& key, double fallback) const {
    return has(key) ? get_double(key) : fallback;
}

int Config::get_int(const std::string& key) const {
    const std::string& v = at(key).value;
    char* end = nullptr;
    long long x = std::strtoll(v.c_str(), &end, 10);
    if (v.empty() || end != v.c_str() + v.size() || x < INT_MIN || x > INT_MAX)
        fail(key, "expected an integer, got '" + v + "'");
    return int(x);
}

int Config::get_int(const std::string& key, int fallback) const {
    return has(key) ? get_int(key) : fallback;
}

std::uint64_t Config::get_u64(const std::string& key, std::uint64_t fallback) const {
    if (!has(key)) return fallback;
    const std::string& v = at(key).value;
    char* end = nullptr;
    unsigned long long x = std::strtoull(v.c_str(), &end, 10);
    if (v.empty() || end != v.c_str() + v.size() || v[0] == '-')
        fail(key, "expected an unsigned integer, got '" + v + "'");
    return x;
}

std::vector<double> Config::get_doubles(const std::string& key) const {
    const std::string& v = at(key).value;
    std::vector<double> out;
    for (const std::string& part : split_list(v)) {
        if (part.empty()) fail(key, "expected a comma-separated list of numbers, got '" + v + "'");
        char* end = nullptr;
        double x = std::strtod(part.c_str(), &end);
        if (end != part.c_str() + part.size())
            fail(key, "bad list element '" + part + "'");
        out.push_back(x);
    }
    return out;
}

std::vector<int> Config::get_ints(const std::string& key) const {
    const std::string& v = at(key).value;
    std::vector<int> out;
    for (const std::string& part : split_list(v)) {
        if (part.empty()) fail(key, "expected a comma-separated list of integers, got '" + v + "'");
        char* end = nullptr;
        long long x = std::strtoll(part.c_str(), &end, 10);
        if (end != part.c_str() + part.size() || x < INT_MIN || x > INT_MAX)
            fail(key, "bad list element '" + part + "'");
        out.push_back(int(x));
    }
    return out;
}

void Config::check_consumed() const {
    std::string report;
    int shown = 0;
    for (const auto& [key, entry] : entries_) {
        if (entry.used) continue;
        if (shown++ == 3) {
            report += "; ...";
            break;
        }
        if (!report.empty()) report += "; ";
        report += name_ + ":" + std::to_string(entry.line) + ": unknown key '" + key + "'";
    }
    if (!report.empty()) throw ConfigError(report);
}

std::uint64_t Config::content_hash() const { return fnv1a64(raw_); }

// ------------------------------------------------------------ small helpers

std::string csv_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

void parallel_for(int n, int workers, const std::function<void(int)>& fn) {
    if (n <= 0) return;
    int threads = std::clamp(workers, 1, n);
    if (threads == 1) {
        for (int i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<int> next{0};
    std::mutex mu;
    std::exception_ptr first_error;
    auto drain = [&] {
        while (true) {
            int i = next.fetch_add(1);
            if (i >= n) return;
            try {
                fn(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(mu);
                if (!first_error) first_error = std::current_exception();
            }
        }
    };
    std::vector<std::thread> pool;
    for (int k = 1; k < threads; ++k) pool.emplace_back(drain);
    drain();
    for (std::thread& th : pool) th.join();
    if (first_error) std::rethrow_exception(first_error);
}

// --------------------------------------------------------------- artifacts

namespace {

struct RunContext {
    Config cfg;
    fs::path out_dir;
    std::uint64_t seed = 0;
    int workers = 1;
    std::ostream* out = nullptr;
};

void write_text(const fs::path& path, const std::string& body) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
    f << body;
    if (!f) throw std::runtime_error("failed writing '" + path.string() + "'");
}

void write_manifest(const RunContext& ctx, const std::string& subcommand) {
    char hash[20];
    std::snprintf(hash, sizeof hash, "%016llx",
                  static_cast<unsigned long long>(ctx.cfg.content_hash()));
    std::string body;
    body += std::string("tool=") + kToolVersion + "\n";
    body += "subcommand=" + subcommand + "\n";
    body += "config=" + ctx.cfg.name() + "\n";
    body += std::string("config_hash=") + hash + "\n";
    body += "seed=" + std::to_string(ctx.seed) + "\n";
    body += "csv_format=" + std::to_string(kCsvFormat) + "\n";
    body += "checkpoint_format=DLCKPT01\n";
    write_text(ctx.out_dir / "manifest.txt", body);
}

// ---------------------------------------------------------- family builder

std::unique_ptr<ConditionalFamily> build_family(const Config& cfg, std::uint64_t seed) {
    std::string kind = cfg.get_str("family.kind");
    int d_y = cfg.get_int("family.d_y", 1);
    double variance = cfg.get_double("family.variance", 1.0);

    if (kind == "normal") {
        int d_x = cfg.get_int("family.d_x", 1);
        MixtureComponent c{1.0, {Mat(d_x, d_y, 0.0), Vec(d_x, 0.0)}, variance};
        return std::make_unique<GaussianMixtureFamily>(d_x, d_y,
                                                       std::vector<MixtureComponent>{c});
    }

    if (kind == "mixture" || kind == "product") {
        std::vector<double> means = cfg.get_doubles("family.means");
        std::vector<double> weights =
            cfg.has("family.weights") ? cfg.get_doubles("family.weights")
                                      : std::vector<double>(means.size(), 1.0 / double(means.size()));
        if (weights.size() != means.size())
            throw ConfigError(cfg.name() + ": family.weights and family.means lengths differ");
        double gain = cfg.get_double("family.cond_gain", 0.0);
        int d_x = kind == "product" ? 1 : cfg.get_int("family.d_x", 1);
        std::vector<MixtureComponent> comps;
        for (std::size_t i = 0; i < means.size(); ++i)
            comps.push_back({weights[i], {Mat(d_x, d_y, gain), Vec(d_x, means[i])}, variance});
        GaussianMixtureFamily base(d_x, d_y, std::move(comps));
        if (kind == "mixture") return std::make_unique<GaussianMixtureFamily>(std::move(base));
        int copies = cfg.get_int("family.copies");
        return std::make_unique<ProductMixtureFamily>(std::move(base), copies);
    }

    if (kind == "latent") {
        int d_x = cfg.get_int("family.d_x");
        int d_0 = cfg.get_int("family.d_0");
        if (d_0 < 1 || d_0 > d_x)
            throw ConfigError(cfg.name() + ": family.d_0 must lie in [1, family.d_x]");
        std::vector<double> means =
            cfg.has("family.means") ? cfg.get_doubles("family.means") : std::vector<double>{0.0};
        std::vector<MixtureComponent> comps;
        for (double m : means)
            comps.push_back({1.0 / double(means.size()),
                             {Mat(d_0, d_y, 0.0), Vec(d_0, m)}, variance});
        GaussianMixtureFamily latent(d_0, d_y, std::move(comps));

        // random frame with orthonormal columns, derived from the root seed
        RngStream rng = RngStream::named(seed, "family:subspace");
        Mat U(d_x, d_0);
        for (int j = 0; j < d_0; ++j) {
            Vec col(std::size_t(d_x), 0.0);
            for (int i = 0; i < d_x; ++i) col[std::size_t(i)] = rng.normal();
            for (int p = 0; p < j; ++p) {
                double dot = 0.0;
                for (int i = 0; i < d_x; ++i) dot += col[std::size_t(i)] * U(i, p);
                for (int i = 0; i < d_x; ++i) col[std::size_t(i)] -= dot * U(i, p);
            }
            double norm = 0.0;
            for (double v : col) norm += v * v;
            norm = std::sqrt(norm);
            if (norm < 1e-8) throw std::runtime_error("degenerate random subspace frame");
            for (int i = 0; i < d_x; ++i) U(i, j) = col[std::size_t(i)] / norm;
        }
        return std::make_unique<LatentFamily>(std::move(U), std::move(latent));
    }

    throw ConfigError(cfg.name() + ": family.kind '" + kind +
                      "' is not one of normal, mixture, product, latent");
}

// -------------------------------------------------------------- subcommands

int cmd_cover(RunContext& ctx) {
    const Config& cfg = ctx.cfg;
    CoverInputs inp;
    inp.eps_c = cfg.get_double("cover.eps_c");
    inp.n = cfg.get_double("cover.n");
    inp.L = cfg.get_double("cover.L");
    inp.d = cfg.get_int("cover.d", 1);
    inp.R_T = cfg.get_double("cover.R_T", 0.0);
    inp.C_F = cfg.get_double("cover.C_F", 1.0);
    inp.C_F_2inf = cfg.get_double("cover.C_F_2inf", 1.0);
    inp.C_OV = cfg.get_double("cover.C_OV", 1.0);
    inp.C_OV_2inf = cfg.get_double("cover.C_OV_2inf", 1.0);
    inp.C_KQ = cfg.get_double("cover.C_KQ", 1.0);
    inp.C_KQ_2inf = cfg.get_double("cover.C_KQ_2inf", 1.0);
    inp.C_E = cfg.get_double("cover.C_E", 1.0);
    cfg.check_consumed();

    double bound = covering_bound(inp);
    std::string csv =
        "eps_c,n,L,d,R_T,C_F,C_F_2inf,C_OV,C_OV_2inf,C_KQ,C_KQ_2inf,C_E,bound\n";
    for (double v : {inp.eps_c, inp.n, inp.L, double(inp.d), inp.R_T, inp.C_F, inp.C_F_2inf,
                     inp.C_OV, inp.C_OV_2inf, inp.C_KQ, inp.C_KQ_2inf, inp.C_E})
        csv += csv_double(v) + ",";
    csv += csv_double(bound) + "\n";
    write_text(ctx.out_dir / "cover.csv", csv);
    write_manifest(ctx, "cover");
    *ctx.out << "bound " << csv_double(bound) << "\n";
    return 0;
}

int cmd_tv(RunContext& ctx) {
    const Config& cfg = ctx.cfg;
    double mean_a = cfg.get_double("tv.mean_a", 0.0);
    double mean_b = cfg.get_double("tv.mean_b", 1.0);
    double variance = cfg.get_double("tv.variance", 1.0);
    int samples = cfg.get_int("tv.samples", 100000);
    int bins = cfg.get_int("tv.bins", 200);
    cfg.check_consumed();
    if (variance <= 0.0) throw ConfigError(cfg.name() + ": tv.variance must be positive");
    if (samples < 1) throw ConfigError(cfg.name() + ": tv.samples must be positive");

    double sd = std::sqrt(variance);
    const std::size_t count = std::size_t(samples);
    std::vector<Vec> a(count);
    std::vector<Vec> b(count);
    // a fixed shard count keeps the draws identical for any worker count
    constexpr int kShards = 16;
    parallel_for(2 * kShards, ctx.workers, [&](int task) {
        bool side_b = task >= kShards;
        int shard = task % kShards;
        std::vector<Vec>& dst = side_b ? b : a;
        double mean = side_b ? mean_b : mean_a;
        RngStream rng = RngStream::named(ctx.seed, side_b ? "tv:b" : "tv:a",
                                         std::uint64_t(shard));
        std::size_t lo = std::size_t(shard) * std::size_t(samples) / kShards;
        std::size_t hi = std::size_t(shard + 1) * std::size_t(samples) / kShards;
        for (std::size_t i = lo; i < hi; ++i) dst[i] = Vec{mean + sd * rng.normal()};
    });

    TVReport rep = tv_estimate(a, b, bins);
    std::string csv = "tv,bins,samples_per_side\n";
    csv += csv_double(rep.tv) + "," + std::to_string(rep.bins) + "," +
           std::to_string(rep.samples_per_side) + "\n";
    write_text(ctx.out_dir / "tv.csv", csv);
    write_manifest(ctx, "tv");
    *ctx.out << "tv " << csv_double(rep.tv) << "\n";
    return 0;
}

int cmd_approx_sweep(RunContext& ctx) {
    const Config& cfg = ctx.cfg;
    double beta = cfg.get_double("approx.beta", 4.0);
    double C_x = cfg.get_double("approx.C_x", 1.5);
    double t = cfg.get_double("approx.t", 0.5);
    double y = cfg.get_double("approx.y", 0.3);
    std::vector<int> Ns = cfg.has("approx.N_list") ? cfg.get_ints("approx.N_list")
                                                   : std::vector<int>{2, 4, 8, 16};
    double lo = cfg.get_double("approx.grid_lo", -2.0);
    double hi = cfg.get_double("approx.grid_hi", 2.0);
    int points = cfg.get_int("approx.grid_points", 81);
    cfg.check_consumed();
    if (Ns.empty()) throw ConfigError(cfg.name() + ": approx.N_list must not be empty");
    for (int N : Ns)
        if (N < 2) throw ConfigError(cfg.name() + ": approx.N_list entries must be >= 2");
    if (!(hi > lo) || points < 2)
        throw ConfigError(cfg.name() + ": approx grid must satisfy grid_hi > grid_lo, points >= 2");
    if (!(t > 0.0)) throw ConfigError(cfg.name() + ": approx.t must be positive");

    MixtureComponent c0{1.0, {Mat(1, 1, 0.0), Vec{0.0}}, 1.0};
    GaussianMixtureFamily fam(1, 1, std::vector<MixtureComponent>{c0});

    struct Row {
        double wmse = 0.0, sup = 0.0;
    };
    std::vector<Row> rows(Ns.size());
    parallel_for(int(Ns.size()), ctx.workers, [&](int idx) {
        int N = Ns[std::size_t(idx)];
        GridSpec grid{N, C_x, 1, 1};
        HolderParams holder = make_holder(beta, N);
        DiffusedPoly poly = taylor_table(fam, grid, holder);
        ScoreAssemblyConfig acfg = make_assembly_config(fam, grid, holder, t);
        double num = 0.0, den = 0.0, sup = 0.0;
        for (int i = 0; i < points; ++i) {
            double x = lo + (hi - lo) * i / (points - 1);
            double wgt = fam.density(Vec{x}, Vec{y}, t);
            Vec got = generic_score(poly, Vec{x}, Vec{y}, t, acfg);
            Vec want = fam.score(Vec{x}, Vec{y}, t);
            double diff = got[0] - want[0];
            num += wgt * diff * diff;
            den += wgt;
            sup = std::max(sup, std::abs(diff));
        }
        rows[std::size_t(idx)] = {num / den, sup};
    });

    std::string csv = "N,wmse,sup_err\n";
    for (std::size_t i = 0; i < Ns.size(); ++i)
        csv += std::to_string(Ns[i]) + "," + csv_double(rows[i].wmse) + "," +
               csv_double(rows[i].sup) + "\n";
    write_text(ctx.out_dir / "approx.csv", csv);
    write_manifest(ctx, "approx-sweep");
    *ctx.out << "final_wmse " << csv_double(rows.back().wmse) << "\n";
    return 0;
}

int cmd_uat_demo(RunContext& ctx) {
    const Config& cfg = ctx.cfg;
    int D = cfg.get_int("uat.D", 3);
    int d = cfg.get_int("uat.d", 1);
    int L = cfg.get_int("uat.L", 2);
    double delta_q = cfg.get_double("uat.delta_q", 0.25 / std::max(D, 1));
    double R = cfg.get_double("uat.R", 1e10);
    cfg.check_consumed();

    SeqTarget target = [](const Mat& Z) {
        double sum = 0.0;
        for (double v : Z.a) sum += v;
        return sum;
    };
    UatNetwork net = assemble_uat(target, d, L, D, delta_q, R);

    // the network reproduces the target at the quantized grid tokens; cells
    // with two identical columns carry no separable context id and read 0
    std::string csv = "cell,want,got,abs_err,status\n";
    double worst = 0.0;
    std::vector<int> v(std::size_t(d) * std::size_t(L), 1);
    while (true) {
        Mat Z(d, L);
        Mat G(d, L);
        std::string label;
        for (int k = 0; k < d * L; ++k) {
            Z.a[std::size_t(k)] = (v[std::size_t(k)] - 0.5) / D;
            G.a[std::size_t(k)] = double(v[std::size_t(k)]) / D;
            if (k) label += '-';
            label += std::to_string(v[std::size_t(k)]);
        }
        bool duplicate = false;
        for (int l1 = 0; l1 < L && !duplicate; ++l1)
            for (int l2 = l1 + 1; l2 < L && !duplicate; ++l2) {
                bool same = true;
                for (int i = 0; i < d; ++i)
                    if (G(i, l1) != G(i, l2)) same = false;
                duplicate = same;
            }
        double want = target(G);
        double got = net.apply(Z);
        double err = std::abs(got - want);
        if (!duplicate) worst = std::max(worst, err);
        csv += label + "," + csv_double(want) + "," + csv_double(got) + "," + csv_double(err) +
               "," + (duplicate ? "duplicate-columns" : "ok") + "\n";
        int k = 0;
        while (k < d * L && ++v[std::size_t(k)] > D) v[std::size_t(k++)] = 1;
        if (k == d * L) break;
    }
    write_text(ctx.out_dir / "uat.csv", csv);
    write_manifest(ctx, "uat-demo");
    *ctx.out << "max_abs_err " << csv_double(worst) << "\n";
    return 0;
}

DiTConfig model_config(const Config& cfg, const ConditionalFamily& family) {
    DiTConfig mc;
    mc.d_x = family.dim_x();
    mc.d_y = family.dim_y();
    mc.d = cfg.get_int("model.d");
    mc.L = cfg.get_int("model.L");
    mc.s = cfg.get_int("model.s", 4);
    mc.r = cfg.get_int("model.r", 16);
    mc.n_blocks = cfg.get_int("model.n_blocks", 1);
    mc.d_0 = cfg.get_int("model.d_0", 0);
    mc.init_scale = cfg.get_double("model.init_scale", 0.05);
    return mc;
}

TimeWindow window_config(const Config& cfg, const std::string& section) {
    TimeWindow w;
    w.t0 = cfg.get_double(section + ".t0", 0.1);
    w.T = cfg.get_double(section + ".T", 8.0);
    w.steps = cfg.get_int(section + ".steps", 1);
    w.validate();
    return w;
}

int cmd_train(RunContext& ctx) {
    const Config& cfg = ctx.cfg;
    auto family = build_family(cfg, ctx.seed);
    DiTConfig mc = model_config(cfg, *family);
    TrainConfig tc;
    tc.n = cfg.get_int("train.n");
    tc.batch = cfg.get_int("train.batch");
    tc.lr = cfg.get_double("train.lr");
    tc.epochs = cfg.get_int("train.epochs");
    tc.window = window_config(cfg, "train");
    tc.mask_prob = cfg.get_double("train.mask_prob", 0.15);
    tc.time_draws = cfg.get_int("train.time_draws", 1);
    tc.seed = ctx.seed;
    cfg.check_consumed();

    RngStream init = RngStream::named(ctx.seed, "train:init");
    DiTModel model = make_dit(mc, init);
    TrainResult res = train(model, *family, tc);

    std::string csv = "epoch,loss\n";
    for (std::size_t i = 0; i < res.epoch_loss.size(); ++i)
        csv += std::to_string(i) + "," + csv_double(res.epoch_loss[i]) + "\n";
    write_text(ctx.out_dir / "curve.csv", csv);

    if (res.diverged) {
        write_manifest(ctx, "train");
        throw std::runtime_error("training diverged; see curve.csv for the loss trace");
    }
    save_checkpoint(model, (ctx.out_dir / "model.ckpt").string());
    write_manifest(ctx, "train");
    *ctx.out << "final_loss " << csv_double(res.epoch_loss.back()) << "\n";
    return 0;
}

int cmd_risk(RunContext& ctx) {
    const Config& cfg = ctx.cfg;
    std::string checkpoint = cfg.get_str("risk.checkpoint");
    auto family = build_family(cfg, ctx.seed);
    TimeWindow window = window_config(cfg, "risk");
    int mc_points = cfg.get_int("risk.mc_points", 4096);
    cfg.check_consumed();
    if (mc_points < 2) throw ConfigError(cfg.name() + ": risk.mc_points must be >= 2");

    DiTModel model = load_checkpoint(checkpoint);
    RngStream rng = RngStream::named(ctx.seed, "risk:mc");
    RiskReport rep = score_risk(make_score_fn(model), *family, window, mc_points, rng);

    std::string csv = "risk,std_error,mc_points\n";
    csv += csv_double(rep.risk) + "," + csv_double(rep.std_error) + "," +
           std::to_string(rep.mc_points) + "\n";
    write_text(ctx.out_dir / "risk.csv", csv);
    write_manifest(ctx, "risk");
    *ctx.out << "risk " << csv_double(rep.risk) << "\n";
    return 0;
}

int cmd_trend(RunContext& ctx) {
    const Config& cfg = ctx.cfg;
    std::string kind = cfg.get_str("trend.kind");

    TrendConfig tc;
    tc.t_max = cfg.get_double("trend.t_max", tc.t_max);
    tc.d_y = cfg.get_int("trend.d_y", tc.d_y);
    tc.mix_shift = cfg.get_double("trend.mix_shift", tc.mix_shift);
    tc.mix_var = cfg.get_double("trend.mix_var", tc.mix_var);
    tc.cond_gain = cfg.get_double("trend.cond_gain", tc.cond_gain);
    tc.s = cfg.get_int("trend.s", tc.s);
    tc.r = cfg.get_int("trend.r", tc.r);
    tc.n_blocks = cfg.get_int("trend.n_blocks", tc.n_blocks);
    tc.init_scale = cfg.get_double("trend.init_scale", tc.init_scale);
    tc.n_train = cfg.get_int("trend.n_train", tc.n_train);
    tc.batch = cfg.get_int("trend.batch", tc.batch);
    tc.lr = cfg.get_double("trend.lr", tc.lr);
    tc.epochs = cfg.get_int("trend.epochs", tc.epochs);
    tc.mask_prob = cfg.get_double("trend.mask_prob", tc.mask_prob);
    tc.time_draws = cfg.get_int("trend.time_draws", tc.time_draws);
    tc.n_test = cfg.get_int("trend.n_test", tc.n_test);
    tc.risk_points = cfg.get_int("trend.risk_points", tc.risk_points);
    tc.root_seed = ctx.seed;

    std::vector<std::uint64_t> seeds;
    for (int s : cfg.has("trend.seeds") ? cfg.get_ints("trend.seeds") : std::vector<int>{1, 2, 3}) {
        if (s < 0) throw ConfigError(cfg.name() + ": trend.seeds must be nonnegative");
        seeds.push_back(std::uint64_t(s));
    }

    std::vector<TrendSetting> settings;
    if (kind == "dx") {
        double t0 = cfg.get_double("trend.t0", 0.5);
        std::vector<int> dxs = cfg.has("trend.dx_list") ? cfg.get_ints("trend.dx_list")
                                                        : std::vector<int>{4, 16, 64};
        for (int dx : dxs) settings.push_back({"dx" + std::to_string(dx), dx, t0});
    } else if (kind == "t0") {
        int d_x = cfg.get_int("trend.d_x", 16);
        std::vector<double> t0s = cfg.has("trend.t0_list")
                                      ? cfg.get_doubles("trend.t0_list")
                                      : std::vector<double>{0.5, 0.2, 0.1, 0.05};
        for (double t0 : t0s) {
            char name[32];
            std::snprintf(name, sizeof name, "t0_%g", t0);
            settings.push_back({name, d_x, t0});
        }
    } else {
        throw ConfigError(cfg.name() + ": trend.kind must be 'dx' or 't0'");
    }
    cfg.check_consumed();
    if (settings.empty() || seeds.empty())
        throw ConfigError(cfg.name() + ": trend sweep needs settings and seeds");
    tc.validate();
    for (const TrendSetting& s : settings)
        if (!(s.t0 > 0.0 && s.t0 < tc.t_max) || s.d_x < 1)
            throw ConfigError(cfg.name() + ": trend setting '" + s.name + "' out of range");

    std::vector<TrendCell> cells(settings.size() * seeds.size());
    parallel_for(int(cells.size()), ctx.workers, [&](int idx) {
        std::size_t si = std::size_t(idx) / seeds.size();
        std::size_t ki = std::size_t(idx) % seeds.size();
        cells[std::size_t(idx)] = run_trend_cell(settings[si], seeds[ki], tc);
    });

    TrendTable table = summarize_trend(std::move(cells), settings);
    write_text(ctx.out_dir / "trend_cells.csv", trend_csv(table));
    write_text(ctx.out_dir / "trend_medians.csv", trend_median_csv(table));
    write_manifest(ctx, "trend");
    int failed = 0;
    for (const TrendCell& c : table.cells)
        if (!c.ok) ++failed;
    *ctx.out << "cells " << table.cells.size() << " failed " << failed << "\n";
    return 0;
}

int cmd_sample(RunContext& ctx) {
    const Config& cfg = ctx.cfg;
    auto family = build_family(cfg, ctx.seed);
    int n_samples = cfg.get_int("sample.n_samples", 1000);
    TimeWindow window;
    window.t0 = cfg.get_double("sample.t0", 0.05);
    window.T = cfg.get_double("sample.T", 8.0);
    window.steps = cfg.get_int("sample.steps", 400);
    window.validate();
    double eta = cfg.get_double("sample.eta", 0.0);
    int d_y = family->dim_y();
    Vec cond = cfg.has("sample.cond") ? cfg.get_doubles("sample.cond") : Vec(std::size_t(d_y), 0.5);
    bool use_checkpoint = cfg.has("sample.checkpoint");
    std::string checkpoint = cfg.get_str("sample.checkpoint", "");
    cfg.check_consumed();

    if (n_samples < 1) throw ConfigError(cfg.name() + ": sample.n_samples must be positive");
    if (int(cond.size()) != d_y)
        throw ConfigError(cfg.name() + ": sample.cond must have family.d_y entries");
    if (eta < 0.0) throw ConfigError(cfg.name() + ": sample.eta must be nonnegative");

    ScoreFn base;
    DiTModel model;
    if (use_checkpoint) {
        model = load_checkpoint(checkpoint);
        base = make_score_fn(model);
    } else {
        // the exact oracle has no unconditional branch, so guidance needs a
        // trained checkpoint
        if (eta > 0.0)
            throw ConfigError(cfg.name() +
                              ": sample.eta > 0 requires sample.checkpoint (the oracle score "
                              "has no unconditional branch)");
        const ConditionalFamily* fam = family.get();
        base = [fam](const Vec& x, const Cond& y, double t) {
            if (!y) throw std::runtime_error("oracle score queried without a condition");
            return fam->score(x, *y, t);
        };
    }
    ScoreFn eff = [&base, eta](const Vec& x, const Cond& y, double t) {
        if (eta == 0.0 || !y) return base(x, y, t);
        return guided_score(base, x, *y, t, eta);
    };

    const int d_x = family->dim_x();
    const std::size_t n_total = std::size_t(n_samples);
    std::vector<Vec> samples(n_total);
    constexpr int kShards = 16;
    int shards = std::min(kShards, n_samples);
    parallel_for(shards, ctx.workers, [&](int shard) {
        RngStream rng = RngStream::named(ctx.seed, "sample:path", std::uint64_t(shard));
        std::size_t lo = std::size_t(shard) * std::size_t(n_samples) / std::size_t(shards);
        std::size_t hi = std::size_t(shard + 1) * std::size_t(n_samples) / std::size_t(shards);
        for (std::size_t i = lo; i < hi; ++i)
            samples[i] = backward_sample(eff, window, Cond(cond), d_x, rng);
    });

    std::string csv;
    for (int k = 0; k < d_x; ++k) {
        if (k) csv += ',';
        csv += "x" + std::to_string(k);
    }
    csv += '\n';
    Vec mean(std::size_t(d_x), 0.0);
    for (const Vec& s : samples) {
        for (int k = 0; k < d_x; ++k) {
            if (k) csv += ',';
            csv += csv_double(s[std::size_t(k)]);
            mean[std::size_t(k)] += s[std::size_t(k)] / double(n_samples);
        }
        csv += '\n';
    }
    write_text(ctx.out_dir / "samples.csv", csv);
    write_manifest(ctx, "sample");
    *ctx.out << "mean";
    for (double m : mean) *ctx.out << " " << csv_double(m);
    *ctx.out << "\n";
    return 0;
}

}  // namespace

// ---------------------------------------------------------------- CLI glue

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"score-model experiment runner"};
    app.name("difflab");

    std::string config_path;
    std::string out_dir = ".";
    std::uint64_t seed_flag = 0;
    int workers = int(std::thread::hardware_concurrency());
    if (workers < 1) workers = 1;

    app.add_option("--config", config_path, "experiment configuration file");
    CLI::Option* seed_opt = app.add_option("--seed", seed_flag, "root seed (overrides the config)");
    app.add_option("--workers", workers, "worker thread count")->check(CLI::PositiveNumber);
    app.add_option("--out-dir", out_dir, "directory for CSV artifacts and the manifest");
    app.require_subcommand(1);

    const std::pair<const char*, const char*> kSubcommands[] = {
        {"train", "fit a score model and save curve.csv plus model.ckpt"},
        {"risk", "Monte-Carlo score-matching risk of a checkpoint"},
        {"approx-sweep", "piecewise-polynomial score error over a grid-size list"},
        {"uat-demo", "closed-form memorization network on a token grid"},
        {"cover", "covering-number generalization bound for given norm budgets"},
        {"tv", "histogram total-variation estimate between two Gaussians"},
        {"trend", "dimension or early-stopping sweep with per-cell training"},
        {"sample", "backward-process sampler with optional guidance"},
    };
    for (const auto& [name, desc] : kSubcommands) app.add_subcommand(name, desc)->fallthrough();

    std::vector<const char*> argv;
    argv.push_back("difflab");
    for (const std::string& a : args) argv.push_back(a.c_str());
    try {
        app.parse(int(argv.size()), argv.data());
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return 0;
    } catch (const CLI::ParseError& e) {
        err << e.what() << "\n" << app.help();
        return 2;
    }

    if (config_path.empty()) {
        err << "--config is required\n" << app.help();
        return 2;
    }

    std::string sub = app.get_subcommands().front()->get_name();
    try {
        RunContext ctx;
        ctx.cfg = Config::parse_file(config_path);
        ctx.seed = ctx.cfg.get_u64("seed", 0);
        if (seed_opt->count() > 0) ctx.seed = seed_flag;
        ctx.out_dir = out_dir;
        ctx.workers = workers;
        ctx.out = &out;
        fs::create_directories(ctx.out_dir);

        if (sub == "cover") return cmd_cover(ctx);
        if (sub == "tv") return cmd_tv(ctx);
        if (sub == "approx-sweep") return cmd_approx_sweep(ctx);
        if (sub == "uat-demo") return cmd_uat_demo(ctx);
        if (sub == "train") return cmd_train(ctx);
        if (sub == "risk") return cmd_risk(ctx);
        if (sub == "trend") return cmd_trend(ctx);
        if (sub == "sample") return cmd_sample(ctx);
        err << "unknown subcommand '" << sub << "'\n" << app.help();
        return 2;
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    }
}

}  // namespace difflab
