#include "difflab/transformer.hpp"

#include "difflab/binio.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <stdexcept>

namespace difflab {

void ReshapeSpec::validate() const {
    if (d_x < 1 || d < 1 || L < 1 || d * L != d_x)
        throw std::invalid_argument("ReshapeSpec: need d * L = d_x with positive factors");
}

Mat reshape(const Vec& x, const ReshapeSpec& spec) {
    spec.validate();
    if (int(x.size()) != spec.d_x) throw std::invalid_argument("reshape: input size mismatch");
    Mat Z(spec.d, spec.L);
    for (int l = 0; l < spec.L; ++l)
        for (int i = 0; i < spec.d; ++i) Z(i, l) = x[std::size_t(l) * spec.d + i];
    return Z;
}

Vec unreshape(const Mat& Z, const ReshapeSpec& spec) {
    spec.validate();
    if (Z.rows != spec.d || Z.cols != spec.L)
        throw std::invalid_argument("unreshape: matrix shape mismatch");
    Vec x(spec.d_x);
    for (int l = 0; l < spec.L; ++l)
        for (int i = 0; i < spec.d; ++i) x[std::size_t(l) * spec.d + i] = Z(i, l);
    return x;
}

Vec time_features(double t) {
    if (!(t > 0.0)) throw std::invalid_argument("time_features: need t > 0");
    double lt = std::log(t);
    Vec f(kTimeFeatures);
    int idx = 0;
    for (int k : {1, 2, 4, 8}) {
        f[idx++] = std::sin(k * lt);
        f[idx++] = std::cos(k * lt);
    }
    return f;
}

namespace {

void check_block_shapes(const TransformerParams& p, int d) {
    int s = p.W_Q.rows, r = p.W_1.rows;
    bool ok = p.W_Q.cols == d && p.W_K.rows == s && p.W_K.cols == d && p.W_V.rows == s &&
              p.W_V.cols == d && p.W_O.rows == d && p.W_O.cols == s && p.W_1.cols == d &&
              p.W_2.rows == d && p.W_2.cols == r && int(p.b_1.size()) == r &&
              int(p.b_2.size()) == d && p.E.rows == d;
    if (!ok) throw std::invalid_argument("TransformerParams: inconsistent shapes");
}

// softmax over the key axis (rows) of each column, with max subtraction
Mat column_softmax(const Mat& S) {
    Mat P(S.rows, S.cols);
    for (int j = 0; j < S.cols; ++j) {
        double m = -std::numeric_limits<double>::infinity();
        for (int i = 0; i < S.rows; ++i) m = std::max(m, S(i, j));
        double sum = 0.0;
        for (int i = 0; i < S.rows; ++i) {
            double e = std::exp(S(i, j) - m);
            P(i, j) = e;
            sum += e;
        }
        for (int i = 0; i < S.rows; ++i) P(i, j) /= sum;
    }
    return P;
}

Mat attention_body(const TransformerParams& p, const Mat& Z, BlockCache* cache) {
    check_block_shapes(p, Z.rows);
    check_finite(Z, "attention_forward");
    Mat Q = matmul(p.W_Q, Z);
    Mat K = matmul(p.W_K, Z);
    Mat V = matmul(p.W_V, Z);
    Mat S = matmul(transpose(K), Q);  // L' x L', column j scores queries at token j
    Mat P = column_softmax(S);
    Mat A = matmul(V, P);
    Mat out = Z;
    add_scaled(out, matmul(p.W_O, A), 1.0);
    if (cache) {
        cache->Zin = Z;
        cache->Q = std::move(Q);
        cache->K = std::move(K);
        cache->V = std::move(V);
        cache->P = std::move(P);
        cache->A = std::move(A);
    }
    return out;
}

Mat ffn_body(const TransformerParams& p, const Mat& Z, BlockCache* cache) {
    check_block_shapes(p, Z.rows);
    check_finite(Z, "ffn_forward");
    Mat H = matmul(p.W_1, Z);
    for (int i = 0; i < H.rows; ++i)
        for (int j = 0; j < H.cols; ++j) H(i, j) += p.b_1[i];
    Mat R = H;
    for (auto& v : R.a) v = std::max(v, 0.0);
    Mat out = Z;
    add_scaled(out, matmul(p.W_2, R), 1.0);
    for (int i = 0; i < out.rows; ++i)
        for (int j = 0; j < out.cols; ++j) out(i, j) += p.b_2[i];
    if (cache) {
        cache->Zmid = Z;
        cache->H = std::move(H);
    }
    return out;
}

}  // namespace

Mat attention_forward(const TransformerParams& p, const Mat& Z) {
    return attention_body(p, Z, nullptr);
}

Mat ffn_forward(const TransformerParams& p, const Mat& Z) { return ffn_body(p, Z, nullptr); }

Vec trunk_forward(const DiTModel& model, const ReshapeSpec& spec, const Vec& v, const Cond& y,
                  double t, ForwardCache* cache) {
    Mat Z(spec.d, spec.L + 2);
    {
        Mat patches = reshape(v, spec);
        for (int l = 0; l < spec.L; ++l)
            for (int i = 0; i < spec.d; ++i) Z(i, l) = patches(i, l);
    }
    Vec y_tok;
    if (y.has_value()) {
        if (int(y->size()) != model.y_embed.W.cols)
            throw std::invalid_argument("dit_forward: condition size mismatch");
        y_tok = matvec(model.y_embed.W, *y);
        add_scaled(y_tok, model.y_embed.b, 1.0);
    } else {
        y_tok = model.null_token;
    }
    Vec tf = time_features(t);
    Vec t_tok = matvec(model.t_embed.W, tf);
    add_scaled(t_tok, model.t_embed.b, 1.0);
    for (int i = 0; i < spec.d; ++i) {
        Z(i, spec.L) = y_tok[i];
        Z(i, spec.L + 1) = t_tok[i];
    }
    if (model.blocks.empty()) throw std::invalid_argument("dit_forward: model has no blocks");
    // the learned positional encoding enters once, at the trunk input
    if (model.blocks[0].E.cols != spec.L + 2)
        throw std::invalid_argument("dit_forward: positional encoding length mismatch");
    add_scaled(Z, model.blocks[0].E, 1.0);

    if (cache) {
        cache->trunk_in = v;
        cache->t_feats = tf;
        cache->masked = !y.has_value();
        cache->y_used = y.has_value() ? *y : Vec{};
        cache->Z_embedded = Z;
        cache->blocks.assign(model.blocks.size(), BlockCache{});
        cache->t = t;
    }
    for (std::size_t b = 0; b < model.blocks.size(); ++b) {
        BlockCache* bc = cache ? &cache->blocks[b] : nullptr;
        Z = attention_body(model.blocks[b], Z, bc);
        Z = ffn_body(model.blocks[b], Z, bc);
    }
    // drop the two condition tokens, then the shared per-token head
    Mat out(spec.d, spec.L);
    for (int l = 0; l < spec.L; ++l)
        for (int i = 0; i < spec.d; ++i) out(i, l) = Z(i, l);
    if (cache) cache->head_in = out;
    Mat headed(spec.d, spec.L);
    for (int l = 0; l < spec.L; ++l) {
        for (int i = 0; i < spec.d; ++i) {
            double s = model.head.b[i];
            for (int j = 0; j < spec.d; ++j) s += model.head.W(i, j) * out(j, l);
            headed(i, l) = s;
        }
    }
    Vec result = unreshape(headed, spec);
    if (cache) cache->trunk_out = result;
    return result;
}

Vec dit_forward(const DiTModel& model, const Vec& x, const Cond& y, double t) {
    return trunk_forward(model, model.reshape, x, y, t, nullptr);
}

Vec latent_forward(const DiTModel& model, const Vec& x, const Cond& y, double t) {
    if (!model.latent) throw std::invalid_argument("latent_forward: model has no latent spec");
    if (!(t > 0.0)) throw std::invalid_argument("latent_forward: need t > 0");
    const Mat& U = model.latent->W_U;
    if (int(x.size()) != U.rows) throw std::invalid_argument("latent_forward: input size mismatch");
    Vec xe = matvec_t(U, x);
    Vec g = trunk_forward(model, model.latent->reshape, xe, y, t, nullptr);
    ScheduleValue s = noise_schedule(t);
    double inv = 1.0 / (s.sigma * s.sigma);
    Vec out = matvec(U, g);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = (out[i] - x[i]) * inv;
    return out;
}

ScoreFn make_score_fn(const DiTModel& model) {
    return [&model](const Vec& x, const Cond& y, double t) {
        return model.latent ? latent_forward(model, x, y, t) : dit_forward(model, x, y, t);
    };
}

DiTModel make_dit(const DiTConfig& cfg, RngStream& rng) {
    if (cfg.s < 1 || cfg.r < 1 || cfg.n_blocks < 1 || cfg.d_y < 1)
        throw std::invalid_argument("make_dit: bad widths");
    DiTModel m;
    int trunk_dim = cfg.d_0 > 0 ? cfg.d_0 : cfg.d_x;
    m.reshape = {trunk_dim, cfg.d, cfg.L};
    m.reshape.validate();
    int d = cfg.d, Lp = cfg.L + 2;
    double a = cfg.init_scale;

    auto uniform_mat = [&](int r, int c) {
        Mat M(r, c);
        for (auto& v : M.a) v = rng.uniform(-a, a);
        return M;
    };

    // draw order is part of the reproducibility contract: embeddings first,
    // then per-block inner matrices, then the latent encoder
    m.y_embed = {uniform_mat(d, cfg.d_y), Vec(d, 0.0)};
    m.t_embed = {uniform_mat(d, kTimeFeatures), Vec(d, 0.0)};
    m.null_token = Vec(d, 0.0);
    m.blocks.resize(cfg.n_blocks);
    for (int b = 0; b < cfg.n_blocks; ++b) {
        auto& p = m.blocks[b];
        p.W_Q = uniform_mat(cfg.s, d);
        p.W_K = uniform_mat(cfg.s, d);
        p.W_V = uniform_mat(cfg.s, d);
        p.W_O = Mat(d, cfg.s);
        p.W_1 = uniform_mat(cfg.r, d);
        p.W_2 = Mat(d, cfg.r);
        p.b_1 = Vec(cfg.r, 0.0);
        p.b_2 = Vec(d, 0.0);
        p.E = Mat(d, Lp);
        p.heads = 1;
        p.hidden = cfg.s;
        p.mlp = cfg.r;
    }
    // ramp pattern: every row of column k holds 2 (k+1) sqrt(d)
    double gmax = std::sqrt(double(d));
    for (int k = 0; k < Lp; ++k)
        for (int i = 0; i < d; ++i) m.blocks[0].E(i, k) = 2.0 * (k + 1) * gmax;
    m.head = {Mat(d, d), Vec(d, 0.0)};
    if (cfg.d_0 > 0) {
        if (cfg.d_x <= cfg.d_0)
            throw std::invalid_argument("make_dit: latent dimension must be below d_x");
        Mat G(cfg.d_x, cfg.d_0);
        for (auto& v : G.a) v = rng.normal();
        m.latent = LatentSpec{orthonormal_columns(G), m.reshape};
    }
    validate_model(m);
    return m;
}

void validate_model(const DiTModel& model) {
    model.reshape.validate();
    int d = model.reshape.d;
    if (model.y_embed.W.rows != d || int(model.y_embed.b.size()) != d)
        throw std::invalid_argument("DiTModel: y embedding shape mismatch");
    if (model.t_embed.W.rows != d || model.t_embed.W.cols != kTimeFeatures ||
        int(model.t_embed.b.size()) != d)
        throw std::invalid_argument("DiTModel: t embedding shape mismatch");
    if (int(model.null_token.size()) != d)
        throw std::invalid_argument("DiTModel: null token size mismatch");
    if (model.blocks.empty()) throw std::invalid_argument("DiTModel: no blocks");
    for (const auto& p : model.blocks) {
        check_block_shapes(p, d);
        if (p.E.cols != model.reshape.L + 2)
            throw std::invalid_argument("DiTModel: positional encoding length mismatch");
        check_finite(p.W_Q, "DiTModel");
        check_finite(p.W_K, "DiTModel");
        check_finite(p.W_V, "DiTModel");
        check_finite(p.W_O, "DiTModel");
        check_finite(p.W_1, "DiTModel");
        check_finite(p.W_2, "DiTModel");
        check_finite(p.E, "DiTModel");
    }
    if (model.head.W.rows != d || model.head.W.cols != d || int(model.head.b.size()) != d)
        throw std::invalid_argument("DiTModel: head shape mismatch");
    if (model.latent) {
        if (model.latent->W_U.cols != model.reshape.d_x)
            throw std::invalid_argument("DiTModel: latent encoder width mismatch");
        if (model.latent->reshape.d_x != model.reshape.d_x)
            throw std::invalid_argument("DiTModel: latent reshape mismatch");
    }
}

// ------------------------------------------------------------- norm report

NormReport norm_report(const DiTModel& model, const NormReportOptions& opt) {
    NormReport rep;
    auto push = [&rep](const std::string& name, const Mat& M) {
        rep.entries.push_back({name, spectral_norm(M), two_inf_norm(M)});
    };
    push("y_embed.W", model.y_embed.W);
    push("t_embed.W", model.t_embed.W);
    for (std::size_t b = 0; b < model.blocks.size(); ++b) {
        const auto& p = model.blocks[b];
        std::string tag = "block" + std::to_string(b) + ".";
        push(tag + "W_Q", p.W_Q);
        push(tag + "W_K", p.W_K);
        push(tag + "W_V", p.W_V);
        push(tag + "W_O", p.W_O);
        push(tag + "W_1", p.W_1);
        push(tag + "W_2", p.W_2);
        push(tag + "E", p.E);
    }
    push("head.W", model.head.W);
    if (model.latent) push("latent.W_U", model.latent->W_U);

    // output bound: max norm over sampled (x, y, t), one in eight masked
    RngStream rng = RngStream::named(opt.seed, "norm-report");
    int d_x = model.dim_x();
    int d_y = model.dim_y();
    auto fwd = make_score_fn(model);
    double ct = 0.0;
    for (int i = 0; i < opt.samples; ++i) {
        Vec x = rng.uniform_vec(d_x, -opt.box_radius, opt.box_radius);
        Cond y;
        if (i % 8 != 7) y = rng.uniform_vec(d_y);
        double t = opt.t_lo * std::pow(opt.t_hi / opt.t_lo, rng.uniform());
        ct = std::max(ct, norm2(fwd(x, y, t)));
    }
    rep.output_bound = ct;

    // per-block Lipschitz estimate: max difference quotient of the block map
    // over random inputs and small random perturbations
    double lip = 0.0;
    int d = model.reshape.d, Lp = model.reshape.L + 2;
    for (const auto& p : model.blocks) {
        for (int rep_i = 0; rep_i < 200; ++rep_i) {
            Mat Z(d, Lp), dZ(d, Lp);
            for (auto& v : Z.a) v = rng.normal();
            for (auto& v : dZ.a) v = 1e-4 * rng.normal();
            Mat f0 = ffn_forward(p, attention_forward(p, Z));
            Mat Z1 = Z;
            add_scaled(Z1, dZ, 1.0);
            Mat f1 = ffn_forward(p, attention_forward(p, Z1));
            add_scaled(f1, f0, -1.0);
            double q = frobenius(f1) / frobenius(dZ);
            lip = std::max(lip, q);
        }
    }
    rep.block_lipschitz = lip;
    return rep;
}

// ------------------------------------------------------------- checkpoints

namespace {

// layout: magic "DLCKPT01", 12 little-endian int64 header fields
// (trunk d_x, d, L, d_y, time features, s, r, blocks, latent flag, full d_x,
// d_0, reserved), then every tensor as little-endian IEEE doubles in
// declaration order: y_embed, t_embed, null token, per block
// W_Q W_K W_V W_O W_1 W_2 b_1 b_2 E, head, latent W_U.
constexpr char kMagic[8] = {'D', 'L', 'C', 'K', 'P', 'T', '0', '1'};

void put_mat(std::ostream& os, const Mat& M) { put_doubles(os, M.a.data(), M.a.size()); }
void get_mat(std::istream& is, Mat& M) { get_doubles(is, M.a.data(), M.a.size()); }
void put_vec(std::ostream& os, const Vec& v) { put_doubles(os, v.data(), v.size()); }
void get_vec(std::istream& is, Vec& v) { get_doubles(is, v.data(), v.size()); }

}  // namespace

void save_checkpoint(const DiTModel& model, const std::string& path) {
    validate_model(model);
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("checkpoint: cannot open " + path + " for writing");
    os.write(kMagic, 8);
    int s = model.blocks[0].W_Q.rows, r = model.blocks[0].W_1.rows;
    std::uint64_t header[12] = {std::uint64_t(model.reshape.d_x),
                                std::uint64_t(model.reshape.d),
                                std::uint64_t(model.reshape.L),
                                std::uint64_t(model.y_embed.W.cols),
                                std::uint64_t(kTimeFeatures),
                                std::uint64_t(s),
                                std::uint64_t(r),
                                std::uint64_t(model.blocks.size()),
                                std::uint64_t(model.latent ? 1 : 0),
                                std::uint64_t(model.latent ? model.latent->W_U.rows : 0),
                                std::uint64_t(model.latent ? model.latent->W_U.cols : 0),
                                0};
    for (std::uint64_t h : header) put_u64(os, h);
    put_mat(os, model.y_embed.W);
    put_vec(os, model.y_embed.b);
    put_mat(os, model.t_embed.W);
    put_vec(os, model.t_embed.b);
    put_vec(os, model.null_token);
    for (const auto& p : model.blocks) {
        put_mat(os, p.W_Q);
        put_mat(os, p.W_K);
        put_mat(os, p.W_V);
        put_mat(os, p.W_O);
        put_mat(os, p.W_1);
        put_mat(os, p.W_2);
        put_vec(os, p.b_1);
        put_vec(os, p.b_2);
        put_mat(os, p.E);
    }
    put_mat(os, model.head.W);
    put_vec(os, model.head.b);
    if (model.latent) put_mat(os, model.latent->W_U);
    if (!os) throw std::runtime_error("checkpoint: write failed for " + path);
}

DiTModel load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("checkpoint: cannot open " + path);
    char magic[8];
    is.read(magic, 8);
    if (!is || std::memcmp(magic, kMagic, 8) != 0)
        throw std::runtime_error("checkpoint: bad magic in " + path);
    std::uint64_t h[12];
    for (auto& v : h) v = get_u64(is);
    int trunk_dx = int(h[0]), d = int(h[1]), L = int(h[2]), d_y = int(h[3]);
    int tfeat = int(h[4]), s = int(h[5]), r = int(h[6]), n_blocks = int(h[7]);
    bool has_latent = h[8] != 0;
    int full_dx = int(h[9]), d_0 = int(h[10]);
    if (tfeat != kTimeFeatures) throw std::runtime_error("checkpoint: time feature count mismatch");
    if (n_blocks < 1 || n_blocks > 1024) throw std::runtime_error("checkpoint: bad block count");

    DiTModel m;
    m.reshape = {trunk_dx, d, L};
    int Lp = L + 2;
    m.y_embed = {Mat(d, d_y), Vec(d)};
    m.t_embed = {Mat(d, kTimeFeatures), Vec(d)};
    m.null_token = Vec(d);
    get_mat(is, m.y_embed.W);
    get_vec(is, m.y_embed.b);
    get_mat(is, m.t_embed.W);
    get_vec(is, m.t_embed.b);
    get_vec(is, m.null_token);
    m.blocks.resize(n_blocks);
    for (auto& p : m.blocks) {
        p.W_Q = Mat(s, d);
        p.W_K = Mat(s, d);
        p.W_V = Mat(s, d);
        p.W_O = Mat(d, s);
        p.W_1 = Mat(r, d);
        p.W_2 = Mat(d, r);
        p.b_1 = Vec(r);
        p.b_2 = Vec(d);
        p.E = Mat(d, Lp);
        p.heads = 1;
        p.hidden = s;
        p.mlp = r;
        get_mat(is, p.W_Q);
        get_mat(is, p.W_K);
        get_mat(is, p.W_V);
        get_mat(is, p.W_O);
        get_mat(is, p.W_1);
        get_mat(is, p.W_2);
        get_vec(is, p.b_1);
        get_vec(is, p.b_2);
        get_mat(is, p.E);
    }
    m.head = {Mat(d, d), Vec(d)};
    get_mat(is, m.head.W);
    get_vec(is, m.head.b);
    if (has_latent) {
        LatentSpec ls;
        ls.W_U = Mat(full_dx, d_0);
        ls.reshape = m.reshape;
        get_mat(is, ls.W_U);
        m.latent = std::move(ls);
    }
    // byte-exact round trips only: a longer file is a different format
    is.peek();
    if (!is.eof()) throw std::runtime_error("checkpoint: trailing bytes in " + path);
    validate_model(m);
    return m;
}

}  // namespace difflab
