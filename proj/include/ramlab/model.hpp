#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "ramlab/attention.hpp"
#include "ramlab/data.hpp"
#include "ramlab/rng.hpp"
#include "ramlab/tensor.hpp"

namespace ramlab {

enum class MixerKind { global, window, pool };

inline const char* to_string(MixerKind m) {
    switch (m) {
        case MixerKind::global: return "global";
        case MixerKind::window: return "window";
        case MixerKind::pool: return "pool";
    }
    return "?";
}

inline MixerKind mixer_from(const std::string& s) {
    for (MixerKind m : {MixerKind::global, MixerKind::window, MixerKind::pool})
        if (s == to_string(m)) return m;
    throw std::invalid_argument("unknown mixer: " + s);
}

struct SegModelConfig {
    int img_h = 32, img_w = 32;
    int patch = 4;
    int dim = 32;
    int layers = 2;
    int heads = 2;
    int classes = 8;
    MixerKind mixer = MixerKind::global;
    int window = 4;       // tokens per window side (window mixer)
    int pool_window = 3;  // token pooling window side (pool mixer)
    AttentionConfig attention;

    int grid_h() const { return img_h / patch; }
    int grid_w() const { return img_w / patch; }
    int tokens() const { return grid_h() * grid_w(); }
    int d_k() const { return dim / heads; }

    // attention carries its own heads/d_k; keep them slaved to the model dims
    SegModelConfig normalized() const {
        SegModelConfig c = *this;
        c.attention.heads = c.heads;
        c.attention.d_k = c.d_k();
        return c;
    }

    void validate() const {
        if (img_h <= 0 || img_w <= 0 || patch <= 0 || dim <= 0 || layers <= 0 || heads <= 0)
            throw std::invalid_argument("model: nonpositive dimension");
        if (classes < 2) throw std::invalid_argument("model: need at least 2 classes");
        if (img_h % patch != 0 || img_w % patch != 0)
            throw std::invalid_argument("model: image size not divisible by patch size");
        if (dim % heads != 0) throw std::invalid_argument("model: dim not divisible by heads");
        if (mixer == MixerKind::window && (grid_h() % window != 0 || grid_w() % window != 0))
            throw std::invalid_argument("model: token grid not divisible by window");
        if (mixer == MixerKind::pool && (pool_window < 1 || pool_window % 2 == 0))
            throw std::invalid_argument("model: pool window must be odd");
        normalized().attention.validate();
    }

    std::string tag() const {
        std::string t = to_string(mixer);
        t += "-";
        t += to_string(attention.mode);
        return t;
    }
};

struct Param {
    std::string name;
    Tensor value;
};

struct SegModel {
    SegModelConfig cfg;
    std::vector<Param> params;

    int find(const std::string& name) const {
        for (size_t i = 0; i < params.size(); ++i)
            if (params[i].name == name) return int(i);
        throw std::invalid_argument("model: unknown parameter " + name);
    }
    const Tensor& p(const std::string& name) const { return params[size_t(find(name))].value; }
    Tensor& p(const std::string& name) { return params[size_t(find(name))].value; }
};

inline SegModel model_init(const SegModelConfig& cfg_in, uint64_t seed) {
    SegModelConfig cfg = cfg_in.normalized();
    cfg.validate();
    SegModel m;
    m.cfg = cfg;
    RngState rng = RngState(seed).child("init");
    auto normal = [&](std::vector<int> shape, double std_) {
        Tensor t(std::move(shape));
        for (int64_t i = 0; i < t.size(); ++i) t[i] = std_ * rng.normal();
        return t;
    };
    auto add_param = [&](std::string name, Tensor t) { m.params.push_back({std::move(name), std::move(t)}); };

    const int in_slot = cfg.patch * cfg.patch * 3;
    add_param("embed.w", normal({cfg.dim, in_slot}, 0.02));
    add_param("embed.b", Tensor::filled({cfg.dim}, 0.0));

    // learned position embedding, sinusoidally initialized so query-key
    // products can express relative-position functions from the start
    Tensor pos({cfg.tokens(), cfg.dim});
    if (cfg.dim % 4 == 0) {
        const int pairs = cfg.dim / 4;
        for (int ti = 0; ti < cfg.grid_h(); ++ti)
            for (int tj = 0; tj < cfg.grid_w(); ++tj) {
                double* row = pos.data() + int64_t(ti * cfg.grid_w() + tj) * cfg.dim;
                for (int k = 0; k < pairs; ++k) {
                    double omega = 1.0 / std::pow(100.0, double(k) / double(pairs));
                    row[4 * k + 0] = 0.1 * std::sin(omega * tj);
                    row[4 * k + 1] = 0.1 * std::cos(omega * tj);
                    row[4 * k + 2] = 0.1 * std::sin(omega * ti);
                    row[4 * k + 3] = 0.1 * std::cos(omega * ti);
                }
            }
    } else {
        pos = normal({cfg.tokens(), cfg.dim}, 0.02);
    }
    add_param("pos", pos);
    for (int l = 0; l < cfg.layers; ++l) {
        std::string pre = "layer" + std::to_string(l) + ".";
        add_param(pre + "ln1.g", Tensor::filled({cfg.dim}, 1.0));
        add_param(pre + "ln1.b", Tensor::filled({cfg.dim}, 0.0));
        if (cfg.mixer != MixerKind::pool) {
            for (int h = 0; h < cfg.heads; ++h) {
                std::string hp = pre + "attn.h" + std::to_string(h) + ".";
                add_param(hp + "wq", normal({cfg.d_k(), cfg.dim}, 0.02));
                add_param(hp + "wk", normal({cfg.d_k(), cfg.dim}, 0.02));
                add_param(hp + "wv", normal({cfg.d_k(), cfg.dim}, 0.02));
                if (cfg.attention.mode == AttentionMode::learnable)
                    add_param(hp + "scale", Tensor({1}, {1.0}));
            }
            add_param(pre + "attn.wo", normal({cfg.dim, cfg.heads * cfg.d_k()}, 0.02));
        }
        add_param(pre + "ln2.g", Tensor::filled({cfg.dim}, 1.0));
        add_param(pre + "ln2.b", Tensor::filled({cfg.dim}, 0.0));
        add_param(pre + "mlp.w1", normal({2 * cfg.dim, cfg.dim}, 0.02));
        add_param(pre + "mlp.b1", Tensor::filled({2 * cfg.dim}, 0.0));
        add_param(pre + "mlp.w2", normal({cfg.dim, 2 * cfg.dim}, 0.02));
        add_param(pre + "mlp.b2", Tensor::filled({cfg.dim}, 0.0));
    }
    add_param("final.g", Tensor::filled({cfg.dim}, 1.0));
    add_param("final.b", Tensor::filled({cfg.dim}, 0.0));
    add_param("cls.w", normal({cfg.classes, cfg.dim}, 0.02));
    add_param("cls.b", Tensor::filled({cfg.classes}, 0.0));
    return m;
}

// Copy of the model whose parameters are tracked leaves on the tape.
inline SegModel track(const SegModel& m, Tape& tape) {
    SegModel t = m;
    for (auto& p : t.params) p.value = tape.leaf(p.value);
    return t;
}

namespace detail {

struct ModelTables {
    std::vector<int64_t> im2tok;
    std::vector<int64_t> upsample;
    Tensor pool_mat;                        // pool mixer only
    std::vector<std::vector<int>> windows;  // token ids per window
    std::vector<int> token_pos;             // token id -> row in window-major concat
};

inline ModelTables build_tables(const SegModelConfig& cfg) {
    ModelTables t;
    const int P = cfg.patch, gw = cfg.grid_w(), gh = cfg.grid_h();
    const int W = cfg.img_w, C = cfg.classes, N = cfg.tokens();

    t.im2tok.resize(size_t(N) * size_t(P) * size_t(P) * 3);
    for (int ti = 0; ti < gh; ++ti)
        for (int tj = 0; tj < gw; ++tj)
            for (int pi = 0; pi < P; ++pi)
                for (int pj = 0; pj < P; ++pj)
                    for (int c = 0; c < 3; ++c) {
                        int64_t out = ((int64_t(ti) * gw + tj) * P * P + pi * P + pj) * 3 + c;
                        int64_t src = ((int64_t(ti) * P + pi) * W + (int64_t(tj) * P + pj)) * 3 + c;
                        t.im2tok[size_t(out)] = src;
                    }

    t.upsample.resize(size_t(cfg.img_h) * size_t(W) * size_t(C));
    for (int i = 0; i < cfg.img_h; ++i)
        for (int j = 0; j < W; ++j)
            for (int c = 0; c < C; ++c) {
                int64_t out = (int64_t(i) * W + j) * C + c;
                int64_t tok = int64_t(i / P) * gw + (j / P);
                t.upsample[size_t(out)] = tok * C + c;
            }

    if (cfg.mixer == MixerKind::pool) {
        t.pool_mat = Tensor({N, N});
        const int r = (cfg.pool_window - 1) / 2;
        for (int ti = 0; ti < gh; ++ti)
            for (int tj = 0; tj < gw; ++tj) {
                int u = ti * gw + tj;
                std::vector<int> nb;
                for (int di = -r; di <= r; ++di)
                    for (int dj = -r; dj <= r; ++dj) {
                        int ni = ti + di, nj = tj + dj;
                        if (ni < 0 || ni >= gh || nj < 0 || nj >= gw) continue;
                        nb.push_back(ni * gw + nj);
                    }
                for (int v : nb) t.pool_mat.at(u, v) = 1.0 / double(nb.size());
            }
    }

    if (cfg.mixer == MixerKind::window) {
        const int w = cfg.window;
        t.token_pos.assign(size_t(N), 0);
        int pos = 0;
        for (int wi = 0; wi < gh / w; ++wi)
            for (int wj = 0; wj < gw / w; ++wj) {
                std::vector<int> ids;
                for (int di = 0; di < w; ++di)
                    for (int dj = 0; dj < w; ++dj) {
                        int tok = (wi * w + di) * gw + (wj * w + dj);
                        ids.push_back(tok);
                        t.token_pos[size_t(tok)] = pos++;
                    }
                t.windows.push_back(std::move(ids));
            }
    }
    return t;
}

}  // namespace detail

enum class RunMode { train, eval };

struct ForwardOpts {
    RunMode mode = RunMode::eval;
    bool rad_enabled = true;  // receptive-field analysis turns RAD off
    AttentionTrace* trace = nullptr;
};

struct ForwardOut {
    Tensor pixel_logits;  // {H*W, C}
    Tensor pixel_probs;   // {H*W, C}, rows sum to 1
};

namespace detail {
inline AttentionParams layer_attention_params(const SegModel& m, int layer) {
    AttentionParams w;
    std::string pre = "layer" + std::to_string(layer) + ".";
    for (int h = 0; h < m.cfg.heads; ++h) {
        std::string hp = pre + "attn.h" + std::to_string(h) + ".";
        w.w_q.push_back(m.p(hp + "wq"));
        w.w_k.push_back(m.p(hp + "wk"));
        w.w_v.push_back(m.p(hp + "wv"));
        if (m.cfg.attention.mode == AttentionMode::learnable)
            w.head_scale.push_back(m.p(hp + "scale"));
    }
    w.w_o = m.p(pre + "attn.wo");
    return w;
}
}  // namespace detail

// Pre-LN transformer over patch tokens; token logits are nearest-neighbor
// upsampled by the patch factor, then softmaxed per pixel. The rng argument
// only feeds RAD; with RAD inactive the forward is deterministic.
inline ForwardOut model_forward(const SegModel& m, const Tensor& x, const ForwardOpts& opts,
                                RngState rng) {
    const auto& cfg = m.cfg;
    if (x.shape != std::vector<int>{cfg.img_h, cfg.img_w, 3})
        throw std::invalid_argument("model_forward: input shape mismatch");
    for (int64_t i = 0; i < x.size(); ++i)
        if (x[i] < -0.5 || x[i] > 1.5)
            throw std::invalid_argument("model_forward: input far outside [0,1]");

    auto tables = detail::build_tables(cfg);
    const bool rad_active =
        (opts.mode == RunMode::train || cfg.attention.rad_at_eval) && opts.rad_enabled;

    Tensor tokens = gather_flat(x, tables.im2tok, {cfg.tokens(), cfg.patch * cfg.patch * 3});
    Tensor e = add(matmul_nt(tokens, m.p("embed.w")), m.p("embed.b"));
    e = add(e, m.p("pos"));

    for (int l = 0; l < cfg.layers; ++l) {
        std::string pre = "layer" + std::to_string(l) + ".";
        RngState lrng = rng.child("layer", uint64_t(l));
        Tensor h1 = layernorm(e, m.p(pre + "ln1.g"), m.p(pre + "ln1.b"));
        Tensor mix;
        if (cfg.mixer == MixerKind::pool) {
            mix = matmul(tables.pool_mat, h1);
        } else if (cfg.mixer == MixerKind::global) {
            mix = attention_forward(h1, detail::layer_attention_params(m, l), cfg.attention, lrng,
                                    rad_active, opts.trace, l);
        } else {
            auto w = detail::layer_attention_params(m, l);
            std::vector<Tensor> outs;
            outs.reserve(tables.windows.size());
            for (size_t wi = 0; wi < tables.windows.size(); ++wi) {
                Tensor rows = gather_rows(h1, tables.windows[wi]);
                outs.push_back(attention_forward(rows, w, cfg.attention,
                                                 lrng.child("window", uint64_t(wi)), rad_active,
                                                 opts.trace, l, int(wi), &tables.windows[wi]));
            }
            Tensor cat = outs.size() == 1 ? outs[0] : concat_rows(outs);
            mix = gather_rows(cat, tables.token_pos);
        }
        e = add(e, mix);
        Tensor h2 = layernorm(e, m.p(pre + "ln2.g"), m.p(pre + "ln2.b"));
        Tensor f = add(matmul_nt(h2, m.p(pre + "mlp.w1")), m.p(pre + "mlp.b1"));
        f = gelu(f);
        f = add(matmul_nt(f, m.p(pre + "mlp.w2")), m.p(pre + "mlp.b2"));
        e = add(e, f);
    }
    Tensor hf = layernorm(e, m.p("final.g"), m.p("final.b"));
    Tensor tok_logits = add(matmul_nt(hf, m.p("cls.w")), m.p("cls.b"));

    ForwardOut out;
    out.pixel_logits = gather_flat(tok_logits, tables.upsample,
                                   {cfg.img_h * cfg.img_w, cfg.classes});
    out.pixel_probs = softmax_rows(out.pixel_logits);
    return out;
}

// Mean per-pixel cross-entropy against the label map; probabilities are
// floored at 1e-12 inside the log. Label smoothing spreads smoothing/C mass
// over all classes, which caps the logit margins a confident model grows.
inline Tensor pixel_cross_entropy(const ForwardOut& fwd, const LabelMap& labels,
                                  double smoothing = 0.0) {
    if (int64_t(labels.v.size()) != fwd.pixel_probs.dim(0))
        throw std::invalid_argument("pixel_cross_entropy: label count mismatch");
    const double n = double(labels.v.size());
    Tensor logp = log(clamp_min(fwd.pixel_probs, 1e-12));
    Tensor picked = select_per_row(logp, labels.v);
    Tensor loss = scale(sum(picked), -(1.0 - smoothing) / n);
    if (smoothing > 0.0) {
        const double c = double(fwd.pixel_probs.dim(1));
        loss = add(loss, scale(sum(logp), -smoothing / (c * n)));
    }
    return loss;
}

inline LabelMap predict_labels(const SegModel& m, const Tensor& x, RngState rng) {
    ForwardOpts opts;
    ForwardOut out = model_forward(m, x, opts, rng);
    LabelMap pred(m.cfg.img_h, m.cfg.img_w);
    const int C = m.cfg.classes;
    for (int64_t p = 0; p < pred.size(); ++p) {
        const double* row = out.pixel_probs.data() + p * C;
        int arg = 0;
        for (int c = 1; c < C; ++c)
            if (row[c] > row[arg]) arg = c;
        pred.v[size_t(p)] = arg;
    }
    return pred;
}

}  // namespace ramlab
