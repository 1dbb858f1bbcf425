#pragma once

#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "ramlab/rng.hpp"
#include "ramlab/tensor.hpp"

namespace ramlab {

enum class AttentionMode { baseline, mas, rad, ram, learnable, temperature };

inline const char* to_string(AttentionMode m) {
    switch (m) {
        case AttentionMode::baseline: return "baseline";
        case AttentionMode::mas: return "mas";
        case AttentionMode::rad: return "rad";
        case AttentionMode::ram: return "ram";
        case AttentionMode::learnable: return "learnable";
        case AttentionMode::temperature: return "temperature";
    }
    return "?";
}

inline AttentionMode attention_mode_from(const std::string& s) {
    for (AttentionMode m : {AttentionMode::baseline, AttentionMode::mas, AttentionMode::rad,
                            AttentionMode::ram, AttentionMode::learnable, AttentionMode::temperature})
        if (s == to_string(m)) return m;
    throw std::invalid_argument("unknown attention mode: " + s);
}

struct AttentionConfig {
    AttentionMode mode = AttentionMode::baseline;
    double threshold_T = 0.3;
    double dropout_p = 0.5;
    double temperature_tau = 2.0;
    int heads = 2;
    int d_k = 16;
    bool rad_at_eval = true;

    bool uses_mas() const { return mode == AttentionMode::mas || mode == AttentionMode::ram; }
    bool uses_rad() const { return mode == AttentionMode::rad || mode == AttentionMode::ram; }

    void validate() const {
        if (heads < 1 || d_k < 1) throw std::invalid_argument("attention: heads/d_k must be positive");
        if (uses_mas() && !(threshold_T > 0.0 && threshold_T < 1.0))
            throw std::invalid_argument("attention: threshold_T must lie strictly in (0,1)");
        if (uses_rad() && !(dropout_p >= 0.0 && dropout_p < 1.0))
            throw std::invalid_argument("attention: dropout_p must lie in [0,1)");
        if (mode == AttentionMode::temperature && !(temperature_tau > 0.0))
            throw std::invalid_argument("attention: temperature_tau must be positive");
    }
};

// Per (layer, head[, window]) record of the matrices the attention-targeting
// losses need. Tensors stay attached to the forward tape, so losses built
// from them back-propagate into the input.
struct AttentionTraceEntry {
    int layer = 0;
    int head = 0;
    int window = -1;  // -1: global (single window)
    std::vector<int> token_ids;  // global token index of each row/column
    Tensor logits;          // A = Q K^T / sqrt(d_k); also the key-query product B
    Tensor transformed;     // A' (mas/ram only)
    Tensor weights;         // M, row-stochastic, pre-dropout
    Tensor weights_dropped; // M' (rad/ram only; equals M when dropout inactive)
};

struct AttentionTrace {
    std::vector<AttentionTraceEntry> entries;
};

// A' = 1/2 (A/(1+|A|) + 1) log((N-1) T/(1-T)). Per-entry strictly increasing,
// so row-wise argmax is preserved; after softmax the max entry is bounded by
// T whenever T >= 1/N (below that no row-stochastic matrix can comply).
inline Tensor mas_transform(const Tensor& a, double threshold_T, int n_tokens) {
    if (!(threshold_T > 0.0 && threshold_T < 1.0))
        throw std::invalid_argument("mas_transform: T must lie strictly in (0,1)");
    if (n_tokens < 2) throw std::invalid_argument("mas_transform: need at least 2 tokens");
    double bound = std::log(double(n_tokens - 1) * threshold_T / (1.0 - threshold_T));
    return scale(offset(saturate(a), 1.0), 0.5 * bound);
}

// Inverted dropout on the normalized attention matrix: entries are zeroed
// with probability p and survivors scaled by 1/(1-p), so the expectation
// equals the input. active=false is the identity.
inline Tensor rad_apply(const Tensor& m, double p, RngState& rng, bool active) {
    if (!(p >= 0.0 && p < 1.0)) throw std::invalid_argument("rad_apply: p must lie in [0,1)");
    if (!active || p == 0.0) return m;
    Tensor mask(m.shape);
    const double keep = 1.0 / (1.0 - p);
    for (int64_t i = 0; i < mask.size(); ++i) mask[i] = rng.bernoulli(p) ? 0.0 : keep;
    return mul(m, mask);
}

struct AttentionParams {
    std::vector<Tensor> w_q, w_k, w_v;  // per head: d_k x d_model
    Tensor w_o;                         // d_model x (heads * d_k)
    std::vector<Tensor> head_scale;     // learnable mode: per head {1}
};

// One multi-head attention call over x [N x d_model]. The refinement mode
// decides how the logits A become the row-stochastic M; RAD applies after
// normalization, per head, with a substream split off per head.
inline Tensor attention_forward(const Tensor& x, const AttentionParams& w,
                                const AttentionConfig& cfg, RngState rng, bool rad_active,
                                AttentionTrace* trace = nullptr, int layer = 0, int window = -1,
                                const std::vector<int>* token_ids = nullptr) {
    cfg.validate();
    const int n = x.dim(0);
    if (int(w.w_q.size()) != cfg.heads || int(w.w_k.size()) != cfg.heads ||
        int(w.w_v.size()) != cfg.heads)
        throw std::invalid_argument("attention_forward: weight count != heads");
    std::vector<Tensor> head_outs;
    head_outs.reserve(size_t(cfg.heads));
    for (int h = 0; h < cfg.heads; ++h) {
        Tensor q = matmul_nt(x, w.w_q[size_t(h)]);
        Tensor k = matmul_nt(x, w.w_k[size_t(h)]);
        Tensor v = matmul_nt(x, w.w_v[size_t(h)]);
        Tensor logits = scale(matmul_nt(q, k), 1.0 / std::sqrt(double(cfg.d_k)));

        Tensor transformed;
        Tensor m;
        switch (cfg.mode) {
            case AttentionMode::baseline:
            case AttentionMode::rad:
                m = softmax_rows(logits);
                break;
            case AttentionMode::mas:
            case AttentionMode::ram:
                transformed = mas_transform(logits, cfg.threshold_T, n);
                m = softmax_rows(transformed);
                break;
            case AttentionMode::learnable:
                m = softmax_rows(mul(logits, w.head_scale[size_t(h)]));
                break;
            case AttentionMode::temperature:
                m = softmax_rows(scale(logits, 1.0 / cfg.temperature_tau));
                break;
        }

        Tensor m_used = m;
        Tensor dropped;
        if (cfg.uses_rad()) {
            RngState head_rng = rng.child("head", uint64_t(h));
            dropped = rad_apply(m, cfg.dropout_p, head_rng, rad_active);
            m_used = dropped;
        }
        head_outs.push_back(matmul(m_used, v));

        if (trace) {
            AttentionTraceEntry e;
            e.layer = layer;
            e.head = h;
            e.window = window;
            if (token_ids) {
                e.token_ids = *token_ids;
            } else {
                e.token_ids.resize(size_t(n));
                std::iota(e.token_ids.begin(), e.token_ids.end(), 0);
            }
            e.logits = logits;
            e.transformed = transformed;
            e.weights = m;
            e.weights_dropped = dropped;
            trace->entries.push_back(std::move(e));
        }
    }
    Tensor cat = head_outs.size() == 1 ? head_outs[0] : concat_cols(head_outs);
    return matmul_nt(cat, w.w_o);
}

// True iff every recorded M obeys max_ij M_ij <= T within 1e-9.
inline bool max_bound_check(const AttentionTrace& trace, double threshold_T) {
    if (trace.entries.empty()) throw std::invalid_argument("max_bound_check: empty trace");
    for (const auto& e : trace.entries) {
        if (!e.weights.defined()) throw std::invalid_argument("max_bound_check: trace missing M");
        for (double v : *e.weights.store)
            if (v > threshold_T + 1e-9) return false;
    }
    return true;
}

}  // namespace ramlab
