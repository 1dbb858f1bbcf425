#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "ramlab/data.hpp"
#include "ramlab/metrics.hpp"
#include "ramlab/model.hpp"
#include "ramlab/targets.hpp"

namespace ramlab {

enum class AttackMethod { pgd, dag, ipatch, ssap, patchfool, attnfool, eot, maxvardag, maxattndag };

inline const char* to_string(AttackMethod m) {
    switch (m) {
        case AttackMethod::pgd: return "pgd";
        case AttackMethod::dag: return "dag";
        case AttackMethod::ipatch: return "ipatch";
        case AttackMethod::ssap: return "ssap";
        case AttackMethod::patchfool: return "patchfool";
        case AttackMethod::attnfool: return "attnfool";
        case AttackMethod::eot: return "eot";
        case AttackMethod::maxvardag: return "maxvardag";
        case AttackMethod::maxattndag: return "maxattndag";
    }
    return "?";
}

inline AttackMethod attack_method_from(const std::string& s) {
    for (AttackMethod m : {AttackMethod::pgd, AttackMethod::dag, AttackMethod::ipatch,
                           AttackMethod::ssap, AttackMethod::patchfool, AttackMethod::attnfool,
                           AttackMethod::eot, AttackMethod::maxvardag, AttackMethod::maxattndag})
        if (s == to_string(m)) return m;
    throw std::invalid_argument("unknown attack method: " + s);
}

inline double default_gamma(AttackMethod m) { return m == AttackMethod::pgd ? 0.005 : 1.0; }

inline bool needs_attention_trace(AttackMethod m) {
    return m == AttackMethod::patchfool || m == AttackMethod::attnfool ||
           m == AttackMethod::maxvardag || m == AttackMethod::maxattndag;
}

struct EotSpec {
    int samples = 4;
    int max_translate = 2;
    double noise_std = 0.01;
};

struct AttackSpec {
    AttackMethod method = AttackMethod::dag;
    int steps = 400;
    double gamma = 1.0;
    double alpha = 0.5;
    PatchMask mask;
    AttackTarget target;
    EotSpec eot;

    void validate(const SegModelConfig& cfg) const {
        if (!(gamma > 0.0)) throw std::invalid_argument("attack: gamma must be positive");
        if (steps < 0) throw std::invalid_argument("attack: negative step count");
        if (mask.popcount() <= 0 || mask.top < 0 || mask.left < 0 ||
            mask.top + mask.mh > cfg.img_h || mask.left + mask.mw > cfg.img_w)
            throw std::invalid_argument("attack: mask empty or outside image");
        if (target.target.h != cfg.img_h || target.target.w != cfg.img_w)
            throw std::invalid_argument("attack: target map shape mismatch");
        if (needs_attention_trace(method) && cfg.mixer == MixerKind::pool)
            throw std::invalid_argument(
                "attack: attention-targeting loss needs an attention mixer");
        if (method == AttackMethod::eot && eot.samples < 1)
            throw std::invalid_argument("attack: eot needs at least one sample");
    }
};

struct AttackResult {
    Tensor adv_image;
    std::vector<double> loss_trace;
    std::vector<double> step_linf;  // applied-step L-inf per iteration, before clipping
    int iterations_run = 0;
    MetricsReport metrics;
};

// ---------------------------------------------------------------------------
// loss functions (ascent form: larger = attack progressing)
// ---------------------------------------------------------------------------

// sum over pixels of log Y[i, t_i], probabilities floored at 1e-12
inline Tensor loss_pgd(const Tensor& probs, const LabelMap& target) {
    return sum(log(clamp_min(select_per_row(probs, target.v), 1e-12)));
}

struct DagLoss {
    Tensor loss;
    int64_t active = 0;  // pixels still predicting their ground-truth class
};

// Active set T = {argmax = gt}; ascent on sum_T (Y_target - Y_gt). The
// published descent form subtracts in the opposite order; Algorithm 1 adds
// the gradient, so the sign lives here.
inline DagLoss loss_dag(const Tensor& probs, const LabelMap& gt, const LabelMap& target) {
    const int64_t n = probs.dim(0);
    const int classes = probs.dim(1);
    Tensor active({int(n)});
    int64_t count = 0;
    for (int64_t i = 0; i < n; ++i) {
        const double* row = probs.data() + i * classes;
        int arg = 0;
        for (int c = 1; c < classes; ++c)
            if (row[c] > row[arg]) arg = c;
        if (arg == gt.v[size_t(i)]) {
            active[i] = 1.0;
            ++count;
        }
    }
    Tensor diff = sub(select_per_row(probs, target.v), select_per_row(probs, gt.v));
    return {sum(mul(diff, active)), count};
}

// Ascent on the negated KL(onehot(target) || Y), eps=1e-10 inside the
// ratio; equals sum log Y_target - n log(1+eps).
inline Tensor loss_ipatch(const Tensor& probs, const LabelMap& target) {
    const double eps = 1e-10;
    Tensor logp = sum(log(clamp_min(select_per_row(probs, target.v), 1e-12)));
    return offset(logp, -double(probs.dim(0)) * std::log1p(eps));
}

// eta-weighted targeted log-likelihood over not-yet-successful vs successful
// pixels; eta recomputed from the current prediction every call.
inline Tensor loss_ssap(const Tensor& probs, const LabelMap& target) {
    const int64_t n = probs.dim(0);
    const int classes = probs.dim(1);
    Tensor pending({int(n)});
    int64_t misses = 0;
    for (int64_t i = 0; i < n; ++i) {
        const double* row = probs.data() + i * classes;
        int arg = 0;
        for (int c = 1; c < classes; ++c)
            if (row[c] > row[arg]) arg = c;
        if (arg != target.v[size_t(i)]) {
            pending[i] = 1.0;
            ++misses;
        }
    }
    double eta = double(misses) / double(n);
    Tensor done = offset(scale(pending, -1.0), 1.0);
    Tensor logp = log(clamp_min(select_per_row(probs, target.v), 1e-12));
    return add(scale(sum(mul(logp, pending)), eta), scale(sum(mul(logp, done)), 1.0 - eta));
}

// tokens whose pixel footprint intersects the mask
inline std::vector<int> patch_tokens(const SegModelConfig& cfg, const PatchMask& mask) {
    std::vector<int> toks;
    const int P = cfg.patch;
    for (int ti = 0; ti < cfg.grid_h(); ++ti)
        for (int tj = 0; tj < cfg.grid_w(); ++tj) {
            int r0 = ti * P, c0 = tj * P;
            bool hit = !(r0 + P <= mask.top || r0 >= mask.top + mask.mh || c0 + P <= mask.left ||
                         c0 >= mask.left + mask.mw);
            if (hit) toks.push_back(ti * cfg.grid_w() + tj);
        }
    return toks;
}

namespace detail {

inline Tensor indicator_column(const AttentionTraceEntry& e, const std::vector<int>& ptoks) {
    Tensor ind({int(e.token_ids.size()), 1});
    for (size_t j = 0; j < e.token_ids.size(); ++j)
        for (int t : ptoks)
            if (e.token_ids[j] == t) ind[int64_t(j)] = 1.0;
    return ind;
}

// sum over rows and patch columns of the entry matrix
inline Tensor patch_column_mass(const Tensor& mat, const AttentionTraceEntry& e,
                                const std::vector<int>& ptoks) {
    return sum(matmul(mat, indicator_column(e, ptoks)));
}

}  // namespace detail

// Patch-Fool attention loss for one layer: sum over heads and query tokens
// of the normalized attention paid to the patch tokens.
inline Tensor loss_patchfool_attn_layer(const AttentionTrace& trace, int layer,
                                        const std::vector<int>& ptoks) {
    if (ptoks.empty()) throw std::invalid_argument("patchfool: empty patch-token set");
    Tensor total;
    for (const auto& e : trace.entries) {
        if (e.layer != layer) continue;
        Tensor part = detail::patch_column_mass(e.weights, e, ptoks);
        total = total.defined() ? add(total, part) : part;
    }
    if (!total.defined()) throw std::invalid_argument("patchfool: no trace entries for layer");
    return total;
}

// Combines the CE gradient with per-layer attention-loss gradients using the
// projection rule: beta_l = 0 when <g_ce, g_attn_l> > 0, else the projection
// ratio; result = g_ce + alpha sum_l (g_attn_l - beta_l g_ce).
inline std::vector<double> patchfool_combine(const std::vector<double>& g_ce,
                                             const std::vector<std::vector<double>>& g_attn,
                                             double alpha, std::vector<double>* betas = nullptr) {
    double ce_sq = 0.0;
    for (double v : g_ce) ce_sq += v * v;
    std::vector<double> out = g_ce;
    if (betas) betas->clear();
    for (const auto& ga : g_attn) {
        if (ga.size() != g_ce.size()) throw std::invalid_argument("patchfool_combine: size mismatch");
        double dot = 0.0;
        for (size_t i = 0; i < ga.size(); ++i) dot += ga[i] * g_ce[i];
        double beta = (dot > 0.0 || ce_sq == 0.0) ? 0.0 : dot / ce_sq;
        if (betas) betas->push_back(beta);
        for (size_t i = 0; i < ga.size(); ++i) out[i] += alpha * (ga[i] - beta * g_ce[i]);
    }
    return out;
}

// Attention-Fool key-query loss: logsumexp over layers of logsumexp over
// heads of the mean patch-column logit mass (nested logsumexp collapses to
// one logsumexp over (layer, head) cells).
inline Tensor loss_attnfool_kq(const AttentionTrace& trace, int layers, int heads,
                               const std::vector<int>& ptoks) {
    if (ptoks.empty()) throw std::invalid_argument("attnfool: empty patch-token set");
    Tensor acc;
    for (int l = 0; l < layers; ++l)
        for (int h = 0; h < heads; ++h) {
            Tensor cell;
            for (const auto& e : trace.entries) {
                if (e.layer != l || e.head != h) continue;
                Tensor part = scale(detail::patch_column_mass(e.logits, e, ptoks),
                                    1.0 / double(e.token_ids.size()));
                cell = cell.defined() ? add(cell, part) : part;
            }
            if (!cell.defined()) throw std::invalid_argument("attnfool: missing trace entries");
            Tensor ex = exp(cell);
            acc = acc.defined() ? add(acc, ex) : ex;
        }
    return log(acc);
}

// Variance of the normalized attention matrices, pooled over heads within a
// layer and averaged across layers.
inline Tensor attention_variance(const AttentionTrace& trace, int layers) {
    Tensor acc;
    for (int l = 0; l < layers; ++l) {
        std::vector<Tensor> mats;
        for (const auto& e : trace.entries)
            if (e.layer == l) mats.push_back(e.weights);
        if (mats.empty()) throw std::invalid_argument("attention_variance: missing trace entries");
        Tensor pooled = mats.size() == 1 ? mats[0] : concat_rows(mats);
        Tensor v = variance(pooled);
        acc = acc.defined() ? add(acc, v) : v;
    }
    return scale(acc, 1.0 / double(layers));
}

// Received attention (column sums of M) weighted by how many masked pixels
// each token's footprint holds, in token mass (mask pixels / patch area);
// averaged over (layer, head) cells.
inline Tensor masked_received_attention(const AttentionTrace& trace, const SegModelConfig& cfg,
                                        const PatchMask& mask) {
    std::vector<double> token_mass(size_t(cfg.tokens()), 0.0);
    const int P = cfg.patch;
    for (int i = mask.top; i < mask.top + mask.mh; ++i)
        for (int j = mask.left; j < mask.left + mask.mw; ++j)
            token_mass[size_t((i / P) * cfg.grid_w() + (j / P))] += 1.0 / double(P * P);

    Tensor acc;
    int cells = 0;
    for (int l = 0; l < cfg.layers; ++l)
        for (int h = 0; h < cfg.heads; ++h) {
            Tensor cell;
            for (const auto& e : trace.entries) {
                if (e.layer != l || e.head != h) continue;
                std::vector<int> ax0{0};
                Tensor colsum = reduce(e.weights, ReduceKind::sum, ax0);
                Tensor w(std::vector<int>{int(e.token_ids.size())});
                for (size_t j = 0; j < e.token_ids.size(); ++j)
                    w[int64_t(j)] = token_mass[size_t(e.token_ids[j])];
                Tensor part = sum(mul(colsum, w));
                cell = cell.defined() ? add(cell, part) : part;
            }
            if (!cell.defined())
                throw std::invalid_argument("masked_received_attention: missing trace entries");
            acc = acc.defined() ? add(acc, cell) : cell;
            ++cells;
        }
    return scale(acc, 1.0 / double(cells));
}

// ---------------------------------------------------------------------------
// Algorithm 1: iterative masked-gradient framework
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<int64_t> translate_table(const SegModelConfig& cfg, int dy, int dx) {
    std::vector<int64_t> tbl(size_t(cfg.img_h) * size_t(cfg.img_w) * 3, -1);
    for (int i = 0; i < cfg.img_h; ++i)
        for (int j = 0; j < cfg.img_w; ++j) {
            int si = i - dy, sj = j - dx;
            if (si < 0 || si >= cfg.img_h || sj < 0 || sj >= cfg.img_w) continue;
            for (int c = 0; c < 3; ++c)
                tbl[(size_t(i) * size_t(cfg.img_w) + size_t(j)) * 3 + size_t(c)] =
                    (int64_t(si) * cfg.img_w + sj) * 3 + c;
        }
    return tbl;
}

}  // namespace detail

// One attack on one image. The model is frozen; x is copied. Every loss is
// maximized by Algorithm 1: r' = (gamma/||r (.) mask||_inf) r (.) mask,
// x <- Clip(x + r'). Per-iteration dropout draws are fresh substreams.
inline AttackResult attack_run(const SegModel& m, const Tensor& x, const LabelMap& gt,
                               const AttackSpec& spec, RngState rng) {
    spec.validate(m.cfg);
    const auto& cfg = m.cfg;
    const int64_t n = x.size();
    std::vector<double> mask_dense = spec.mask.dense(3);

    AttackResult res;
    Tensor cur = x;
    cur.store = std::make_shared<std::vector<double>>(*x.store);
    cur.tape = nullptr;
    cur.node = -1;

    std::vector<int> ptoks;
    if (needs_attention_trace(spec.method)) ptoks = patch_tokens(cfg, spec.mask);

    for (int it = 0; it < spec.steps; ++it) {
        RngState iter_rng = rng.child("iter", uint64_t(it));
        Tape tape;
        Tensor xt = tape.leaf(cur);

        Tensor grad;
        double loss_value = 0.0;
        bool stop = false;
        try {
            if (spec.method == AttackMethod::patchfool) {
                AttentionTrace trace;
                ForwardOpts opts;
                opts.trace = &trace;
                ForwardOut fwd = model_forward(m, xt, opts, iter_rng.child("rad"));
                Tensor ce = loss_pgd(fwd.pixel_probs, spec.target.target);
                tape.backward(ce);
                std::vector<double> g_ce = *tape.grad(xt).store;
                std::vector<std::vector<double>> g_attn;
                std::vector<double> attn_values;
                for (int l = 0; l < cfg.layers; ++l) {
                    Tensor la = loss_patchfool_attn_layer(trace, l, ptoks);
                    attn_values.push_back(value(la));
                    tape.backward(la);
                    g_attn.push_back(*tape.grad(xt).store);
                }
                std::vector<double> betas;
                std::vector<double> combined = patchfool_combine(g_ce, g_attn, spec.alpha, &betas);
                grad = Tensor(x.shape, std::move(combined));
                loss_value = value(ce);
                for (size_t l = 0; l < attn_values.size(); ++l)
                    loss_value += spec.alpha * (attn_values[l] - betas[l] * value(ce));
            } else if (spec.method == AttackMethod::eot) {
                Tensor acc;
                for (int k = 0; k < spec.eot.samples; ++k) {
                    RngState krng = iter_rng.child("eot", uint64_t(k));
                    int dy = int(krng.uniform_int(-spec.eot.max_translate, spec.eot.max_translate));
                    int dx = int(krng.uniform_int(-spec.eot.max_translate, spec.eot.max_translate));
                    Tensor shifted = gather_flat(xt, detail::translate_table(cfg, dy, dx), x.shape);
                    Tensor noise(x.shape);
                    for (int64_t i = 0; i < n; ++i) noise[i] = spec.eot.noise_std * krng.normal();
                    Tensor input_k = add(shifted, noise);
                    ForwardOpts opts;
                    ForwardOut fwd = model_forward(m, input_k, opts, krng.child("rad"));
                    Tensor lk = loss_pgd(fwd.pixel_probs, spec.target.target);
                    acc = acc.defined() ? add(acc, lk) : lk;
                }
                Tensor loss = scale(acc, 1.0 / double(spec.eot.samples));
                loss_value = value(loss);
                tape.backward(loss);
                grad = tape.grad(xt);
            } else {
                AttentionTrace trace;
                ForwardOpts opts;
                if (needs_attention_trace(spec.method)) opts.trace = &trace;
                ForwardOut fwd = model_forward(m, xt, opts, iter_rng.child("rad"));
                Tensor loss;
                switch (spec.method) {
                    case AttackMethod::pgd:
                        loss = loss_pgd(fwd.pixel_probs, spec.target.target);
                        break;
                    case AttackMethod::ipatch:
                        loss = loss_ipatch(fwd.pixel_probs, spec.target.target);
                        break;
                    case AttackMethod::ssap:
                        loss = loss_ssap(fwd.pixel_probs, spec.target.target);
                        break;
                    case AttackMethod::dag: {
                        DagLoss dl = loss_dag(fwd.pixel_probs, gt, spec.target.target);
                        if (dl.active == 0) {
                            res.loss_trace.push_back(0.0);
                            stop = true;
                            break;
                        }
                        loss = dl.loss;
                        break;
                    }
                    case AttackMethod::attnfool: {
                        Tensor ce = loss_pgd(fwd.pixel_probs, spec.target.target);
                        Tensor kq = loss_attnfool_kq(trace, cfg.layers, cfg.heads, ptoks);
                        loss = add(ce, scale(kq, spec.alpha));
                        break;
                    }
                    case AttackMethod::maxvardag: {
                        DagLoss dl = loss_dag(fwd.pixel_probs, gt, spec.target.target);
                        loss = add(dl.loss, scale(attention_variance(trace, cfg.layers), spec.alpha));
                        break;
                    }
                    case AttackMethod::maxattndag: {
                        DagLoss dl = loss_dag(fwd.pixel_probs, gt, spec.target.target);
                        loss = add(dl.loss,
                                   scale(masked_received_attention(trace, cfg, spec.mask), spec.alpha));
                        break;
                    }
                    default:
                        throw std::logic_error("attack_run: unhandled method");
                }
                if (!stop) {
                    loss_value = value(loss);
                    tape.backward(loss);
                    grad = tape.grad(xt);
                }
            }
        } catch (const std::runtime_error& e) {
            throw std::runtime_error(std::string(e.what()) + " (attack iteration " +
                                     std::to_string(it) + ")");
        }
        if (stop) break;

        double norm = 0.0;
        for (int64_t i = 0; i < n; ++i) {
            grad[i] *= mask_dense[size_t(i)];
            norm = std::max(norm, std::fabs(grad[i]));
        }
        res.loss_trace.push_back(loss_value);
        if (norm == 0.0) {
            res.step_linf.push_back(0.0);
            ++res.iterations_run;
            continue;
        }
        double applied = 0.0;
        for (int64_t i = 0; i < n; ++i) {
            // gamma * (g/|g|max): the max-magnitude entry steps by exactly gamma
            double step = spec.gamma * (grad[i] / norm);
            applied = std::max(applied, std::fabs(step));
            (*cur.store)[size_t(i)] = std::clamp((*cur.store)[size_t(i)] + step, 0.0, 1.0);
        }
        res.step_linf.push_back(applied);
        ++res.iterations_run;
    }

    res.adv_image = cur;
    LabelMap pred = predict_labels(m, cur, rng.child("final-eval"));
    res.metrics = evaluate_prediction(pred, gt, spec.target.target, spec.mask, cfg.classes);
    return res;
}

}  // namespace ramlab
