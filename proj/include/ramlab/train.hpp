#pragma once

#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "ramlab/attacks.hpp"
#include "ramlab/metrics.hpp"
#include "ramlab/model.hpp"

namespace ramlab {

struct PgdTrainSpec {
    int steps = 10;
    double gamma = 1.0;
    int patch_size = 8;
    MaskLocation location = MaskLocation::lower_right;
};

struct TrainConfig {
    double lr = 3e-3;
    int epochs = 30;
    int batch = 8;
    uint64_t seed = 0;
    double label_smoothing = 0.1;
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    std::optional<PgdTrainSpec> adversarial;

    void validate() const {
        if (!(lr > 0.0)) throw std::invalid_argument("train: learning rate must be positive");
        if (epochs < 1 || batch < 1) throw std::invalid_argument("train: epochs/batch must be >= 1");
    }
};

struct AdamState {
    std::vector<Tensor> m, v;
    int64_t t = 0;

    explicit AdamState(const SegModel& model) {
        for (const auto& p : model.params) {
            m.push_back(Tensor(p.value.shape));
            v.push_back(Tensor(p.value.shape));
        }
    }
};

struct TrainCurves {
    std::vector<double> train_loss;  // per epoch
    std::vector<double> val_miou;    // per epoch, pooled confusion matrix
};

namespace detail {

inline void adam_update(SegModel& model, AdamState& opt, const std::vector<Tensor>& grads,
                        const TrainConfig& tc) {
    ++opt.t;
    const double bc1 = 1.0 - std::pow(tc.beta1, double(opt.t));
    const double bc2 = 1.0 - std::pow(tc.beta2, double(opt.t));
    for (size_t p = 0; p < model.params.size(); ++p) {
        Tensor& w = model.params[p].value;
        const Tensor& g = grads[p];
        for (int64_t i = 0; i < w.size(); ++i) {
            double gi = g[i];
            opt.m[p][i] = tc.beta1 * opt.m[p][i] + (1.0 - tc.beta1) * gi;
            opt.v[p][i] = tc.beta2 * opt.v[p][i] + (1.0 - tc.beta2) * gi * gi;
            double mhat = opt.m[p][i] / bc1;
            double vhat = opt.v[p][i] / bc2;
            w[i] -= tc.lr * mhat / (std::sqrt(vhat) + tc.eps);
        }
    }
}

// Forward + CE backward for one image; accumulates parameter gradients.
inline double accumulate_sample_grads(const SegModel& model, const Tensor& image,
                                      const LabelMap& labels, RngState rng,
                                      std::vector<Tensor>& grads, double smoothing) {
    Tape tape;
    SegModel tracked = track(model, tape);
    ForwardOpts opts;
    opts.mode = RunMode::train;
    ForwardOut fwd = model_forward(tracked, image, opts, rng);
    Tensor loss = pixel_cross_entropy(fwd, labels, smoothing);
    double lv = value(loss);
    if (!std::isfinite(lv)) throw std::runtime_error("train: non-finite loss");
    tape.backward(loss);
    for (size_t p = 0; p < tracked.params.size(); ++p) {
        Tensor g = tape.grad(tracked.params[p].value);
        for (int64_t i = 0; i < g.size(); ++i) grads[p][i] += g[i];
    }
    return lv;
}

}  // namespace detail

// One outer minimization step on a batch. With a PGD spec the batch is first
// replaced by Algorithm-1 adversarial examples (PGD loss, Permute targets,
// current weights frozen); with steps=0 this is exactly a clean step.
inline double adversarial_train_step(SegModel& model, std::span<const Sample> batch,
                                     const std::optional<PgdTrainSpec>& pgd, AdamState& opt,
                                     const TrainConfig& tc, RngState rng) {
    std::vector<Tensor> grads;
    grads.reserve(model.params.size());
    for (const auto& p : model.params) grads.push_back(Tensor(p.value.shape));

    double batch_loss = 0.0;
    for (size_t b = 0; b < batch.size(); ++b) {
        RngState srng = rng.child("sample", uint64_t(b));
        Tensor image = batch[b].image;
        if (pgd && pgd->steps > 0) {
            RngState arng = srng.child("adv");
            AttackSpec spec;
            spec.method = AttackMethod::pgd;
            spec.steps = pgd->steps;
            spec.gamma = pgd->gamma;
            spec.mask = make_patch_mask(model.cfg.img_h, model.cfg.img_w, pgd->patch_size,
                                        pgd->location, arng);
            spec.target = permute_target(batch[b].labels, model.cfg.classes, arng);
            image = attack_run(model, image, batch[b].labels, spec, arng.child("run")).adv_image;
        }
        batch_loss += detail::accumulate_sample_grads(model, image, batch[b].labels,
                                                      srng.child("fwd"), grads, tc.label_smoothing);
    }
    for (auto& g : grads)
        for (int64_t i = 0; i < g.size(); ++i) g[i] /= double(batch.size());
    detail::adam_update(model, opt, grads, tc);
    return batch_loss / double(batch.size());
}

inline double clean_miou(const SegModel& model, std::span<const Sample> set, RngState rng) {
    ConfusionMatrix cm(model.cfg.classes);
    for (size_t i = 0; i < set.size(); ++i) {
        LabelMap pred = predict_labels(model, set[i].image, rng.child("eval", uint64_t(i)));
        cm.add(pred, set[i].labels);
    }
    return cm.miou();
}

// Epoch loop with per-epoch shuffling; aborts with a diagnostic when the
// loss diverges. Reproducible bit-identically for a fixed seed.
inline TrainCurves train(SegModel& model, std::span<const Sample> train_set,
                         std::span<const Sample> val_set, const TrainConfig& tc) {
    tc.validate();
    if (train_set.empty()) throw std::invalid_argument("train: empty dataset");
    AdamState opt(model);
    RngState root = RngState(tc.seed).child("train");
    TrainCurves curves;
    for (int epoch = 0; epoch < tc.epochs; ++epoch) {
        RngState erng = root.child("epoch", uint64_t(epoch));
        auto order = erng.permutation(int(train_set.size()));
        double epoch_loss = 0.0;
        int batches = 0;
        for (size_t start = 0; start < order.size(); start += size_t(tc.batch)) {
            size_t stop = std::min(order.size(), start + size_t(tc.batch));
            std::vector<Sample> batch;
            batch.reserve(stop - start);
            for (size_t k = start; k < stop; ++k) batch.push_back(train_set[size_t(order[k])]);
            double loss = adversarial_train_step(model, batch, tc.adversarial, opt, tc,
                                                 erng.child("batch", uint64_t(batches)));
            if (!std::isfinite(loss))
                throw std::runtime_error("train: diverged at epoch " + std::to_string(epoch) +
                                         " batch " + std::to_string(batches));
            epoch_loss += loss;
            ++batches;
        }
        curves.train_loss.push_back(epoch_loss / std::max(1, batches));
        curves.val_miou.push_back(val_set.empty() ? 0.0
                                                  : clean_miou(model, val_set, erng.child("val")));
    }
    return curves;
}

}  // namespace ramlab
