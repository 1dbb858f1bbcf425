#pragma once

#include <cstdint>
#include <stdexcept>
#include <vector>

#include "ramlab/data.hpp"
#include "ramlab/tensor.hpp"

namespace ramlab {

inline LabelMap argmax_labels(const Tensor& probs, int h, int w) {
    const int64_t pixels = int64_t(h) * int64_t(w);
    if (probs.rank() < 2 || probs.size() % pixels != 0)
        throw std::invalid_argument("argmax_labels: probs do not cover the pixel grid");
    const int classes = int(probs.size() / pixels);
    LabelMap out(h, w);
    for (int64_t p = 0; p < pixels; ++p) {
        const double* row = probs.data() + p * classes;
        int arg = 0;
        for (int c = 1; c < classes; ++c)
            if (row[c] > row[arg]) arg = c;
        out.v[size_t(p)] = arg;
    }
    return out;
}

// Accumulating confusion matrix; mIoU over an evaluation set is computed
// from the pooled counts.
class ConfusionMatrix {
public:
    explicit ConfusionMatrix(int classes) : classes_(classes), m_(size_t(classes) * size_t(classes), 0) {}

    void add(const LabelMap& pred, const LabelMap& ref) {
        if (pred.h != ref.h || pred.w != ref.w)
            throw std::invalid_argument("confusion: shape mismatch");
        for (size_t i = 0; i < pred.v.size(); ++i) {
            int p = pred.v[i], r = ref.v[i];
            if (p < 0 || p >= classes_ || r < 0 || r >= classes_)
                throw std::invalid_argument("confusion: label out of range");
            ++m_[size_t(r) * size_t(classes_) + size_t(p)];
        }
    }

    // IoU per class; -1 marks classes absent from both prediction and reference
    std::vector<double> per_class_iou() const {
        std::vector<double> iou(size_t(classes_), -1.0);
        for (int c = 0; c < classes_; ++c) {
            int64_t inter = m_[size_t(c) * size_t(classes_) + size_t(c)];
            int64_t row = 0, col = 0;
            for (int k = 0; k < classes_; ++k) {
                row += m_[size_t(c) * size_t(classes_) + size_t(k)];
                col += m_[size_t(k) * size_t(classes_) + size_t(c)];
            }
            int64_t uni = row + col - inter;
            if (uni > 0) iou[size_t(c)] = double(inter) / double(uni);
        }
        return iou;
    }

    // mean over classes present in prediction or reference
    double miou() const {
        auto iou = per_class_iou();
        double s = 0.0;
        int n = 0;
        for (double v : iou)
            if (v >= 0.0) {
                s += v;
                ++n;
            }
        if (n == 0) throw std::runtime_error("miou: no class present");
        return s / n;
    }

private:
    int classes_;
    std::vector<int64_t> m_;
};

inline double miou(const LabelMap& pred, const LabelMap& ref, int classes) {
    ConfusionMatrix cm(classes);
    cm.add(pred, ref);
    return cm.miou();
}

// Pixel accuracy against ground truth over pixels outside the patch mask.
inline double pacc_masked(const LabelMap& pred, const LabelMap& gt, const PatchMask& mask) {
    if (pred.h != gt.h || pred.w != gt.w) throw std::invalid_argument("pacc_masked: shape mismatch");
    int64_t denom = int64_t(gt.h) * int64_t(gt.w) - mask.popcount();
    if (denom <= 0) throw std::invalid_argument("pacc_masked: mask covers the whole image");
    int64_t correct = 0;
    for (int i = 0; i < gt.h; ++i)
        for (int j = 0; j < gt.w; ++j) {
            if (mask.contains(i, j)) continue;
            if (pred.at(i, j) == gt.at(i, j)) ++correct;
        }
    return double(correct) / double(denom);
}

inline double pacc_masked(const Tensor& probs, const LabelMap& gt, const PatchMask& mask) {
    return pacc_masked(argmax_labels(probs, gt.h, gt.w), gt, mask);
}

struct MetricsReport {
    double miou_gt = 0.0;
    double miou_target = 0.0;
    double pacc_masked = 0.0;
    std::vector<double> per_class_iou;  // vs ground truth; -1 for absent classes
};

inline MetricsReport evaluate_prediction(const LabelMap& pred, const LabelMap& gt,
                                         const LabelMap& target, const PatchMask& mask,
                                         int classes) {
    ConfusionMatrix vs_gt(classes);
    vs_gt.add(pred, gt);
    MetricsReport r;
    r.miou_gt = vs_gt.miou();
    r.per_class_iou = vs_gt.per_class_iou();
    r.miou_target = miou(pred, target, classes);
    r.pacc_masked = pacc_masked(pred, gt, mask);
    return r;
}

}  // namespace ramlab
