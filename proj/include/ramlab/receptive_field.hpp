#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "ramlab/data.hpp"
#include "ramlab/model.hpp"

namespace ramlab {

// Per-pixel input-gradient magnitude of the central output unit, summed over
// input channels and normalized to unit mass.
struct RfMap {
    int h = 0, w = 0;
    std::vector<double> g;
    int samples = 0;

    double at(int i, int j) const { return g[size_t(i) * size_t(w) + size_t(j)]; }
};

// Back-propagates the channel sum of the central pixel's class logits to the
// input. RAD is frozen off by default so the map reflects architecture, not
// dropout noise; pass stochastic_rad=true to inspect stochastic maps.
inline RfMap rf_gradient_map(const SegModel& m, const Tensor& x, RngState rng = RngState(0),
                             bool stochastic_rad = false) {
    const auto& cfg = m.cfg;
    Tape tape;
    Tensor xt = tape.leaf(x);
    ForwardOpts opts;
    opts.rad_enabled = stochastic_rad;
    ForwardOut fwd = model_forward(m, xt, opts, rng);
    const int center_row = (cfg.img_h / 2) * cfg.img_w + cfg.img_w / 2;
    Tensor central = sum(gather_rows(fwd.pixel_logits, {center_row}));
    tape.backward(central);
    Tensor grad = tape.grad(xt);  // throws on non-finite gradients

    RfMap map;
    map.h = cfg.img_h;
    map.w = cfg.img_w;
    map.samples = 1;
    map.g.assign(size_t(cfg.img_h) * size_t(cfg.img_w), 0.0);
    double total = 0.0;
    for (int i = 0; i < cfg.img_h; ++i)
        for (int j = 0; j < cfg.img_w; ++j) {
            double s = 0.0;
            for (int c = 0; c < 3; ++c)
                s += std::fabs(grad[(int64_t(i) * cfg.img_w + j) * 3 + c]);
            map.g[size_t(i) * size_t(cfg.img_w) + size_t(j)] = s;
            total += s;
        }
    if (total <= 0.0) throw std::runtime_error("rf_gradient_map: zero gradient map");
    for (double& v : map.g) v /= total;
    return map;
}

inline RfMap rf_average(const SegModel& m, std::span<const Tensor> images,
                        RngState rng = RngState(0), bool stochastic_rad = false) {
    if (images.empty()) throw std::invalid_argument("rf_average: no images");
    RfMap acc;
    for (size_t i = 0; i < images.size(); ++i) {
        RfMap one = rf_gradient_map(m, images[i], rng.child("img", uint64_t(i)), stochastic_rad);
        if (acc.g.empty()) {
            acc = one;
        } else {
            for (size_t k = 0; k < acc.g.size(); ++k) acc.g[k] += one.g[k];
        }
    }
    double total = 0.0;
    for (double v : acc.g) total += v;
    for (double& v : acc.g) v /= total;
    acc.samples = int(images.size());
    return acc;
}

// Smallest Chebyshev radius around the central pixel enclosing mass >= q.
inline double rf_effective_radius(const RfMap& map, double q = 0.95) {
    if (!(q > 0.0 && q <= 1.0)) throw std::invalid_argument("rf_effective_radius: q outside (0,1]");
    const int ci = map.h / 2, cj = map.w / 2;
    int max_r = 0;
    for (int i = 0; i < map.h; ++i)
        for (int j = 0; j < map.w; ++j)
            max_r = std::max(max_r, std::max(std::abs(i - ci), std::abs(j - cj)));
    std::vector<double> ring(size_t(max_r) + 1, 0.0);
    for (int i = 0; i < map.h; ++i)
        for (int j = 0; j < map.w; ++j)
            ring[size_t(std::max(std::abs(i - ci), std::abs(j - cj)))] += map.at(i, j);
    double cum = 0.0;
    for (int r = 0; r <= max_r; ++r) {
        cum += ring[size_t(r)];
        if (cum >= q - 1e-12) return double(r);
    }
    return double(max_r);
}

// Log-scaled then affine-mapped to 0..255 for PGM export.
inline std::vector<uint8_t> rf_heatmap_u8(const RfMap& map) {
    std::vector<double> lg(map.g.size());
    double lo = 0.0, hi = 0.0;
    for (size_t i = 0; i < map.g.size(); ++i) {
        lg[i] = std::log(map.g[i] + 1e-12);
        if (i == 0 || lg[i] < lo) lo = lg[i];
        if (i == 0 || lg[i] > hi) hi = lg[i];
    }
    std::vector<uint8_t> out(map.g.size(), 0);
    if (hi > lo) {
        for (size_t i = 0; i < out.size(); ++i)
            out[i] = uint8_t(std::lround(255.0 * (lg[i] - lo) / (hi - lo)));
    }
    return out;
}

}  // namespace ramlab
