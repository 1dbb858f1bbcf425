#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "ramlab/rng.hpp"
#include "ramlab/tensor.hpp"

namespace ramlab {

struct LabelMap {
    int h = 0, w = 0;
    std::vector<int> v;

    LabelMap() = default;
    LabelMap(int h_, int w_) : h(h_), w(w_), v(size_t(h_) * size_t(w_), 0) {}

    int& at(int i, int j) { return v[size_t(i) * size_t(w) + size_t(j)]; }
    int at(int i, int j) const { return v[size_t(i) * size_t(w) + size_t(j)]; }
    int64_t size() const { return int64_t(v.size()); }

    std::vector<int> present_classes() const {
        std::vector<int> out;
        for (int c : v)
            if (std::find(out.begin(), out.end(), c) == out.end()) out.push_back(c);
        std::sort(out.begin(), out.end());
        return out;
    }
};

// ---------------------------------------------------------------------------
// patch masks
// ---------------------------------------------------------------------------

enum class MaskLocation { lower_right, lower_left, top_left, top_right, center, random_loc };

inline const char* to_string(MaskLocation l) {
    switch (l) {
        case MaskLocation::lower_right: return "lower_right";
        case MaskLocation::lower_left: return "lower_left";
        case MaskLocation::top_left: return "top_left";
        case MaskLocation::top_right: return "top_right";
        case MaskLocation::center: return "center";
        case MaskLocation::random_loc: return "random";
    }
    return "?";
}

inline MaskLocation mask_location_from(const std::string& s) {
    for (MaskLocation l : {MaskLocation::lower_right, MaskLocation::lower_left,
                           MaskLocation::top_left, MaskLocation::top_right, MaskLocation::center,
                           MaskLocation::random_loc})
        if (s == to_string(l)) return l;
    throw std::invalid_argument("unknown patch location: " + s);
}

// Contiguous axis-aligned rectangle stored as its bounds.
struct PatchMask {
    int img_h = 0, img_w = 0;
    int top = 0, left = 0, mh = 0, mw = 0;
    MaskLocation location = MaskLocation::lower_right;

    bool contains(int i, int j) const {
        return i >= top && i < top + mh && j >= left && j < left + mw;
    }
    int64_t popcount() const { return int64_t(mh) * int64_t(mw); }

    // 0/1 map replicated over channels, laid out like an H x W x c tensor
    std::vector<double> dense(int channels = 1) const {
        std::vector<double> m(size_t(img_h) * size_t(img_w) * size_t(channels), 0.0);
        for (int i = top; i < top + mh; ++i)
            for (int j = left; j < left + mw; ++j)
                for (int c = 0; c < channels; ++c)
                    m[(size_t(i) * size_t(img_w) + size_t(j)) * size_t(channels) + size_t(c)] = 1.0;
        return m;
    }
};

inline PatchMask make_patch_mask(int h, int w, int m, MaskLocation loc, RngState& rng) {
    if (m <= 0 || m > std::min(h, w))
        throw std::invalid_argument("make_patch_mask: side exceeds image");
    PatchMask out;
    out.img_h = h;
    out.img_w = w;
    out.mh = out.mw = m;
    out.location = loc;
    switch (loc) {
        case MaskLocation::lower_right: out.top = h - m; out.left = w - m; break;
        case MaskLocation::lower_left: out.top = h - m; out.left = 0; break;
        case MaskLocation::top_left: out.top = 0; out.left = 0; break;
        case MaskLocation::top_right: out.top = 0; out.left = w - m; break;
        case MaskLocation::center: out.top = (h - m) / 2; out.left = (w - m) / 2; break;
        case MaskLocation::random_loc:
            out.top = int(rng.uniform_int(0, h - m));
            out.left = int(rng.uniform_int(0, w - m));
            break;
    }
    return out;
}

// ---------------------------------------------------------------------------
// synthetic dataset
// ---------------------------------------------------------------------------

struct DatasetSpec {
    int count = 128;
    int img_h = 32, img_w = 32;
    int classes = 8;
    int shapes_min = 2, shapes_max = 5;
    double noise_std = 0.02;
    int claim_radius = 10;  // halo of background each shape claims, in pixels
    uint64_t seed = 0;
};

// Drawn-shape record kept for introspection and tests.
// rect: a=top b=left c=height d=width; disc: a=ci b=cj c=radius;
// stripe: a=0 horizontal / 1 vertical, b=offset, c=thickness.
struct ShapeRec {
    enum Kind { rect, disc, stripe } kind = rect;
    int cls = 0;
    int a = 0, b = 0, c = 0, d = 0;
};

struct Sample {
    Tensor image;  // {H, W, 3} in [0,1]
    LabelMap labels;
    std::vector<ShapeRec> shapes;
};

// Fixed class-linked palette for shape interiors; everything outside a shape
// is painted the class-0 background gray, whatever its label.
inline void palette_color(int cls, int classes, double rgb[3]) {
    if (cls == 0) {
        rgb[0] = rgb[1] = rgb[2] = 0.15;
        return;
    }
    double hue = double(cls - 1) / double(std::max(1, classes - 1));  // [0,1)
    double s = 0.75, v = 0.9;
    double hh = hue * 6.0;
    int sector = int(hh) % 6;
    double f = hh - std::floor(hh);
    double p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
    switch (sector) {
        case 0: rgb[0] = v; rgb[1] = t; rgb[2] = p; break;
        case 1: rgb[0] = q; rgb[1] = v; rgb[2] = p; break;
        case 2: rgb[0] = p; rgb[1] = v; rgb[2] = t; break;
        case 3: rgb[0] = p; rgb[1] = q; rgb[2] = v; break;
        case 4: rgb[0] = t; rgb[1] = p; rgb[2] = v; break;
        default: rgb[0] = v; rgb[1] = p; rgb[2] = q; break;
    }
}

namespace detail {

inline std::vector<std::pair<int, int>> shape_pixels(const ShapeRec& s, int h, int w) {
    std::vector<std::pair<int, int>> px;
    if (s.kind == ShapeRec::rect) {
        for (int i = s.a; i < s.a + s.c; ++i)
            for (int j = s.b; j < s.b + s.d; ++j) px.emplace_back(i, j);
    } else if (s.kind == ShapeRec::disc) {
        for (int i = s.a - s.c; i <= s.a + s.c; ++i)
            for (int j = s.b - s.c; j <= s.b + s.c; ++j) {
                if (i < 0 || i >= h || j < 0 || j >= w) continue;
                int di = i - s.a, dj = j - s.b;
                if (di * di + dj * dj <= s.c * s.c) px.emplace_back(i, j);
            }
    } else {
        if (s.a == 0) {  // horizontal band
            for (int i = s.b; i < s.b + s.c; ++i)
                for (int j = 0; j < w; ++j) px.emplace_back(i, j);
        } else {
            for (int j = s.b; j < s.b + s.c; ++j)
                for (int i = 0; i < h; ++i) px.emplace_back(i, j);
        }
    }
    return px;
}

// Rects and stripes snap to the 4-pixel token pitch; discs stay free-form
// and supply curved boundaries. Labels live at token resolution, so snapped
// geometry keeps the task exactly representable by a patch-based head.
inline ShapeRec roll_shape(int h, int w, int cls, RngState& rng) {
    constexpr int pitch = 4;
    auto snap = [](int v) { return (v / pitch) * pitch; };
    ShapeRec s;
    s.cls = cls;
    int kind = int(rng.uniform_int(0, 2));
    if (kind == 0) {
        s.kind = ShapeRec::rect;
        s.c = std::max(pitch, snap(int(rng.uniform_int(h / 4, std::max(h / 4 + 1, h / 2)))));
        s.d = std::max(pitch, snap(int(rng.uniform_int(w / 4, std::max(w / 4 + 1, w / 2)))));
        s.a = snap(int(rng.uniform_int(0, h - s.c)));
        s.b = snap(int(rng.uniform_int(0, w - s.d)));
    } else if (kind == 1) {
        s.kind = ShapeRec::disc;
        s.c = int(rng.uniform_int(std::max(2, h / 6), std::max(3, h / 4)));
        s.a = int(rng.uniform_int(s.c, h - 1 - s.c));
        s.b = int(rng.uniform_int(s.c, w - 1 - s.c));
    } else {
        s.kind = ShapeRec::stripe;
        s.a = int(rng.uniform_int(0, 1));
        s.c = std::max(pitch, snap(int(rng.uniform_int(std::max(2, h / 6), std::max(3, h / 3)))));
        int span = s.a == 0 ? h : w;
        s.b = snap(int(rng.uniform_int(0, span - s.c)));
    }
    return s;
}

}  // namespace detail

// Deterministic per seed. Shapes never share a 4-pixel token block, every
// shape pixel carries its shape's class, and each shape claims the
// surrounding background up to claim_radius: a background block's label is
// the nearest shape within that radius (by block-center distance, ties to
// the smaller class), else 0. Labels are constant per token block, so the
// class of an unpainted background pixel is only decidable from context.
inline std::vector<Sample> generate_dataset(const DatasetSpec& spec) {
    if (spec.classes < 3) throw std::invalid_argument("generate_dataset: need at least 3 classes");
    if (spec.img_h < 12 || spec.img_w < 12 || spec.img_h % 4 != 0 || spec.img_w % 4 != 0)
        throw std::invalid_argument("generate_dataset: geometry too small for requested shapes");
    if (spec.shapes_min < 1 || spec.shapes_max < spec.shapes_min)
        throw std::invalid_argument("generate_dataset: bad shape count range");
    constexpr int pitch = 4;
    const int bh = spec.img_h / pitch, bw = spec.img_w / pitch;

    RngState base = RngState(spec.seed).child("dataset");
    std::vector<Sample> out;
    out.reserve(size_t(std::max(0, spec.count)));
    for (int idx = 0; idx < spec.count; ++idx) {
        RngState rng = base.child("image", uint64_t(idx));
        Sample smp;
        smp.labels = LabelMap(spec.img_h, spec.img_w);
        std::vector<int> block_owner(size_t(bh) * size_t(bw), -1);  // shape index or -1

        int want = int(rng.uniform_int(spec.shapes_min, spec.shapes_max));
        want = std::min(want, spec.classes - 1);
        std::vector<int> cls_order = rng.permutation(spec.classes - 1);
        std::vector<std::vector<std::pair<int, int>>> shape_px;

        for (int s = 0; s < want; ++s) {
            int cls = cls_order[size_t(s)] + 1;
            for (int attempt = 0; attempt < 64; ++attempt) {
                ShapeRec rec = detail::roll_shape(spec.img_h, spec.img_w, cls, rng);
                auto px = detail::shape_pixels(rec, spec.img_h, spec.img_w);
                bool free = true;
                for (auto [i, j] : px)
                    if (block_owner[size_t(i / pitch) * size_t(bw) + size_t(j / pitch)] >= 0) {
                        free = false;
                        break;
                    }
                if (!free) continue;
                for (auto [i, j] : px)
                    block_owner[size_t(i / pitch) * size_t(bw) + size_t(j / pitch)] =
                        int(smp.shapes.size());
                smp.shapes.push_back(rec);
                shape_px.push_back(std::move(px));
                break;
            }
        }
        if (smp.shapes.size() < 2)
            throw std::runtime_error("generate_dataset: could not place two shapes");

        for (int bi = 0; bi < bh; ++bi)
            for (int bj = 0; bj < bw; ++bj) {
                int label = 0;
                int owner = block_owner[size_t(bi) * size_t(bw) + size_t(bj)];
                if (owner >= 0) {
                    label = smp.shapes[size_t(owner)].cls;
                } else {
                    double ci = bi * pitch + (pitch - 1) * 0.5;
                    double cj = bj * pitch + (pitch - 1) * 0.5;
                    double best = 1e18;
                    for (size_t s = 0; s < shape_px.size(); ++s) {
                        for (auto [i, j] : shape_px[s]) {
                            double d = std::hypot(ci - i, cj - j);
                            if (d < best - 1e-9 ||
                                (d < best + 1e-9 && smp.shapes[s].cls < label)) {
                                best = d;
                                label = smp.shapes[s].cls;
                            }
                        }
                    }
                    if (best > double(spec.claim_radius)) label = 0;
                }
                for (int pi = 0; pi < pitch; ++pi)
                    for (int pj = 0; pj < pitch; ++pj)
                        smp.labels.at(bi * pitch + pi, bj * pitch + pj) = label;
            }

        // paint: shape pixels get their class color, everything else is
        // background gray, so halo labels are invisible locally
        std::vector<int> paint(size_t(spec.img_h) * size_t(spec.img_w), 0);
        for (size_t s = 0; s < shape_px.size(); ++s)
            for (auto [i, j] : shape_px[s])
                paint[size_t(i) * size_t(spec.img_w) + size_t(j)] = smp.shapes[s].cls;
        smp.image = Tensor({spec.img_h, spec.img_w, 3});
        for (int i = 0; i < spec.img_h; ++i)
            for (int j = 0; j < spec.img_w; ++j) {
                double rgb[3];
                palette_color(paint[size_t(i) * size_t(spec.img_w) + size_t(j)], spec.classes, rgb);
                for (int c = 0; c < 3; ++c) {
                    double v = rgb[c] + spec.noise_std * rng.normal();
                    smp.image[(int64_t(i) * spec.img_w + j) * 3 + c] = std::clamp(v, 0.0, 1.0);
                }
            }
        out.push_back(std::move(smp));
    }
    return out;
}

}  // namespace ramlab
