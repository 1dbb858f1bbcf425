#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "ramlab/data.hpp"
#include "ramlab/rng.hpp"

namespace ramlab {

enum class TargetMode { permute, strip };

inline const char* to_string(TargetMode m) {
    return m == TargetMode::permute ? "permute" : "strip";
}

inline TargetMode target_mode_from(const std::string& s) {
    if (s == "permute") return TargetMode::permute;
    if (s == "strip") return TargetMode::strip;
    throw std::invalid_argument("unknown target mode: " + s);
}

struct AttackTarget {
    LabelMap target;
    TargetMode mode = TargetMode::permute;
    std::vector<int> class_map;       // permute: class_map[y] for y present in gt, else -1
    std::vector<int> stripe_classes;  // strip: class per band
};

namespace detail {
inline std::vector<int> absent_classes(const LabelMap& gt, int classes) {
    std::vector<bool> present(size_t(classes), false);
    for (int c : gt.v) {
        if (c < 0 || c >= classes) throw std::invalid_argument("target: label out of range");
        present[size_t(c)] = true;
    }
    std::vector<int> absent;
    for (int c = 0; c < classes; ++c)
        if (!present[size_t(c)]) absent.push_back(c);
    return absent;
}
}  // namespace detail

// Every class present in the ground truth maps to one class drawn from the
// absent set; the assignment is injective whenever the absent set is large
// enough, otherwise drawn with replacement.
inline AttackTarget permute_target(const LabelMap& gt, int classes, RngState& rng) {
    auto absent = detail::absent_classes(gt, classes);
    if (absent.empty())
        throw std::invalid_argument("permute_target: no absent class to map onto");
    auto present = gt.present_classes();

    AttackTarget out;
    out.mode = TargetMode::permute;
    out.class_map.assign(size_t(classes), -1);
    if (absent.size() >= present.size()) {
        auto perm = rng.permutation(int(absent.size()));
        for (size_t i = 0; i < present.size(); ++i)
            out.class_map[size_t(present[i])] = absent[size_t(perm[i])];
    } else {
        for (int y : present)
            out.class_map[size_t(y)] = absent[size_t(rng.uniform_int(0, int64_t(absent.size()) - 1))];
    }
    out.target = LabelMap(gt.h, gt.w);
    for (size_t i = 0; i < gt.v.size(); ++i) out.target.v[i] = out.class_map[size_t(gt.v[i])];
    return out;
}

// Horizontal bands [floor(nH/N), floor((n+1)H/N)) each painted with one
// class drawn independently from the absent set.
inline AttackTarget strip_target(const LabelMap& gt, int classes, int n_stripes, RngState& rng) {
    if (n_stripes < 1 || n_stripes > gt.h)
        throw std::invalid_argument("strip_target: stripe count out of range");
    auto absent = detail::absent_classes(gt, classes);
    if (absent.empty()) throw std::invalid_argument("strip_target: no absent class to paint with");

    AttackTarget out;
    out.mode = TargetMode::strip;
    out.target = LabelMap(gt.h, gt.w);
    for (int n = 0; n < n_stripes; ++n) {
        int cls = absent[size_t(rng.uniform_int(0, int64_t(absent.size()) - 1))];
        out.stripe_classes.push_back(cls);
        int row0 = int(int64_t(n) * gt.h / n_stripes);
        int row1 = int(int64_t(n + 1) * gt.h / n_stripes);
        for (int i = row0; i < row1; ++i)
            for (int j = 0; j < gt.w; ++j) out.target.at(i, j) = cls;
    }
    return out;
}

}  // namespace ramlab
