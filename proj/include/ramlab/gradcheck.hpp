#pragma once

#include <functional>
#include <vector>

#include "ramlab/tensor.hpp"

namespace ramlab {

// Central-difference gradient checks. The forward oracle (re-evaluating f
// at x +/- h per coordinate) never touches the tape machinery it verifies.
//
// Relative error per coordinate: |fd - an| / max(|fd|, |an|, 1e-3); the
// floor keeps near-zero coordinates from amplifying finite-difference noise.

using TensorFn = std::function<Tensor(Tape&, const Tensor&)>;

namespace detail {
inline double eval_plain(const TensorFn& f, const Tensor& x) {
    Tape scratch;
    Tensor untracked = x;
    untracked.tape = nullptr;
    untracked.node = -1;
    return value(f(scratch, untracked));
}

inline double rel_err(double fd, double an) {
    double denom = std::max({std::fabs(fd), std::fabs(an), 1e-3});
    return std::fabs(fd - an) / denom;
}
}  // namespace detail

// Checks every coordinate of x. Returns the max relative error.
inline double finite_diff_check(const TensorFn& f, const Tensor& x, double step = 1e-6) {
    Tape tape;
    Tensor xt = tape.leaf(x);
    Tensor y = f(tape, xt);
    tape.backward(y);
    Tensor analytic = tape.grad(xt);

    double worst = 0.0;
    for (int64_t i = 0; i < x.size(); ++i) {
        Tensor xp = x;
        xp.store = std::make_shared<std::vector<double>>(*x.store);
        Tensor xm = xp;
        xm.store = std::make_shared<std::vector<double>>(*x.store);
        (*xp.store)[size_t(i)] += step;
        (*xm.store)[size_t(i)] -= step;
        double fd = (detail::eval_plain(f, xp) - detail::eval_plain(f, xm)) / (2.0 * step);
        worst = std::max(worst, detail::rel_err(fd, analytic[i]));
    }
    return worst;
}

// Same check restricted to the given flat coordinates; used where x is a
// whole weight set and per-coordinate sweeps would be wasteful.
inline double finite_diff_check_coords(const TensorFn& f, const Tensor& x,
                                       const std::vector<int64_t>& coords, double step = 1e-6) {
    Tape tape;
    Tensor xt = tape.leaf(x);
    Tensor y = f(tape, xt);
    tape.backward(y);
    Tensor analytic = tape.grad(xt);

    double worst = 0.0;
    for (int64_t i : coords) {
        Tensor xp = x;
        xp.store = std::make_shared<std::vector<double>>(*x.store);
        Tensor xm = xp;
        xm.store = std::make_shared<std::vector<double>>(*x.store);
        (*xp.store)[size_t(i)] += step;
        (*xm.store)[size_t(i)] -= step;
        double fd = (detail::eval_plain(f, xp) - detail::eval_plain(f, xm)) / (2.0 * step);
        worst = std::max(worst, detail::rel_err(fd, analytic[i]));
    }
    return worst;
}

}  // namespace ramlab
