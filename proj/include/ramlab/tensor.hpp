#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace ramlab {

class Tape;

// Dense row-major float64 tensor. Value semantics with a shared buffer;
// tensors are treated as immutable once an op has produced them. A tracked
// tensor additionally carries the id of its node on a Tape.
struct Tensor {
    std::vector<int> shape;
    std::shared_ptr<std::vector<double>> store;
    Tape* tape = nullptr;
    int node = -1;

    Tensor() = default;

    explicit Tensor(std::vector<int> s) : shape(std::move(s)) {
        store = std::make_shared<std::vector<double>>(size_t(count(shape)), 0.0);
    }

    Tensor(std::vector<int> s, std::vector<double> values) : shape(std::move(s)) {
        if (int64_t(values.size()) != count(shape))
            throw std::invalid_argument("Tensor: data length does not match shape");
        store = std::make_shared<std::vector<double>>(std::move(values));
    }

    static Tensor filled(std::vector<int> s, double v) {
        Tensor t(std::move(s));
        std::fill(t.store->begin(), t.store->end(), v);
        return t;
    }

    static int64_t count(const std::vector<int>& s) {
        int64_t n = 1;
        for (int d : s) {
            if (d <= 0) throw std::invalid_argument("Tensor: nonpositive extent");
            n *= d;
        }
        return n;
    }

    int64_t size() const { return store ? int64_t(store->size()) : 0; }
    int rank() const { return int(shape.size()); }
    int dim(int i) const { return shape[size_t(i)]; }
    bool defined() const { return store != nullptr; }
    bool tracked() const { return node >= 0; }

    double* data() { return store->data(); }
    const double* data() const { return store->data(); }

    double& operator[](int64_t i) { return (*store)[size_t(i)]; }
    double operator[](int64_t i) const { return (*store)[size_t(i)]; }

    double& at(int i, int j) { return (*store)[size_t(i) * size_t(shape[1]) + size_t(j)]; }
    double at(int i, int j) const { return (*store)[size_t(i) * size_t(shape[1]) + size_t(j)]; }
};

inline double value(const Tensor& t) {
    if (t.size() != 1) throw std::invalid_argument("value: tensor is not scalar");
    return (*t.store)[0];
}

inline bool all_finite(const Tensor& t) {
    for (double v : *t.store)
        if (!std::isfinite(v)) return false;
    return true;
}

inline double linf_norm(const Tensor& t) {
    double m = 0.0;
    for (double v : *t.store) m = std::max(m, std::fabs(v));
    return m;
}

inline std::string shape_str(const std::vector<int>& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    os << "]";
    return os.str();
}

namespace detail {
inline void ensure_zeros(std::vector<double>& v, size_t n) {
    if (v.empty()) v.assign(n, 0.0);
}
}  // namespace detail

// Reverse-mode tape. Ops append nodes in evaluation order, which is already
// a topological order, so backward() is a single reverse sweep. backward()
// resets all adjoints, so one tape supports several backward passes from
// different roots (needed by losses that combine per-layer gradients).
class Tape {
public:
    using BackFn = std::function<void(const std::vector<double>& out_adj,
                                      std::vector<std::vector<double>>& adj)>;

    // Registers a tracked copy of t (a leaf; backward accumulates into it).
    Tensor leaf(const Tensor& t) {
        Tensor out = t;
        out.tape = this;
        out.node = add_node({});
        return out;
    }

    int add_node(BackFn back) {
        nodes_.push_back(std::move(back));
        return int(nodes_.size()) - 1;
    }

    void backward(const Tensor& loss) {
        if (loss.size() != 1) throw std::invalid_argument("backward: loss must be scalar");
        if (loss.tape != this || loss.node < 0)
            throw std::invalid_argument("backward: loss is not tracked on this tape");
        adj_.clear();
        adj_.resize(nodes_.size());
        adj_[size_t(loss.node)] = {1.0};
        for (int i = loss.node; i >= 0; --i) {
            if (adj_[size_t(i)].empty() || !nodes_[size_t(i)]) continue;
            nodes_[size_t(i)](adj_[size_t(i)], adj_);
        }
    }

    // Gradient of the last backward() root w.r.t. a tracked tensor.
    Tensor grad(const Tensor& t) const {
        if (t.tape != this || t.node < 0)
            throw std::invalid_argument("grad: tensor is not tracked on this tape");
        Tensor g(t.shape);
        if (size_t(t.node) < adj_.size() && !adj_[size_t(t.node)].empty()) {
            const auto& a = adj_[size_t(t.node)];
            std::copy(a.begin(), a.end(), g.store->begin());
        }
        if (!all_finite(g)) throw std::runtime_error("grad: non-finite gradient");
        return g;
    }

    size_t num_nodes() const { return nodes_.size(); }

private:
    std::vector<BackFn> nodes_;
    std::vector<std::vector<double>> adj_;
};

namespace detail {

inline void check_finite(const Tensor& t, const char* op) {
    if (!all_finite(t)) throw std::runtime_error(std::string(op) + ": non-finite result");
}

inline Tape* result_tape(const Tensor& a) { return a.tracked() ? a.tape : nullptr; }

inline Tape* result_tape(const Tensor& a, const Tensor& b) {
    if (a.tracked() && b.tracked() && a.tape != b.tape)
        throw std::invalid_argument("op: operands live on different tapes");
    return a.tracked() ? a.tape : (b.tracked() ? b.tape : nullptr);
}

// b broadcasts over a's leading axes when b.shape is a trailing suffix of
// a.shape (a scalar {1} also qualifies). Anything fancier is rejected.
inline bool suffix_broadcast(const std::vector<int>& a, const std::vector<int>& b) {
    if (b.size() == 1 && b[0] == 1) return true;
    if (b.size() > a.size()) return false;
    return std::equal(b.rbegin(), b.rend(), a.rbegin());
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise binary ops (with trailing-suffix broadcast of the right side)
// ---------------------------------------------------------------------------

namespace detail {

template <class Fwd, class BackA, class BackB>
Tensor binary_op(const Tensor& a, const Tensor& b, const char* name, Fwd fwd, BackA ba, BackB bb) {
    if (!suffix_broadcast(a.shape, b.shape))
        throw std::invalid_argument(std::string(name) + ": shapes not broadcastable " +
                                    shape_str(a.shape) + " vs " + shape_str(b.shape));
    const int64_t n = a.size();
    const int64_t m = b.size();
    Tensor out(a.shape);
    const double* pa = a.data();
    const double* pb = b.data();
    double* po = out.data();
    for (int64_t i = 0; i < n; ++i) po[i] = fwd(pa[i], pb[i % m]);
    check_finite(out, name);
    if (Tape* tape = result_tape(a, b)) {
        out.tape = tape;
        const int an = a.node, bn = b.node;
        auto as = a.store, bs = b.store;
        out.node = tape->add_node([an, bn, as, bs, n, m, ba, bb](const std::vector<double>& og,
                                                                 std::vector<std::vector<double>>& adj) {
            if (an >= 0) {
                auto& ga = adj[size_t(an)];
                ensure_zeros(ga, size_t(n));
                for (int64_t i = 0; i < n; ++i)
                    ga[size_t(i)] += og[size_t(i)] * ba((*as)[size_t(i)], (*bs)[size_t(i % m)]);
            }
            if (bn >= 0) {
                auto& gb = adj[size_t(bn)];
                ensure_zeros(gb, size_t(m));
                for (int64_t i = 0; i < n; ++i)
                    gb[size_t(i % m)] += og[size_t(i)] * bb((*as)[size_t(i)], (*bs)[size_t(i % m)]);
            }
        });
    }
    return out;
}

template <class Fwd, class Back>
Tensor unary_op(const Tensor& a, const char* name, Fwd fwd, Back back) {
    const int64_t n = a.size();
    Tensor out(a.shape);
    const double* pa = a.data();
    double* po = out.data();
    for (int64_t i = 0; i < n; ++i) po[i] = fwd(pa[i]);
    check_finite(out, name);
    if (Tape* tape = result_tape(a)) {
        out.tape = tape;
        const int an = a.node;
        auto as = a.store;
        out.node = tape->add_node(
            [an, as, n, back](const std::vector<double>& og, std::vector<std::vector<double>>& adj) {
                auto& ga = adj[size_t(an)];
                ensure_zeros(ga, size_t(n));
                for (int64_t i = 0; i < n; ++i) ga[size_t(i)] += og[size_t(i)] * back((*as)[size_t(i)]);
            });
    }
    return out;
}

}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) {
    return detail::binary_op(
        a, b, "add", [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
        [](double, double) { return 1.0; });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    return detail::binary_op(
        a, b, "sub", [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
        [](double, double) { return -1.0; });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    return detail::binary_op(
        a, b, "mul", [](double x, double y) { return x * y; }, [](double, double y) { return y; },
        [](double x, double) { return x; });
}

inline Tensor scale(const Tensor& a, double c) {
    return detail::unary_op(
        a, "scale", [c](double x) { return c * x; }, [c](double) { return c; });
}

inline Tensor offset(const Tensor& a, double c) {
    return detail::unary_op(
        a, "offset", [c](double x) { return x + c; }, [](double) { return 1.0; });
}

inline Tensor exp(const Tensor& a) {
    return detail::unary_op(
        a, "exp", [](double x) { return std::exp(x); }, [](double x) { return std::exp(x); });
}

inline Tensor log(const Tensor& a) {
    for (double v : *a.store)
        if (v <= 0.0) throw std::invalid_argument("log: non-positive input");
    return detail::unary_op(
        a, "log", [](double x) { return std::log(x); }, [](double x) { return 1.0 / x; });
}

inline Tensor abs(const Tensor& a) {
    return detail::unary_op(
        a, "abs", [](double x) { return std::fabs(x); },
        [](double x) { return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0); });
}

inline Tensor relu(const Tensor& a) {
    return detail::unary_op(
        a, "relu", [](double x) { return x > 0 ? x : 0.0; }, [](double x) { return x > 0 ? 1.0 : 0.0; });
}

inline Tensor clamp_min(const Tensor& a, double floor) {
    return detail::unary_op(
        a, "clamp_min", [floor](double x) { return x < floor ? floor : x; },
        [floor](double x) { return x >= floor ? 1.0 : 0.0; });
}

// x / (1 + |x|); range strictly inside (-1, 1), derivative 1/(1+|x|)^2
inline Tensor saturate(const Tensor& a) {
    return detail::unary_op(
        a, "saturate", [](double x) { return x / (1.0 + std::fabs(x)); },
        [](double x) {
            double d = 1.0 + std::fabs(x);
            return 1.0 / (d * d);
        });
}

inline Tensor gelu(const Tensor& a) {
    constexpr double inv_sqrt2 = 0.7071067811865475244;
    constexpr double inv_sqrt2pi = 0.3989422804014326779;
    return detail::unary_op(
        a, "gelu", [](double x) { return 0.5 * x * (1.0 + std::erf(x * inv_sqrt2)); },
        [](double x) {
            double phi = 0.5 * (1.0 + std::erf(x * inv_sqrt2));
            double pdf = inv_sqrt2pi * std::exp(-0.5 * x * x);
            return phi + x * pdf;
        });
}

// ---------------------------------------------------------------------------
// matrix ops
// ---------------------------------------------------------------------------

namespace detail {
inline void require_2d(const Tensor& t, const char* op) {
    if (t.rank() != 2) throw std::invalid_argument(std::string(op) + ": expected 2-D tensor");
}

// C[m x n] += A[m x k] * B[k x n], optionally transposing either input view
inline void gemm_acc(double* c, const double* a, const double* b, int m, int k, int n, bool at,
                     bool bt) {
    for (int i = 0; i < m; ++i) {
        double* ci = c + size_t(i) * size_t(n);
        for (int l = 0; l < k; ++l) {
            const double av = at ? a[size_t(l) * size_t(m) + size_t(i)] : a[size_t(i) * size_t(k) + size_t(l)];
            if (av == 0.0) continue;
            const double* brow = bt ? nullptr : b + size_t(l) * size_t(n);
            if (!bt) {
                for (int j = 0; j < n; ++j) ci[j] += av * brow[j];
            } else {
                for (int j = 0; j < n; ++j) ci[j] += av * b[size_t(j) * size_t(k) + size_t(l)];
            }
        }
    }
}
}  // namespace detail

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    detail::require_2d(a, "matmul");
    detail::require_2d(b, "matmul");
    const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
    if (b.dim(0) != k)
        throw std::invalid_argument("matmul: inner dimensions differ " + shape_str(a.shape) +
                                    " vs " + shape_str(b.shape));
    Tensor out({m, n});
    detail::gemm_acc(out.data(), a.data(), b.data(), m, k, n, false, false);
    detail::check_finite(out, "matmul");
    if (Tape* tape = detail::result_tape(a, b)) {
        out.tape = tape;
        const int an = a.node, bn = b.node;
        auto as = a.store, bs = b.store;
        out.node = tape->add_node([an, bn, as, bs, m, k, n](const std::vector<double>& og,
                                                            std::vector<std::vector<double>>& adj) {
            if (an >= 0) {  // dA = dC * B^T
                auto& ga = adj[size_t(an)];
                detail::ensure_zeros(ga, size_t(m) * size_t(k));
                detail::gemm_acc(ga.data(), og.data(), bs->data(), m, n, k, false, true);
            }
            if (bn >= 0) {  // dB = A^T * dC
                auto& gb = adj[size_t(bn)];
                detail::ensure_zeros(gb, size_t(k) * size_t(n));
                detail::gemm_acc(gb.data(), as->data(), og.data(), k, m, n, true, false);
            }
        });
    }
    return out;
}

// a[m x k] * b[n x k]^T -> [m x n]; the natural layout for (rows x W^T)
inline Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    detail::require_2d(a, "matmul_nt");
    detail::require_2d(b, "matmul_nt");
    const int m = a.dim(0), k = a.dim(1), n = b.dim(0);
    if (b.dim(1) != k)
        throw std::invalid_argument("matmul_nt: inner dimensions differ " + shape_str(a.shape) +
                                    " vs " + shape_str(b.shape));
    Tensor out({m, n});
    detail::gemm_acc(out.data(), a.data(), b.data(), m, k, n, false, true);
    detail::check_finite(out, "matmul_nt");
    if (Tape* tape = detail::result_tape(a, b)) {
        out.tape = tape;
        const int an = a.node, bn = b.node;
        auto as = a.store, bs = b.store;
        out.node = tape->add_node([an, bn, as, bs, m, k, n](const std::vector<double>& og,
                                                            std::vector<std::vector<double>>& adj) {
            if (an >= 0) {  // dA = dC * B
                auto& ga = adj[size_t(an)];
                detail::ensure_zeros(ga, size_t(m) * size_t(k));
                detail::gemm_acc(ga.data(), og.data(), bs->data(), m, n, k, false, false);
            }
            if (bn >= 0) {  // dB = dC^T * A
                auto& gb = adj[size_t(bn)];
                detail::ensure_zeros(gb, size_t(n) * size_t(k));
                detail::gemm_acc(gb.data(), og.data(), as->data(), n, m, k, true, false);
            }
        });
    }
    return out;
}

inline Tensor transpose(const Tensor& a) {
    detail::require_2d(a, "transpose");
    const int m = a.dim(0), n = a.dim(1);
    Tensor out({n, m});
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) out.at(j, i) = a.at(i, j);
    if (Tape* tape = detail::result_tape(a)) {
        out.tape = tape;
        const int an = a.node;
        out.node = tape->add_node(
            [an, m, n](const std::vector<double>& og, std::vector<std::vector<double>>& adj) {
                auto& ga = adj[size_t(an)];
                detail::ensure_zeros(ga, size_t(m) * size_t(n));
                for (int i = 0; i < m; ++i)
                    for (int j = 0; j < n; ++j)
                        ga[size_t(i) * size_t(n) + size_t(j)] += og[size_t(j) * size_t(m) + size_t(i)];
            });
    }
    return out;
}

// Row-wise softmax with row-max subtraction. Works for any n x m.
inline Tensor softmax_rows(const Tensor& a) {
    detail::require_2d(a, "softmax_rows");
    const int n = a.dim(0), m = a.dim(1);
    Tensor out({n, m});
    for (int i = 0; i < n; ++i) {
        const double* row = a.data() + size_t(i) * size_t(m);
        double* orow = out.data() + size_t(i) * size_t(m);
        double mx = row[0];
        for (int j = 1; j < m; ++j) mx = std::max(mx, row[j]);
        double s = 0.0;
        for (int j = 0; j < m; ++j) {
            orow[j] = std::exp(row[j] - mx);
            s += orow[j];
        }
        for (int j = 0; j < m; ++j) orow[j] /= s;
    }
    detail::check_finite(out, "softmax_rows");
    if (Tape* tape = detail::result_tape(a)) {
        out.tape = tape;
        const int an = a.node;
        auto os = out.store;
        out.node = tape->add_node(
            [an, os, n, m](const std::vector<double>& og, std::vector<std::vector<double>>& adj) {
                auto& ga = adj[size_t(an)];
                detail::ensure_zeros(ga, size_t(n) * size_t(m));
                for (int i = 0; i < n; ++i) {
                    const double* y = os->data() + size_t(i) * size_t(m);
                    const double* dy = og.data() + size_t(i) * size_t(m);
                    double dot = 0.0;
                    for (int j = 0; j < m; ++j) dot += y[j] * dy[j];
                    double* gi = ga.data() + size_t(i) * size_t(m);
                    for (int j = 0; j < m; ++j) gi[j] += y[j] * (dy[j] - dot);
                }
            });
    }
    return out;
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

enum class ReduceKind { sum, mean, variance };

namespace detail {
struct ReducePlan {
    std::vector<int> out_shape;  // {1} when everything is reduced
    std::vector<int64_t> out_index;  // per input element
    int64_t group = 0;               // elements per output cell
};

inline ReducePlan make_reduce_plan(const std::vector<int>& shape, std::span<const int> axes) {
    const int r = int(shape.size());
    std::vector<bool> red(size_t(r), false);
    for (int ax : axes) {
        if (ax < 0 || ax >= r) throw std::invalid_argument("reduce: axis out of range");
        red[size_t(ax)] = true;
    }
    ReducePlan plan;
    std::vector<int> kept;
    for (int i = 0; i < r; ++i)
        if (!red[size_t(i)]) kept.push_back(shape[size_t(i)]);
    plan.out_shape = kept.empty() ? std::vector<int>{1} : kept;
    int64_t n = Tensor::count(shape);
    plan.out_index.resize(size_t(n));
    std::vector<int64_t> strides(size_t(r), 1);
    for (int i = r - 2; i >= 0; --i) strides[size_t(i)] = strides[size_t(i + 1)] * shape[size_t(i + 1)];
    int64_t out_count = Tensor::count(plan.out_shape);
    for (int64_t lin = 0; lin < n; ++lin) {
        int64_t rem = lin, oidx = 0;
        for (int i = 0; i < r; ++i) {
            int64_t coord = rem / strides[size_t(i)];
            rem %= strides[size_t(i)];
            if (!red[size_t(i)]) oidx = oidx * shape[size_t(i)] + coord;
        }
        plan.out_index[size_t(lin)] = oidx;
    }
    plan.group = n / out_count;
    if (plan.group == 0) throw std::invalid_argument("reduce: empty reduction");
    return plan;
}
}  // namespace detail

inline Tensor reduce(const Tensor& a, ReduceKind kind, std::span<const int> axes) {
    auto plan = detail::make_reduce_plan(a.shape, axes);
    const int64_t n = a.size();
    const int64_t g = plan.group;
    Tensor out(plan.out_shape);
    const int64_t oc = out.size();
    std::vector<double> sums(size_t(oc), 0.0);
    for (int64_t i = 0; i < n; ++i) sums[size_t(plan.out_index[size_t(i)])] += (*a.store)[size_t(i)];
    if (kind == ReduceKind::sum) {
        std::copy(sums.begin(), sums.end(), out.store->begin());
    } else if (kind == ReduceKind::mean) {
        for (int64_t o = 0; o < oc; ++o) (*out.store)[size_t(o)] = sums[size_t(o)] / double(g);
    } else {
        // population variance
        std::vector<double> mu(size_t(oc), 0.0);
        for (int64_t o = 0; o < oc; ++o) mu[size_t(o)] = sums[size_t(o)] / double(g);
        for (int64_t i = 0; i < n; ++i) {
            double d = (*a.store)[size_t(i)] - mu[size_t(plan.out_index[size_t(i)])];
            (*out.store)[size_t(plan.out_index[size_t(i)])] += d * d;
        }
        for (int64_t o = 0; o < oc; ++o) (*out.store)[size_t(o)] /= double(g);
    }
    detail::check_finite(out, "reduce");
    if (Tape* tape = detail::result_tape(a)) {
        out.tape = tape;
        const int an = a.node;
        auto as = a.store;
        auto idx = std::make_shared<std::vector<int64_t>>(std::move(plan.out_index));
        out.node = tape->add_node([an, as, idx, kind, n, g, oc](const std::vector<double>& og,
                                                                std::vector<std::vector<double>>& adj) {
            auto& ga = adj[size_t(an)];
            detail::ensure_zeros(ga, size_t(n));
            if (kind == ReduceKind::sum) {
                for (int64_t i = 0; i < n; ++i) ga[size_t(i)] += og[size_t((*idx)[size_t(i)])];
            } else if (kind == ReduceKind::mean) {
                for (int64_t i = 0; i < n; ++i) ga[size_t(i)] += og[size_t((*idx)[size_t(i)])] / double(g);
            } else {
                std::vector<double> mu(size_t(oc), 0.0);
                for (int64_t i = 0; i < n; ++i) mu[size_t((*idx)[size_t(i)])] += (*as)[size_t(i)];
                for (auto& m : mu) m /= double(g);
                for (int64_t i = 0; i < n; ++i) {
                    int64_t o = (*idx)[size_t(i)];
                    ga[size_t(i)] +=
                        og[size_t(o)] * 2.0 * ((*as)[size_t(i)] - mu[size_t(o)]) / double(g);
                }
            }
        });
    }
    return out;
}

namespace detail {
inline std::vector<int> all_axes(const Tensor& t) {
    std::vector<int> ax(size_t(t.rank()));
    std::iota(ax.begin(), ax.end(), 0);
    return ax;
}
}  // namespace detail

inline Tensor sum(const Tensor& a) { return reduce(a, ReduceKind::sum, detail::all_axes(a)); }
inline Tensor mean(const Tensor& a) { return reduce(a, ReduceKind::mean, detail::all_axes(a)); }
inline Tensor variance(const Tensor& a) {
    return reduce(a, ReduceKind::variance, detail::all_axes(a));
}

// ---------------------------------------------------------------------------
// layernorm (last axis, eps 1e-5)
// ---------------------------------------------------------------------------

inline Tensor layernorm(const Tensor& a, const Tensor& gain, const Tensor& bias) {
    if (a.rank() < 1) throw std::invalid_argument("layernorm: rank-0 input");
    const int m = a.shape.back();
    if (gain.size() != m || bias.size() != m)
        throw std::invalid_argument("layernorm: gain/bias must match last axis");
    constexpr double eps = 1e-5;
    const int64_t rows = a.size() / m;
    Tensor out(a.shape);
    auto xhat = std::make_shared<std::vector<double>>(size_t(a.size()));
    auto rstd = std::make_shared<std::vector<double>>(size_t(rows));
    for (int64_t r = 0; r < rows; ++r) {
        const double* x = a.data() + r * m;
        double* o = out.data() + r * m;
        double mu = 0.0;
        for (int j = 0; j < m; ++j) mu += x[j];
        mu /= m;
        double var = 0.0;
        for (int j = 0; j < m; ++j) var += (x[j] - mu) * (x[j] - mu);
        var /= m;
        double rs = 1.0 / std::sqrt(var + eps);
        (*rstd)[size_t(r)] = rs;
        for (int j = 0; j < m; ++j) {
            double h = (x[j] - mu) * rs;
            (*xhat)[size_t(r * m + j)] = h;
            o[j] = h * gain[j] + bias[j];
        }
    }
    detail::check_finite(out, "layernorm");
    Tape* tape = nullptr;
    for (const Tensor* t : {&a, &gain, &bias}) {
        if (!t->tracked()) continue;
        if (tape && tape != t->tape) throw std::invalid_argument("layernorm: mixed tapes");
        tape = t->tape;
    }
    if (tape) {
        out.tape = tape;
        const int an = a.node, gn = gain.node, bn = bias.node;
        auto gs = gain.store;
        out.node = tape->add_node([an, gn, bn, gs, xhat, rstd, rows, m](
                                      const std::vector<double>& og,
                                      std::vector<std::vector<double>>& adj) {
            if (an >= 0) {
                auto& ga = adj[size_t(an)];
                detail::ensure_zeros(ga, size_t(rows * m));
                for (int64_t r = 0; r < rows; ++r) {
                    const double* dy = og.data() + r * m;
                    const double* h = xhat->data() + r * m;
                    double s1 = 0.0, s2 = 0.0;
                    for (int j = 0; j < m; ++j) {
                        double gdy = dy[j] * (*gs)[size_t(j)];
                        s1 += gdy;
                        s2 += gdy * h[j];
                    }
                    s1 /= m;
                    s2 /= m;
                    for (int j = 0; j < m; ++j) {
                        double gdy = dy[j] * (*gs)[size_t(j)];
                        ga[size_t(r * m + j)] += (gdy - s1 - h[j] * s2) * (*rstd)[size_t(r)];
                    }
                }
            }
            if (gn >= 0) {
                auto& gg = adj[size_t(gn)];
                detail::ensure_zeros(gg, size_t(m));
                for (int64_t r = 0; r < rows; ++r)
                    for (int j = 0; j < m; ++j)
                        gg[size_t(j)] += og[size_t(r * m + j)] * (*xhat)[size_t(r * m + j)];
            }
            if (bn >= 0) {
                auto& gb = adj[size_t(bn)];
                detail::ensure_zeros(gb, size_t(m));
                for (int64_t r = 0; r < rows; ++r)
                    for (int j = 0; j < m; ++j) gb[size_t(j)] += og[size_t(r * m + j)];
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// structural ops
// ---------------------------------------------------------------------------

inline Tensor reshape(const Tensor& a, std::vector<int> shape) {
    if (Tensor::count(shape) != a.size())
        throw std::invalid_argument("reshape: element count mismatch");
    Tensor out(shape, *a.store);
    if (Tape* tape = detail::result_tape(a)) {
        out.tape = tape;
        const int an = a.node;
        const int64_t n = a.size();
        out.node = tape->add_node(
            [an, n](const std::vector<double>& og, std::vector<std::vector<double>>& adj) {
                auto& ga = adj[size_t(an)];
                detail::ensure_zeros(ga, size_t(n));
                for (int64_t i = 0; i < n; ++i) ga[size_t(i)] += og[size_t(i)];
            });
    }
    return out;
}

inline Tensor gather_rows(const Tensor& a, std::vector<int> rows) {
    detail::require_2d(a, "gather_rows");
    const int m = a.dim(1);
    for (int r : rows)
        if (r < 0 || r >= a.dim(0)) throw std::invalid_argument("gather_rows: row out of range");
    Tensor out({int(rows.size()), m});
    for (size_t i = 0; i < rows.size(); ++i)
        std::copy_n(a.data() + size_t(rows[i]) * size_t(m), size_t(m), out.data() + i * size_t(m));
    if (Tape* tape = detail::result_tape(a)) {
        out.tape = tape;
        const int an = a.node;
        const int64_t n = a.size();
        auto rs = std::make_shared<std::vector<int>>(std::move(rows));
        out.node = tape->add_node(
            [an, n, m, rs](const std::vector<double>& og, std::vector<std::vector<double>>& adj) {
                auto& ga = adj[size_t(an)];
                detail::ensure_zeros(ga, size_t(n));
                for (size_t i = 0; i < rs->size(); ++i)
                    for (int j = 0; j < m; ++j)
                        ga[size_t((*rs)[i]) * size_t(m) + size_t(j)] += og[i * size_t(m) + size_t(j)];
            });
    }
    return out;
}

// out[i] = a[i, idx[i]]
inline Tensor select_per_row(const Tensor& a, const std::vector<int>& idx) {
    detail::require_2d(a, "select_per_row");
    const int n = a.dim(0), m = a.dim(1);
    if (int(idx.size()) != n) throw std::invalid_argument("select_per_row: index length mismatch");
    Tensor out({n});
    for (int i = 0; i < n; ++i) {
        if (idx[size_t(i)] < 0 || idx[size_t(i)] >= m)
            throw std::invalid_argument("select_per_row: index out of range");
        out[i] = a.at(i, idx[size_t(i)]);
    }
    if (Tape* tape = detail::result_tape(a)) {
        out.tape = tape;
        const int an = a.node;
        auto is = std::make_shared<std::vector<int>>(idx);
        out.node = tape->add_node(
            [an, n, m, is](const std::vector<double>& og, std::vector<std::vector<double>>& adj) {
                auto& ga = adj[size_t(an)];
                detail::ensure_zeros(ga, size_t(n) * size_t(m));
                for (int i = 0; i < n; ++i)
                    ga[size_t(i) * size_t(m) + size_t((*is)[size_t(i)])] += og[size_t(i)];
            });
    }
    return out;
}

namespace detail {
inline Tensor concat_impl(const std::vector<Tensor>& parts, bool rows) {
    if (parts.empty()) throw std::invalid_argument("concat: no inputs");
    for (const auto& p : parts) require_2d(p, "concat");
    const int fixed = rows ? parts[0].dim(1) : parts[0].dim(0);
    int total = 0;
    Tape* tape = nullptr;
    for (const auto& p : parts) {
        if ((rows ? p.dim(1) : p.dim(0)) != fixed)
            throw std::invalid_argument("concat: mismatched shapes");
        total += rows ? p.dim(0) : p.dim(1);
        if (p.tracked()) {
            if (tape && tape != p.tape) throw std::invalid_argument("concat: mixed tapes");
            tape = p.tape;
        }
    }
    Tensor out(rows ? std::vector<int>{total, fixed} : std::vector<int>{fixed, total});
    int off = 0;
    for (const auto& p : parts) {
        if (rows) {
            std::copy_n(p.data(), p.size(), out.data() + size_t(off) * size_t(fixed));
            off += p.dim(0);
        } else {
            for (int i = 0; i < fixed; ++i)
                std::copy_n(p.data() + size_t(i) * size_t(p.dim(1)), size_t(p.dim(1)),
                            out.data() + size_t(i) * size_t(total) + size_t(off));
            off += p.dim(1);
        }
    }
    if (tape) {
        out.tape = tape;
        struct Piece {
            int node;
            int extent;
        };
        auto pieces = std::make_shared<std::vector<Piece>>();
        for (const auto& p : parts) pieces->push_back({p.node, rows ? p.dim(0) : p.dim(1)});
        out.node = tape->add_node([pieces, rows, fixed, total](const std::vector<double>& og,
                                                               std::vector<std::vector<double>>& adj) {
            int off = 0;
            for (const auto& pc : *pieces) {
                if (pc.node >= 0) {
                    auto& g = adj[size_t(pc.node)];
                    ensure_zeros(g, size_t(pc.extent) * size_t(fixed));
                    if (rows) {
                        for (int64_t i = 0; i < int64_t(pc.extent) * fixed; ++i)
                            g[size_t(i)] += og[size_t(off) * size_t(fixed) + size_t(i)];
                    } else {
                        for (int i = 0; i < fixed; ++i)
                            for (int j = 0; j < pc.extent; ++j)
                                g[size_t(i) * size_t(pc.extent) + size_t(j)] +=
                                    og[size_t(i) * size_t(total) + size_t(off + j)];
                    }
                }
                off += pc.extent;
            }
        });
    }
    return out;
}
}  // namespace detail

inline Tensor concat_rows(const std::vector<Tensor>& parts) { return detail::concat_impl(parts, true); }
inline Tensor concat_cols(const std::vector<Tensor>& parts) { return detail::concat_impl(parts, false); }

// out flat element k = (src[k] >= 0) ? a.flat[src[k]] : 0. Covers patch
// extraction, nearest-neighbor upsampling and zero-padded translation.
inline Tensor gather_flat(const Tensor& a, std::vector<int64_t> src, std::vector<int> out_shape) {
    const int64_t n = a.size();
    if (Tensor::count(out_shape) != int64_t(src.size()))
        throw std::invalid_argument("gather_flat: table does not match output shape");
    for (int64_t s : src)
        if (s >= n) throw std::invalid_argument("gather_flat: source index out of range");
    Tensor out(std::move(out_shape));
    for (size_t k = 0; k < src.size(); ++k)
        (*out.store)[k] = src[k] >= 0 ? (*a.store)[size_t(src[k])] : 0.0;
    if (Tape* tape = detail::result_tape(a)) {
        out.tape = tape;
        const int an = a.node;
        auto tbl = std::make_shared<std::vector<int64_t>>(std::move(src));
        out.node = tape->add_node(
            [an, n, tbl](const std::vector<double>& og, std::vector<std::vector<double>>& adj) {
                auto& ga = adj[size_t(an)];
                detail::ensure_zeros(ga, size_t(n));
                for (size_t k = 0; k < tbl->size(); ++k)
                    if ((*tbl)[k] >= 0) ga[size_t((*tbl)[k])] += og[k];
            });
    }
    return out;
}

}  // namespace ramlab
