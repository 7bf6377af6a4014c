#pragma once
// Dense row-major tensors with a reverse-mode gradient tape.
//
// The scalar type is a template parameter: training and checkpoints use
// float, the finite-difference oracles use double. Reductions that feed
// loss values (dot, softmax denominators, cross-entropy, layer-norm
// statistics) accumulate in double regardless of the storage scalar.
//
// Ops are free functions over Tensor<S>. While a Tape<S> is active (see
// TapeScope), any op that touches a grad-requiring tensor records a
// backward closure; Tape::backward seeds the loss gradient and walks the
// closures exactly once, in reverse recording order. With no active tape
// the same functions are plain forward evaluation.
//
// Eigen supplies the matrix kernels; everything runs single-threaded, so
// identical inputs produce bit-identical outputs on a given platform.

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "zidian/rng.hpp"

namespace zidian {

// Programming errors (shape mismatches, invalid indices). These are bugs
// at the call site, never data-dependent conditions.
struct ShapeError : std::logic_error {
    explicit ShapeError(const std::string& msg) : std::logic_error(msg) {}
};

inline std::string shape_str(const std::vector<int>& s) {
    std::string out = "[";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

#define ZIDIAN_REQUIRE(cond, msg)                                         \
    do {                                                                  \
        if (!(cond)) {                                                    \
            std::ostringstream oss_;                                      \
            oss_ << msg;                                                  \
            throw ::zidian::ShapeError(oss_.str());                       \
        }                                                                 \
    } while (0)

template <typename S>
struct TensorImpl {
    std::vector<int> shape;
    std::vector<S> value;
    std::vector<S> grad;  // empty until touched by backward
    bool requires_grad = false;
    bool traced = false;  // produced by an op recorded on the active tape
};

template <typename S>
class Tensor {
public:
    using Scalar = S;

    Tensor() = default;

    static Tensor zeros(std::vector<int> shape) {
        Tensor t;
        t.impl_ = std::make_shared<TensorImpl<S>>();
        t.impl_->shape = std::move(shape);
        t.impl_->value.assign(count(t.impl_->shape), S(0));
        return t;
    }

    static Tensor full(std::vector<int> shape, S v) {
        Tensor t = zeros(std::move(shape));
        for (S& x : t.impl_->value) x = v;
        return t;
    }

    static Tensor scalar(S v) { return from({1}, {v}); }

    static Tensor from(std::vector<int> shape, std::vector<S> values) {
        ZIDIAN_REQUIRE(static_cast<int64_t>(values.size()) == count(shape),
                       "tensor data length " << values.size() << " does not match shape "
                                             << shape_str(shape));
        Tensor t;
        t.impl_ = std::make_shared<TensorImpl<S>>();
        t.impl_->shape = std::move(shape);
        t.impl_->value = std::move(values);
        return t;
    }

    bool defined() const { return impl_ != nullptr; }
    const std::vector<int>& shape() const { return impl_->shape; }
    int rank() const { return static_cast<int>(impl_->shape.size()); }
    int dim(int i) const { return impl_->shape[static_cast<size_t>(i)]; }
    int64_t numel() const { return static_cast<int64_t>(impl_->value.size()); }

    S* data() { return impl_->value.data(); }
    const S* data() const { return impl_->value.data(); }
    std::vector<S>& values() { return impl_->value; }
    const std::vector<S>& values() const { return impl_->value; }

    S item() const {
        ZIDIAN_REQUIRE(numel() == 1, "item() on tensor of shape " << shape_str(shape()));
        return impl_->value[0];
    }

    bool requires_grad() const { return impl_->requires_grad; }
    Tensor& set_requires_grad(bool b = true) {
        impl_->requires_grad = b;
        return *this;
    }

    bool has_grad() const { return !impl_->grad.empty(); }
    // Gradient value at flat index i; zero when backward never reached it.
    S grad_at(int64_t i) const {
        return impl_->grad.empty() ? S(0) : impl_->grad[static_cast<size_t>(i)];
    }
    std::vector<S>& grad_buffer() {
        if (impl_->grad.empty()) impl_->grad.assign(impl_->value.size(), S(0));
        return impl_->grad;
    }
    void zero_grad() {
        if (!impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), S(0));
    }

    Tensor clone() const {
        Tensor t = from(impl_->shape, impl_->value);
        t.impl_->requires_grad = impl_->requires_grad;
        return t;
    }

    std::shared_ptr<TensorImpl<S>>& impl() { return impl_; }
    const std::shared_ptr<TensorImpl<S>>& impl() const { return impl_; }

    static int64_t count(const std::vector<int>& shape) {
        int64_t n = 1;
        for (int d : shape) {
            ZIDIAN_REQUIRE(d > 0, "non-positive extent in shape " << shape_str(shape));
            n *= d;
        }
        return n;
    }

private:
    std::shared_ptr<TensorImpl<S>> impl_;
};

// ---------------------------------------------------------------------------
// Tape

template <typename S>
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    void record(std::function<void()> fn) { nodes_.push_back(std::move(fn)); }
    size_t size() const { return nodes_.size(); }
    void clear() { nodes_.clear(); }

    // Seeds d(loss)/d(loss) = 1 and runs every recorded closure once, in
    // reverse recording order. Recording order is a topological order of the
    // forward graph, so each consumer runs before its producers.
    void backward(Tensor<S>& loss) {
        ZIDIAN_REQUIRE(loss.numel() == 1,
                       "backward() needs a scalar loss, got " << shape_str(loss.shape()));
        ZIDIAN_REQUIRE(loss.impl()->traced || loss.requires_grad(),
                       "backward() on a tensor that is not on the tape");
        loss.grad_buffer()[0] = S(1);
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
    }

    static Tape*& current_slot() {
        thread_local Tape* t = nullptr;
        return t;
    }
    static Tape* current() { return current_slot(); }

private:
    std::vector<std::function<void()>> nodes_;
};

// Activates a tape for the current thread; restores the previous one on exit.
template <typename S>
class TapeScope {
public:
    explicit TapeScope(Tape<S>& t) : prev_(Tape<S>::current_slot()) {
        Tape<S>::current_slot() = &t;
    }
    ~TapeScope() { Tape<S>::current_slot() = prev_; }
    TapeScope(const TapeScope&) = delete;
    TapeScope& operator=(const TapeScope&) = delete;

private:
    Tape<S>* prev_;
};

// ---------------------------------------------------------------------------
// Op plumbing

namespace detail {

template <typename S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using MatMap = Eigen::Map<Mat<S>>;
template <typename S>
using ConstMatMap = Eigen::Map<const Mat<S>>;
template <typename S>
using ArrMap = Eigen::Map<Eigen::Array<S, Eigen::Dynamic, 1>>;
template <typename S>
using ConstArrMap = Eigen::Map<const Eigen::Array<S, Eigen::Dynamic, 1>>;

template <typename S>
inline bool traced(const Tensor<S>& t) {
    return t.defined() && (t.requires_grad() || t.impl()->traced);
}

template <typename S>
inline std::vector<S>& ensure_grad(const std::shared_ptr<TensorImpl<S>>& p) {
    if (p->grad.empty()) p->grad.assign(p->value.size(), S(0));
    return p->grad;
}

// True when the op must be recorded; marks the output as tape-produced.
template <typename S>
inline bool recording(std::initializer_list<const Tensor<S>*> inputs, Tensor<S>& out) {
    if (!Tape<S>::current()) return false;
    bool any = false;
    for (const Tensor<S>* t : inputs) any = any || traced(*t);
    if (any) out.impl()->traced = true;
    return any;
}

// Output gradients are allocated lazily by consumers; a node whose output
// was never touched has nothing to propagate.
template <typename S>
inline bool no_out_grad(const std::shared_ptr<TensorImpl<S>>& out) {
    return out->grad.empty();
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise and structural ops

template <typename S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
    // Same shape, or scalar-with-tensor (the only implicit broadcast).
    const bool a_scalar = a.numel() == 1 && b.numel() != 1;
    const bool b_scalar = b.numel() == 1 && a.numel() != 1;
    ZIDIAN_REQUIRE(a_scalar || b_scalar || a.shape() == b.shape(),
                   "add: shape mismatch " << shape_str(a.shape()) << " vs "
                                          << shape_str(b.shape()));
    const Tensor<S>& big = a_scalar ? b : a;
    Tensor<S> out = Tensor<S>::zeros(big.shape());
    const int64_t n = big.numel();
    const S* pa = a.data();
    const S* pb = b.data();
    S* po = out.data();
    for (int64_t i = 0; i < n; ++i)
        po[i] = (a_scalar ? pa[0] : pa[i]) + (b_scalar ? pb[0] : pb[i]);

    if (detail::recording<S>({&a, &b}, out)) {
        auto ai = a.impl(), bi = b.impl(), oi = out.impl();
        bool na = detail::traced(a), nb = detail::traced(b);
        Tape<S>::current()->record([=] {
            if (detail::no_out_grad(oi)) return;
            const S* g = oi->grad.data();
            const int64_t m = static_cast<int64_t>(oi->value.size());
            if (na) {
                auto& ga = detail::ensure_grad(ai);
                if (a_scalar) {
                    double acc = 0;
                    for (int64_t i = 0; i < m; ++i) acc += static_cast<double>(g[i]);
                    ga[0] += static_cast<S>(acc);
                } else {
                    for (int64_t i = 0; i < m; ++i) ga[i] += g[i];
                }
            }
            if (nb) {
                auto& gb = detail::ensure_grad(bi);
                if (b_scalar) {
                    double acc = 0;
                    for (int64_t i = 0; i < m; ++i) acc += static_cast<double>(g[i]);
                    gb[0] += static_cast<S>(acc);
                } else {
                    for (int64_t i = 0; i < m; ++i) gb[i] += g[i];
                }
            }
        });
    }
    return out;
}

template <typename S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
    const bool a_scalar = a.numel() == 1 && b.numel() != 1;
    const bool b_scalar = b.numel() == 1 && a.numel() != 1;
    ZIDIAN_REQUIRE(a_scalar || b_scalar || a.shape() == b.shape(),
                   "mul: shape mismatch " << shape_str(a.shape()) << " vs "
                                          << shape_str(b.shape()));
    const Tensor<S>& big = a_scalar ? b : a;
    Tensor<S> out = Tensor<S>::zeros(big.shape());
    const int64_t n = big.numel();
    const S* pa = a.data();
    const S* pb = b.data();
    S* po = out.data();
    for (int64_t i = 0; i < n; ++i)
        po[i] = (a_scalar ? pa[0] : pa[i]) * (b_scalar ? pb[0] : pb[i]);

    if (detail::recording<S>({&a, &b}, out)) {
        auto ai = a.impl(), bi = b.impl(), oi = out.impl();
        bool na = detail::traced(a), nb = detail::traced(b);
        Tape<S>::current()->record([=] {
            if (detail::no_out_grad(oi)) return;
            const S* g = oi->grad.data();
            const S* va = ai->value.data();
            const S* vb = bi->value.data();
            const int64_t m = static_cast<int64_t>(oi->value.size());
            if (na) {
                auto& ga = detail::ensure_grad(ai);
                if (a_scalar) {
                    double acc = 0;
                    for (int64_t i = 0; i < m; ++i)
                        acc += static_cast<double>(g[i]) * static_cast<double>(vb[i]);
                    ga[0] += static_cast<S>(acc);
                } else {
                    for (int64_t i = 0; i < m; ++i) ga[i] += g[i] * (b_scalar ? vb[0] : vb[i]);
                }
            }
            if (nb) {
                auto& gb = detail::ensure_grad(bi);
                if (b_scalar) {
                    double acc = 0;
                    for (int64_t i = 0; i < m; ++i)
                        acc += static_cast<double>(g[i]) * static_cast<double>(va[i]);
                    gb[0] += static_cast<S>(acc);
                } else {
                    for (int64_t i = 0; i < m; ++i) gb[i] += g[i] * (a_scalar ? va[0] : va[i]);
                }
            }
        });
    }
    return out;
}

// out = a * k for a compile-time-known constant k (no gradient into k).
template <typename S>
Tensor<S> scale(const Tensor<S>& a, S k) {
    Tensor<S> out = Tensor<S>::zeros(a.shape());
    const int64_t n = a.numel();
    const S* pa = a.data();
    S* po = out.data();
    for (int64_t i = 0; i < n; ++i) po[i] = pa[i] * k;
    if (detail::recording<S>({&a}, out)) {
        auto ai = a.impl(), oi = out.impl();
        Tape<S>::current()->record([=] {
            if (detail::no_out_grad(oi)) return;
            auto& ga = detail::ensure_grad(ai);
            const S* g = oi->grad.data();
            for (size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] * k;
        });
    }
    return out;
}

template <typename S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
    return add(a, scale(b, S(-1)));
}

template <typename S>
Tensor<S> exp_elem(const Tensor<S>& a) {
    Tensor<S> out = Tensor<S>::zeros(a.shape());
    for (int64_t i = 0; i < a.numel(); ++i) out.data()[i] = std::exp(a.data()[i]);
    if (detail::recording<S>({&a}, out)) {
        auto ai = a.impl(), oi = out.impl();
        Tape<S>::current()->record([=] {
            if (detail::no_out_grad(oi)) return;
            auto& ga = detail::ensure_grad(ai);
            for (size_t i = 0; i < ga.size(); ++i) ga[i] += oi->grad[i] * oi->value[i];
        });
    }
    return out;
}

template <typename S>
Tensor<S> gelu(const Tensor<S>& a) {
    // Exact form: x * Phi(x) with the error function.
    Tensor<S> out = Tensor<S>::zeros(a.shape());
    const S* pa = a.data();
    S* po = out.data();
    for (int64_t i = 0; i < a.numel(); ++i) {
        double x = static_cast<double>(pa[i]);
        po[i] = static_cast<S>(x * 0.5 * (1.0 + std::erf(x * 0.7071067811865476)));
    }
    if (detail::recording<S>({&a}, out)) {
        auto ai = a.impl(), oi = out.impl();
        Tape<S>::current()->record([=] {
            if (detail::no_out_grad(oi)) return;
            auto& ga = detail::ensure_grad(ai);
            for (size_t i = 0; i < ga.size(); ++i) {
                double x = static_cast<double>(ai->value[i]);
                double phi = 0.5 * (1.0 + std::erf(x * 0.7071067811865476));
                double pdf = std::exp(-0.5 * x * x) * 0.3989422804014327;
                ga[i] += oi->grad[i] * static_cast<S>(phi + x * pdf);
            }
        });
    }
    return out;
}

template <typename S>
Tensor<S> softplus(const Tensor<S>& a) {
    // log(1 + e^x), computed so large |x| never overflows.
    Tensor<S> out = Tensor<S>::zeros(a.shape());
    for (int64_t i = 0; i < a.numel(); ++i) {
        double x = static_cast<double>(a.data()[i]);
        double y = x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
        out.data()[i] = static_cast<S>(y);
    }
    if (detail::recording<S>({&a}, out)) {
        auto ai = a.impl(), oi = out.impl();
        Tape<S>::current()->record([=] {
            if (detail::no_out_grad(oi)) return;
            auto& ga = detail::ensure_grad(ai);
            for (size_t i = 0; i < ga.size(); ++i) {
                double x = static_cast<double>(ai->value[i]);
                double sig = x > 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
                ga[i] += oi->grad[i] * static_cast<S>(sig);
            }
        });
    }
    return out;
}

// Concatenation of 1-d tensors.
template <typename S>
Tensor<S> concat(const std::vector<Tensor<S>>& parts) {
    ZIDIAN_REQUIRE(!parts.empty(), "concat: empty input");
    int total = 0;
    for (const auto& p : parts) {
        ZIDIAN_REQUIRE(p.rank() == 1, "concat: expects 1-d parts, got " << shape_str(p.shape()));
        total += p.dim(0);
    }
    Tensor<S> out = Tensor<S>::zeros({total});
    int off = 0;
    for (const auto& p : parts) {
        std::copy(p.data(), p.data() + p.dim(0), out.data() + off);
        off += p.dim(0);
    }
    bool rec = Tape<S>::current() != nullptr;
    bool any = false;
    for (const auto& p : parts) any = any || detail::traced(p);
    if (rec && any) {
        out.impl()->traced = true;
        std::vector<std::shared_ptr<TensorImpl<S>>> impls;
        std::vector<bool> need;
        for (const auto& p : parts) {
            impls.push_back(p.impl());
            need.push_back(detail::traced(p));
        }
        auto oi = out.impl();
        Tape<S>::current()->record([=] {
            if (detail::no_out_grad(oi)) return;
            int o = 0;
            for (size_t k = 0; k < impls.size(); ++k) {
                int len = impls[k]->shape[0];
                if (need[k]) {
                    auto& g = detail::ensure_grad(impls[k]);
                    for (int i = 0; i < len; ++i) g[static_cast<size_t>(i)] += oi->grad[static_cast<size_t>(o + i)];
                }
                o += len;
            }
        });
    }
    return out;
}

// Stacks 1-d tensors of equal length into a [K, d] matrix.
template <typename S>
Tensor<S> stack_rows(const std::vector<Tensor<S>>& rows) {
    ZIDIAN_REQUIRE(!rows.empty(), "stack_rows: empty input");
    const int d = rows[0].dim(0);
    for (const auto& r : rows)
        ZIDIAN_REQUIRE(r.rank() == 1 && r.dim(0) == d,
                       "stack_rows: inconsistent row shape " << shape_str(r.shape()));
    Tensor<S> out = Tensor<S>::zeros({static_cast<int>(rows.size()), d});
    for (size_t k = 0; k < rows.size(); ++k)
        std::copy(rows[k].data(), rows[k].data() + d, out.data() + static_cast<int64_t>(k) * d);
    bool any = false;
    for (const auto& r : rows) any = any || detail::traced(r);
    if (Tape<S>::current() && any) {
        out.impl()->traced = true;
        std::vector<std::shared_ptr<TensorImpl<S>>> impls;
        std::vector<bool> need;
        for (const auto& r : rows) {
            impls.push_back(r.impl());
            need.push_back(detail::traced(r));
        }
        auto oi = out.impl();
        Tape<S>::current()->record([=] {
            if (detail::no_out_grad(oi)) return;
            for (size_t k = 0; k < impls.size(); ++k) {
                if (!need[k]) continue;
                auto& g = detail::ensure_grad(impls[k]);
                const S* go = oi->grad.data() + static_cast<int64_t>(k) * d;
                for (int i = 0; i < d; ++i) g[static_cast<size_t>(i)] += go[i];
            }
        });
    }
    return out;
}

// Contiguous row range [r0, r1) of a 2-d tensor.
template <typename S>
Tensor<S> slice_rows(const Tensor<S>& x, int r0, int r1) {
    ZIDIAN_REQUIRE(x.rank() == 2, "slice_rows: expects 2-d, got " << shape_str(x.shape()));
    ZIDIAN_REQUIRE(0 <= r0 && r0 < r1 && r1 <= x.dim(0),
                   "slice_rows: range [" << r0 << "," << r1 << ") out of " << x.dim(0));
    const int n = x.dim(1);
    Tensor<S> out = Tensor<S>::zeros({r1 - r0, n});
    std::copy(x.data() + static_cast<int64_t>(r0) * n, x.data() + static_cast<int64_t>(r1) * n,
              out.data());
    if (detail::recording<S>({&x}, out)) {
        auto xi = x.impl(), oi = out.impl();
        Tape<S>::current()->record([=] {
            if (detail::no_out_grad(oi)) return;
            auto& g = detail::ensure_grad(xi);
            for (int64_t i = 0; i < static_cast<int64_t>(oi->value.size()); ++i)
                g[static_cast<size_t>(static_cast<int64_t>(r0) * n + i)] += oi->grad[static_cast<size_t>(i)];
        });
    }
    return out;
}

// One row of a 2-d tensor as a 1-d vector.
template <typename S>
Tensor<S> row(const Tensor<S>& x, int r) {
    ZIDIAN_REQUIRE(x.rank() == 2, "row: expects 2-d, got " << shape_str(x.shape()));
    ZIDIAN_REQUIRE(0 <= r && r < x.dim(0), "row " << r << " out of " << x.dim(0));
    const int n = x.dim(1);
    Tensor<S> out = Tensor<S>::zeros({n});
    std::copy(x.data() + static_cast<int64_t>(r) * n, x.data() + static_cast<int64_t>(r + 1) * n,
              out.data());
    if (detail::recording<S>({&x}, out)) {
        auto xi = x.impl(), oi = out.impl();
        Tape<S>::current()->record([=] {
            if (detail::no_out_grad(oi)) return;
            auto& g = detail::ensure_grad(xi);
            for (int i = 0; i < n; ++i)
                g[static_cast<size_t>(static_cast<int64_t>(r) * n + i)] += oi->grad[static_cast<size_t>(i)];
        });
    }
    return out;
}

// Contiguous column range [c0, c1) of a 2-d tensor.
template <typename S>
Tensor<S> slice_cols(const Tensor<S>& x, int c0, int c1) {
    ZIDIAN_REQUIRE(x.rank() == 2, "slice_cols: expects 2-d, got " << shape_str(x.shape()));
    ZIDIAN_REQUIRE(0 <= c0 && c0 < c1 && c1 <= x.dim(1),
                   "slice_cols: range [" << c0 << "," << c1 << ") out of " << x.dim(1));
    const int m = x.dim(0), n = x.dim(1), w = c1 - c0;
    Tensor<S> out = Tensor<S>::zeros({m, w});
    for (int r = 0; r < m; ++r)
        std::copy(x.data() + static_cast<int64_t>(r) * n + c0,
                  x.data() + static_cast<int64_t>(r) * n + c1,
                  out.data() + static_cast<int64_t>(r) * w);
    if (detail::recording<S>({&x}, out)) {
        auto xi = x.impl(), oi = out.impl();
        Tape<S>::current()->record([=] {
            if (detail::no_out_grad(oi)) return;
            auto& g = detail::ensure_grad(xi);
            for (int r = 0; r < m; ++r)
                for (int c = 0; c < w; ++c)
                    g[static_cast<size_t>(static_cast<int64_t>(r) * n + c0 + c)] +=
                        oi->grad[static_cast<size_t>(static_cast<int64_t>(r) * w + c)];
        });
    }
    return out;
}

// Concatenates 2-d tensors with equal row counts along columns.
template <typename S>
Tensor<S> concat_cols(const std::vector<Tensor<S>>& parts) {
    ZIDIAN_REQUIRE(!parts.empty(), "concat_cols: empty input");
    const int m = parts[0].dim(0);
    int total = 0;
    for (const auto& p : parts) {
        ZIDIAN_REQUIRE(p.rank() == 2 && p.dim(0) == m,
                       "concat_cols: inconsistent part shape " << shape_str(p.shape()));
        total += p.dim(1);
    }
    Tensor<S> out = Tensor<S>::zeros({m, total});
    int off = 0;
    for (const auto& p : parts) {
        const int w = p.dim(1);
        for (int r = 0; r < m; ++r)
            std::copy(p.data() + static_cast<int64_t>(r) * w,
                      p.data() + static_cast<int64_t>(r + 1) * w,
                      out.data() + static_cast<int64_t>(r) * total + off);
        off += w;
    }
    bool any = false;
    for (const auto& p : parts) any = any || detail::traced(p);
    if (Tape<S>::current() && any) {
        out.impl()->traced = true;
        std::vector<std::shared_ptr<TensorImpl<S>>> impls;
        std::vector<bool> need;
        for (const auto& p : parts) {
            impls.push_back(p.impl());
            need.push_back(detail::traced(p));
        }
        auto oi = out.impl();
        Tape<S>::current()->record([=] {
            if (detail::no_out_grad(oi)) return;
            int o = 0;
            for (size_t k = 0; k < impls.size(); ++k) {
                const int w = impls[k]->shape[1];
                if (need[k]) {
                    auto& g = detail::ensure_grad(impls[k]);
                    for (int r = 0; r < m; ++r)
                        for (int c = 0; c < w; ++c)
                            g[static_cast<size_t>(static_cast<int64_t>(r) * w + c)] +=
                                oi->grad[static_cast<size_t>(static_cast<int64_t>(r) * total + o + c)];
                }
                o += w;
            }
        });
    }
    return out;
}

// Copies into a new shape with the same element count.
template <typename S>
Tensor<S> reshape(const Tensor<S>& x, std::vector<int> shape) {
    ZIDIAN_REQUIRE(Tensor<S>::count(shape) == x.numel(),
                   "reshape: " << shape_str(x.shape()) << " -> " << shape_str(shape)
                               << " changes element count");
    Tensor<S> out = Tensor<S>::from(std::move(shape), x.values());
    if (detail::recording<S>({&x}, out)) {
        auto xi = x.impl(), oi = out.impl();
        Tape<S>::current()->record([=] {
            if (detail::no_out_grad(oi)) return;
            auto& g = detail::ensure_grad(xi);
            for (size_t i = 0; i < g.size(); ++i) g[i] += oi->grad[i];
        });
    }
    return out;
}

// Rows of a [m, n] tensor selected by index, with scatter-add backward.
template <typename S>
Tensor<S> gather_rows(const Tensor<S>& x, const std::vector<int>& idx) {
    ZIDIAN_REQUIRE(x.rank() == 2, "gather_rows: expects 2-d, got " << shape_str(x.shape()));
    const int m = x.dim(0), n = x.dim(1);
    for (int i : idx)
        ZIDIAN_REQUIRE(0 <= i && i < m, "gather_rows: index " << i << " out of " << m << " rows");
    ZIDIAN_REQUIRE(!idx.empty(), "gather_rows: empty index list");
    Tensor<S> out = Tensor<S>::zeros({static_cast<int>(idx.size()), n});
    for (size_t k = 0; k < idx.size(); ++k)
        std::copy(x.data() + static_cast<int64_t>(idx[k]) * n,
                  x.data() + static_cast<int64_t>(idx[k] + 1) * n,
                  out.data() + static_cast<int64_t>(k) * n);
    if (detail::recording<S>({&x}, out)) {
        auto xi = x.impl(), oi = out.impl();
        Tape<S>::current()->record([=] {
            if (detail::no_out_grad(oi)) return;
            auto& g = detail::ensure_grad(xi);
            for (size_t k = 0; k < idx.size(); ++k) {
                const S* go = oi->grad.data() + static_cast<int64_t>(k) * n;
                S* gx = g.data() + static_cast<int64_t>(idx[k]) * n;
                for (int i = 0; i < n; ++i) gx[i] += go[i];
            }
        });
    }
    return out;
}

// Embedding lookup is a row gather over the embedding table.
template <typename S>
Tensor<S> embedding_lookup(const Tensor<S>& table, const std::vector<int>& ids) {
    return gather_rows(table, ids);
}

// ---------------------------------------------------------------------------
// Linear algebra

template <typename S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b, bool trans_a = false,
                 bool trans_b = false) {
    ZIDIAN_REQUIRE(a.rank() == 2 && b.rank() == 2,
                   "matmul: expects 2-d operands, got " << shape_str(a.shape()) << " and "
                                                        << shape_str(b.shape()));
    const int M = trans_a ? a.dim(1) : a.dim(0);
    const int Ka = trans_a ? a.dim(0) : a.dim(1);
    const int Kb = trans_b ? b.dim(1) : b.dim(0);
    const int N = trans_b ? b.dim(0) : b.dim(1);
    ZIDIAN_REQUIRE(Ka == Kb, "matmul: inner extents differ, " << shape_str(a.shape())
                                                              << (trans_a ? "^T" : "") << " x "
                                                              << shape_str(b.shape())
                                                              << (trans_b ? "^T" : ""));
    Tensor<S> out = Tensor<S>::zeros({M, N});
    {
        detail::ConstMatMap<S> ma(a.data(), a.dim(0), a.dim(1));
        detail::ConstMatMap<S> mb(b.data(), b.dim(0), b.dim(1));
        detail::MatMap<S> mo(out.data(), M, N);
        if (!trans_a && !trans_b) mo.noalias() = ma * mb;
        else if (!trans_a && trans_b) mo.noalias() = ma * mb.transpose();
        else if (trans_a && !trans_b) mo.noalias() = ma.transpose() * mb;
        else mo.noalias() = ma.transpose() * mb.transpose();
    }
    if (detail::recording<S>({&a, &b}, out)) {
        auto ai = a.impl(), bi = b.impl(), oi = out.impl();
        bool na = detail::traced(a), nb = detail::traced(b);
        Tape<S>::current()->record([=] {
            if (detail::no_out_grad(oi)) return;
            detail::ConstMatMap<S> gc(oi->grad.data(), M, N);
            detail::ConstMatMap<S> ma(ai->value.data(), ai->shape[0], ai->shape[1]);
            detail::ConstMatMap<S> mb(bi->value.data(), bi->shape[0], bi->shape[1]);
            if (na) {
                detail::MatMap<S> ga(detail::ensure_grad(ai).data(), ai->shape[0], ai->shape[1]);
                if (!trans_a && !trans_b) ga.noalias() += gc * mb.transpose();
                else if (!trans_a && trans_b) ga.noalias() += gc * mb;
                else if (trans_a && !trans_b) ga.noalias() += mb * gc.transpose();
                else ga.noalias() += mb.transpose() * gc.transpose();
            }
            if (nb) {
                detail::MatMap<S> gb(detail::ensure_grad(bi).data(), bi->shape[0], bi->shape[1]);
                if (!trans_a && !trans_b) gb.noalias() += ma.transpose() * gc;
                else if (trans_a && !trans_b) gb.noalias() += ma * gc;
                else if (!trans_a && trans_b) gb.noalias() += gc.transpose() * ma;
                else gb.noalias() += gc.transpose() * ma.transpose();
            }
        });
    }
    return out;
}

// x[m, n] + v[n] broadcast over rows.
template <typename S>
Tensor<S> add_rowvec(const Tensor<S>& x, const Tensor<S>& v) {
    ZIDIAN_REQUIRE(x.rank() == 2 && v.rank() == 1 && v.dim(0) == x.dim(1),
                   "add_rowvec: " << shape_str(x.shape()) << " + " << shape_str(v.shape()));
    const int m = x.dim(0), n = x.dim(1);
    Tensor<S> out = Tensor<S>::zeros({m, n});
    for (int r = 0; r < m; ++r)
        for (int c = 0; c < n; ++c)
            out.data()[static_cast<int64_t>(r) * n + c] = x.data()[static_cast<int64_t>(r) * n + c] + v.data()[c];
    if (detail::recording<S>({&x, &v}, out)) {
        auto xi = x.impl(), vi = v.impl(), oi = out.impl();
        bool nx = detail::traced(x), nv = detail::traced(v);
        Tape<S>::current()->record([=] {
            if (detail::no_out_grad(oi)) return;
            if (nx) {
                auto& g = detail::ensure_grad(xi);
                for (size_t i = 0; i < g.size(); ++i) g[i] += oi->grad[i];
            }
            if (nv) {
                auto& g = detail::ensure_grad(vi);
                for (int c = 0; c < n; ++c) {
                    double acc = 0;
                    for (int r = 0; r < m; ++r)
                        acc += static_cast<double>(oi->grad[static_cast<size_t>(static_cast<int64_t>(r) * n + c)]);
                    g[static_cast<size_t>(c)] += static_cast<S>(acc);
                }
            }
        });
    }
    return out;
}

// Mean over rows of a [m, n] tensor -> [n].
template <typename S>
Tensor<S> mean_rows(const Tensor<S>& x) {
    ZIDIAN_REQUIRE(x.rank() == 2, "mean_rows: expects 2-d, got " << shape_str(x.shape()));
    const int m = x.dim(0), n = x.dim(1);
    Tensor<S> out = Tensor<S>::zeros({n});
    for (int c = 0; c < n; ++c) {
        double acc = 0;
        for (int r = 0; r < m; ++r) acc += static_cast<double>(x.data()[static_cast<int64_t>(r) * n + c]);
        out.data()[c] = static_cast<S>(acc / m);
    }
    if (detail::recording<S>({&x}, out)) {
        auto xi = x.impl(), oi = out.impl();
        Tape<S>::current()->record([=] {
            if (detail::no_out_grad(oi)) return;
            auto& g = detail::ensure_grad(xi);
            for (int r = 0; r < m; ++r)
                for (int c = 0; c < n; ++c)
                    g[static_cast<size_t>(static_cast<int64_t>(r) * n + c)] += oi->grad[static_cast<size_t>(c)] / static_cast<S>(m);
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Reductions (double accumulation)

template <typename S>
Tensor<S> mean(const Tensor<S>& x) {
    const int64_t n = x.numel();
    double acc = 0;
    for (int64_t i = 0; i < n; ++i) acc += static_cast<double>(x.data()[i]);
    Tensor<S> out = Tensor<S>::scalar(static_cast<S>(acc / static_cast<double>(n)));
    if (detail::recording<S>({&x}, out)) {
        auto xi = x.impl(), oi = out.impl();
        Tape<S>::current()->record([=] {
            if (detail::no_out_grad(oi)) return;
            auto& g = detail::ensure_grad(xi);
            const S inv = static_cast<S>(1.0 / static_cast<double>(n));
            for (size_t i = 0; i < g.size(); ++i) g[i] += oi->grad[0] * inv;
        });
    }
    return out;
}

template <typename S>
Tensor<S> dot(const Tensor<S>& a, const Tensor<S>& b) {
    ZIDIAN_REQUIRE(a.rank() == 1 && b.rank() == 1 && a.dim(0) == b.dim(0),
                   "dot: " << shape_str(a.shape()) << " . " << shape_str(b.shape()));
    const int n = a.dim(0);
    double acc = 0;
    for (int i = 0; i < n; ++i)
        acc += static_cast<double>(a.data()[i]) * static_cast<double>(b.data()[i]);
    Tensor<S> out = Tensor<S>::scalar(static_cast<S>(acc));
    if (detail::recording<S>({&a, &b}, out)) {
        auto ai = a.impl(), bi = b.impl(), oi = out.impl();
        bool na = detail::traced(a), nb = detail::traced(b);
        Tape<S>::current()->record([=] {
            if (detail::no_out_grad(oi)) return;
            const S g = oi->grad[0];
            if (na) {
                auto& ga = detail::ensure_grad(ai);
                for (int i = 0; i < n; ++i) ga[static_cast<size_t>(i)] += g * bi->value[static_cast<size_t>(i)];
            }
            if (nb) {
                auto& gb = detail::ensure_grad(bi);
                for (int i = 0; i < n; ++i) gb[static_cast<size_t>(i)] += g * ai->value[static_cast<size_t>(i)];
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Normalization and softmax family. All operate on the last dimension.

namespace detail {
template <typename S>
inline std::pair<int64_t, int> last_dim_rows(const Tensor<S>& x) {
    ZIDIAN_REQUIRE(x.rank() >= 1, "op expects rank >= 1");
    int n = x.dim(x.rank() - 1);
    return {x.numel() / n, n};
}
}  // namespace detail

template <typename S>
Tensor<S> softmax_lastdim(const Tensor<S>& x) {
    auto [rows, n] = detail::last_dim_rows(x);
    Tensor<S> out = Tensor<S>::zeros(x.shape());
    for (int64_t r = 0; r < rows; ++r) {
        const S* px = x.data() + r * n;
        S* po = out.data() + r * n;
        S mx = px[0];
        for (int i = 1; i < n; ++i) mx = std::max(mx, px[i]);
        double denom = 0;
        for (int i = 0; i < n; ++i) denom += std::exp(static_cast<double>(px[i] - mx));
        for (int i = 0; i < n; ++i)
            po[i] = static_cast<S>(std::exp(static_cast<double>(px[i] - mx)) / denom);
    }
    if (detail::recording<S>({&x}, out)) {
        auto xi = x.impl(), oi = out.impl();
        Tape<S>::current()->record([=] {
            if (detail::no_out_grad(oi)) return;
            auto& g = detail::ensure_grad(xi);
            for (int64_t r = 0; r < rows; ++r) {
                const S* y = oi->value.data() + r * n;
                const S* gy = oi->grad.data() + r * n;
                double s = 0;
                for (int i = 0; i < n; ++i) s += static_cast<double>(gy[i]) * static_cast<double>(y[i]);
                for (int i = 0; i < n; ++i)
                    g[static_cast<size_t>(r * n + i)] += static_cast<S>(y[i] * (static_cast<double>(gy[i]) - s));
            }
        });
    }
    return out;
}

template <typename S>
Tensor<S> log_softmax_lastdim(const Tensor<S>& x) {
    auto [rows, n] = detail::last_dim_rows(x);
    Tensor<S> out = Tensor<S>::zeros(x.shape());
    for (int64_t r = 0; r < rows; ++r) {
        const S* px = x.data() + r * n;
        S* po = out.data() + r * n;
        S mx = px[0];
        for (int i = 1; i < n; ++i) mx = std::max(mx, px[i]);
        double denom = 0;
        for (int i = 0; i < n; ++i) denom += std::exp(static_cast<double>(px[i] - mx));
        const double lse = static_cast<double>(mx) + std::log(denom);
        for (int i = 0; i < n; ++i) po[i] = static_cast<S>(static_cast<double>(px[i]) - lse);
    }
    if (detail::recording<S>({&x}, out)) {
        auto xi = x.impl(), oi = out.impl();
        Tape<S>::current()->record([=] {
            if (detail::no_out_grad(oi)) return;
            auto& g = detail::ensure_grad(xi);
            for (int64_t r = 0; r < rows; ++r) {
                const S* y = oi->value.data() + r * n;
                const S* gy = oi->grad.data() + r * n;
                double s = 0;
                for (int i = 0; i < n; ++i) s += static_cast<double>(gy[i]);
                for (int i = 0; i < n; ++i)
                    g[static_cast<size_t>(r * n + i)] +=
                        static_cast<S>(static_cast<double>(gy[i]) - std::exp(static_cast<double>(y[i])) * s);
            }
        });
    }
    return out;
}

template <typename S>
Tensor<S> layer_norm(const Tensor<S>& x, const Tensor<S>& gamma, const Tensor<S>& beta,
                     double eps = 1e-5) {
    auto [rows, n] = detail::last_dim_rows(x);
    ZIDIAN_REQUIRE(gamma.rank() == 1 && gamma.dim(0) == n && beta.rank() == 1 && beta.dim(0) == n,
                   "layer_norm: parameter shapes " << shape_str(gamma.shape()) << "/"
                                                   << shape_str(beta.shape()) << " vs last dim "
                                                   << n);
    Tensor<S> out = Tensor<S>::zeros(x.shape());
    // xhat and 1/sigma are saved for the backward pass.
    auto xhat = std::make_shared<std::vector<S>>(static_cast<size_t>(x.numel()));
    auto inv_std = std::make_shared<std::vector<S>>(static_cast<size_t>(rows));
    for (int64_t r = 0; r < rows; ++r) {
        const S* px = x.data() + r * n;
        double mu = 0;
        for (int i = 0; i < n; ++i) mu += static_cast<double>(px[i]);
        mu /= n;
        double var = 0;
        for (int i = 0; i < n; ++i) {
            double d = static_cast<double>(px[i]) - mu;
            var += d * d;
        }
        var /= n;
        double istd = 1.0 / std::sqrt(var + eps);
        (*inv_std)[static_cast<size_t>(r)] = static_cast<S>(istd);
        for (int i = 0; i < n; ++i) {
            S xh = static_cast<S>((static_cast<double>(px[i]) - mu) * istd);
            (*xhat)[static_cast<size_t>(r * n + i)] = xh;
            out.data()[r * n + i] = gamma.data()[i] * xh + beta.data()[i];
        }
    }
    if (detail::recording<S>({&x, &gamma, &beta}, out)) {
        auto xi = x.impl(), gi = gamma.impl(), bi = beta.impl(), oi = out.impl();
        bool nx = detail::traced(x), ng = detail::traced(gamma), nb = detail::traced(beta);
        Tape<S>::current()->record([=] {
            if (detail::no_out_grad(oi)) return;
            for (int64_t r = 0; r < rows; ++r) {
                const S* gy = oi->grad.data() + r * n;
                const S* xh = xhat->data() + r * n;
                const double istd = static_cast<double>((*inv_std)[static_cast<size_t>(r)]);
                if (ng) {
                    auto& gg = detail::ensure_grad(gi);
                    for (int i = 0; i < n; ++i) gg[static_cast<size_t>(i)] += gy[i] * xh[i];
                }
                if (nb) {
                    auto& gb = detail::ensure_grad(bi);
                    for (int i = 0; i < n; ++i) gb[static_cast<size_t>(i)] += gy[i];
                }
                if (nx) {
                    auto& gx = detail::ensure_grad(xi);
                    double sum_dxhat = 0, sum_dxhat_xhat = 0;
                    for (int i = 0; i < n; ++i) {
                        double dxh = static_cast<double>(gy[i]) * static_cast<double>(gi->value[static_cast<size_t>(i)]);
                        sum_dxhat += dxh;
                        sum_dxhat_xhat += dxh * static_cast<double>(xh[i]);
                    }
                    for (int i = 0; i < n; ++i) {
                        double dxh = static_cast<double>(gy[i]) * static_cast<double>(gi->value[static_cast<size_t>(i)]);
                        double dx = (dxh - sum_dxhat / n - static_cast<double>(xh[i]) * sum_dxhat_xhat / n) * istd;
                        gx[static_cast<size_t>(r * n + i)] += static_cast<S>(dx);
                    }
                }
            }
        });
    }
    return out;
}

// Rows scaled to unit L2 norm.
template <typename S>
Tensor<S> l2_normalize_rows(const Tensor<S>& x) {
    ZIDIAN_REQUIRE(x.rank() == 2, "l2_normalize_rows: expects 2-d, got " << shape_str(x.shape()));
    const int m = x.dim(0), n = x.dim(1);
    Tensor<S> out = Tensor<S>::zeros({m, n});
    auto inv_norm = std::make_shared<std::vector<double>>(static_cast<size_t>(m));
    for (int r = 0; r < m; ++r) {
        const S* px = x.data() + static_cast<int64_t>(r) * n;
        double sq = 0;
        for (int i = 0; i < n; ++i) sq += static_cast<double>(px[i]) * static_cast<double>(px[i]);
        double inv = 1.0 / std::sqrt(std::max(sq, 1e-24));
        (*inv_norm)[static_cast<size_t>(r)] = inv;
        for (int i = 0; i < n; ++i) out.data()[static_cast<int64_t>(r) * n + i] = static_cast<S>(px[i] * inv);
    }
    if (detail::recording<S>({&x}, out)) {
        auto xi = x.impl(), oi = out.impl();
        Tape<S>::current()->record([=] {
            if (detail::no_out_grad(oi)) return;
            auto& g = detail::ensure_grad(xi);
            for (int r = 0; r < m; ++r) {
                const S* y = oi->value.data() + static_cast<int64_t>(r) * n;
                const S* gy = oi->grad.data() + static_cast<int64_t>(r) * n;
                const double inv = (*inv_norm)[static_cast<size_t>(r)];
                double proj = 0;
                for (int i = 0; i < n; ++i) proj += static_cast<double>(gy[i]) * static_cast<double>(y[i]);
                for (int i = 0; i < n; ++i)
                    g[static_cast<size_t>(static_cast<int64_t>(r) * n + i)] +=
                        static_cast<S>((static_cast<double>(gy[i]) - proj * static_cast<double>(y[i])) * inv);
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Cross-entropy

// Mean over rows of -log_softmax(logits)[target]. Computed via log-sum-exp
// with double accumulation, never by taking log of a softmax output.
template <typename S>
Tensor<S> cross_entropy(const Tensor<S>& logits, const std::vector<int>& targets) {
    ZIDIAN_REQUIRE(logits.rank() == 2, "cross_entropy: logits must be [B, C], got "
                                           << shape_str(logits.shape()));
    const int B = logits.dim(0), C = logits.dim(1);
    ZIDIAN_REQUIRE(static_cast<int>(targets.size()) == B,
                   "cross_entropy: " << targets.size() << " targets for " << B << " rows");
    for (int t : targets)
        ZIDIAN_REQUIRE(0 <= t && t < C, "cross_entropy: target " << t << " out of " << C);
    auto probs = std::make_shared<std::vector<S>>(static_cast<size_t>(logits.numel()));
    double loss = 0;
    for (int r = 0; r < B; ++r) {
        const S* px = logits.data() + static_cast<int64_t>(r) * C;
        S mx = px[0];
        for (int i = 1; i < C; ++i) mx = std::max(mx, px[i]);
        double denom = 0;
        for (int i = 0; i < C; ++i) denom += std::exp(static_cast<double>(px[i] - mx));
        const double lse = static_cast<double>(mx) + std::log(denom);
        loss += lse - static_cast<double>(px[targets[static_cast<size_t>(r)]]);
        for (int i = 0; i < C; ++i)
            (*probs)[static_cast<size_t>(static_cast<int64_t>(r) * C + i)] =
                static_cast<S>(std::exp(static_cast<double>(px[i] - mx)) / denom);
    }
    Tensor<S> out = Tensor<S>::scalar(static_cast<S>(loss / B));
    if (detail::recording<S>({&logits}, out)) {
        auto li = logits.impl(), oi = out.impl();
        Tape<S>::current()->record([=] {
            if (detail::no_out_grad(oi)) return;
            auto& g = detail::ensure_grad(li);
            const S go = oi->grad[0];
            for (int r = 0; r < B; ++r) {
                for (int i = 0; i < C; ++i) {
                    S p = (*probs)[static_cast<size_t>(static_cast<int64_t>(r) * C + i)];
                    S onehot = (i == targets[static_cast<size_t>(r)]) ? S(1) : S(0);
                    g[static_cast<size_t>(static_cast<int64_t>(r) * C + i)] += go * (p - onehot) / static_cast<S>(B);
                }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Convolution (glyph encoder)

// Valid 2-d convolution: x[Cin, H, W] * w[Cout, Cin, kh, kw] + b[Cout].
template <typename S>
Tensor<S> conv2d(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& b) {
    ZIDIAN_REQUIRE(x.rank() == 3 && w.rank() == 4 && b.rank() == 1,
                   "conv2d: ranks " << x.rank() << "/" << w.rank() << "/" << b.rank());
    const int Cin = x.dim(0), H = x.dim(1), W = x.dim(2);
    const int Cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
    ZIDIAN_REQUIRE(w.dim(1) == Cin, "conv2d: channel mismatch " << w.dim(1) << " vs " << Cin);
    ZIDIAN_REQUIRE(b.dim(0) == Cout, "conv2d: bias extent " << b.dim(0) << " vs " << Cout);
    ZIDIAN_REQUIRE(H >= kh && W >= kw, "conv2d: kernel larger than input");
    const int Ho = H - kh + 1, Wo = W - kw + 1;
    Tensor<S> out = Tensor<S>::zeros({Cout, Ho, Wo});
    auto X = [&](const S* p, int c, int i, int j) -> S {
        return p[(static_cast<int64_t>(c) * H + i) * W + j];
    };
    for (int co = 0; co < Cout; ++co)
        for (int i = 0; i < Ho; ++i)
            for (int j = 0; j < Wo; ++j) {
                double acc = static_cast<double>(b.data()[co]);
                for (int ci = 0; ci < Cin; ++ci)
                    for (int u = 0; u < kh; ++u)
                        for (int v = 0; v < kw; ++v)
                            acc += static_cast<double>(X(x.data(), ci, i + u, j + v)) *
                                   static_cast<double>(w.data()[((static_cast<int64_t>(co) * Cin + ci) * kh + u) * kw + v]);
                out.data()[(static_cast<int64_t>(co) * Ho + i) * Wo + j] = static_cast<S>(acc);
            }
    if (detail::recording<S>({&x, &w, &b}, out)) {
        auto xi = x.impl(), wi = w.impl(), bi = b.impl(), oi = out.impl();
        bool nx = detail::traced(x), nw = detail::traced(w), nb = detail::traced(b);
        Tape<S>::current()->record([=] {
            if (detail::no_out_grad(oi)) return;
            const S* go = oi->grad.data();
            auto O = [&](int c, int i, int j) -> S {
                return go[(static_cast<int64_t>(c) * Ho + i) * Wo + j];
            };
            if (nb) {
                auto& gb = detail::ensure_grad(bi);
                for (int co = 0; co < Cout; ++co) {
                    double acc = 0;
                    for (int i = 0; i < Ho; ++i)
                        for (int j = 0; j < Wo; ++j) acc += static_cast<double>(O(co, i, j));
                    gb[static_cast<size_t>(co)] += static_cast<S>(acc);
                }
            }
            if (nw) {
                auto& gw = detail::ensure_grad(wi);
                for (int co = 0; co < Cout; ++co)
                    for (int ci = 0; ci < Cin; ++ci)
                        for (int u = 0; u < kh; ++u)
                            for (int v = 0; v < kw; ++v) {
                                double acc = 0;
                                for (int i = 0; i < Ho; ++i)
                                    for (int j = 0; j < Wo; ++j)
                                        acc += static_cast<double>(O(co, i, j)) *
                                               static_cast<double>(xi->value[(static_cast<int64_t>(ci) * H + i + u) * W + j + v]);
                                gw[static_cast<size_t>(((static_cast<int64_t>(co) * Cin + ci) * kh + u) * kw + v)] +=
                                    static_cast<S>(acc);
                            }
            }
            if (nx) {
                auto& gx = detail::ensure_grad(xi);
                for (int co = 0; co < Cout; ++co)
                    for (int ci = 0; ci < Cin; ++ci)
                        for (int i = 0; i < Ho; ++i)
                            for (int j = 0; j < Wo; ++j) {
                                const S g = O(co, i, j);
                                for (int u = 0; u < kh; ++u)
                                    for (int v = 0; v < kw; ++v)
                                        gx[static_cast<size_t>((static_cast<int64_t>(ci) * H + i + u) * W + j + v)] +=
                                            g * wi->value[static_cast<size_t>(((static_cast<int64_t>(co) * Cin + ci) * kh + u) * kw + v)];
                            }
            }
        });
    }
    return out;
}

// 2x2 average pooling with stride 2; odd trailing rows/columns are dropped.
template <typename S>
Tensor<S> avg_pool2(const Tensor<S>& x) {
    ZIDIAN_REQUIRE(x.rank() == 3, "avg_pool2: expects [C, H, W], got " << shape_str(x.shape()));
    const int C = x.dim(0), H = x.dim(1), W = x.dim(2);
    const int Ho = H / 2, Wo = W / 2;
    ZIDIAN_REQUIRE(Ho > 0 && Wo > 0, "avg_pool2: input too small " << shape_str(x.shape()));
    Tensor<S> out = Tensor<S>::zeros({C, Ho, Wo});
    for (int c = 0; c < C; ++c)
        for (int i = 0; i < Ho; ++i)
            for (int j = 0; j < Wo; ++j) {
                double acc = 0;
                for (int u = 0; u < 2; ++u)
                    for (int v = 0; v < 2; ++v)
                        acc += static_cast<double>(x.data()[(static_cast<int64_t>(c) * H + 2 * i + u) * W + 2 * j + v]);
                out.data()[(static_cast<int64_t>(c) * Ho + i) * Wo + j] = static_cast<S>(acc * 0.25);
            }
    if (detail::recording<S>({&x}, out)) {
        auto xi = x.impl(), oi = out.impl();
        Tape<S>::current()->record([=] {
            if (detail::no_out_grad(oi)) return;
            auto& g = detail::ensure_grad(xi);
            for (int c = 0; c < C; ++c)
                for (int i = 0; i < Ho; ++i)
                    for (int j = 0; j < Wo; ++j) {
                        const S go = oi->grad[static_cast<size_t>((static_cast<int64_t>(c) * Ho + i) * Wo + j)] * S(0.25);
                        for (int u = 0; u < 2; ++u)
                            for (int v = 0; v < 2; ++v)
                                g[static_cast<size_t>((static_cast<int64_t>(c) * H + 2 * i + u) * W + 2 * j + v)] += go;
                    }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Initialization helpers

template <typename S>
Tensor<S> randn(std::vector<int> shape, Rng& rng, double stddev) {
    Tensor<S> t = Tensor<S>::zeros(std::move(shape));
    for (int64_t i = 0; i < t.numel(); ++i) t.data()[i] = static_cast<S>(rng.normal(0.0, stddev));
    return t;
}

template <typename S>
Tensor<S> param(std::vector<int> shape, Rng& rng, double stddev) {
    Tensor<S> t = randn<S>(std::move(shape), rng, stddev);
    t.set_requires_grad(true);
    return t;
}

template <typename S>
Tensor<S> param_zeros(std::vector<int> shape) {
    Tensor<S> t = Tensor<S>::zeros(std::move(shape));
    t.set_requires_grad(true);
    return t;
}

template <typename S>
Tensor<S> param_full(std::vector<int> shape, S v) {
    Tensor<S> t = Tensor<S>::full(std::move(shape), v);
    t.set_requires_grad(true);
    return t;
}

}  // namespace zidian
