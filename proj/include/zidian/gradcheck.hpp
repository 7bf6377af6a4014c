#pragma once
// Central finite-difference oracle for the backward pass.
//
// The numeric side only ever calls the forward functions (no tape), so it
// stays independent of the gradient code it is checking. Checks run on the
// double instantiation of the op set.

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "zidian/rng.hpp"
#include "zidian/tensor.hpp"

namespace zidian {

struct GradcheckResult {
    std::string name;
    double max_rel_err = 0.0;
};

inline double gc_rel_err(double analytic, double numeric) {
    const double scale = std::max({1.0, std::abs(analytic), std::abs(numeric)});
    return std::abs(analytic - numeric) / scale;
}

// `forward` rebuilds the scalar loss from the current values of `wrt` on
// every call. Returns the worst relative error over all elements of all
// `wrt` tensors. The truncation error of the central difference grows with
// eps^2 times the third derivative, so composed losses (encoder stacks)
// need a smaller eps than single ops.
template <typename F>
double gradcheck_max_err(F&& forward, std::vector<Tensor<double>> wrt, double eps = 1e-3) {
    for (auto& w : wrt) w.zero_grad();
    Tape<double> tape;
    {
        TapeScope<double> scope(tape);
        Tensor<double> loss = forward();
        tape.backward(loss);
    }
    std::vector<std::vector<double>> analytic;
    analytic.reserve(wrt.size());
    for (auto& w : wrt) {
        std::vector<double> g(static_cast<size_t>(w.numel()));
        for (int64_t i = 0; i < w.numel(); ++i) g[static_cast<size_t>(i)] = w.grad_at(i);
        analytic.push_back(std::move(g));
        w.zero_grad();
    }
    double worst = 0.0;
    for (size_t p = 0; p < wrt.size(); ++p) {
        for (int64_t i = 0; i < wrt[p].numel(); ++i) {
            const double orig = wrt[p].data()[i];
            wrt[p].data()[i] = orig + eps;
            const double fp = forward().item();
            wrt[p].data()[i] = orig - eps;
            const double fm = forward().item();
            wrt[p].data()[i] = orig;
            const double numeric = (fp - fm) / (2.0 * eps);
            worst = std::max(worst, gc_rel_err(analytic[p][static_cast<size_t>(i)], numeric));
        }
    }
    return worst;
}

namespace detail {

// Projects an arbitrary tensor to a scalar through a fixed random
// functional, so a single backward exercises every output element.
inline Tensor<double> scalarize(const Tensor<double>& t, const Tensor<double>& probe) {
    if (t.numel() == 1) return t;
    return dot(reshape(t, {static_cast<int>(t.numel())}), probe);
}

inline Tensor<double> probe_for(const Tensor<double>& t, Rng rng) {
    return randn<double>({static_cast<int>(t.numel())}, rng, 1.0);
}

}  // namespace detail

// Finite-difference checks for every differentiable op in tensor.hpp.
inline std::vector<GradcheckResult> op_gradchecks(uint64_t seed) {
    std::vector<GradcheckResult> results;
    Rng root(seed);

    auto check = [&](const std::string& name, auto&& builder,
                     std::vector<Tensor<double>> wrt) {
        // The probe is derived from the untraced output shape once.
        Tensor<double> probe;
        {
            Tensor<double> out = builder();
            probe = detail::probe_for(out, root.fork("probe", results.size()));
        }
        auto fwd = [&builder, &probe] { return detail::scalarize(builder(), probe); };
        results.push_back({name, gradcheck_max_err(fwd, std::move(wrt))});
    };

    auto mk = [&](std::vector<int> shape, const char* tag) {
        Tensor<double> t = randn<double>(std::move(shape), root, 1.0);
        (void)tag;
        t.set_requires_grad(true);
        return t;
    };

    {
        auto a = mk({3, 4}, "a"), b = mk({3, 4}, "b");
        check("add", [&] { return add(a, b); }, {a, b});
    }
    {
        auto a = mk({1}, "a"), b = mk({3, 4}, "b");
        check("add_scalar_broadcast", [&] { return add(a, b); }, {a, b});
    }
    {
        auto a = mk({3, 4}, "a"), b = mk({3, 4}, "b");
        check("mul", [&] { return mul(a, b); }, {a, b});
    }
    {
        auto a = mk({3, 4}, "a"), b = mk({1}, "b");
        check("mul_scalar_broadcast", [&] { return mul(a, b); }, {a, b});
    }
    {
        auto a = mk({5}, "a");
        check("scale", [&] { return scale(a, 2.5); }, {a});
    }
    {
        auto a = mk({3, 2}, "a"), b = mk({3, 2}, "b");
        check("sub", [&] { return sub(a, b); }, {a, b});
    }
    {
        auto a = mk({4}, "a");
        check("exp", [&] { return exp_elem(a); }, {a});
    }
    {
        auto a = mk({7}, "a");
        check("gelu", [&] { return gelu(a); }, {a});
    }
    {
        auto a = mk({7}, "a");
        check("softplus", [&] { return softplus(a); }, {a});
    }
    {
        auto a = mk({3}, "a"), b = mk({4}, "b"), c = mk({2}, "c");
        check("concat", [&] { return concat<double>({a, b, c}); }, {a, b, c});
    }
    {
        auto a = mk({4}, "a"), b = mk({4}, "b");
        check("stack_rows", [&] { return stack_rows<double>({a, b}); }, {a, b});
    }
    {
        auto a = mk({5, 3}, "a");
        check("slice_rows", [&] { return slice_rows(a, 1, 4); }, {a});
        check("row", [&] { return row(a, 2); }, {a});
        check("slice_cols", [&] { return slice_cols(a, 1, 3); }, {a});
    }
    {
        auto a = mk({3, 2}, "a"), b = mk({3, 3}, "b");
        check("concat_cols", [&] { return concat_cols<double>({a, b}); }, {a, b});
    }
    {
        auto a = mk({2, 6}, "a");
        check("reshape", [&] { return reshape(a, {3, 4}); }, {a});
    }
    {
        auto table = mk({6, 3}, "table");
        std::vector<int> ids{1, 4, 1, 0};
        check("embedding_lookup", [&] { return embedding_lookup(table, ids); }, {table});
    }
    {
        auto a = mk({3, 4}, "a"), b = mk({4, 2}, "b");
        check("matmul", [&] { return matmul(a, b); }, {a, b});
    }
    {
        auto a = mk({4, 3}, "a"), b = mk({4, 2}, "b");
        check("matmul_ta", [&] { return matmul(a, b, true, false); }, {a, b});
    }
    {
        auto a = mk({3, 4}, "a"), b = mk({2, 4}, "b");
        check("matmul_tb", [&] { return matmul(a, b, false, true); }, {a, b});
    }
    {
        auto a = mk({4, 3}, "a"), b = mk({2, 4}, "b");
        check("matmul_ta_tb", [&] { return matmul(a, b, true, true); }, {a, b});
    }
    {
        auto x = mk({3, 4}, "x"), v = mk({4}, "v");
        check("add_rowvec", [&] { return add_rowvec(x, v); }, {x, v});
    }
    {
        auto x = mk({4, 3}, "x");
        check("mean_rows", [&] { return mean_rows(x); }, {x});
    }
    {
        auto x = mk({3, 5}, "x");
        check("mean", [&] { return mean(x); }, {x});
    }
    {
        auto a = mk({6}, "a"), b = mk({6}, "b");
        check("dot", [&] { return dot(a, b); }, {a, b});
    }
    {
        auto x = mk({3, 5}, "x");
        check("softmax_lastdim", [&] { return softmax_lastdim(x); }, {x});
    }
    {
        auto x = mk({3, 5}, "x");
        check("log_softmax_lastdim", [&] { return log_softmax_lastdim(x); }, {x});
    }
    {
        auto x = mk({3, 6}, "x"), g = mk({6}, "g"), b = mk({6}, "b");
        check("layer_norm", [&] { return layer_norm(x, g, b); }, {x, g, b});
    }
    {
        auto x = mk({3, 4}, "x");
        check("l2_normalize_rows", [&] { return l2_normalize_rows(x); }, {x});
    }
    {
        auto logits = mk({4, 5}, "logits");
        std::vector<int> targets{2, 0, 4, 1};
        check("cross_entropy", [&] { return cross_entropy(logits, targets); }, {logits});
    }
    {
        auto x = mk({2, 6, 6}, "x"), w = mk({3, 2, 3, 3}, "w"), b = mk({3}, "b");
        check("conv2d", [&] { return conv2d(x, w, b); }, {x, w, b});
    }
    {
        auto x = mk({2, 5, 6}, "x");
        check("avg_pool2", [&] { return avg_pool2(x); }, {x});
    }
    return results;
}

}  // namespace zidian
