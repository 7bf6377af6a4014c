#pragma once
// AdamW with decoupled weight decay. Moments are kept in double so the
// update is the same function of the gradient history for every storage
// scalar; the result is cast back into the parameter's scalar type.

#include <cmath>
#include <cstdint>
#include <vector>

#include "zidian/tensor.hpp"

namespace zidian {

struct AdamWConfig {
    double lr = 5e-5;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
};

template <typename S>
class AdamW {
public:
    AdamW(std::vector<Tensor<S>> params, AdamWConfig cfg)
        : params_(std::move(params)), cfg_(cfg) {
        state_.resize(params_.size());
        for (size_t i = 0; i < params_.size(); ++i) {
            state_[i].m.assign(static_cast<size_t>(params_[i].numel()), 0.0);
            state_[i].v.assign(static_cast<size_t>(params_[i].numel()), 0.0);
        }
    }

    // One update using each parameter's accumulated gradient. A missing
    // gradient buffer counts as zero (the moments still decay and weight
    // decay still applies).
    void step(double lr_override = -1.0) {
        ++t_;
        const double lr = lr_override >= 0 ? lr_override : cfg_.lr;
        const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
        for (size_t p = 0; p < params_.size(); ++p) {
            Tensor<S>& w = params_[p];
            Moments& st = state_[p];
            const bool has_grad = w.has_grad();
            for (int64_t i = 0; i < w.numel(); ++i) {
                const double g = has_grad ? static_cast<double>(w.grad_at(i)) : 0.0;
                double& m = st.m[static_cast<size_t>(i)];
                double& v = st.v[static_cast<size_t>(i)];
                m = cfg_.beta1 * m + (1.0 - cfg_.beta1) * g;
                v = cfg_.beta2 * v + (1.0 - cfg_.beta2) * g * g;
                const double mhat = m / bc1;
                const double vhat = v / bc2;
                double x = static_cast<double>(w.data()[i]);
                x -= lr * (mhat / (std::sqrt(vhat) + cfg_.eps) + cfg_.weight_decay * x);
                w.data()[i] = static_cast<S>(x);
            }
        }
    }

    void zero_grad() {
        for (Tensor<S>& w : params_) w.zero_grad();
    }

    int64_t steps_taken() const { return t_; }
    const std::vector<Tensor<S>>& params() const { return params_; }

private:
    struct Moments {
        std::vector<double> m, v;
    };
    std::vector<Tensor<S>> params_;
    std::vector<Moments> state_;
    AdamWConfig cfg_;
    int64_t t_ = 0;
};

// Linear warmup to the base rate, constant afterwards.
inline double warmup_lr(double base_lr, int64_t step, int64_t total_steps, double warmup_ratio) {
    const int64_t warm = std::max<int64_t>(1, static_cast<int64_t>(warmup_ratio * static_cast<double>(total_steps)));
    if (step < warm) return base_lr * static_cast<double>(step + 1) / static_cast<double>(warm);
    return base_lr;
}

}  // namespace zidian
