#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "fairlab/tensor.hpp"

namespace fairlab {

enum class OptimizerKind { SgdMomentum, Adam };

template <typename T>
struct NamedParam {
    std::string name;
    Tensor<T> tensor;
};

// SGD with momentum (v <- m*v + (g + wd*theta); theta <- theta - lr*v) and
// bias-corrected Adam. Moment buffers are zero-initialized per parameter and
// serialized with checkpoints so a resumed run continues bit-exactly.
template <typename T>
class Optimizer {
public:
    OptimizerKind kind = OptimizerKind::SgdMomentum;
    T learning_rate = T(0.1);
    T momentum = T(0.9);
    T weight_decay = T(5e-4);
    T beta1 = T(0.9);
    T beta2 = T(0.999);
    T adam_eps = T(1e-8);

    Optimizer() = default;
    explicit Optimizer(std::vector<NamedParam<T>> params) { attach(std::move(params)); }

    void attach(std::vector<NamedParam<T>> params) {
        params_ = std::move(params);
        moment1_.assign(params_.size(), {});
        moment2_.assign(params_.size(), {});
        for (std::size_t i = 0; i < params_.size(); ++i) {
            const std::size_t n = static_cast<std::size_t>(params_[i].tensor.size());
            moment1_[i].assign(n, T(0));
            if (kind == OptimizerKind::Adam) moment2_[i].assign(n, T(0));
        }
        step_count_ = 0;
    }

    const std::vector<NamedParam<T>>& params() const { return params_; }
    std::int64_t step_count() const { return step_count_; }

    void zero_grad() {
        for (auto& p : params_) p.tensor.zero_grad();
    }

    void step() {
        if (learning_rate < T(0)) throw std::invalid_argument("optimizer: negative learning rate");
        ++step_count_;
        for (std::size_t i = 0; i < params_.size(); ++i) {
            auto& p = params_[i].tensor;
            if (!p.has_grad())
                throw std::runtime_error("optimizer: missing gradient for parameter '" +
                                         params_[i].name + "'");
            auto theta = p.values();
            auto g = p.grad();
            if (kind == OptimizerKind::SgdMomentum) {
                auto& v = moment1_[i];
                for (std::size_t j = 0; j < theta.size(); ++j) {
                    const T eff = g[j] + weight_decay * theta[j];
                    v[j] = momentum * v[j] + eff;
                    theta[j] -= learning_rate * v[j];
                }
            } else {
                auto& m = moment1_[i];
                auto& v = moment2_[i];
                if (v.empty()) v.assign(theta.size(), T(0));
                const T bc1 = T(1) - std::pow(beta1, static_cast<T>(step_count_));
                const T bc2 = T(1) - std::pow(beta2, static_cast<T>(step_count_));
                for (std::size_t j = 0; j < theta.size(); ++j) {
                    const T eff = g[j] + weight_decay * theta[j];
                    m[j] = beta1 * m[j] + (T(1) - beta1) * eff;
                    v[j] = beta2 * v[j] + (T(1) - beta2) * eff * eff;
                    const T mhat = m[j] / bc1;
                    const T vhat = v[j] / bc2;
                    theta[j] -= learning_rate * mhat / (std::sqrt(vhat) + adam_eps);
                }
            }
            p.zero_grad();
        }
    }

    // Serialization hooks for checkpointing.
    std::vector<std::vector<T>>& moment1() { return moment1_; }
    std::vector<std::vector<T>>& moment2() { return moment2_; }
    void set_step_count(std::int64_t n) { step_count_ = n; }

private:
    std::vector<NamedParam<T>> params_;
    std::vector<std::vector<T>> moment1_;
    std::vector<std::vector<T>> moment2_;
    std::int64_t step_count_ = 0;
};

}  // namespace fairlab
