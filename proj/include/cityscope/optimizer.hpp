#ifndef CITYSCOPE_OPTIMIZER_HPP
#define CITYSCOPE_OPTIMIZER_HPP

#include <cmath>
#include <map>
#include <string>

#include "cityscope/network.hpp"
#include "cityscope/params.hpp"
#include "cityscope/tensor.hpp"

namespace cityscope {

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

template <typename T>
struct OptimizerState {
    std::map<std::string, Tensor<T>> m;  // first moments, trainable keys only
    std::map<std::string, Tensor<T>> v;  // second moments
    long t = 0;
    double learning_rate = 1e-3;

    static OptimizerState fresh(const ParameterStore<T>& params, const TrainabilityMask& mask,
                                double learning_rate) {
        OptimizerState state;
        state.learning_rate = learning_rate;
        for (const auto& [name, flag] : mask) {
            if (!flag) continue;
            auto it = params.find(name);
            if (it == params.end()) fail("ShapeMismatch", "mask names unknown parameter " + name);
            state.m.emplace(name, Tensor<T>(it->second.shape));
            state.v.emplace(name, Tensor<T>(it->second.shape));
        }
        return state;
    }
};

// One Adam update with bias correction:
//   m <- b1 m + (1-b1) g;  v <- b2 v + (1-b2) g^2
//   theta <- theta - lr * m/(1-b1^t) / (sqrt(v/(1-b2^t)) + eps)
// Parameters without a gradient entry (frozen) are untouched.
template <typename T>
void adam_step(ParameterStore<T>& params, const GradientStore<T>& grads,
               OptimizerState<T>& state, const AdamConfig& config = {}) {
    state.t += 1;
    double bc1 = 1.0 - std::pow(config.beta1, static_cast<double>(state.t));
    double bc2 = 1.0 - std::pow(config.beta2, static_cast<double>(state.t));
    for (const auto& [name, grad] : grads.gradients) {
        auto pit = params.find(name);
        auto mit = state.m.find(name);
        auto vit = state.v.find(name);
        if (pit == params.end() || mit == state.m.end() || vit == state.v.end())
            fail("ShapeMismatch", "gradient for unknown or frozen parameter " + name);
        if (!grad.same_shape(pit->second))
            fail("ShapeMismatch", "gradient shape differs for " + name);
        if (!grad.all_finite()) fail("NonFiniteGradient", "non-finite gradient for " + name);
        Tensor<T>& theta = pit->second;
        Tensor<T>& m = mit->second;
        Tensor<T>& v = vit->second;
        for (std::size_t i = 0; i < theta.size(); ++i) {
            double g = static_cast<double>(grad.data[i]);
            double mi = config.beta1 * static_cast<double>(m.data[i]) + (1.0 - config.beta1) * g;
            double vi = config.beta2 * static_cast<double>(v.data[i]) + (1.0 - config.beta2) * g * g;
            m.data[i] = static_cast<T>(mi);
            v.data[i] = static_cast<T>(vi);
            double update = state.learning_rate * (mi / bc1) /
                            (std::sqrt(vi / bc2) + config.epsilon);
            theta.data[i] = static_cast<T>(static_cast<double>(theta.data[i]) - update);
        }
    }
}

} // namespace cityscope

#endif
