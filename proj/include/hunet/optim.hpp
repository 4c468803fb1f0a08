#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "hunet/graph.hpp"

namespace hunet {

// Adam with bias correction. Moment tensors mirror the parameter shapes and
// are allocated on the first step.
template <typename T>
struct AdamState {
    std::vector<Tensor<T>> m;
    std::vector<Tensor<T>> v;
    std::int64_t t = 0;
};

template <typename T>
struct AdamConfig {
    T lr = static_cast<T>(1e-3);
    T beta1 = static_cast<T>(0.9);
    T beta2 = static_cast<T>(0.999);
    T eps = static_cast<T>(1e-8);
};

template <typename T>
void adam_step(std::vector<Param<T>*>& params, AdamState<T>& state, const AdamConfig<T>& cfg) {
    if (state.m.empty()) {
        for (Param<T>* p : params) {
            state.m.push_back(Tensor<T>::zeros(p->value.shape));
            state.v.push_back(Tensor<T>::zeros(p->value.shape));
        }
    }
    if (state.m.size() != params.size())
        throw std::logic_error("adam_step: optimizer state does not match parameter list");
    state.t += 1;
    const T bc1 = T(1) - std::pow(cfg.beta1, static_cast<T>(state.t));
    const T bc2 = T(1) - std::pow(cfg.beta2, static_cast<T>(state.t));
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        Param<T>& p = *params[pi];
        Tensor<T>& m = state.m[pi];
        Tensor<T>& v = state.v[pi];
        for (std::size_t i = 0; i < p.value.data.size(); ++i) {
            const T g = p.grad.data[i];
            if (!std::isfinite(static_cast<double>(g)))
                throw std::runtime_error("adam_step: non-finite gradient in parameter '" + p.name + "'");
            m.data[i] = cfg.beta1 * m.data[i] + (T(1) - cfg.beta1) * g;
            v.data[i] = cfg.beta2 * v.data[i] + (T(1) - cfg.beta2) * g * g;
            const T mhat = m.data[i] / bc1;
            const T vhat = v.data[i] / bc2;
            p.value.data[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
        }
    }
}

}  // namespace hunet
