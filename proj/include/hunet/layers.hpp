#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>

#include "hunet/ops.hpp"

// Learnable layer bundles. Weight tensors reuse the 4-D container:
// [c_out, c_in, k, k] for convolutions, [1, c, 1, 1] for per-channel vectors.
// Each bundle has a closed-form param_count checked against element
// enumeration in the tests.

namespace hunet {

template <typename T>
struct Conv2dParams {
    Param<T> weight;  // [c_out, c_in, k, k]
    std::optional<Param<T>> bias;
    int stride = 1;
    int padding = 0;

    int out_channels() const { return weight.value.shape.n; }
    int in_channels() const { return weight.value.shape.c; }
    int kernel() const { return weight.value.shape.h; }
};

template <typename T>
struct DepthwiseParams {
    Param<T> weight;  // [c, 1, k, k], one filter per channel, no bias
    int stride = 1;
    int padding = 1;

    int channels() const { return weight.value.shape.n; }
    int kernel() const { return weight.value.shape.h; }
};

// Depthwise 3x3 followed by pointwise 1x1 (the pointwise half carries the bias).
template <typename T>
struct DsConvParams {
    DepthwiseParams<T> dw;
    Conv2dParams<T> pw;
};

template <typename T>
struct GroupNormParams {
    Param<T> gamma;  // [1, c, 1, 1]
    Param<T> beta;
    int groups = 1;
    T eps = static_cast<T>(1e-5);
};

// Learned 1x1 score conv producing the single-channel pooling logits.
template <typename T>
struct AttnPoolParams {
    Param<T> score_weight;  // [1, c_in, 1, 1]
    Param<T> score_bias;    // [1, 1, 1, 1]
};

template <typename T>
std::int64_t param_count(const Conv2dParams<T>& p) {
    const std::int64_t k = p.kernel();
    return k * k * p.in_channels() * p.out_channels() + (p.bias ? p.out_channels() : 0);
}

template <typename T>
std::int64_t param_count(const DepthwiseParams<T>& p) {
    const std::int64_t k = p.kernel();
    return k * k * p.channels();
}

template <typename T>
std::int64_t param_count(const DsConvParams<T>& p) {
    return param_count(p.dw) + param_count(p.pw);
}

template <typename T>
std::int64_t param_count(const GroupNormParams<T>& p) {
    return 2 * static_cast<std::int64_t>(p.gamma.value.shape.c);
}

template <typename T>
std::int64_t param_count(const AttnPoolParams<T>& p) {
    return p.score_weight.value.shape.c + 1;
}

namespace detail {

// He-style uniform init, bound sqrt(6 / fan_in).
template <typename T>
Tensor<T> kaiming_uniform(Shape s, std::int64_t fan_in, Rng& rng) {
    const T bound = static_cast<T>(std::sqrt(6.0 / static_cast<double>(fan_in)));
    return Tensor<T>::uniform(s, rng, -bound, bound);
}

}  // namespace detail

template <typename T>
Conv2dParams<T> make_conv2d(const std::string& name, int c_in, int c_out, int k, bool bias, Rng& rng,
                            int stride = 1, int padding = 0) {
    if (k % 2 == 0) throw std::invalid_argument("make_conv2d: kernel size must be odd, got " + std::to_string(k));
    Conv2dParams<T> p;
    p.weight = Param<T>(name + ".weight",
                        detail::kaiming_uniform<T>(Shape{c_out, c_in, k, k},
                                                   static_cast<std::int64_t>(c_in) * k * k, rng));
    if (bias) p.bias = Param<T>(name + ".bias", Tensor<T>::zeros(Shape{1, c_out, 1, 1}));
    p.stride = stride;
    p.padding = padding;
    return p;
}

template <typename T>
DepthwiseParams<T> make_depthwise(const std::string& name, int c, int k, Rng& rng, int stride = 1) {
    if (k % 2 == 0) throw std::invalid_argument("make_depthwise: kernel size must be odd");
    DepthwiseParams<T> p;
    p.weight = Param<T>(name + ".weight",
                        detail::kaiming_uniform<T>(Shape{c, 1, k, k}, static_cast<std::int64_t>(k) * k, rng));
    p.stride = stride;
    p.padding = k / 2;  // same padding
    return p;
}

template <typename T>
DsConvParams<T> make_ds_conv(const std::string& name, int c_in, int c_out, int k, Rng& rng) {
    DsConvParams<T> p;
    p.dw = make_depthwise<T>(name + ".dw", c_in, k, rng);
    p.pw = make_conv2d<T>(name + ".pw", c_in, c_out, 1, true, rng);
    return p;
}

template <typename T>
GroupNormParams<T> make_group_norm(const std::string& name, int c, int groups, T eps = static_cast<T>(1e-5)) {
    if (groups < 1 || c % groups != 0)
        throw std::invalid_argument("make_group_norm: channels " + std::to_string(c) +
                                    " not divisible by groups " + std::to_string(groups));
    GroupNormParams<T> p;
    p.gamma = Param<T>(name + ".gamma", Tensor<T>::ones(Shape{1, c, 1, 1}));
    p.beta = Param<T>(name + ".beta", Tensor<T>::zeros(Shape{1, c, 1, 1}));
    p.groups = groups;
    p.eps = eps;
    return p;
}

// Zero-initialized scores: the pool starts out as exact average pooling.
template <typename T>
AttnPoolParams<T> make_attn_pool(const std::string& name, int c_in) {
    AttnPoolParams<T> p;
    p.score_weight = Param<T>(name + ".score.weight", Tensor<T>::zeros(Shape{1, c_in, 1, 1}));
    p.score_bias = Param<T>(name + ".score.bias", Tensor<T>::zeros(Shape{1, 1, 1, 1}));
    return p;
}

// --- bundle-level forward helpers ---

template <typename T>
Tensor<T> conv2d(Graph<T>* g, const Tensor<T>& x, Conv2dParams<T>& p) {
    Tensor<T> w = p.weight.use(g);
    if (p.bias) {
        Tensor<T> b = p.bias->use(g);
        return conv2d(x, w, &b, p.stride, p.padding);
    }
    return conv2d<T>(x, w, nullptr, p.stride, p.padding);
}

template <typename T>
Tensor<T> depthwise_conv2d(Graph<T>* g, const Tensor<T>& x, DepthwiseParams<T>& p) {
    Tensor<T> w = p.weight.use(g);
    return depthwise_conv2d(x, w, p.stride, p.padding);
}

template <typename T>
Tensor<T> depthwise_separable_conv(Graph<T>* g, const Tensor<T>& x, DsConvParams<T>& p) {
    return conv2d(g, depthwise_conv2d(g, x, p.dw), p.pw);
}

template <typename T>
Tensor<T> group_norm(Graph<T>* g, const Tensor<T>& x, GroupNormParams<T>& p) {
    return group_norm(x, p.gamma.use(g), p.beta.use(g), p.groups, p.eps);
}

template <typename T>
Tensor<T> attention_pool_2x(Graph<T>* g, const Tensor<T>& x, AttnPoolParams<T>& p) {
    Tensor<T> w = p.score_weight.use(g);
    Tensor<T> b = p.score_bias.use(g);
    Tensor<T> logits = pointwise_conv2d(x, w, &b);
    return window_softmax_pool_2x(x, logits);
}

}  // namespace hunet
