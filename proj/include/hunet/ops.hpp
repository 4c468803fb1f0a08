#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "hunet/graph.hpp"
#include "hunet/tensor.hpp"

// Differentiable tensor operations. Every op computes its output eagerly and,
// when an operand is tracked, records a backward rule on that operand's graph.
// Saved activations are captured by value so the tape stays valid after the
// forward-pass locals die.

namespace hunet {

namespace detail {

inline int div_floor(int a, int b) { return a >= 0 ? a / b : -((-a + b - 1) / b); }
inline int div_ceil(int a, int b) { return a >= 0 ? (a + b - 1) / b : -((-a) / b); }

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
    if (a.shape != b.shape)
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + to_string(a.shape) +
                                    " vs " + to_string(b.shape));
}

}  // namespace detail

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require_same_shape(a, b, "elementwise_add");
    Tensor<T> out(a.shape);
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = a.data[i] + b.data[i];
    validate_finite(out, "elementwise_add");
    if (Graph<T>* g = detail::common_graph<T>({&a, &b}, "elementwise_add")) {
        out.graph = g;
        out.node = g->record(out.shape, [pa = a.node, pb = b.node](Graph<T>& gr, const Tensor<T>& up) {
            gr.add_grad(pa, up);
            gr.add_grad(pb, up);
        });
    }
    return out;
}

// Elementwise product. Shapes must match, or b may carry a single channel
// that is broadcast across all of a's channels (the attention-map case).
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    const bool broadcast = b.shape.c == 1 && a.shape.c != 1;
    if (broadcast) {
        if (a.shape.n != b.shape.n || a.shape.h != b.shape.h || a.shape.w != b.shape.w)
            throw std::invalid_argument("elementwise_mul: shapes not broadcastable " +
                                        to_string(a.shape) + " vs " + to_string(b.shape));
    } else {
        detail::require_same_shape(a, b, "elementwise_mul");
    }
    Tensor<T> out(a.shape);
    const int N = a.shape.n, C = a.shape.c;
    const std::int64_t plane = static_cast<std::int64_t>(a.shape.h) * a.shape.w;
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            const T* pa = a.data.data() + (static_cast<std::int64_t>(n) * C + c) * plane;
            const T* pb = b.data.data() + (broadcast ? static_cast<std::int64_t>(n) * plane
                                                     : (static_cast<std::int64_t>(n) * C + c) * plane);
            T* po = out.data.data() + (static_cast<std::int64_t>(n) * C + c) * plane;
            for (std::int64_t i = 0; i < plane; ++i) po[i] = pa[i] * pb[i];
        }
    validate_finite(out, "elementwise_mul");
    if (Graph<T>* g = detail::common_graph<T>({&a, &b}, "elementwise_mul")) {
        out.graph = g;
        out.node = g->record(
            out.shape,
            [pa = a.node, pb = b.node, sa = a.detached(), sb = b.detached(), broadcast](
                Graph<T>& gr, const Tensor<T>& up) {
                const int N = sa.shape.n, C = sa.shape.c;
                const std::int64_t plane = static_cast<std::int64_t>(sa.shape.h) * sa.shape.w;
                if (pa >= 0) {
                    Tensor<T> ga(sa.shape);
                    for (int n = 0; n < N; ++n)
                        for (int c = 0; c < C; ++c) {
                            const std::int64_t oa = (static_cast<std::int64_t>(n) * C + c) * plane;
                            const std::int64_t ob = broadcast ? static_cast<std::int64_t>(n) * plane : oa;
                            for (std::int64_t i = 0; i < plane; ++i)
                                ga.data[oa + i] = up.data[oa + i] * sb.data[ob + i];
                        }
                    gr.add_grad(pa, ga);
                }
                if (pb >= 0) {
                    Tensor<T> gb(sb.shape);
                    for (int n = 0; n < N; ++n)
                        for (int c = 0; c < C; ++c) {
                            const std::int64_t oa = (static_cast<std::int64_t>(n) * C + c) * plane;
                            const std::int64_t ob = broadcast ? static_cast<std::int64_t>(n) * plane : oa;
                            for (std::int64_t i = 0; i < plane; ++i)
                                gb.data[ob + i] += up.data[oa + i] * sa.data[oa + i];
                        }
                    gr.add_grad(pb, gb);
                }
            });
    }
    return out;
}

template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require_same_shape(a, b, "elementwise_div");
    Tensor<T> out(a.shape);
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = a.data[i] / b.data[i];
    validate_finite(out, "elementwise_div");
    if (Graph<T>* g = detail::common_graph<T>({&a, &b}, "elementwise_div")) {
        out.graph = g;
        out.node = g->record(out.shape, [pa = a.node, pb = b.node, sa = a.detached(), sb = b.detached()](
                                            Graph<T>& gr, const Tensor<T>& up) {
            if (pa >= 0) {
                Tensor<T> ga(sa.shape);
                for (std::size_t i = 0; i < ga.data.size(); ++i) ga.data[i] = up.data[i] / sb.data[i];
                gr.add_grad(pa, ga);
            }
            if (pb >= 0) {
                Tensor<T> gb(sb.shape);
                for (std::size_t i = 0; i < gb.data.size(); ++i)
                    gb.data[i] = -up.data[i] * sa.data[i] / (sb.data[i] * sb.data[i]);
                gr.add_grad(pb, gb);
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T k) {
    Tensor<T> out(a.shape);
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = a.data[i] * k;
    validate_finite(out, "scale");
    if (Graph<T>* g = detail::common_graph<T>({&a}, "scale")) {
        out.graph = g;
        out.node = g->record(out.shape, [pa = a.node, k](Graph<T>& gr, const Tensor<T>& up) {
            Tensor<T> ga(up.shape);
            for (std::size_t i = 0; i < ga.data.size(); ++i) ga.data[i] = up.data[i] * k;
            gr.add_grad(pa, ga);
        });
    }
    return out;
}

template <typename T>
Tensor<T> add_const(const Tensor<T>& a, T k) {
    Tensor<T> out(a.shape);
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = a.data[i] + k;
    validate_finite(out, "add_const");
    if (Graph<T>* g = detail::common_graph<T>({&a}, "add_const")) {
        out.graph = g;
        out.node = g->record(out.shape, [pa = a.node](Graph<T>& gr, const Tensor<T>& up) {
            gr.add_grad(pa, up);
        });
    }
    return out;
}

// Sum over all elements, as a 1x1x1x1 tensor.
template <typename T>
Tensor<T> reduce_sum(const Tensor<T>& a) {
    T acc = T(0);
    for (const T& v : a.data) acc += v;
    Tensor<T> out = Tensor<T>::scalar(acc);
    validate_finite(out, "reduce_sum");
    if (Graph<T>* g = detail::common_graph<T>({&a}, "reduce_sum")) {
        out.graph = g;
        out.node = g->record(out.shape, [pa = a.node, in_shape = a.shape](Graph<T>& gr, const Tensor<T>& up) {
            gr.add_grad(pa, Tensor<T>::full(in_shape, up.data[0]));
        });
    }
    return out;
}

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape.n != b.shape.n || a.shape.h != b.shape.h || a.shape.w != b.shape.w)
        throw std::invalid_argument("concat_channels: incompatible shapes " + to_string(a.shape) +
                                    " vs " + to_string(b.shape));
    const int N = a.shape.n, Ca = a.shape.c, Cb = b.shape.c;
    const std::int64_t plane = static_cast<std::int64_t>(a.shape.h) * a.shape.w;
    Tensor<T> out(Shape{N, Ca + Cb, a.shape.h, a.shape.w});
    for (int n = 0; n < N; ++n) {
        std::copy_n(a.data.data() + static_cast<std::int64_t>(n) * Ca * plane, Ca * plane,
                    out.data.data() + static_cast<std::int64_t>(n) * (Ca + Cb) * plane);
        std::copy_n(b.data.data() + static_cast<std::int64_t>(n) * Cb * plane, Cb * plane,
                    out.data.data() + (static_cast<std::int64_t>(n) * (Ca + Cb) + Ca) * plane);
    }
    if (Graph<T>* g = detail::common_graph<T>({&a, &b}, "concat_channels")) {
        out.graph = g;
        out.node = g->record(out.shape, [pa = a.node, pb = b.node, sha = a.shape, shb = b.shape](
                                            Graph<T>& gr, const Tensor<T>& up) {
            const int N = sha.n, Ca = sha.c, Cb = shb.c;
            const std::int64_t plane = static_cast<std::int64_t>(sha.h) * sha.w;
            if (pa >= 0) {
                Tensor<T> ga(sha);
                for (int n = 0; n < N; ++n)
                    std::copy_n(up.data.data() + static_cast<std::int64_t>(n) * (Ca + Cb) * plane, Ca * plane,
                                ga.data.data() + static_cast<std::int64_t>(n) * Ca * plane);
                gr.add_grad(pa, ga);
            }
            if (pb >= 0) {
                Tensor<T> gb(shb);
                for (int n = 0; n < N; ++n)
                    std::copy_n(up.data.data() + (static_cast<std::int64_t>(n) * (Ca + Cb) + Ca) * plane,
                                Cb * plane, gb.data.data() + static_cast<std::int64_t>(n) * Cb * plane);
                gr.add_grad(pb, gb);
            }
        });
    }
    return out;
}

namespace detail {

// Shared cross-correlation kernel. `groups` distinguishes the standard case
// (groups == 1, weight [c_out, c_in, k, k]) from depthwise (groups == c,
// weight [c, 1, k, k]).
template <typename T>
void conv_forward(const Tensor<T>& x, const Tensor<T>& w, const T* bias, int stride, int pad,
                  bool depthwise, Tensor<T>& out) {
    const int N = x.shape.n, C = x.shape.c, H = x.shape.h, W = x.shape.w;
    const int K = w.shape.h;
    const int OC = out.shape.c, OH = out.shape.h, OW = out.shape.w;
    for (int n = 0; n < N; ++n)
        for (int oc = 0; oc < OC; ++oc) {
            T* oplane = out.data.data() + (static_cast<std::int64_t>(n) * OC + oc) * OH * OW;
            if (bias) {
                const T bv = bias[oc];
                for (std::int64_t i = 0; i < static_cast<std::int64_t>(OH) * OW; ++i) oplane[i] = bv;
            }
            const int ic_lo = depthwise ? oc : 0;
            const int ic_hi = depthwise ? oc + 1 : C;
            for (int ic = ic_lo; ic < ic_hi; ++ic) {
                const T* xplane = x.data.data() + (static_cast<std::int64_t>(n) * C + ic) * H * W;
                const T* wbase =
                    w.data.data() + (depthwise ? static_cast<std::int64_t>(oc) * K * K
                                               : (static_cast<std::int64_t>(oc) * C + ic) * K * K);
                for (int kh = 0; kh < K; ++kh)
                    for (int kw = 0; kw < K; ++kw) {
                        const T wv = wbase[kh * K + kw];
                        if (wv == T(0)) continue;
                        const int oh_lo = std::max(0, div_ceil(pad - kh, stride));
                        const int oh_hi = std::min(OH - 1, div_floor(H - 1 + pad - kh, stride));
                        const int ow_lo = std::max(0, div_ceil(pad - kw, stride));
                        const int ow_hi = std::min(OW - 1, div_floor(W - 1 + pad - kw, stride));
                        for (int oh = oh_lo; oh <= oh_hi; ++oh) {
                            const int ih = oh * stride + kh - pad;
                            const T* xrow = xplane + static_cast<std::int64_t>(ih) * W;
                            T* orow = oplane + static_cast<std::int64_t>(oh) * OW;
                            for (int ow = ow_lo; ow <= ow_hi; ++ow)
                                orow[ow] += wv * xrow[ow * stride + kw - pad];
                        }
                    }
            }
        }
}

template <typename T>
void conv_backward(const Tensor<T>& up, const Tensor<T>& x, const Tensor<T>& w, int stride, int pad,
                   bool depthwise, Tensor<T>* gx, Tensor<T>* gw, Tensor<T>* gb) {
    const int N = x.shape.n, C = x.shape.c, H = x.shape.h, W = x.shape.w;
    const int K = w.shape.h;
    const int OC = up.shape.c, OH = up.shape.h, OW = up.shape.w;
    if (gb) {
        for (int n = 0; n < N; ++n)
            for (int oc = 0; oc < OC; ++oc) {
                const T* uplane = up.data.data() + (static_cast<std::int64_t>(n) * OC + oc) * OH * OW;
                T acc = T(0);
                for (std::int64_t i = 0; i < static_cast<std::int64_t>(OH) * OW; ++i) acc += uplane[i];
                gb->data[static_cast<std::size_t>(oc)] += acc;
            }
    }
    for (int n = 0; n < N; ++n)
        for (int oc = 0; oc < OC; ++oc) {
            const T* uplane = up.data.data() + (static_cast<std::int64_t>(n) * OC + oc) * OH * OW;
            const int ic_lo = depthwise ? oc : 0;
            const int ic_hi = depthwise ? oc + 1 : C;
            for (int ic = ic_lo; ic < ic_hi; ++ic) {
                const T* xplane = x.data.data() + (static_cast<std::int64_t>(n) * C + ic) * H * W;
                T* gxplane = gx ? gx->data.data() + (static_cast<std::int64_t>(n) * C + ic) * H * W : nullptr;
                const std::int64_t woff = depthwise ? static_cast<std::int64_t>(oc) * K * K
                                                    : (static_cast<std::int64_t>(oc) * C + ic) * K * K;
                for (int kh = 0; kh < K; ++kh)
                    for (int kw = 0; kw < K; ++kw) {
                        const T wv = w.data[static_cast<std::size_t>(woff + kh * K + kw)];
                        const int oh_lo = std::max(0, div_ceil(pad - kh, stride));
                        const int oh_hi = std::min(OH - 1, div_floor(H - 1 + pad - kh, stride));
                        const int ow_lo = std::max(0, div_ceil(pad - kw, stride));
                        const int ow_hi = std::min(OW - 1, div_floor(W - 1 + pad - kw, stride));
                        T wacc = T(0);
                        for (int oh = oh_lo; oh <= oh_hi; ++oh) {
                            const int ih = oh * stride + kh - pad;
                            const T* urow = uplane + static_cast<std::int64_t>(oh) * OW;
                            const T* xrow = xplane + static_cast<std::int64_t>(ih) * W;
                            T* gxrow = gxplane ? gxplane + static_cast<std::int64_t>(ih) * W : nullptr;
                            for (int ow = ow_lo; ow <= ow_hi; ++ow) {
                                const T u = urow[ow];
                                wacc += u * xrow[ow * stride + kw - pad];
                                if (gxrow) gxrow[ow * stride + kw - pad] += u * wv;
                            }
                        }
                        if (gw) gw->data[static_cast<std::size_t>(woff + kh * K + kw)] += wacc;
                    }
            }
        }
}

}  // namespace detail

// Standard 2-D cross-correlation. Weight layout [c_out, c_in, k, k] mapped
// onto the (n, c, h, w) container; bias, when present, is [1, c_out, 1, 1].
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>* bias, int stride, int padding) {
    const int K = w.shape.h;
    if (w.shape.w != K) throw std::invalid_argument("conv2d: non-square kernel " + to_string(w.shape));
    if (x.shape.c != w.shape.c)
        throw std::invalid_argument("conv2d: input channels " + std::to_string(x.shape.c) +
                                    " do not match weight channels " + std::to_string(w.shape.c));
    if (stride < 1) throw std::invalid_argument("conv2d: stride must be positive");
    if (padding < 0) throw std::invalid_argument("conv2d: padding must be non-negative");
    const int OC = w.shape.n;
    if (bias && (bias->shape.c != OC || bias->numel() != OC))
        throw std::invalid_argument("conv2d: bias shape " + to_string(bias->shape) +
                                    " does not match " + std::to_string(OC) + " output channels");
    const int OH = (x.shape.h + 2 * padding - K) / stride + 1;
    const int OW = (x.shape.w + 2 * padding - K) / stride + 1;
    if (x.shape.h + 2 * padding - K < 0 || x.shape.w + 2 * padding - K < 0 || OH < 1 || OW < 1)
        throw std::invalid_argument("conv2d: non-positive output extent for input " +
                                    to_string(x.shape) + " kernel " + std::to_string(K));

    Tensor<T> out(Shape{x.shape.n, OC, OH, OW});
    detail::conv_forward(x, w, bias ? bias->data.data() : nullptr, stride, padding, false, out);
    validate_finite(out, "conv2d");

    if (Graph<T>* g = detail::common_graph<T>({&x, &w, bias}, "conv2d")) {
        out.graph = g;
        out.node = g->record(
            out.shape,
            [px = x.node, pw = w.node, pb = bias ? bias->node : -1, sx = x.detached(), sw = w.detached(),
             bshape = bias ? bias->shape : Shape{}, stride, padding](Graph<T>& gr, const Tensor<T>& up) {
                Tensor<T> gx(sx.shape), gw(sw.shape), gb(bshape);
                detail::conv_backward(up, sx, sw, stride, padding, false, px >= 0 ? &gx : nullptr,
                                      pw >= 0 ? &gw : nullptr, pb >= 0 ? &gb : nullptr);
                gr.add_grad(px, gx);
                gr.add_grad(pw, gw);
                gr.add_grad(pb, gb);
            });
    }
    return out;
}

// Per-channel convolution: weight [c, 1, k, k], output channel i depends only
// on input channel i.
template <typename T>
Tensor<T> depthwise_conv2d(const Tensor<T>& x, const Tensor<T>& w, int stride, int padding) {
    const int K = w.shape.h;
    if (w.shape.w != K || w.shape.c != 1)
        throw std::invalid_argument("depthwise_conv2d: weight must be [c,1,k,k], got " + to_string(w.shape));
    if (x.shape.c != w.shape.n)
        throw std::invalid_argument("depthwise_conv2d: input channels " + std::to_string(x.shape.c) +
                                    " do not match filter count " + std::to_string(w.shape.n));
    const int OH = (x.shape.h + 2 * padding - K) / stride + 1;
    const int OW = (x.shape.w + 2 * padding - K) / stride + 1;
    if (x.shape.h + 2 * padding - K < 0 || x.shape.w + 2 * padding - K < 0 || OH < 1 || OW < 1)
        throw std::invalid_argument("depthwise_conv2d: non-positive output extent");

    Tensor<T> out(Shape{x.shape.n, x.shape.c, OH, OW});
    detail::conv_forward<T>(x, w, nullptr, stride, padding, true, out);
    validate_finite(out, "depthwise_conv2d");

    if (Graph<T>* g = detail::common_graph<T>({&x, &w}, "depthwise_conv2d")) {
        out.graph = g;
        out.node = g->record(out.shape, [px = x.node, pw = w.node, sx = x.detached(), sw = w.detached(),
                                         stride, padding](Graph<T>& gr, const Tensor<T>& up) {
            Tensor<T> gx(sx.shape), gw(sw.shape);
            detail::conv_backward<T>(up, sx, sw, stride, padding, true, px >= 0 ? &gx : nullptr,
                                     pw >= 0 ? &gw : nullptr, nullptr);
            gr.add_grad(px, gx);
            gr.add_grad(pw, gw);
        });
    }
    return out;
}

// 1x1 cross-channel mix; exactly conv2d with k = 1 (same code path).
template <typename T>
Tensor<T> pointwise_conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>* bias) {
    if (w.shape.h != 1 || w.shape.w != 1)
        throw std::invalid_argument("pointwise_conv2d: kernel must be 1x1, got " + to_string(w.shape));
    return conv2d(x, w, bias, 1, 0);
}

// Group normalization over (channels-in-group, H, W) per sample, followed by
// per-channel scale and shift. gamma and beta are [1, c, 1, 1].
template <typename T>
Tensor<T> group_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, int groups, T eps) {
    const int N = x.shape.n, C = x.shape.c, H = x.shape.h, W = x.shape.w;
    if (groups < 1 || C % groups != 0)
        throw std::invalid_argument("group_norm: channel count " + std::to_string(C) +
                                    " not divisible by groups " + std::to_string(groups));
    if (gamma.numel() != C || beta.numel() != C)
        throw std::invalid_argument("group_norm: gamma/beta must have one entry per channel");
    const int cg = C / groups;
    const std::int64_t plane = static_cast<std::int64_t>(H) * W;
    const std::int64_t group_size = cg * plane;

    Tensor<T> out(x.shape);
    Tensor<T> xhat(x.shape);
    std::vector<T> inv_std(static_cast<std::size_t>(N) * groups);
    for (int n = 0; n < N; ++n)
        for (int gidx = 0; gidx < groups; ++gidx) {
            const std::int64_t base = (static_cast<std::int64_t>(n) * C + static_cast<std::int64_t>(gidx) * cg) * plane;
            T mean = T(0);
            for (std::int64_t i = 0; i < group_size; ++i) mean += x.data[base + i];
            mean /= static_cast<T>(group_size);
            T var = T(0);
            for (std::int64_t i = 0; i < group_size; ++i) {
                const T d = x.data[base + i] - mean;
                var += d * d;
            }
            var /= static_cast<T>(group_size);
            const T istd = T(1) / std::sqrt(var + eps);
            inv_std[static_cast<std::size_t>(n) * groups + gidx] = istd;
            for (int lc = 0; lc < cg; ++lc) {
                const int c = gidx * cg + lc;
                const T gm = gamma.data[static_cast<std::size_t>(c)];
                const T bt = beta.data[static_cast<std::size_t>(c)];
                const std::int64_t off = base + static_cast<std::int64_t>(lc) * plane;
                for (std::int64_t i = 0; i < plane; ++i) {
                    const T xh = (x.data[off + i] - mean) * istd;
                    xhat.data[off + i] = xh;
                    out.data[off + i] = gm * xh + bt;
                }
            }
        }
    validate_finite(out, "group_norm");

    if (Graph<T>* g = detail::common_graph<T>({&x, &gamma, &beta}, "group_norm")) {
        out.graph = g;
        out.node = g->record(
            out.shape,
            [px = x.node, pg = gamma.node, pbt = beta.node, sxhat = std::move(xhat),
             sgamma = gamma.detached(), istds = std::move(inv_std), groups, cg,
             gshape = gamma.shape](Graph<T>& gr, const Tensor<T>& up) {
                const int N = sxhat.shape.n, C = sxhat.shape.c;
                const std::int64_t plane = static_cast<std::int64_t>(sxhat.shape.h) * sxhat.shape.w;
                const std::int64_t group_size = static_cast<std::int64_t>(cg) * plane;
                if (pg >= 0 || pbt >= 0) {
                    Tensor<T> ggamma(gshape), gbeta(gshape);
                    for (int n = 0; n < N; ++n)
                        for (int c = 0; c < C; ++c) {
                            const std::int64_t off = (static_cast<std::int64_t>(n) * C + c) * plane;
                            T dg = T(0), db = T(0);
                            for (std::int64_t i = 0; i < plane; ++i) {
                                dg += up.data[off + i] * sxhat.data[off + i];
                                db += up.data[off + i];
                            }
                            ggamma.data[static_cast<std::size_t>(c)] += dg;
                            gbeta.data[static_cast<std::size_t>(c)] += db;
                        }
                    gr.add_grad(pg, ggamma);
                    gr.add_grad(pbt, gbeta);
                }
                if (px >= 0) {
                    Tensor<T> gx(sxhat.shape);
                    for (int n = 0; n < N; ++n)
                        for (int gidx = 0; gidx < groups; ++gidx) {
                            const std::int64_t base =
                                (static_cast<std::int64_t>(n) * C + static_cast<std::int64_t>(gidx) * cg) * plane;
                            const T istd = istds[static_cast<std::size_t>(n) * groups + gidx];
                            // dxhat = up * gamma; dx = istd*(dxhat - mean(dxhat) - xhat*mean(dxhat*xhat))
                            T sum_d = T(0), sum_dx = T(0);
                            for (int lc = 0; lc < cg; ++lc) {
                                const T gm = sgamma.data[static_cast<std::size_t>(gidx * cg + lc)];
                                const std::int64_t off = base + static_cast<std::int64_t>(lc) * plane;
                                for (std::int64_t i = 0; i < plane; ++i) {
                                    const T d = up.data[off + i] * gm;
                                    sum_d += d;
                                    sum_dx += d * sxhat.data[off + i];
                                }
                            }
                            const T mean_d = sum_d / static_cast<T>(group_size);
                            const T mean_dx = sum_dx / static_cast<T>(group_size);
                            for (int lc = 0; lc < cg; ++lc) {
                                const T gm = sgamma.data[static_cast<std::size_t>(gidx * cg + lc)];
                                const std::int64_t off = base + static_cast<std::int64_t>(lc) * plane;
                                for (std::int64_t i = 0; i < plane; ++i) {
                                    const T d = up.data[off + i] * gm;
                                    gx.data[off + i] = istd * (d - mean_d - sxhat.data[off + i] * mean_dx);
                                }
                            }
                        }
                    gr.add_grad(px, gx);
                }
            });
    }
    return out;
}

template <typename T>
Tensor<T> leaky_relu(const Tensor<T>& x, T slope) {
    Tensor<T> out(x.shape);
    for (std::size_t i = 0; i < out.data.size(); ++i) {
        const T v = x.data[i];
        out.data[i] = v >= T(0) ? v : slope * v;
    }
    validate_finite(out, "leaky_relu");
    if (Graph<T>* g = detail::common_graph<T>({&x}, "leaky_relu")) {
        out.graph = g;
        out.node = g->record(out.shape, [px = x.node, sx = x.detached(), slope](Graph<T>& gr,
                                                                                const Tensor<T>& up) {
            Tensor<T> gx(sx.shape);
            for (std::size_t i = 0; i < gx.data.size(); ++i)
                gx.data[i] = sx.data[i] >= T(0) ? up.data[i] : slope * up.data[i];
            gr.add_grad(px, gx);
        });
    }
    return out;
}

template <typename T>
T sigmoid_scalar(T v) {
    if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
    const T e = std::exp(v);
    return e / (T(1) + e);
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
    Tensor<T> out(x.shape);
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = sigmoid_scalar(x.data[i]);
    validate_finite(out, "sigmoid");
    if (Graph<T>* g = detail::common_graph<T>({&x}, "sigmoid")) {
        out.graph = g;
        out.node = g->record(out.shape, [px = x.node, sy = out.detached()](Graph<T>& gr, const Tensor<T>& up) {
            Tensor<T> gx(sy.shape);
            for (std::size_t i = 0; i < gx.data.size(); ++i)
                gx.data[i] = up.data[i] * sy.data[i] * (T(1) - sy.data[i]);
            gr.add_grad(px, gx);
        });
    }
    return out;
}

// Each source pixel replicated into a 2x2 block.
template <typename T>
Tensor<T> upsample_nearest_2x(const Tensor<T>& x) {
    const int N = x.shape.n, C = x.shape.c, H = x.shape.h, W = x.shape.w;
    Tensor<T> out(Shape{N, C, 2 * H, 2 * W});
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            const T* xp = x.data.data() + (static_cast<std::int64_t>(n) * C + c) * H * W;
            T* op = out.data.data() + (static_cast<std::int64_t>(n) * C + c) * 4 * H * W;
            for (int h = 0; h < H; ++h)
                for (int w = 0; w < W; ++w) {
                    const T v = xp[h * W + w];
                    const std::int64_t o = static_cast<std::int64_t>(2 * h) * 2 * W + 2 * w;
                    op[o] = v;
                    op[o + 1] = v;
                    op[o + 2 * W] = v;
                    op[o + 2 * W + 1] = v;
                }
        }
    if (Graph<T>* g = detail::common_graph<T>({&x}, "upsample_nearest_2x")) {
        out.graph = g;
        out.node = g->record(out.shape, [px = x.node, in_shape = x.shape](Graph<T>& gr, const Tensor<T>& up) {
            const int N = in_shape.n, C = in_shape.c, H = in_shape.h, W = in_shape.w;
            Tensor<T> gx(in_shape);
            for (int n = 0; n < N; ++n)
                for (int c = 0; c < C; ++c) {
                    const T* u = up.data.data() + (static_cast<std::int64_t>(n) * C + c) * 4 * H * W;
                    T* gp = gx.data.data() + (static_cast<std::int64_t>(n) * C + c) * H * W;
                    for (int h = 0; h < H; ++h)
                        for (int w = 0; w < W; ++w) {
                            const std::int64_t o = static_cast<std::int64_t>(2 * h) * 2 * W + 2 * w;
                            gp[h * W + w] = u[o] + u[o + 1] + u[o + 2 * W] + u[o + 2 * W + 1];
                        }
                }
            gr.add_grad(px, gx);
        });
    }
    return out;
}

// Max over non-overlapping 2x2 windows; ties route the gradient to the first
// occurrence in window row-major order.
template <typename T>
Tensor<T> max_pool_2x(const Tensor<T>& x) {
    const int N = x.shape.n, C = x.shape.c, H = x.shape.h, W = x.shape.w;
    if (H % 2 != 0 || W % 2 != 0)
        throw std::invalid_argument("max_pool_2x: spatial extents must be even, got " + to_string(x.shape));
    const int OH = H / 2, OW = W / 2;
    Tensor<T> out(Shape{N, C, OH, OW});
    std::vector<std::uint8_t> argmax(static_cast<std::size_t>(out.numel()));
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            const T* xp = x.data.data() + (static_cast<std::int64_t>(n) * C + c) * H * W;
            const std::int64_t obase = (static_cast<std::int64_t>(n) * C + c) * OH * OW;
            for (int oh = 0; oh < OH; ++oh)
                for (int ow = 0; ow < OW; ++ow) {
                    const std::int64_t p = static_cast<std::int64_t>(2 * oh) * W + 2 * ow;
                    const T cand[4] = {xp[p], xp[p + 1], xp[p + W], xp[p + W + 1]};
                    int best = 0;
                    for (int j = 1; j < 4; ++j)
                        if (cand[j] > cand[best]) best = j;
                    out.data[static_cast<std::size_t>(obase + oh * OW + ow)] = cand[best];
                    argmax[static_cast<std::size_t>(obase + oh * OW + ow)] = static_cast<std::uint8_t>(best);
                }
        }
    if (Graph<T>* g = detail::common_graph<T>({&x}, "max_pool_2x")) {
        out.graph = g;
        out.node = g->record(out.shape, [px = x.node, in_shape = x.shape, am = std::move(argmax)](
                                            Graph<T>& gr, const Tensor<T>& up) {
            const int N = in_shape.n, C = in_shape.c, H = in_shape.h, W = in_shape.w;
            const int OH = H / 2, OW = W / 2;
            Tensor<T> gx(in_shape);
            for (int n = 0; n < N; ++n)
                for (int c = 0; c < C; ++c) {
                    T* gp = gx.data.data() + (static_cast<std::int64_t>(n) * C + c) * H * W;
                    const std::int64_t obase = (static_cast<std::int64_t>(n) * C + c) * OH * OW;
                    for (int oh = 0; oh < OH; ++oh)
                        for (int ow = 0; ow < OW; ++ow) {
                            const int j = am[static_cast<std::size_t>(obase + oh * OW + ow)];
                            const std::int64_t p =
                                static_cast<std::int64_t>(2 * oh + j / 2) * W + 2 * ow + j % 2;
                            gp[p] += up.data[static_cast<std::size_t>(obase + oh * OW + ow)];
                        }
                }
            gr.add_grad(px, gx);
        });
    }
    return out;
}

// Softmax-weighted 2x2 pooling. `logits` is a single-channel score map over
// the input pixels; within each non-overlapping window the four scores are
// softmax-normalized and every channel is pooled with those shared weights.
template <typename T>
Tensor<T> window_softmax_pool_2x(const Tensor<T>& x, const Tensor<T>& logits) {
    const int N = x.shape.n, C = x.shape.c, H = x.shape.h, W = x.shape.w;
    if (H % 2 != 0 || W % 2 != 0)
        throw std::invalid_argument("attention_pool_2x: spatial extents must be even, got " + to_string(x.shape));
    if (logits.shape.n != N || logits.shape.c != 1 || logits.shape.h != H || logits.shape.w != W)
        throw std::invalid_argument("attention_pool_2x: logits shape " + to_string(logits.shape) +
                                    " does not match input " + to_string(x.shape));
    const int OH = H / 2, OW = W / 2;

    // Softmax weights, stored at input resolution (windows are disjoint).
    Tensor<T> weights(logits.shape);
    for (int n = 0; n < N; ++n) {
        const T* lp = logits.data.data() + static_cast<std::int64_t>(n) * H * W;
        T* sp = weights.data.data() + static_cast<std::int64_t>(n) * H * W;
        for (int oh = 0; oh < OH; ++oh)
            for (int ow = 0; ow < OW; ++ow) {
                const std::int64_t p = static_cast<std::int64_t>(2 * oh) * W + 2 * ow;
                const std::int64_t idx[4] = {p, p + 1, p + W, p + W + 1};
                T mx = lp[idx[0]];
                for (int j = 1; j < 4; ++j) mx = std::max(mx, lp[idx[j]]);
                T denom = T(0);
                T e[4];
                for (int j = 0; j < 4; ++j) {
                    e[j] = std::exp(lp[idx[j]] - mx);
                    denom += e[j];
                }
                for (int j = 0; j < 4; ++j) sp[idx[j]] = e[j] / denom;
            }
    }

    Tensor<T> out(Shape{N, C, OH, OW});
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            const T* xp = x.data.data() + (static_cast<std::int64_t>(n) * C + c) * H * W;
            const T* sp = weights.data.data() + static_cast<std::int64_t>(n) * H * W;
            T* op = out.data.data() + (static_cast<std::int64_t>(n) * C + c) * OH * OW;
            for (int oh = 0; oh < OH; ++oh)
                for (int ow = 0; ow < OW; ++ow) {
                    const std::int64_t p = static_cast<std::int64_t>(2 * oh) * W + 2 * ow;
                    op[oh * OW + ow] = sp[p] * xp[p] + sp[p + 1] * xp[p + 1] + sp[p + W] * xp[p + W] +
                                       sp[p + W + 1] * xp[p + W + 1];
                }
        }
    validate_finite(out, "attention_pool_2x");

    if (Graph<T>* g = detail::common_graph<T>({&x, &logits}, "attention_pool_2x")) {
        out.graph = g;
        out.node = g->record(
            out.shape,
            [px = x.node, pl = logits.node, sx = x.detached(), sw = std::move(weights)](
                Graph<T>& gr, const Tensor<T>& up) {
                const int N = sx.shape.n, C = sx.shape.c, H = sx.shape.h, W = sx.shape.w;
                const int OH = H / 2, OW = W / 2;
                Tensor<T> gx(sx.shape);
                Tensor<T> gl(sw.shape);
                for (int n = 0; n < N; ++n) {
                    const T* sp = sw.data.data() + static_cast<std::int64_t>(n) * H * W;
                    T* glp = gl.data.data() + static_cast<std::int64_t>(n) * H * W;
                    for (int oh = 0; oh < OH; ++oh)
                        for (int ow = 0; ow < OW; ++ow) {
                            const std::int64_t p = static_cast<std::int64_t>(2 * oh) * W + 2 * ow;
                            const std::int64_t idx[4] = {p, p + 1, p + W, p + W + 1};
                            // ds_j = sum_c up[c] * x[c][j]; gx[c][j] += up[c] * s_j
                            T ds[4] = {T(0), T(0), T(0), T(0)};
                            for (int c = 0; c < C; ++c) {
                                const std::int64_t cb = (static_cast<std::int64_t>(n) * C + c) * H * W;
                                const T u = up.data[static_cast<std::size_t>(
                                    (static_cast<std::int64_t>(n) * C + c) * OH * OW + oh * OW + ow)];
                                for (int j = 0; j < 4; ++j) {
                                    ds[j] += u * sx.data[static_cast<std::size_t>(cb + idx[j])];
                                    gx.data[static_cast<std::size_t>(cb + idx[j])] += u * sp[idx[j]];
                                }
                            }
                            T dot = T(0);
                            for (int j = 0; j < 4; ++j) dot += sp[idx[j]] * ds[j];
                            for (int j = 0; j < 4; ++j) glp[idx[j]] = sp[idx[j]] * (ds[j] - dot);
                        }
                }
                gr.add_grad(px, gx);
                gr.add_grad(pl, gl);
            });
    }
    return out;
}

// Mean binary cross-entropy from logits, in the overflow-safe form
// max(x,0) - x*y + log(1 + exp(-|x|)). Targets are constants.
template <typename T>
Tensor<T> bce_with_logits(const Tensor<T>& logits, const Tensor<T>& targets) {
    detail::require_same_shape(logits, targets, "bce_loss");
    const std::int64_t total = logits.numel();
    T acc = T(0);
    for (std::int64_t i = 0; i < total; ++i) {
        const T x = logits.data[static_cast<std::size_t>(i)];
        const T y = targets.data[static_cast<std::size_t>(i)];
        acc += std::max(x, T(0)) - x * y + std::log1p(std::exp(-std::abs(x)));
    }
    Tensor<T> out = Tensor<T>::scalar(acc / static_cast<T>(total));
    validate_finite(out, "bce_loss");
    if (Graph<T>* g = detail::common_graph<T>({&logits}, "bce_loss")) {
        out.graph = g;
        out.node = g->record(out.shape, [px = logits.node, sx = logits.detached(), sy = targets.detached()](
                                            Graph<T>& gr, const Tensor<T>& up) {
            const T u = up.data[0];
            const T inv_n = T(1) / static_cast<T>(sx.numel());
            Tensor<T> gx(sx.shape);
            for (std::size_t i = 0; i < gx.data.size(); ++i)
                gx.data[i] = u * inv_n * (sigmoid_scalar(sx.data[i]) - sy.data[i]);
            gr.add_grad(px, gx);
        });
    }
    return out;
}

}  // namespace hunet
