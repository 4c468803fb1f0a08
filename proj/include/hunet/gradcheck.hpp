#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "hunet/graph.hpp"
#include "hunet/ops.hpp"

namespace hunet {

template <typename T>
struct FdResult {
    T max_rel_err = T(0);
    std::int64_t worst_index = -1;
    T analytic_at_worst = T(0);
    T numeric_at_worst = T(0);
};

namespace detail {

template <typename T>
T eval_scalar(const std::function<Tensor<T>(const Tensor<T>&)>& fn, const Tensor<T>& x,
              std::int64_t probe_index) {
    const Tensor<T> y = fn(x);
    const T v = y.item();
    if (!std::isfinite(static_cast<double>(v)))
        throw std::runtime_error("finite_difference_check: function returned non-finite value while probing element " +
                                 std::to_string(probe_index));
    return v;
}

template <typename T>
T rel_err(T analytic, T numeric) {
    return std::abs(analytic - numeric) / std::max(static_cast<T>(1e-8), std::abs(analytic) + std::abs(numeric));
}

// Central difference with optional refinement: when the base-step error
// exceeds `refine_below`, the element is re-probed at step/8 and step/64 and
// the best agreement across scales is kept. A probe window that straddles a
// LeakyReLU kink stops straddling it once the window shrinks past the kink,
// while a wrong backward rule disagrees at every scale.
template <typename T, typename NumericAt>
T refined_rel_err(T analytic, T step, T refine_below, NumericAt&& numeric_at) {
    T err = rel_err(analytic, numeric_at(step));
    if (refine_below > T(0) && err > refine_below) {
        for (const T div : {T(8), T(64)}) {
            err = std::min(err, rel_err(analytic, numeric_at(step / div)));
            if (err <= refine_below) break;
        }
    }
    return err;
}

}  // namespace detail

// Central finite differences against the tape's analytic gradient of a
// scalar-valued function of x. `fn` must treat its argument uniformly: it is
// called once with a tracked tensor (analytic pass) and with plain perturbed
// tensors for the probes. Relative error per element is
// |analytic - numeric| / max(1e-8, |analytic| + |numeric|). Elements whose
// base-step error exceeds `refine_below` (> 0) are re-probed at smaller steps
// (kink exclusion for piecewise-smooth functions); 0 disables refinement.
template <typename T>
FdResult<T> finite_difference_check(const std::function<Tensor<T>(const Tensor<T>&)>& fn,
                                    const Tensor<T>& x0, T step, T refine_below = T(0)) {
    if (!(step > T(0))) throw std::invalid_argument("finite_difference_check: step must be positive");
    Graph<T> g;
    Tensor<T> xt = g.input(x0);
    Tensor<T> y = fn(xt);
    g.backward(y);
    const Tensor<T> analytic = g.adjoint(xt);

    FdResult<T> result;
    Tensor<T> probe = x0.detached();
    for (std::int64_t i = 0; i < x0.numel(); ++i) {
        const T saved = probe.data[static_cast<std::size_t>(i)];
        auto numeric_at = [&](T h) {
            probe.data[static_cast<std::size_t>(i)] = saved + h;
            const T fp = detail::eval_scalar(fn, probe, i);
            probe.data[static_cast<std::size_t>(i)] = saved - h;
            const T fm = detail::eval_scalar(fn, probe, i);
            probe.data[static_cast<std::size_t>(i)] = saved;
            return (fp - fm) / (2 * h);
        };
        const T a = analytic.data[static_cast<std::size_t>(i)];
        const T err = detail::refined_rel_err(a, step, refine_below, numeric_at);
        if (err > result.max_rel_err) {
            result.max_rel_err = err;
            result.worst_index = i;
            result.analytic_at_worst = a;
            result.numeric_at_worst = numeric_at(step);
        }
    }
    return result;
}

// Same check for a parameter embedded in a model: `loss_fn` rebuilds the loss
// from current parameter values, recording on the given graph (analytic pass)
// or on none (probes, which temporarily poke p.value in place).
template <typename T>
FdResult<T> finite_difference_check_param(const std::function<Tensor<T>(Graph<T>*)>& loss_fn,
                                          Param<T>& p, T step, T refine_below = T(0)) {
    if (!(step > T(0))) throw std::invalid_argument("finite_difference_check_param: step must be positive");
    p.zero_grad();
    Graph<T> g;
    Tensor<T> loss = loss_fn(&g);
    g.backward(loss);
    const Tensor<T> analytic = p.grad.detached();

    FdResult<T> result;
    for (std::int64_t i = 0; i < p.value.numel(); ++i) {
        const T saved = p.value.data[static_cast<std::size_t>(i)];
        auto numeric_at = [&](T h) {
            p.value.data[static_cast<std::size_t>(i)] = saved + h;
            const T fp = loss_fn(nullptr).item();
            p.value.data[static_cast<std::size_t>(i)] = saved - h;
            const T fm = loss_fn(nullptr).item();
            p.value.data[static_cast<std::size_t>(i)] = saved;
            return (fp - fm) / (2 * h);
        };
        const T a = analytic.data[static_cast<std::size_t>(i)];
        const T err = detail::refined_rel_err(a, step, refine_below, numeric_at);
        if (err > result.max_rel_err) {
            result.max_rel_err = err;
            result.worst_index = i;
            result.analytic_at_worst = a;
            result.numeric_at_worst = numeric_at(step);
        }
    }
    return result;
}

// One row of the repo-wide gradient-fidelity sweep.
struct OpCheck {
    std::string op;
    double max_rel_err = 0.0;
    std::int64_t worst_index = -1;
    bool pass = false;
};

inline constexpr double kGradcheckTolerance = 1e-4;
inline constexpr double kGradcheckStep = 1e-3;

// Runs finite-difference checks in 64-bit mode over every differentiable op
// plus an end-to-end model of the given depth and input size.
std::vector<OpCheck> run_gradcheck_suite(int size, int levels, std::uint64_t seed);

}  // namespace hunet
