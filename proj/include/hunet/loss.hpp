#pragma once

#include <stdexcept>
#include <string>

#include "hunet/ops.hpp"

namespace hunet {

enum class LossKind { dice, bce, dice_bce };

inline std::string to_string(LossKind k) {
    switch (k) {
        case LossKind::dice: return "dice";
        case LossKind::bce: return "bce";
        case LossKind::dice_bce: return "dice+bce";
    }
    throw std::logic_error("to_string(LossKind): bad value");
}

inline LossKind loss_kind_from_string(const std::string& s) {
    if (s == "dice") return LossKind::dice;
    if (s == "bce") return LossKind::bce;
    if (s == "dice+bce") return LossKind::dice_bce;
    throw std::invalid_argument("unknown loss kind '" + s + "' (expected dice|bce|dice+bce)");
}

// Smoothed soft Dice loss: 1 - (2*sum(p*y) + eps) / (sum(p) + sum(y) + eps)
// with p = sigmoid(logits). Built from tape primitives, so its gradient is
// exercised end to end.
template <typename T>
Tensor<T> soft_dice_loss(const Tensor<T>& logits, const Tensor<T>& targets, T eps = T(1)) {
    detail::require_same_shape(logits, targets, "soft_dice_loss");
    Tensor<T> p = sigmoid(logits);
    T target_sum = T(0);
    for (const T& v : targets.data) target_sum += v;
    Tensor<T> numerator = add_const(scale(reduce_sum(mul(p, targets)), T(2)), eps);
    Tensor<T> denominator = add_const(reduce_sum(p), target_sum + eps);
    return add_const(scale(div(numerator, denominator), T(-1)), T(1));
}

template <typename T>
Tensor<T> bce_loss(const Tensor<T>& logits, const Tensor<T>& targets) {
    return bce_with_logits(logits, targets);
}

// dice+bce sums the two with equal weight.
template <typename T>
Tensor<T> segmentation_loss(LossKind kind, const Tensor<T>& logits, const Tensor<T>& targets) {
    switch (kind) {
        case LossKind::dice: return soft_dice_loss(logits, targets);
        case LossKind::bce: return bce_loss(logits, targets);
        case LossKind::dice_bce: return add(soft_dice_loss(logits, targets), bce_loss(logits, targets));
    }
    throw std::logic_error("segmentation_loss: bad loss kind");
}

}  // namespace hunet
