#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "hunet/tensor.hpp"

namespace hunet {

struct BinaryMask {
    int h = 0;
    int w = 0;
    std::vector<std::uint8_t> bits;  // row-major, 0 or 1

    BinaryMask() = default;
    BinaryMask(int h_, int w_) : h(h_), w(w_), bits(static_cast<std::size_t>(h_) * w_, 0) {}

    std::uint8_t at(int y, int x) const { return bits[static_cast<std::size_t>(y) * w + x]; }
    void set(int y, int x, bool v) { bits[static_cast<std::size_t>(y) * w + x] = v ? 1 : 0; }
    std::int64_t foreground_count() const {
        std::int64_t n = 0;
        for (auto b : bits) n += b;
        return n;
    }
    bool operator==(const BinaryMask& o) const { return h == o.h && w == o.w && bits == o.bits; }
};

struct ConfusionCounts {
    std::int64_t tp = 0;
    std::int64_t fp = 0;
    std::int64_t fn = 0;
    std::int64_t tn = 0;

    std::int64_t total() const { return tp + fp + fn + tn; }
};

struct MetricsReport {
    double dice = 0.0;
    double iou = 0.0;
    double accuracy = 0.0;
    std::optional<double> assd;  // empty when either boundary is empty
    bool vacuous_overlap = false;  // both masks empty: dice/iou defined as 1
};

struct BoundaryPoint {
    int y = 0;
    int x = 0;
};

ConfusionCounts confusion(const BinaryMask& pred, const BinaryMask& gt);

// Both-empty masks score 1.0 with the vacuous flag raised by callers via
// ConfusionCounts (tp + fp + fn == 0).
double dice(const ConfusionCounts& c);
double iou(const ConfusionCounts& c);
double accuracy(const ConfusionCounts& c);
bool vacuous_overlap(const ConfusionCounts& c);

// Foreground pixels with at least one 4-neighbor that is background or lies
// outside the image.
std::vector<BoundaryPoint> boundary_extract(const BinaryMask& m);

// Average symmetric surface distance between mask boundaries, in pixel units;
// empty when either boundary is empty. assd_directed is the one-directional
// variant (mean over pred-boundary points of the nearest gt-boundary
// distance).
std::optional<double> assd(const BinaryMask& pred, const BinaryMask& gt);
std::optional<double> assd_directed(const BinaryMask& pred, const BinaryMask& gt);

MetricsReport compute_metrics(const BinaryMask& pred, const BinaryMask& gt);

// Per-sample binarization of a [n, 1, h, w] logits tensor: sigmoid > threshold.
std::vector<BinaryMask> masks_from_logits(const Tensor<float>& logits, float threshold = 0.5f);

// Flat key=value serialization of a report (assd omitted-value spelled "undefined").
std::string to_key_values(const MetricsReport& r);

}  // namespace hunet
