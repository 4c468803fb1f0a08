#include "hunet/metrics.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

#include "hunet/ops.hpp"

namespace hunet {

ConfusionCounts confusion(const BinaryMask& pred, const BinaryMask& gt) {
    if (pred.h != gt.h || pred.w != gt.w)
        throw std::invalid_argument("confusion: mask extents differ (" + std::to_string(pred.h) + "x" +
                                    std::to_string(pred.w) + " vs " + std::to_string(gt.h) + "x" +
                                    std::to_string(gt.w) + ")");
    ConfusionCounts c;
    for (std::size_t i = 0; i < pred.bits.size(); ++i) {
        const bool p = pred.bits[i] != 0;
        const bool g = gt.bits[i] != 0;
        if (p && g) ++c.tp;
        else if (p) ++c.fp;
        else if (g) ++c.fn;
        else ++c.tn;
    }
    return c;
}

bool vacuous_overlap(const ConfusionCounts& c) { return c.tp + c.fp + c.fn == 0; }

double dice(const ConfusionCounts& c) {
    if (vacuous_overlap(c)) return 1.0;
    return 2.0 * static_cast<double>(c.tp) / static_cast<double>(2 * c.tp + c.fn + c.fp);
}

double iou(const ConfusionCounts& c) {
    if (vacuous_overlap(c)) return 1.0;
    return static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn + c.fp);
}

double accuracy(const ConfusionCounts& c) {
    if (c.total() <= 0) throw std::invalid_argument("accuracy: empty confusion counts");
    return static_cast<double>(c.tp + c.tn) / static_cast<double>(c.total());
}

std::vector<BoundaryPoint> boundary_extract(const BinaryMask& m) {
    std::vector<BoundaryPoint> pts;
    for (int y = 0; y < m.h; ++y)
        for (int x = 0; x < m.w; ++x) {
            if (!m.at(y, x)) continue;
            const bool edge = y == 0 || y == m.h - 1 || x == 0 || x == m.w - 1 ||
                              !m.at(y - 1, x) || !m.at(y + 1, x) || !m.at(y, x - 1) || !m.at(y, x + 1);
            if (edge) pts.push_back({y, x});
        }
    return pts;
}

namespace {

// Sum over `from` of the Euclidean distance to the nearest point in `to`.
double nearest_distance_sum(const std::vector<BoundaryPoint>& from, const std::vector<BoundaryPoint>& to) {
    double sum = 0.0;
    for (const auto& p : from) {
        std::int64_t best = std::numeric_limits<std::int64_t>::max();
        for (const auto& q : to) {
            const std::int64_t dy = p.y - q.y;
            const std::int64_t dx = p.x - q.x;
            best = std::min(best, dy * dy + dx * dx);
        }
        sum += std::sqrt(static_cast<double>(best));
    }
    return sum;
}

}  // namespace

std::optional<double> assd(const BinaryMask& pred, const BinaryMask& gt) {
    if (pred.h != gt.h || pred.w != gt.w)
        throw std::invalid_argument("assd: mask extents differ");
    const auto bp = boundary_extract(pred);
    const auto bg = boundary_extract(gt);
    if (bp.empty() || bg.empty()) return std::nullopt;
    const double total = nearest_distance_sum(bp, bg) + nearest_distance_sum(bg, bp);
    return total / static_cast<double>(bp.size() + bg.size());
}

std::optional<double> assd_directed(const BinaryMask& pred, const BinaryMask& gt) {
    if (pred.h != gt.h || pred.w != gt.w)
        throw std::invalid_argument("assd_directed: mask extents differ");
    const auto bp = boundary_extract(pred);
    const auto bg = boundary_extract(gt);
    if (bp.empty() || bg.empty()) return std::nullopt;
    return nearest_distance_sum(bp, bg) / static_cast<double>(bp.size());
}

MetricsReport compute_metrics(const BinaryMask& pred, const BinaryMask& gt) {
    const ConfusionCounts c = confusion(pred, gt);
    MetricsReport r;
    r.dice = dice(c);
    r.iou = iou(c);
    r.accuracy = accuracy(c);
    r.assd = assd(pred, gt);
    r.vacuous_overlap = vacuous_overlap(c);
    return r;
}

std::vector<BinaryMask> masks_from_logits(const Tensor<float>& logits, float threshold) {
    if (logits.shape.c != 1)
        throw std::invalid_argument("masks_from_logits: expected single-channel logits, got " +
                                    to_string(logits.shape));
    std::vector<BinaryMask> out;
    const int H = logits.shape.h, W = logits.shape.w;
    for (int n = 0; n < logits.shape.n; ++n) {
        BinaryMask m(H, W);
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x)
                m.set(y, x, sigmoid_scalar(logits.at(n, 0, y, x)) > threshold);
        out.push_back(std::move(m));
    }
    return out;
}

std::string to_key_values(const MetricsReport& r) {
    auto fmt = [](double v) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%.6f", v);
        return std::string(buf);
    };
    std::string s;
    s += "dice=" + fmt(r.dice) + "\n";
    s += "iou=" + fmt(r.iou) + "\n";
    s += "accuracy=" + fmt(r.accuracy) + "\n";
    s += "assd=" + (r.assd ? fmt(*r.assd) : std::string("undefined")) + "\n";
    if (r.vacuous_overlap) s += "vacuous_overlap=1\n";
    return s;
}

}  // namespace hunet
