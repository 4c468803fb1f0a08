#pragma once

#include <cstdint>
#include <cstdio>
#include <functional>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "hunet/data.hpp"
#include "hunet/loss.hpp"
#include "hunet/metrics.hpp"
#include "hunet/model.hpp"
#include "hunet/optim.hpp"

namespace hunet {

struct TrainConfig {
    int epochs = 30;
    int batch = 4;
    double lr = 1e-3;
    LossKind loss = LossKind::dice_bce;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    std::uint64_t seed = 1;
    int eval_every = 1;

    void validate() const {
        if (epochs < 1) throw std::invalid_argument("train config: epochs must be >= 1");
        if (batch < 1) throw std::invalid_argument("train config: batch must be >= 1");
        if (!(lr >= 0.0)) throw std::invalid_argument("train config: learning rate must be non-negative");
        if (eval_every < 1) throw std::invalid_argument("train config: eval_every must be >= 1");
    }
};

struct EpochRow {
    int epoch = 0;
    double loss = 0.0;
    std::optional<MetricsReport> val;  // filled on evaluation epochs
    int val_assd_undefined = 0;
};

struct EvalRow {
    std::string id;
    MetricsReport report;
};

struct EvalResult {
    MetricsReport mean;      // unweighted means; assd over defined samples only
    int assd_undefined = 0;  // samples excluded from the assd mean
    std::vector<EvalRow> rows;
};

namespace detail {

inline std::map<std::string, const SamplePair*> index_by_id(const std::vector<SamplePair>& samples) {
    std::map<std::string, const SamplePair*> byid;
    for (const auto& s : samples) {
        if (!byid.emplace(s.id, &s).second)
            throw std::invalid_argument("dataset: duplicate sample id '" + s.id + "'");
    }
    return byid;
}

inline const SamplePair& sample_for(const std::map<std::string, const SamplePair*>& byid,
                                    const std::string& id) {
    auto it = byid.find(id);
    if (it == byid.end()) throw std::invalid_argument("dataset: split references unknown id '" + id + "'");
    return *it->second;
}

}  // namespace detail

// Stacks samples into one [b, c, h, w] image batch and a matching 0/1 target.
inline void make_batch(const std::vector<const SamplePair*>& items, Tensor<float>& images,
                       Tensor<float>& targets) {
    if (items.empty()) throw std::invalid_argument("make_batch: empty batch");
    const Shape s0 = items.front()->image.shape;
    images = Tensor<float>(Shape{static_cast<int>(items.size()), s0.c, s0.h, s0.w});
    targets = Tensor<float>(Shape{static_cast<int>(items.size()), 1, s0.h, s0.w});
    for (std::size_t b = 0; b < items.size(); ++b) {
        const SamplePair& sp = *items[b];
        if (sp.image.shape != s0)
            throw std::invalid_argument("make_batch: sample '" + sp.id + "' has shape " +
                                        to_string(sp.image.shape) + ", batch expects " + to_string(s0));
        std::copy(sp.image.data.begin(), sp.image.data.end(),
                  images.data.begin() + static_cast<std::ptrdiff_t>(b * sp.image.data.size()));
        for (int y = 0; y < s0.h; ++y)
            for (int x = 0; x < s0.w; ++x)
                targets.at(static_cast<int>(b), 0, y, x) = sp.mask.at(y, x) ? 1.0f : 0.0f;
    }
}

// Evaluates a predictor over samples. The predictor maps one sample to a
// predicted mask; the model adapter below is the usual case, test stubs may
// substitute anything.
template <typename Pred>
EvalResult evaluate(Pred&& predict, const std::vector<const SamplePair*>& samples) {
    if (samples.empty()) throw std::invalid_argument("evaluate: empty sample list");
    EvalResult res;
    double sum_dice = 0, sum_iou = 0, sum_acc = 0, sum_assd = 0;
    int assd_defined = 0;
    for (const SamplePair* sp : samples) {
        const BinaryMask pred = predict(*sp);
        MetricsReport r = compute_metrics(pred, sp->mask);
        sum_dice += r.dice;
        sum_iou += r.iou;
        sum_acc += r.accuracy;
        if (r.assd) {
            sum_assd += *r.assd;
            ++assd_defined;
        } else {
            ++res.assd_undefined;
        }
        res.rows.push_back({sp->id, std::move(r)});
    }
    const double n = static_cast<double>(samples.size());
    res.mean.dice = sum_dice / n;
    res.mean.iou = sum_iou / n;
    res.mean.accuracy = sum_acc / n;
    if (assd_defined > 0) res.mean.assd = sum_assd / assd_defined;
    return res;
}

// Single-sample inference -> thresholded mask.
inline BinaryMask predict_mask(HybridUNet<float>& model, const SamplePair& sp, float threshold = 0.5f) {
    Tensor<float> logits = model.forward(nullptr, sp.image);
    return masks_from_logits(logits, threshold).front();
}

inline EvalResult evaluate_model(HybridUNet<float>& model, const std::vector<SamplePair>& samples,
                                 const std::vector<std::string>& ids) {
    const auto byid = detail::index_by_id(samples);
    std::vector<const SamplePair*> items;
    for (const auto& id : ids) items.push_back(&detail::sample_for(byid, id));
    return evaluate([&](const SamplePair& sp) { return predict_mask(model, sp); }, items);
}

// Seeded epoch loop: shuffle, batch, zero grads, forward, backward, Adam step.
// Validation sweeps run every cfg.eval_every epochs (and on the last epoch)
// when the val split is nonempty. Progress lines go to `log` when provided.
inline std::vector<EpochRow> train(HybridUNet<float>& model, const std::vector<SamplePair>& samples,
                                   const DatasetSplit& split, const TrainConfig& cfg,
                                   const std::function<void(const std::string&)>& log = {}) {
    cfg.validate();
    if (split.train.empty()) throw std::invalid_argument("train: empty training split");
    const auto byid = detail::index_by_id(samples);
    for (const auto& id : split.train) detail::sample_for(byid, id);  // fail fast on bad ids

    AdamState<float> opt;
    AdamConfig<float> adam{static_cast<float>(cfg.lr), static_cast<float>(cfg.beta1),
                           static_cast<float>(cfg.beta2), static_cast<float>(cfg.adam_eps)};
    Rng shuffle_rng(cfg.seed);
    std::vector<EpochRow> history;

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        std::vector<std::string> order = split.train;
        shuffle_rng.shuffle(order);

        double loss_sum = 0.0;
        int batches = 0;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch)) {
            std::vector<const SamplePair*> items;
            for (std::size_t i = start; i < std::min(order.size(), start + static_cast<std::size_t>(cfg.batch)); ++i)
                items.push_back(&detail::sample_for(byid, order[i]));
            Tensor<float> images, targets;
            make_batch(items, images, targets);

            model.zero_grads();
            Graph<float> graph;
            Tensor<float> logits = model.forward(&graph, images);
            Tensor<float> loss = segmentation_loss(cfg.loss, logits, targets);
            const double loss_value = static_cast<double>(loss.item());
            if (!std::isfinite(loss_value))
                throw std::runtime_error("train: non-finite loss at epoch " + std::to_string(epoch) +
                                         ", batch " + std::to_string(batches + 1));
            graph.backward(loss);
            adam_step(model.params(), opt, adam);
            loss_sum += loss_value;
            ++batches;
        }

        EpochRow row;
        row.epoch = epoch;
        row.loss = loss_sum / batches;
        if (!split.val.empty() && (epoch % cfg.eval_every == 0 || epoch == cfg.epochs)) {
            EvalResult val = evaluate_model(model, samples, split.val);
            row.val = val.mean;
            row.val_assd_undefined = val.assd_undefined;
        }
        if (log) {
            char buf[160];
            if (row.val)
                std::snprintf(buf, sizeof(buf), "epoch %d/%d loss %.6f val_dice %.4f", epoch, cfg.epochs,
                              row.loss, row.val->dice);
            else
                std::snprintf(buf, sizeof(buf), "epoch %d/%d loss %.6f", epoch, cfg.epochs, row.loss);
            log(buf);
        }
        history.push_back(std::move(row));
    }
    return history;
}

// History CSV with the fixed header
// epoch,loss,val_dice,val_iou,val_assd,val_assd_undefined.
// Validation fields are blank on epochs without a sweep; val_assd is blank
// when no validation sample had a defined surface distance.
inline std::string history_to_csv(const std::vector<EpochRow>& history) {
    auto fmt = [](double v) {
        char buf[40];
        std::snprintf(buf, sizeof(buf), "%.9g", v);
        return std::string(buf);
    };
    std::string s = "epoch,loss,val_dice,val_iou,val_assd,val_assd_undefined\n";
    for (const auto& row : history) {
        s += std::to_string(row.epoch) + "," + fmt(row.loss) + ",";
        if (row.val) {
            s += fmt(row.val->dice) + "," + fmt(row.val->iou) + ",";
            s += row.val->assd ? fmt(*row.val->assd) : std::string();
            s += "," + std::to_string(row.val_assd_undefined);
        } else {
            s += ",,,";
        }
        s += "\n";
    }
    return s;
}

}  // namespace hunet
