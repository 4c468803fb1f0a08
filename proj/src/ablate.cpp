#include "hunet/ablate.hpp"

#include <cstdio>

namespace hunet {

std::vector<AblationRow> run_ablation(const std::vector<SamplePair>& samples, const Manifest& manifest,
                                      const std::function<void(const std::string&)>& log) {
    std::vector<std::string> ids;
    for (const auto& sp : samples) ids.push_back(sp.id);
    const DatasetSplit split = split_dataset(ids, manifest.train.seed);

    std::vector<AblationRow> rows;
    for (Variant v : {Variant::dc, Variant::dc_rc, Variant::dc_rc_ap}) {
        const ModelConfig cfg = make_ablation_variant(v, manifest.model);
        HybridUNet<float> model(cfg, manifest.train.seed);
        if (log) log("ablation: training " + variant_label(v));
        train(model, samples, split, manifest.train, log);
        const EvalResult eval = evaluate_model(model, samples, split.test);
        AblationRow row;
        row.components = variant_label(v);
        row.iou = eval.mean.iou;
        row.dice = eval.mean.dice;
        row.assd = eval.mean.assd;
        row.params = model.param_total();
        rows.push_back(std::move(row));
    }
    return rows;
}

std::string ablation_table_csv(const std::vector<AblationRow>& rows) {
    auto fmt = [](double v) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%.4f", v);
        return std::string(buf);
    };
    std::string s = "components,iou,dice,assd\n";
    for (const auto& r : rows) {
        s += r.components + "," + fmt(r.iou) + "," + fmt(r.dice) + ",";
        s += r.assd ? fmt(*r.assd) : std::string();
        s += "\n";
    }
    return s;
}

}  // namespace hunet
