#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "hunet/ablate.hpp"
#include "hunet/checkpoint.hpp"
#include "hunet/data.hpp"
#include "hunet/gradcheck.hpp"
#include "hunet/manifest.hpp"
#include "hunet/model.hpp"
#include "hunet/train.hpp"

namespace fs = std::filesystem;
using namespace hunet;

namespace {

std::string fmt(double v, const char* spec = "%.6f") {
    char buf[48];
    std::snprintf(buf, sizeof(buf), spec, v);
    return buf;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << text;
    if (!out) throw std::runtime_error("write failed: " + path.string());
}

Manifest manifest_or_default(const std::string& path) {
    if (path.empty()) return Manifest{};
    return load_manifest(path);
}

int cmd_gen_data(const std::string& out_dir, int count, int size, std::uint64_t seed, double noise,
                 const std::string& distractors) {
    SyntheticSpec spec;
    spec.count = count;
    spec.size = size;
    spec.seed = seed;
    spec.noise_sigma = noise;
    if (distractors == "on") {
        spec.hair_strokes = true;
        spec.intensity_gradient = true;
    } else if (distractors == "off") {
        spec.hair_strokes = false;
        spec.intensity_gradient = false;
    } else {
        throw std::invalid_argument("--distractors must be on|off, got '" + distractors + "'");
    }
    const auto samples = gen_synthetic(spec);
    save_dataset(out_dir, samples);
    write_text(fs::path(out_dir) / "spec.txt", synthetic_spec_to_text(spec));
    std::cout << "wrote " << samples.size() << " samples to " << out_dir << "\n";
    return 0;
}

int cmd_train(const std::string& data_dir, const std::string& manifest_path, const std::string& out_ckpt,
              const std::string& variant) {
    Manifest manifest = manifest_or_default(manifest_path);
    if (!variant.empty()) manifest.model = make_ablation_variant(variant_from_string(variant), manifest.model);
    manifest.model.validate();
    manifest.train.validate();
    const std::string resolved = manifest_to_text(manifest);

    const auto samples = load_dataset(data_dir);
    std::vector<std::string> ids;
    for (const auto& sp : samples) ids.push_back(sp.id);
    // datasets below the 80/10/10 minimum train on every sample (overfit mode)
    DatasetSplit split;
    if (ids.size() >= 10) {
        split = split_dataset(ids, manifest.train.seed);
    } else {
        split.train = ids;
        split.seed = manifest.train.seed;
    }

    HybridUNet<float> model(manifest.model, manifest.train.seed);
    std::cout << "params total=" << model.param_total() << "\n";

    auto log = [](const std::string& line) { std::cerr << line << "\n"; };
    const auto history = train(model, samples, split, manifest.train, log);

    save_checkpoint(out_ckpt, model, resolved, static_cast<std::uint64_t>(history.size()));
    write_text(out_ckpt + ".history.csv", history_to_csv(history));
    write_text(out_ckpt + ".manifest.txt", resolved);
    write_text(out_ckpt + ".split.txt", split_to_text(split));

    const EvalResult val = evaluate_model(model, samples, split.val.empty() ? split.train : split.val);
    std::cout << "final " << (split.val.empty() ? "train" : "val") << " iou=" << fmt(val.mean.iou)
              << " dice=" << fmt(val.mean.dice)
              << " assd=" << (val.mean.assd ? fmt(*val.mean.assd) : std::string("undefined"))
              << " (undefined " << val.assd_undefined << ")"
              << " accuracy=" << fmt(val.mean.accuracy) << "\n";
    return 0;
}

int cmd_eval(const std::string& data_dir, const std::string& ckpt_path, const std::string& which_split) {
    const Checkpoint ck = read_checkpoint(ckpt_path);
    const Manifest manifest = parse_manifest(ck.config_text);
    HybridUNet<float> model(manifest.model, manifest.train.seed);
    load_into(model, ck);

    const auto samples = load_dataset(data_dir);
    std::vector<std::string> ids;
    for (const auto& sp : samples) ids.push_back(sp.id);
    DatasetSplit split;
    if (ids.size() >= 10) {
        split = split_dataset(ids, manifest.train.seed);
    } else {
        split.train = ids;  // overfit-mode dataset: everything is the train split
        split.seed = manifest.train.seed;
    }
    const std::vector<std::string>* chosen = nullptr;
    if (which_split == "train") chosen = &split.train;
    else if (which_split == "val") chosen = &split.val;
    else if (which_split == "test") chosen = &split.test;
    else throw std::invalid_argument("--split must be train|val|test, got '" + which_split + "'");
    if (chosen->empty()) throw std::runtime_error("split '" + which_split + "' is empty for this dataset");

    const EvalResult res = evaluate_model(model, samples, *chosen);
    std::cout << "id,iou,dice,assd,accuracy\n";
    for (const auto& row : res.rows) {
        std::cout << row.id << "," << fmt(row.report.iou) << "," << fmt(row.report.dice) << ","
                  << (row.report.assd ? fmt(*row.report.assd) : std::string()) << ","
                  << fmt(row.report.accuracy) << "\n";
    }
    std::cout << "mean," << fmt(res.mean.iou) << "," << fmt(res.mean.dice) << ","
              << (res.mean.assd ? fmt(*res.mean.assd) : std::string()) << ","
              << fmt(res.mean.accuracy) << "\n";
    std::cout << "assd_undefined=" << res.assd_undefined << "\n";
    return 0;
}

int cmd_params(const std::string& manifest_path) {
    const Manifest manifest = manifest_or_default(manifest_path);
    manifest.model.validate();
    const ParamReport rep = param_report(manifest.model);
    std::cout << "layer,params\n";
    for (const auto& row : rep.rows) std::cout << row.layer << "," << row.count << "\n";
    std::cout << "total," << rep.total << "\n";
    std::cout << "standard_conv_equivalent," << rep.standard_total << "\n";
    std::cout << "reduction_pct," << fmt(rep.reduction_pct, "%.2f") << "\n";
    return 0;
}

int cmd_gradcheck(int size, int levels, std::uint64_t seed) {
    const auto rows = run_gradcheck_suite(size, levels, seed);
    bool all_pass = true;
    for (const auto& row : rows) {
        std::cout << (row.pass ? "PASS " : "FAIL ") << row.op << " max_rel_err=" << fmt(row.max_rel_err, "%.3e");
        if (!row.pass) std::cout << " worst_element=" << row.worst_index;
        std::cout << "\n";
        all_pass = all_pass && row.pass;
    }
    std::cout << (all_pass ? "gradcheck: all ops pass" : "gradcheck: FAILURES above tolerance 1e-4") << "\n";
    return all_pass ? 0 : 1;
}

int cmd_ablate(const std::string& data_dir, const std::string& manifest_path) {
    const Manifest manifest = manifest_or_default(manifest_path);
    const auto samples = load_dataset(data_dir);
    auto log = [](const std::string& line) { std::cerr << line << "\n"; };
    const auto rows = run_ablation(samples, manifest, log);
    std::cout << ablation_table_csv(rows);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"hybrid U-Net segmentation lab"};
    app.require_subcommand(1);

    auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
    std::string gen_out;
    int gen_count = 64, gen_size = 64;
    std::uint64_t gen_seed = 7;
    double gen_noise = 0.02;
    std::string gen_distractors = "on";
    gen->add_option("--out", gen_out, "output dataset directory")->required();
    gen->add_option("--count", gen_count, "number of samples");
    gen->add_option("--size", gen_size, "square image extent");
    gen->add_option("--seed", gen_seed, "generator seed");
    gen->add_option("--noise", gen_noise, "Gaussian noise sigma");
    gen->add_option("--distractors", gen_distractors, "hair strokes + intensity gradient: on|off");

    auto* tr = app.add_subcommand("train", "train a model on a dataset directory");
    std::string tr_data, tr_manifest, tr_out, tr_variant;
    tr->add_option("--data", tr_data, "dataset directory")->required();
    tr->add_option("--manifest", tr_manifest, "manifest file (defaults apply when omitted)");
    tr->add_option("--out", tr_out, "output checkpoint path")->required();
    tr->add_option("--variant", tr_variant, "ablation variant: dc|dc-rc|dc-rc-ap");

    auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on a dataset split");
    std::string ev_data, ev_ckpt, ev_split = "test";
    ev->add_option("--data", ev_data, "dataset directory")->required();
    ev->add_option("--ckpt", ev_ckpt, "checkpoint file")->required();
    ev->add_option("--split", ev_split, "train|val|test");

    auto* pa = app.add_subcommand("params", "report per-layer parameter counts");
    std::string pa_manifest;
    pa->add_option("--manifest", pa_manifest, "manifest file (defaults apply when omitted)");

    auto* gc = app.add_subcommand("gradcheck", "finite-difference checks for every op");
    int gc_size = 16, gc_levels = 2;
    std::uint64_t gc_seed = 1;
    gc->add_option("--size", gc_size, "end-to-end input extent");
    gc->add_option("--levels", gc_levels, "end-to-end encoder depth");
    gc->add_option("--seed", gc_seed, "suite seed");

    auto* ab = app.add_subcommand("ablate", "train and compare the three ablation variants");
    std::string ab_data, ab_manifest;
    ab->add_option("--data", ab_data, "dataset directory")->required();
    ab->add_option("--manifest", ab_manifest, "manifest file (defaults apply when omitted)");

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) return cmd_gen_data(gen_out, gen_count, gen_size, gen_seed, gen_noise, gen_distractors);
        if (tr->parsed()) return cmd_train(tr_data, tr_manifest, tr_out, tr_variant);
        if (ev->parsed()) return cmd_eval(ev_data, ev_ckpt, ev_split);
        if (pa->parsed()) return cmd_params(pa_manifest);
        if (gc->parsed()) return cmd_gradcheck(gc_size, gc_levels, gc_seed);
        if (ab->parsed()) return cmd_ablate(ab_data, ab_manifest);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
