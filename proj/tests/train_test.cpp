#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "hunet/checkpoint.hpp"
#include "hunet/gradcheck.hpp"
#include "hunet/loss.hpp"
#include "hunet/manifest.hpp"
#include "hunet/optim.hpp"
#include "hunet/train.hpp"
#include "test_util.hpp"

using namespace hunet;
using Td = Tensor<double>;
using Tf = Tensor<float>;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir() {
    const fs::path dir = fs::temp_directory_path() / "hunet_train_test";
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::string read_bytes(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

ModelConfig tiny_config() {
    ModelConfig cfg;
    cfg.levels = 2;
    cfg.channels = {8, 16};
    cfg.bottleneck = 32;
    return cfg;
}

std::vector<SamplePair> tiny_dataset(int count, int size = 16) {
    SyntheticSpec spec;
    spec.count = count;
    spec.size = size;
    spec.seed = 40;
    return gen_synthetic(spec);
}

}  // namespace

TEST_CASE("soft dice loss saturation and closed form") {
    Rng rng(81);
    Td target = Td::zeros({1, 1, 4, 4});
    for (auto& v : target.data) v = rng.range(0, 1) ? 1.0 : 0.0;

    // perfectly confident logits drive the loss to ~0
    Td confident(target.shape);
    for (std::size_t i = 0; i < confident.data.size(); ++i)
        confident.data[i] = target.data[i] > 0.5 ? 30.0 : -30.0;
    CHECK(soft_dice_loss(confident, target).item() < 1e-6);

    // logits = 0 everywhere: p = 0.5, closed-form substitution
    const double n = static_cast<double>(target.numel());
    double fg = 0.0;
    for (double v : target.data) fg += v;
    const double expect = 1.0 - (fg + 1.0) / (0.5 * n + fg + 1.0);
    CHECK(soft_dice_loss(Td::zeros(target.shape), target).item() == doctest::Approx(expect).epsilon(1e-12));

    // gradient against finite differences
    const Td logits0 = oracle::random_tensor<double>({1, 1, 8, 8}, rng, -2.0, 2.0);
    Td target8 = Td::zeros({1, 1, 8, 8});
    for (auto& v : target8.data) v = rng.range(0, 1) ? 1.0 : 0.0;
    auto fd = finite_difference_check<double>(
        [&](const Td& x) { return soft_dice_loss(x, target8); }, logits0, 1e-3);
    CHECK(fd.max_rel_err < 1e-4);
}

TEST_CASE("soft dice loss stays within [0, 1] for random inputs") {
    Rng rng(82);
    for (int trial = 0; trial < 30; ++trial) {
        const Td logits = oracle::random_tensor<double>({1, 1, 6, 6}, rng, -10.0, 10.0);
        Td target = Td::zeros({1, 1, 6, 6});
        for (auto& v : target.data) v = rng.range(0, 1) ? 1.0 : 0.0;
        const double loss = soft_dice_loss(logits, target).item();
        CHECK(loss >= 0.0);
        CHECK(loss <= 1.0 + 1e-12);
        CHECK(bce_loss(logits, target).item() >= 0.0);
    }
}

TEST_CASE("bce loss values and the naive-formula oracle") {
    const Td zeros = Td::zeros({1, 1, 3, 3});
    Td y = Td::zeros({1, 1, 3, 3});
    y.data[4] = 1.0;
    CHECK(bce_loss(zeros, y).item() == doctest::Approx(std::log(2.0)).epsilon(1e-12));

    // confident and correct: ~0
    Td ones_target = Td::ones({1, 1, 2, 2});
    CHECK(bce_loss(Td::full({1, 1, 2, 2}, 30.0), ones_target).item() < 1e-9);

    // stable form matches -[y ln p + (1-y) ln(1-p)] at moderate logits
    Rng rng(83);
    const Td logits = oracle::random_tensor<double>({2, 1, 4, 4}, rng, -5.0, 5.0);
    Td target = Td::zeros({2, 1, 4, 4});
    for (auto& v : target.data) v = rng.range(0, 1) ? 1.0 : 0.0;
    double naive = 0.0;
    for (std::size_t i = 0; i < logits.data.size(); ++i) {
        const double p = 1.0 / (1.0 + std::exp(-logits.data[i]));
        naive += -(target.data[i] * std::log(p) + (1.0 - target.data[i]) * std::log(1.0 - p));
    }
    naive /= static_cast<double>(logits.numel());
    CHECK(bce_loss(logits, target).item() == doctest::Approx(naive).epsilon(1e-6));

    auto fd = finite_difference_check<double>(
        [&](const Td& x) { return bce_loss(x, target); }, logits, 1e-3);
    CHECK(fd.max_rel_err < 1e-4);
}

TEST_CASE("adam: zero gradient is the identity, t still advances") {
    Rng rng(84);
    Param<float> p("p", Tf::uniform({1, 1, 2, 2}, rng, -1.0f, 1.0f));
    const std::vector<float> before = p.value.data;
    std::vector<Param<float>*> params{&p};
    AdamState<float> st;
    adam_step(params, st, AdamConfig<float>{});
    CHECK(st.t == 1);
    CHECK(p.value.data == before);
}

TEST_CASE("adam: first-step magnitude with unit gradient is ~lr") {
    Param<double> p("p", Tensor<double>::scalar(0.5));
    p.grad.fill(1.0);
    std::vector<Param<double>*> params{&p};
    AdamState<double> st;
    AdamConfig<double> cfg;
    cfg.lr = 1e-3;
    adam_step(params, st, cfg);
    const double delta = 0.5 - p.value.item();
    CHECK(delta == doctest::Approx(1e-3).epsilon(1e-6));
}

TEST_CASE("adam aborts on non-finite gradients naming the parameter") {
    Param<float> p("enc0.block.entry.weight", Tf::ones({1, 1, 1, 1}));
    p.grad.data[0] = std::numeric_limits<float>::quiet_NaN();
    std::vector<Param<float>*> params{&p};
    AdamState<float> st;
    try {
        adam_step(params, st, AdamConfig<float>{});
        FAIL("expected abort");
    } catch (const std::runtime_error& e) {
        CHECK(std::string(e.what()).find("enc0.block.entry.weight") != std::string::npos);
    }
}

TEST_CASE("training with lr = 0 leaves parameters untouched and the loss flat") {
    const auto samples = tiny_dataset(10);
    std::vector<std::string> ids;
    for (const auto& s : samples) ids.push_back(s.id);
    const DatasetSplit split = split_dataset(ids, 3);

    HybridUNet<float> model(tiny_config(), 5);
    std::vector<std::vector<float>> before;
    for (auto* p : model.params()) before.push_back(p->value.data);

    TrainConfig cfg;
    cfg.epochs = 3;
    cfg.lr = 0.0;
    cfg.seed = 3;
    cfg.batch = static_cast<int>(split.train.size());  // one batch: shuffling cannot regroup
    const auto history = train(model, samples, split, cfg);
    REQUIRE(history.size() == 3);
    // constant up to summation order: the per-epoch shuffle reorders samples
    // inside the batch, which only perturbs float association
    CHECK(history[0].loss == doctest::Approx(history[1].loss).epsilon(1e-6));
    CHECK(history[1].loss == doctest::Approx(history[2].loss).epsilon(1e-6));
    for (std::size_t i = 0; i < before.size(); ++i) CHECK(model.params()[i]->value.data == before[i]);

    // pixel-additive loss: epoch mean is regrouping-invariant even with
    // several (equal-sized) batches per epoch
    cfg.batch = 4;
    cfg.loss = LossKind::bce;
    const auto hb = train(model, samples, split, cfg);
    CHECK(hb[0].loss == doctest::Approx(hb[1].loss).epsilon(1e-6));
    CHECK(hb[1].loss == doctest::Approx(hb[2].loss).epsilon(1e-6));
}

TEST_CASE("training is deterministic given config and seed") {
    const auto samples = tiny_dataset(10);
    std::vector<std::string> ids;
    for (const auto& s : samples) ids.push_back(s.id);
    const DatasetSplit split = split_dataset(ids, 3);

    TrainConfig cfg;
    cfg.epochs = 3;
    cfg.batch = 4;
    cfg.seed = 17;

    HybridUNet<float> a(tiny_config(), 17);
    const auto ha = train(a, samples, split, cfg);
    HybridUNet<float> b(tiny_config(), 17);
    const auto hb = train(b, samples, split, cfg);

    REQUIRE(ha.size() == hb.size());
    for (std::size_t i = 0; i < ha.size(); ++i) CHECK(ha[i].loss == hb[i].loss);
    for (std::size_t i = 0; i < a.params().size(); ++i)
        CHECK(a.params()[i]->value.data == b.params()[i]->value.data);
    CHECK(history_to_csv(ha) == history_to_csv(hb));

    CHECK_THROWS(train(a, samples, DatasetSplit{}, cfg));  // empty train split
}

TEST_CASE("evaluate with a ground-truth stub and a constant-background stub") {
    const auto samples = tiny_dataset(6);
    std::vector<const SamplePair*> items;
    for (const auto& s : samples) items.push_back(&s);

    const EvalResult perfect = evaluate([](const SamplePair& sp) { return sp.mask; }, items);
    CHECK(perfect.mean.dice == 1.0);
    CHECK(perfect.mean.iou == 1.0);
    CHECK(perfect.mean.accuracy == 1.0);
    REQUIRE(perfect.mean.assd.has_value());
    CHECK(*perfect.mean.assd == 0.0);
    CHECK(perfect.assd_undefined == 0);

    const EvalResult blank = evaluate(
        [](const SamplePair& sp) { return BinaryMask(sp.mask.h, sp.mask.w); }, items);
    CHECK(blank.mean.dice == 0.0);
    CHECK_FALSE(blank.mean.assd.has_value());
    CHECK(blank.assd_undefined == static_cast<int>(items.size()));

    // aggregate means equal a plain recomputation over the per-sample rows
    const EvalResult mixed = evaluate(
        [&](const SamplePair& sp) {
            BinaryMask m = sp.mask;
            if (!m.bits.empty()) m.bits[0] ^= 1;  // perturb one pixel
            return m;
        },
        items);
    double dice_sum = 0.0;
    for (const auto& row : mixed.rows) dice_sum += row.report.dice;
    CHECK(mixed.mean.dice == doctest::Approx(dice_sum / static_cast<double>(items.size())).epsilon(1e-15));

    CHECK_THROWS(evaluate([](const SamplePair& sp) { return sp.mask; }, std::vector<const SamplePair*>{}));
}

TEST_CASE("checkpoint round trip is byte-identical, with and without optimizer state") {
    const auto dir = scratch_dir();
    HybridUNet<float> model(tiny_config(), 23);
    Manifest manifest;
    manifest.model = tiny_config();
    const std::string config = manifest_to_text(manifest);

    save_checkpoint(dir / "a.ckpt", model, config, 42);
    const std::string bytes1 = read_bytes(dir / "a.ckpt");

    const Checkpoint ck = read_checkpoint(dir / "a.ckpt");
    CHECK(ck.step == 42);
    CHECK(ck.config_text == config);
    CHECK_FALSE(ck.optimizer.has_value());

    HybridUNet<float> loaded(tiny_config(), 99);  // different init, overwritten by load
    load_into(loaded, ck);
    for (std::size_t i = 0; i < model.params().size(); ++i)
        CHECK(loaded.params()[i]->value.data == model.params()[i]->value.data);

    save_checkpoint(dir / "b.ckpt", loaded, ck.config_text, ck.step);
    CHECK(read_bytes(dir / "b.ckpt") == bytes1);

    // optimizer state survives too
    AdamState<float> opt;
    std::vector<Param<float>*>& params = model.params();
    for (auto* p : params) p->grad.fill(0.01f);
    adam_step(params, opt, AdamConfig<float>{});
    save_checkpoint(dir / "o.ckpt", model, config, 1, &opt);
    const Checkpoint cko = read_checkpoint(dir / "o.ckpt");
    REQUIRE(cko.optimizer.has_value());
    CHECK(cko.optimizer->t == 1);
    CHECK(cko.optimizer->m.size() == params.size());
    CHECK(cko.optimizer->m[0].data == opt.m[0].data);
}

TEST_CASE("checkpoint corruption and mismatch diagnostics") {
    const auto dir = scratch_dir();
    HybridUNet<float> model(tiny_config(), 23);
    Manifest manifest;
    manifest.model = tiny_config();
    save_checkpoint(dir / "c.ckpt", model, manifest_to_text(manifest), 7);

    // flip one payload byte: checksum must catch it
    std::string bytes = read_bytes(dir / "c.ckpt");
    bytes[bytes.size() / 2] = static_cast<char>(bytes[bytes.size() / 2] ^ 0x40);
    std::ofstream(dir / "bad.ckpt", std::ios::binary).write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    CHECK_THROWS_WITH_AS(read_checkpoint(dir / "bad.ckpt"), doctest::Contains("checksum"), std::runtime_error);

    // truncation
    std::ofstream(dir / "short.ckpt", std::ios::binary).write(bytes.data(), 40);
    CHECK_THROWS(read_checkpoint(dir / "short.ckpt"));

    // bad magic
    std::string wrong = read_bytes(dir / "c.ckpt");
    wrong[0] = 'X';
    std::ofstream(dir / "magic.ckpt", std::ios::binary).write(wrong.data(), static_cast<std::streamsize>(wrong.size()));
    CHECK_THROWS_WITH_AS(read_checkpoint(dir / "magic.ckpt"), doctest::Contains("bad magic"), std::runtime_error);

    // loading into a mismatched config names the first offending tensor
    ModelConfig other = tiny_config();
    other.channels = {8, 24};
    HybridUNet<float> wrong_model(other, 23);
    const Checkpoint ck = read_checkpoint(dir / "c.ckpt");
    try {
        load_into(wrong_model, ck);
        FAIL("expected mismatch");
    } catch (const std::runtime_error& e) {
        const std::string msg = e.what();
        CHECK(msg.find("mismatch") != std::string::npos);
        CHECK(msg.find("enc1.block.entry.weight") != std::string::npos);
    }
}

TEST_CASE("history CSV carries the fixed header and blank val fields") {
    std::vector<EpochRow> history(2);
    history[0].epoch = 1;
    history[0].loss = 0.5;
    history[1].epoch = 2;
    history[1].loss = 0.25;
    MetricsReport r;
    r.dice = 0.75;
    r.iou = 0.6;
    history[1].val = r;
    history[1].val_assd_undefined = 2;
    const std::string csv = history_to_csv(history);
    CHECK(csv.find("epoch,loss,val_dice,val_iou,val_assd,val_assd_undefined\n") == 0);
    CHECK(csv.find("1,0.5,,,,\n") != std::string::npos);
    CHECK(csv.find("2,0.25,0.75,0.6,,2\n") != std::string::npos);
}
