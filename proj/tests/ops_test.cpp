#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "hunet/gradcheck.hpp"
#include "hunet/layers.hpp"
#include "hunet/ops.hpp"
#include "test_util.hpp"

using namespace hunet;
using Td = Tensor<double>;
using Tf = Tensor<float>;

namespace {

template <typename T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
    REQUIRE(a.shape == b.shape);
    double worst = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i)
        worst = std::max(worst, std::abs(static_cast<double>(a.data[i]) - static_cast<double>(b.data[i])));
    return worst;
}

}  // namespace

TEST_CASE("conv2d identity and counting kernels") {
    // 1x1 kernel of weight 1 is the identity
    Rng rng(31);
    const Td x = oracle::random_tensor<double>({1, 1, 4, 4}, rng);
    const Td w1 = Td::ones({1, 1, 1, 1});
    CHECK(conv2d<double>(x, w1, nullptr, 1, 0).data == x.data);

    // all-ones 3x3 kernel over an all-ones 3x3 input, no padding: a single 9
    const Td out = conv2d<double>(Td::ones({1, 1, 3, 3}), Td::ones({1, 1, 3, 3}), nullptr, 1, 0);
    CHECK(out.shape == Shape{1, 1, 1, 1});
    CHECK(out.item() == 9.0);
}

TEST_CASE("conv2d rejects bad inputs") {
    CHECK_THROWS(conv2d<double>(Td::ones({1, 2, 4, 4}), Td::ones({1, 3, 3, 3}), nullptr, 1, 0));  // channels
    CHECK_THROWS(conv2d<double>(Td::ones({1, 1, 2, 2}), Td::ones({1, 1, 3, 3}), nullptr, 1, 0));  // extent
    CHECK_THROWS(conv2d<double>(Td::ones({1, 1, 4, 4}), Td::ones({1, 1, 3, 3}), nullptr, 0, 0));  // stride
}

TEST_CASE("conv2d matches the naive nested-loop oracle on random shapes") {
    Rng rng(32);
    struct Case {
        Shape x;
        int oc, k, stride, pad;
    };
    const Case cases[] = {
        {{1, 3, 8, 8}, 4, 3, 1, 0}, {{2, 2, 6, 6}, 3, 3, 1, 1}, {{1, 4, 5, 7}, 2, 3, 1, 1},
        {{1, 1, 9, 9}, 5, 5, 1, 2}, {{2, 3, 7, 7}, 2, 3, 2, 1}, {{1, 2, 10, 6}, 3, 1, 1, 0},
    };
    for (const auto& c : cases) {
        const Td x = oracle::random_tensor<double>(c.x, rng);
        const Td w = oracle::random_tensor<double>({c.oc, c.x.c, c.k, c.k}, rng);
        const Td b = oracle::random_tensor<double>({1, c.oc, 1, 1}, rng);
        const Td got = conv2d(x, w, &b, c.stride, c.pad);
        const Td want = oracle::conv2d(x, w, &b, c.stride, c.pad);
        CHECK(max_abs_diff(got, want) < 1e-5);
    }
}

TEST_CASE("depthwise_conv2d identity filters and channel separation") {
    Rng rng(33);
    // centered delta filters reproduce the input under same padding
    const Td x = oracle::random_tensor<double>({1, 3, 5, 5}, rng);
    Td delta = Td::zeros({3, 1, 3, 3});
    for (int c = 0; c < 3; ++c) delta.at(c, 0, 1, 1) = 1.0;
    CHECK(max_abs_diff(depthwise_conv2d(x, delta, 1, 1), x) == 0.0);

    // zero input channel stays zero regardless of its filter
    Td x2 = oracle::random_tensor<double>({1, 2, 4, 4}, rng);
    for (int h = 0; h < 4; ++h)
        for (int w = 0; w < 4; ++w) x2.at(0, 0, h, w) = 0.0;
    const Td w2 = oracle::random_tensor<double>({2, 1, 3, 3}, rng);
    const Td out = depthwise_conv2d(x2, w2, 1, 1);
    for (int h = 0; h < 4; ++h)
        for (int w = 0; w < 4; ++w) CHECK(out.at(0, 0, h, w) == 0.0);

    CHECK_THROWS(depthwise_conv2d(Td::ones({1, 2, 4, 4}), Td::ones({3, 1, 3, 3}), 1, 1));
}

TEST_CASE("depthwise_conv2d matches the per-channel oracle; perturbation stays in-channel") {
    Rng rng(34);
    const Shape shapes[] = {{1, 3, 6, 6}, {2, 2, 5, 5}, {1, 4, 7, 7}, {1, 1, 8, 8}, {2, 5, 4, 6}};
    for (const Shape& s : shapes) {
        const Td x = oracle::random_tensor<double>(s, rng);
        const Td w = oracle::random_tensor<double>({s.c, 1, 3, 3}, rng);
        CHECK(max_abs_diff(depthwise_conv2d(x, w, 1, 1), oracle::depthwise_conv2d(x, w, 1, 1)) < 1e-5);
    }

    // channel isolation: changing input channel j changes only output channel j
    const Td x = oracle::random_tensor<double>({1, 3, 5, 5}, rng);
    const Td w = oracle::random_tensor<double>({3, 1, 3, 3}, rng);
    const Td base = depthwise_conv2d(x, w, 1, 1);
    Td poked = x.detached();
    poked.at(0, 1, 2, 2) += 0.5;
    const Td out = depthwise_conv2d(poked, w, 1, 1);
    for (int c = 0; c < 3; ++c)
        for (int h = 0; h < 5; ++h)
            for (int wx = 0; wx < 5; ++wx) {
                if (c == 1) continue;
                CHECK(out.at(0, c, h, wx) == base.at(0, c, h, wx));
            }
}

TEST_CASE("pointwise_conv2d identity, channel mean, and conv2d equivalence") {
    Rng rng(35);
    // identity mix
    Td eye = Td::zeros({3, 3, 1, 1});
    for (int c = 0; c < 3; ++c) eye.at(c, c, 0, 0) = 1.0;
    const Td x = oracle::random_tensor<double>({1, 3, 4, 4}, rng);
    CHECK(pointwise_conv2d<double>(x, eye, nullptr).data == x.data);

    // [0.5, 0.5] row gives the channel mean
    const Td x2 = oracle::random_tensor<double>({1, 2, 3, 3}, rng);
    const Td wmean = Td::full({1, 2, 1, 1}, 0.5);
    const Td mean = pointwise_conv2d<double>(x2, wmean, nullptr);
    for (int h = 0; h < 3; ++h)
        for (int w = 0; w < 3; ++w)
            CHECK(mean.at(0, 0, h, w) == doctest::Approx(0.5 * (x2.at(0, 0, h, w) + x2.at(0, 1, h, w))));

    // bit-for-bit the same code path as conv2d with k = 1
    for (int i = 0; i < 5; ++i) {
        const Shape s{1 + i % 2, 2 + i, 4, 5};
        const Td xi = oracle::random_tensor<double>(s, rng);
        const Td wi = oracle::random_tensor<double>({3, s.c, 1, 1}, rng);
        const Td bi = oracle::random_tensor<double>({1, 3, 1, 1}, rng);
        CHECK(pointwise_conv2d(xi, wi, &bi).data == conv2d(xi, wi, &bi, 1, 0).data);
    }
    CHECK_THROWS(pointwise_conv2d<double>(x, Td::ones({1, 3, 3, 3}), nullptr));
}

TEST_CASE("depthwise separable composition and single-channel collapse") {
    Rng rng(36);
    // identity depthwise + identity pointwise leaves the input unchanged
    Td delta = Td::zeros({2, 1, 3, 3});
    delta.at(0, 0, 1, 1) = 1.0;
    delta.at(1, 0, 1, 1) = 1.0;
    Td eye = Td::zeros({2, 2, 1, 1});
    eye.at(0, 0, 0, 0) = 1.0;
    eye.at(1, 1, 0, 0) = 1.0;
    const Td x = oracle::random_tensor<double>({1, 2, 5, 5}, rng);
    CHECK(max_abs_diff(pointwise_conv2d<double>(depthwise_conv2d(x, delta, 1, 1), eye, nullptr), x) == 0.0);

    // random composition matches composing the two oracles
    for (int i = 0; i < 5; ++i) {
        const Shape s{1, 3 + i % 3, 6, 6};
        const Td xi = oracle::random_tensor<double>(s, rng);
        const Td dw = oracle::random_tensor<double>({s.c, 1, 3, 3}, rng);
        const Td pw = oracle::random_tensor<double>({4, s.c, 1, 1}, rng);
        const Td pb = oracle::random_tensor<double>({1, 4, 1, 1}, rng);
        const Td got = pointwise_conv2d(depthwise_conv2d(xi, dw, 1, 1), pw, &pb);
        const Td want = oracle::conv2d(oracle::depthwise_conv2d(xi, dw, 1, 1), pw, &pb, 1, 0);
        CHECK(max_abs_diff(got, want) < 1e-5);
    }

    // with one input and output channel, DS conv collapses to a standard conv
    // whose kernel is the depthwise kernel scaled by the pointwise weight
    const Td x1 = oracle::random_tensor<double>({1, 1, 6, 6}, rng);
    const Td dw1 = oracle::random_tensor<double>({1, 1, 3, 3}, rng);
    const Td pw1 = Td::full({1, 1, 1, 1}, 0.7);
    const Td pb1 = Td::full({1, 1, 1, 1}, 0.2);
    Td collapsed = dw1.detached();
    for (auto& v : collapsed.data) v *= 0.7;
    const Td got = pointwise_conv2d(depthwise_conv2d(x1, dw1, 1, 1), pw1, &pb1);
    const Td want = conv2d(x1, collapsed, &pb1, 1, 1);
    CHECK(max_abs_diff(got, want) < 1e-12);
}

TEST_CASE("group_norm removes the mean and normalizes the variance") {
    Rng rng(37);
    const Td gamma = Td::ones({1, 4, 1, 1});
    const Td beta = Td::zeros({1, 4, 1, 1});

    // constant input: mean removal leaves zeros
    const Td constant = Td::full({1, 4, 3, 3}, 2.5);
    for (double v : group_norm(constant, gamma, beta, 2, 1e-5).data) CHECK(std::abs(v) < 1e-6);

    // per-group statistics: |mean| < 1e-5, |var - 1| < 1e-3
    const Td x = oracle::random_tensor<double>({2, 4, 6, 6}, rng);
    const Td out = group_norm(x, gamma, beta, 2, 1e-5);
    const int cg = 2, plane = 36, group_size = cg * plane;
    for (int n = 0; n < 2; ++n)
        for (int g = 0; g < 2; ++g) {
            double mean = 0, var = 0;
            for (int lc = 0; lc < cg; ++lc)
                for (int h = 0; h < 6; ++h)
                    for (int w = 0; w < 6; ++w) mean += out.at(n, g * cg + lc, h, w);
            mean /= group_size;
            for (int lc = 0; lc < cg; ++lc)
                for (int h = 0; h < 6; ++h)
                    for (int w = 0; w < 6; ++w) {
                        const double d = out.at(n, g * cg + lc, h, w) - mean;
                        var += d * d;
                    }
            var /= group_size;
            CHECK(std::abs(mean) < 1e-5);
            CHECK(std::abs(var - 1.0) < 1e-3);
        }

    CHECK_THROWS(group_norm(Td::ones({1, 6, 2, 2}), Td::ones({1, 6, 1, 1}), Td::zeros({1, 6, 1, 1}), 4, 1e-5));
}

TEST_CASE("group_norm gradients pass finite differences (spec case 2x8x4x4, 4 groups)") {
    Rng rng(38);
    const Td x0 = oracle::random_tensor<double>({2, 8, 4, 4}, rng);
    const Td gamma0 = oracle::random_tensor<double>({1, 8, 1, 1}, rng, 0.5, 1.5);
    const Td beta0 = oracle::random_tensor<double>({1, 8, 1, 1}, rng, -0.3, 0.3);
    const Td q = oracle::random_tensor<double>({2, 8, 4, 4}, rng);

    auto fd_x = finite_difference_check<double>(
        [&](const Td& x) { return reduce_sum(mul(group_norm(x, gamma0, beta0, 4, 1e-5), q)); }, x0, 1e-3);
    CHECK(fd_x.max_rel_err < 1e-4);
    auto fd_g = finite_difference_check<double>(
        [&](const Td& g) { return reduce_sum(mul(group_norm(x0, g, beta0, 4, 1e-5), q)); }, gamma0, 1e-3);
    CHECK(fd_g.max_rel_err < 1e-4);
    auto fd_b = finite_difference_check<double>(
        [&](const Td& b) { return reduce_sum(mul(group_norm(x0, gamma0, b, 4, 1e-5), q)); }, beta0, 1e-3);
    CHECK(fd_b.max_rel_err < 1e-4);
}

TEST_CASE("leaky_relu values") {
    const Td x({1, 1, 1, 3}, {-1.0, 0.0, 2.0});
    const Td out = leaky_relu(x, 0.01);
    CHECK(out.data[0] == doctest::Approx(-0.01));
    CHECK(out.data[1] == 0.0);
    CHECK(out.data[2] == 2.0);

    Rng rng(39);
    const Td r = oracle::random_tensor<double>({1, 2, 3, 3}, rng);
    CHECK(leaky_relu(r, 1.0).data == r.data);  // slope 1 is the identity
}

TEST_CASE("sigmoid midpoint and saturation without overflow") {
    CHECK(sigmoid(Td::scalar(0.0)).item() == 0.5);
    CHECK(sigmoid(Td::scalar(30.0)).item() == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(sigmoid(Td::scalar(-30.0)).item() == doctest::Approx(0.0).epsilon(1e-9));
    CHECK(std::abs(sigmoid(Td::scalar(-30.0)).item()) < 1e-9);
    // very large magnitudes stay finite
    CHECK(std::isfinite(sigmoid(Td::scalar(700.0)).item()));
    CHECK(std::isfinite(sigmoid(Td::scalar(-700.0)).item()));
}

TEST_CASE("upsample_nearest_2x replicates pixels and preserves 4x the sum") {
    const Td v = Td::scalar(3.25);
    const Td up = upsample_nearest_2x(v);
    CHECK(up.shape == Shape{1, 1, 2, 2});
    for (double x : up.data) CHECK(x == 3.25);

    Rng rng(40);
    const Td x = oracle::random_tensor<double>({2, 3, 4, 5}, rng);
    CHECK(reduce_sum(upsample_nearest_2x(x)).item() ==
          doctest::Approx(4.0 * reduce_sum(x).item()).epsilon(1e-12));
}

TEST_CASE("max_pool_2x values, tie routing, oracle agreement") {
    const Td x({1, 1, 2, 2}, {1, 2, 3, 4});
    CHECK(max_pool_2x(x).item() == 4.0);
    CHECK_THROWS(max_pool_2x(Td::ones({1, 1, 3, 4})));

    // constant input: gradient concentrates on the first window element
    Graph<double> g;
    Td in = g.input(Td::full({1, 1, 2, 2}, 7.0));
    g.backward(reduce_sum(max_pool_2x(in)));
    const Td grad = g.adjoint(in);
    CHECK(grad.data == std::vector<double>{1, 0, 0, 0});

    Rng rng(41);
    const Shape shapes[] = {{1, 2, 4, 4}, {2, 1, 6, 6}, {1, 3, 8, 4}, {2, 2, 4, 8}, {1, 1, 10, 10}};
    for (const Shape& s : shapes) {
        const Td xi = oracle::random_tensor<double>(s, rng);
        CHECK(max_abs_diff(max_pool_2x(xi), oracle::max_pool_2x(xi)) == 0.0);
    }
}

TEST_CASE("attention_pool_2x: zero scores give exact average pooling") {
    Rng rng(42);
    const Td x = oracle::random_tensor<double>({2, 3, 6, 6}, rng);
    const Td zero_logits = Td::zeros({2, 1, 6, 6});
    const Td pooled = window_softmax_pool_2x(x, zero_logits);
    for (int n = 0; n < 2; ++n)
        for (int c = 0; c < 3; ++c)
            for (int oh = 0; oh < 3; ++oh)
                for (int ow = 0; ow < 3; ++ow) {
                    const double avg = 0.25 * x.at(n, c, 2 * oh, 2 * ow) + 0.25 * x.at(n, c, 2 * oh, 2 * ow + 1) +
                                       0.25 * x.at(n, c, 2 * oh + 1, 2 * ow) + 0.25 * x.at(n, c, 2 * oh + 1, 2 * ow + 1);
                    CHECK(pooled.at(n, c, oh, ow) == avg);  // exact
                }
}

TEST_CASE("attention_pool_2x saturates to the max-scored pixel") {
    Rng rng(43);
    const Td x = oracle::random_tensor<double>({1, 2, 2, 2}, rng);
    Td logits = Td::zeros({1, 1, 2, 2});
    logits.at(0, 0, 1, 0) = 30.0;  // one pixel dominates the window
    const Td pooled = window_softmax_pool_2x(x, logits);
    CHECK(pooled.at(0, 0, 0, 0) == doctest::Approx(x.at(0, 0, 1, 0)).epsilon(1e-9));
    CHECK(pooled.at(0, 1, 0, 0) == doctest::Approx(x.at(0, 1, 1, 0)).epsilon(1e-9));
}

TEST_CASE("attention_pool_2x matches the per-window softmax oracle") {
    Rng rng(44);
    const Shape shapes[] = {{1, 2, 4, 4}, {2, 3, 4, 6}, {1, 4, 6, 6}, {1, 1, 8, 8}, {2, 2, 6, 4}};
    for (const Shape& s : shapes) {
        const Td x = oracle::random_tensor<double>(s, rng);
        const Td logits = oracle::random_tensor<double>({s.n, 1, s.h, s.w}, rng, -2.0, 2.0);
        CHECK(max_abs_diff(window_softmax_pool_2x(x, logits), oracle::attention_pool_2x(x, logits)) < 1e-5);
    }
    CHECK_THROWS(window_softmax_pool_2x(Td::ones({1, 1, 3, 3}), Td::ones({1, 1, 3, 3})));
    CHECK_THROWS(window_softmax_pool_2x(Td::ones({1, 1, 4, 4}), Td::ones({1, 2, 4, 4})));
}

TEST_CASE("param_count closed forms match element enumeration") {
    Rng rng(45);
    auto conv = make_conv2d<double>("t.conv", 64, 128, 3, true, rng);
    CHECK(param_count(conv) == 73856);
    CHECK(conv.weight.value.numel() + conv.bias->value.numel() == 73856);

    auto dw = make_depthwise<double>("t.dw", 64, 3, rng);
    CHECK(param_count(dw) == 576);
    CHECK(dw.weight.value.numel() == 576);

    auto gn = make_group_norm<double>("t.gn", 32, 8);
    CHECK(param_count(gn) == 64);
    CHECK(gn.gamma.value.numel() + gn.beta.value.numel() == 64);

    auto ds = make_ds_conv<double>("t.ds", 64, 128, 3, rng);
    CHECK(param_count(ds) == 8896);  // 576 + 8192 + 128
    CHECK(ds.dw.weight.value.numel() + ds.pw.weight.value.numel() + ds.pw.bias->value.numel() == 8896);

    auto pool = make_attn_pool<double>("t.pool", 16);
    CHECK(param_count(pool) == 17);
    CHECK(pool.score_weight.value.numel() + pool.score_bias.value.numel() == 17);

    CHECK_THROWS(make_conv2d<double>("t.bad", 4, 4, 2, false, rng));  // even kernel
}

TEST_CASE("parameter-reduction law for k=3") {
    Rng rng(46);
    for (int c : {16, 32, 64, 128}) {
        auto ds = make_ds_conv<double>("t", c, c, 3, rng);
        auto full = make_conv2d<double>("t2", c, c, 3, true, rng);
        const double ratio = static_cast<double>(param_count(ds)) / static_cast<double>(param_count(full));
        CHECK(ratio < 1.0 / 9.0 + 1.0 / c + 0.02);
        if (c == 64) CHECK(ratio < 0.13);
    }
}

TEST_CASE("every neural op passes a float-mode smoke forward") {
    // the engine is generic; exercise the float instantiation once
    Rng rng(47);
    const Tf x = Tf::uniform({1, 4, 8, 8}, rng, -1.0f, 1.0f);
    auto conv = make_conv2d<float>("f.conv", 4, 8, 3, true, rng, 1, 1);
    auto gn = make_group_norm<float>("f.gn", 8, 4);
    Graph<float> g;
    Tf out = leaky_relu(group_norm(&g, conv2d(&g, g.input(x), conv), gn), 0.01f);
    out = max_pool_2x(out);
    g.backward(reduce_sum(out));
    CHECK(conv.weight.grad.shape == conv.weight.value.shape);
}
