#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <set>

#include "hunet/gradcheck.hpp"

using namespace hunet;

TEST_CASE("the repo-wide gradcheck suite passes in 64-bit mode") {
    const auto rows = run_gradcheck_suite(16, 2, 1);
    CHECK(rows.size() >= 12);

    std::set<std::string> ops;
    for (const auto& row : rows) {
        ops.insert(row.op);
        INFO(row.op, " max_rel_err=", row.max_rel_err);
        CHECK(row.pass);
        CHECK(row.max_rel_err < kGradcheckTolerance);
    }
    // every differentiable op family is represented
    for (const char* required :
         {"elementwise_add", "elementwise_mul", "elementwise_mul_broadcast", "reduce_sum",
          "concat_channels", "conv2d", "depthwise_conv2d", "pointwise_conv2d", "group_norm",
          "leaky_relu", "sigmoid", "upsample_nearest_2x", "max_pool_2x", "attention_pool_2x",
          "attention_gate", "basic_block", "soft_dice_loss", "bce_loss", "model_end_to_end"})
        CHECK(ops.count(required) == 1);
}

TEST_CASE("the suite is deterministic in its seed") {
    const auto a = run_gradcheck_suite(8, 1, 42);
    const auto b = run_gradcheck_suite(8, 1, 42);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].op == b[i].op);
        CHECK(a[i].max_rel_err == b[i].max_rel_err);
    }
}
