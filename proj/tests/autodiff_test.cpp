#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "hunet/gradcheck.hpp"
#include "hunet/graph.hpp"
#include "hunet/ops.hpp"
#include "test_util.hpp"

using namespace hunet;
using Td = Tensor<double>;

TEST_CASE("shape and tensor invariants") {
    const Shape s{2, 3, 4, 5};
    CHECK(s.numel() == 120);
    Td t(s);
    CHECK(t.data.size() == 120);
    CHECK_THROWS(Td(Shape{0, 1, 1, 1}));
    CHECK_THROWS(Td(Shape{1, 1, 2, 2}, std::vector<double>{1.0, 2.0, 3.0}));
    CHECK(Td::scalar(4.0).item() == 4.0);
    CHECK_THROWS(Td::ones(Shape{1, 1, 2, 2}).item());
}

TEST_CASE("elementwise_add values") {
    CHECK(add(Td::zeros({1, 1, 2, 2}), Td::zeros({1, 1, 2, 2})).data == Td::zeros({1, 1, 2, 2}).data);

    const Td a({1, 1, 2, 2}, {1, 2, 3, 4});
    const Td b({1, 1, 2, 2}, {4, 3, 2, 1});
    const Td c = add(a, b);
    for (double v : c.data) CHECK(v == 5.0);

    // mismatched shapes rejected with both shapes in the message
    try {
        add(Td::zeros({1, 2, 3, 3}), Td::zeros({1, 2, 4, 4}));
        FAIL("expected shape mismatch");
    } catch (const std::invalid_argument& e) {
        const std::string msg = e.what();
        CHECK(msg.find("[1,2,3,3]") != std::string::npos);
        CHECK(msg.find("[1,2,4,4]") != std::string::npos);
    }
}

TEST_CASE("elementwise_add gradient is ones for both inputs, exactly") {
    Rng rng(11);
    const Td a0 = oracle::random_tensor<double>({2, 3, 4, 4}, rng);
    const Td b0 = oracle::random_tensor<double>({2, 3, 4, 4}, rng);
    Graph<double> g;
    Td a = g.input(a0), b = g.input(b0);
    g.backward(reduce_sum(add(a, b)));
    const Td ga = g.adjoint(a), gb = g.adjoint(b);
    for (double v : ga.data) CHECK(v == 1.0);
    CHECK(ga.data == gb.data);  // linearity: identical gradients, exactly

    // finite-difference agreement
    const auto fd = finite_difference_check<double>(
        [&](const Td& x) { return reduce_sum(add(x, b0)); }, a0, 1e-3);
    CHECK(fd.max_rel_err < 1e-4);
}

TEST_CASE("elementwise_mul identity and broadcast") {
    Rng rng(12);
    const Td a = oracle::random_tensor<double>({1, 3, 2, 2}, rng);
    CHECK(mul(a, Td::ones(a.shape)).data == a.data);

    const Td twos = Td::full({1, 2, 2, 2}, 2.0);
    const Td half = Td::full({1, 1, 2, 2}, 0.5);
    for (double v : mul(twos, half).data) CHECK(v == 1.0);

    CHECK_THROWS(mul(Td::zeros({1, 2, 2, 2}), Td::zeros({1, 3, 2, 2})));
    CHECK_THROWS(mul(Td::zeros({1, 2, 2, 2}), Td::zeros({1, 1, 3, 3})));
}

TEST_CASE("elementwise_mul gradients (same shape and broadcast)") {
    Rng rng(13);
    const Td a0 = oracle::random_tensor<double>({1, 4, 3, 3}, rng);
    const Td b0 = oracle::random_tensor<double>({1, 1, 3, 3}, rng);
    auto fd_a = finite_difference_check<double>(
        [&](const Td& x) { return reduce_sum(mul(x, b0)); }, a0, 1e-3);
    CHECK(fd_a.max_rel_err < 1e-4);
    auto fd_b = finite_difference_check<double>(
        [&](const Td& x) { return reduce_sum(mul(a0, x)); }, b0, 1e-3);
    CHECK(fd_b.max_rel_err < 1e-4);
}

TEST_CASE("reduce_sum values match a plain accumulation loop") {
    CHECK(reduce_sum(Td::zeros({2, 2, 2, 2})).item() == 0.0);
    CHECK(reduce_sum(Td::ones({1, 1, 3, 3})).item() == 9.0);

    Rng rng(14);
    const Td t = oracle::random_tensor<double>({2, 3, 5, 7}, rng);
    double expect = 0.0;
    for (double v : t.data) expect += v;
    CHECK(reduce_sum(t).item() == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("backward: gradient of sum is ones; of sum of squares is 2p") {
    Rng rng(15);
    Param<double> p("p", oracle::random_tensor<double>({1, 2, 3, 3}, rng));

    {
        Graph<double> g;
        g.backward(reduce_sum(p.use(&g)));
        CHECK(p.grad.shape == p.value.shape);
        for (double v : p.grad.data) CHECK(v == 1.0);
    }
    p.zero_grad();
    {
        Graph<double> g;
        Td t = p.use(&g);
        g.backward(reduce_sum(mul(t, t)));
        for (std::size_t i = 0; i < p.grad.data.size(); ++i)
            CHECK(p.grad.data[i] == doctest::Approx(2.0 * p.value.data[i]).epsilon(1e-12));
    }
}

TEST_CASE("backward rejects non-scalar loss and foreign tensors") {
    Graph<double> g;
    Td t = g.input(Td::ones({1, 1, 2, 2}));
    CHECK_THROWS(g.backward(t));                 // non-scalar
    CHECK_THROWS(g.backward(Td::scalar(1.0)));   // untracked
}

TEST_CASE("running backward twice without zeroing doubles gradients exactly") {
    Rng rng(16);
    Param<double> p("p", oracle::random_tensor<double>({1, 1, 4, 4}, rng));
    Graph<double> g;
    Td t = p.use(&g);
    Td loss = reduce_sum(mul(t, t));
    g.backward(loss);
    const std::vector<double> once = p.grad.data;
    g.backward(loss);
    for (std::size_t i = 0; i < once.size(); ++i) CHECK(p.grad.data[i] == 2.0 * once[i]);
}

TEST_CASE("parameters unreachable from the loss keep zero gradients") {
    Rng rng(17);
    Param<double> used("used", oracle::random_tensor<double>({1, 1, 2, 2}, rng));
    Param<double> unused("unused", oracle::random_tensor<double>({1, 1, 2, 2}, rng));
    Graph<double> g;
    Td a = used.use(&g);
    Td b = unused.use(&g);  // watched but not consumed by the loss
    (void)b;
    g.backward(reduce_sum(a));
    for (double v : unused.grad.data) CHECK(v == 0.0);
    for (double v : used.grad.data) CHECK(v == 1.0);
}

TEST_CASE("finite_difference_check calibrates on linear and quadratic cases") {
    Rng rng(18);
    const Td x0 = oracle::random_tensor<double>({1, 2, 3, 3}, rng);

    // linear: exact within machine precision
    auto lin = finite_difference_check<double>([](const Td& x) { return reduce_sum(x); }, x0, 1e-3);
    CHECK(lin.max_rel_err < 1e-9);

    // quadratic: analytic 2x, central differences exact up to rounding
    auto quad = finite_difference_check<double>(
        [](const Td& x) { return reduce_sum(mul(x, x)); }, Td::ones({1, 1, 3, 3}), 1e-3);
    CHECK(quad.max_rel_err < 1e-9);

    CHECK_THROWS(finite_difference_check<double>([](const Td& x) { return reduce_sum(x); }, x0, 0.0));
}

namespace {

// Deliberately wrong backward rule: forward doubles, backward claims slope 3.
Td broken_double(const Td& a) {
    Td out(a.shape);
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = 2.0 * a.data[i];
    if (Graph<double>* g = a.graph) {
        out.graph = g;
        out.node = g->record(out.shape, [pa = a.node](Graph<double>& gr, const Td& up) {
            Td ga(up.shape);
            for (std::size_t i = 0; i < ga.data.size(); ++i) ga.data[i] = 3.0 * up.data[i];
            gr.add_grad(pa, ga);
        });
    }
    return out;
}

}  // namespace

TEST_CASE("gradcheck harness flags a broken backward rule") {
    Rng rng(19);
    const Td x0 = oracle::random_tensor<double>({1, 1, 3, 3}, rng);
    auto fd = finite_difference_check<double>(
        [](const Td& x) { return reduce_sum(broken_double(x)); }, x0, 1e-3);
    CHECK(fd.max_rel_err > 1e-4);  // 3 vs 2: rel err 0.2
    CHECK(fd.worst_index >= 0);

    // step refinement cannot launder a systematic slope error
    auto refined = finite_difference_check<double>(
        [](const Td& x) { return reduce_sum(broken_double(x)); }, x0, 1e-3, 1e-4);
    CHECK(refined.max_rel_err > 1e-4);
}

TEST_CASE("step refinement resolves kink crossings without hiding curvature") {
    // |x| has a kink at 0; an element sitting just inside the base window
    // fails at step 1e-3 and passes once the window shrinks past the kink
    auto absfn = [](const Td& x) {
        Td out = leaky_relu(x, -1.0);  // |x| via slope -1 on the negative side
        return reduce_sum(out);
    };
    Td x0({1, 1, 1, 3}, {0.5, -0.4, 2e-4});
    auto base = finite_difference_check<double>(absfn, x0, 1e-3);
    CHECK(base.max_rel_err > 1e-4);  // the 2e-4 element straddles the kink
    auto refined = finite_difference_check<double>(absfn, x0, 1e-3, 1e-4);
    CHECK(refined.max_rel_err < 1e-4);
}

TEST_CASE("non-finite op outputs are reported with the offending index") {
    Td a = Td::ones({1, 1, 2, 2});
    Td b = Td::zeros({1, 1, 2, 2});
    b.data[2] = 1.0;  // division by zero elsewhere
    try {
        div(a, b);
        FAIL("expected non-finite report");
    } catch (const std::runtime_error& e) {
        const std::string msg = e.what();
        CHECK(msg.find("elementwise_div") != std::string::npos);
        CHECK(msg.find("element") != std::string::npos);
    }
}

TEST_CASE("deterministic tensor creation from a seed") {
    Rng r1(99), r2(99);
    const Td a = Td::uniform({2, 2, 3, 3}, r1, -1.0, 1.0);
    const Td b = Td::uniform({2, 2, 3, 3}, r2, -1.0, 1.0);
    CHECK(a.data == b.data);
}

TEST_CASE("scale, add_const, div scalar plumbing") {
    const Td s = Td::scalar(6.0);
    CHECK(scale(s, 0.5).item() == 3.0);
    CHECK(add_const(s, 1.5).item() == 7.5);
    CHECK(div(s, Td::scalar(3.0)).item() == 2.0);

    Rng rng(20);
    const Td x0 = oracle::random_tensor<double>({1, 1, 2, 2}, rng, 0.5, 1.5);
    auto fd = finite_difference_check<double>(
        [](const Td& x) { return div(reduce_sum(x), add_const(reduce_sum(mul(x, x)), 1.0)); }, x0, 1e-3);
    CHECK(fd.max_rel_err < 1e-4);
}

TEST_CASE("concat_channels round trip and gradient") {
    Rng rng(21);
    const Td a0 = oracle::random_tensor<double>({2, 2, 3, 3}, rng);
    const Td b0 = oracle::random_tensor<double>({2, 3, 3, 3}, rng);
    const Td c = concat_channels(a0, b0);
    CHECK(c.shape == Shape{2, 5, 3, 3});
    CHECK(c.at(1, 1, 2, 2) == a0.at(1, 1, 2, 2));
    CHECK(c.at(1, 4, 0, 1) == b0.at(1, 2, 0, 1));

    const Td q = oracle::random_tensor<double>({2, 5, 3, 3}, rng);
    auto fd = finite_difference_check<double>(
        [&](const Td& x) { return reduce_sum(mul(concat_channels(x, b0), q)); }, a0, 1e-3);
    CHECK(fd.max_rel_err < 1e-4);
    auto fd_b = finite_difference_check<double>(
        [&](const Td& x) { return reduce_sum(mul(concat_channels(a0, x), q)); }, b0, 1e-3);
    CHECK(fd_b.max_rel_err < 1e-4);
}
