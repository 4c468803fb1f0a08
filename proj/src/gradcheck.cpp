#include "hunet/gradcheck.hpp"

#include <algorithm>
#include <map>

#include "hunet/loss.hpp"
#include "hunet/model.hpp"

namespace hunet {

namespace {

using Td = Tensor<double>;
using Fn = std::function<Td(const Td&)>;

struct Suite {
    std::vector<OpCheck> rows;
    std::map<std::string, std::size_t> index;
    Rng rng;

    explicit Suite(std::uint64_t seed) : rng(seed) {}

    void merge(const std::string& op, const FdResult<double>& r) {
        auto it = index.find(op);
        if (it == index.end()) {
            index[op] = rows.size();
            rows.push_back({op, r.max_rel_err, r.worst_index, r.max_rel_err < kGradcheckTolerance});
            return;
        }
        OpCheck& row = rows[it->second];
        if (r.max_rel_err > row.max_rel_err) {
            row.max_rel_err = r.max_rel_err;
            row.worst_index = r.worst_index;
        }
        row.pass = row.max_rel_err < kGradcheckTolerance;
    }

    void check(const std::string& op, const Fn& fn, const Td& x0) {
        merge(op, finite_difference_check<double>(fn, x0, kGradcheckStep, kGradcheckTolerance));
    }

    Td random(Shape s, double lo = -1.0, double hi = 1.0) { return Td::uniform(s, rng, lo, hi); }

    // Values with pairwise gaps well above the FD step, for kinked ops.
    Td spaced(Shape s) {
        std::vector<double> vals(static_cast<std::size_t>(s.numel()));
        for (std::size_t i = 0; i < vals.size(); ++i) vals[i] = 0.05 * static_cast<double>(i) - 1.0;
        rng.shuffle(vals);
        return Td(s, std::move(vals));
    }

    // Magnitudes in [0.1, 1] with random sign, keeping clear of the kink at 0.
    Td off_kink(Shape s) {
        Td t(s);
        for (auto& v : t.data) v = rng.uniform(0.1, 1.0) * (rng.range(0, 1) ? 1.0 : -1.0);
        return t;
    }

    Td binary(Shape s) {
        Td t(s);
        for (auto& v : t.data) v = static_cast<double>(rng.range(0, 1));
        return t;
    }
};

Td sum_of(Td t) { return reduce_sum(t); }

void check_elementwise(Suite& s) {
    const Shape shapes[] = {{1, 2, 3, 3}, {2, 3, 4, 4}, {1, 1, 5, 7}};
    for (const Shape& sh : shapes) {
        {
            const Td b = s.random(sh);
            s.check("elementwise_add", [&](const Td& a) { return sum_of(mul(add(a, b), b)); }, s.random(sh));
        }
        {
            const Td b = s.random(sh);
            s.check("elementwise_mul", [&](const Td& a) { return sum_of(mul(a, b)); }, s.random(sh));
            const Td a = s.random(sh);
            s.check("elementwise_mul", [&](const Td& bb) { return sum_of(mul(a, bb)); }, s.random(sh));
        }
        {
            const Td b = s.random(sh, 0.5, 1.5);
            s.check("elementwise_div", [&](const Td& a) { return sum_of(div(a, b)); }, s.random(sh));
            const Td a = s.random(sh);
            s.check("elementwise_div", [&](const Td& bb) { return sum_of(div(a, bb)); }, s.random(sh, 0.5, 1.5));
        }
        s.check("scale", [](const Td& a) { return sum_of(mul(scale(a, 1.7), a)); }, s.random(sh));
        s.check("add_const", [](const Td& a) { return sum_of(mul(add_const(a, 0.3), a)); }, s.random(sh));
        s.check("reduce_sum", [](const Td& a) { return reduce_sum(a); }, s.random(sh));
        {
            const Td b = s.random(Shape{sh.n, 2, sh.h, sh.w});
            s.check("concat_channels", [&](const Td& a) { return sum_of(mul(concat_channels(a, b), concat_channels(a, b))); },
                    s.random(sh));
        }
    }
    // channel-broadcast multiply, both operands
    const Shape pairs[][2] = {{{1, 4, 3, 3}, {1, 1, 3, 3}}, {{2, 3, 2, 4}, {2, 1, 2, 4}}, {{1, 2, 5, 5}, {1, 1, 5, 5}}};
    for (const auto& p : pairs) {
        const Td b = s.random(p[1]);
        s.check("elementwise_mul_broadcast", [&](const Td& a) { return sum_of(mul(a, b)); }, s.random(p[0]));
        const Td a = s.random(p[0]);
        s.check("elementwise_mul_broadcast", [&](const Td& bb) { return sum_of(mul(a, bb)); }, s.random(p[1]));
    }
}

void check_convolutions(Suite& s) {
    struct Case {
        Shape x, w;
        int stride, pad;
    };
    const Case conv_cases[] = {
        {{1, 3, 8, 8}, {4, 3, 3, 3}, 1, 0},
        {{2, 2, 5, 5}, {3, 2, 3, 3}, 1, 1},
        {{1, 2, 7, 7}, {2, 2, 3, 3}, 2, 1},
    };
    for (const auto& c : conv_cases) {
        const Td w = s.random(c.w, -0.5, 0.5);
        const Td b = s.random(Shape{1, c.w.n, 1, 1}, -0.2, 0.2);
        s.check("conv2d", [&](const Td& x) { return sum_of(conv2d(x, w, &b, c.stride, c.pad)); }, s.random(c.x));
        const Td x = s.random(c.x);
        s.check("conv2d", [&](const Td& ww) { return sum_of(conv2d(x, ww, &b, c.stride, c.pad)); }, s.random(c.w, -0.5, 0.5));
        s.check("conv2d", [&](const Td& bb) { return sum_of(conv2d(x, w, &bb, c.stride, c.pad)); },
                s.random(Shape{1, c.w.n, 1, 1}, -0.2, 0.2));
    }
    const Case dw_cases[] = {
        {{1, 3, 6, 6}, {3, 1, 3, 3}, 1, 1},
        {{2, 2, 5, 5}, {2, 1, 3, 3}, 1, 1},
        {{1, 4, 7, 7}, {4, 1, 3, 3}, 1, 0},
    };
    for (const auto& c : dw_cases) {
        const Td w = s.random(c.w, -0.5, 0.5);
        s.check("depthwise_conv2d", [&](const Td& x) { return sum_of(depthwise_conv2d(x, w, c.stride, c.pad)); },
                s.random(c.x));
        const Td x = s.random(c.x);
        s.check("depthwise_conv2d", [&](const Td& ww) { return sum_of(depthwise_conv2d(x, ww, c.stride, c.pad)); },
                s.random(c.w, -0.5, 0.5));
    }
    const Shape pw_cases[][2] = {{{1, 4, 5, 5}, {2, 4, 1, 1}}, {{2, 2, 3, 3}, {5, 2, 1, 1}}, {{1, 3, 4, 6}, {3, 3, 1, 1}}};
    for (const auto& c : pw_cases) {
        const Td w = s.random(c[1], -0.5, 0.5);
        const Td b = s.random(Shape{1, c[1].n, 1, 1}, -0.2, 0.2);
        s.check("pointwise_conv2d", [&](const Td& x) { return sum_of(pointwise_conv2d(x, w, &b)); }, s.random(c[0]));
        const Td x = s.random(c[0]);
        s.check("pointwise_conv2d", [&](const Td& ww) { return sum_of(pointwise_conv2d(x, ww, &b)); },
                s.random(c[1], -0.5, 0.5));
    }
}

void check_norm_and_activations(Suite& s) {
    struct GnCase {
        Shape x;
        int groups;
    };
    const GnCase gn_cases[] = {{{2, 8, 4, 4}, 4}, {{1, 4, 3, 3}, 2}, {{1, 6, 2, 2}, 3}};
    for (const auto& c : gn_cases) {
        const Td gamma = s.random(Shape{1, c.x.c, 1, 1}, 0.5, 1.5);
        const Td beta = s.random(Shape{1, c.x.c, 1, 1}, -0.3, 0.3);
        const Td q = s.random(c.x);
        s.check("group_norm", [&](const Td& x) { return sum_of(mul(group_norm(x, gamma, beta, c.groups, 1e-5), q)); },
                s.random(c.x));
        const Td x = s.random(c.x);
        s.check("group_norm", [&](const Td& g) { return sum_of(mul(group_norm(x, g, beta, c.groups, 1e-5), x)); },
                s.random(Shape{1, c.x.c, 1, 1}, 0.5, 1.5));
        s.check("group_norm", [&](const Td& b) { return sum_of(mul(group_norm(x, gamma, b, c.groups, 1e-5), x)); },
                s.random(Shape{1, c.x.c, 1, 1}, -0.3, 0.3));
    }
    const Shape act_shapes[] = {{1, 2, 3, 3}, {2, 1, 4, 5}, {1, 3, 2, 2}};
    for (const Shape& sh : act_shapes) {
        const Td q = s.random(sh);
        s.check("leaky_relu", [&](const Td& x) { return sum_of(mul(leaky_relu(x, 0.01), q)); }, s.off_kink(sh));
        s.check("sigmoid", [&](const Td& x) { return sum_of(mul(sigmoid(x), q)); }, s.random(sh, -3.0, 3.0));
    }
}

void check_pooling(Suite& s) {
    const Shape up_shapes[] = {{1, 2, 3, 3}, {2, 1, 2, 4}, {1, 3, 1, 1}};
    for (const Shape& sh : up_shapes) {
        const Td q = s.random(Shape{sh.n, sh.c, 2 * sh.h, 2 * sh.w});
        s.check("upsample_nearest_2x", [&](const Td& x) { return sum_of(mul(upsample_nearest_2x(x), q)); },
                s.random(sh));
    }
    const Shape mp_shapes[] = {{1, 2, 4, 4}, {1, 1, 6, 6}, {2, 3, 4, 6}};
    for (const Shape& sh : mp_shapes) {
        const Td q = s.random(Shape{sh.n, sh.c, sh.h / 2, sh.w / 2});
        s.check("max_pool_2x", [&](const Td& x) { return sum_of(mul(max_pool_2x(x), q)); }, s.spaced(sh));
    }
    const Shape ap_shapes[] = {{1, 2, 4, 4}, {2, 3, 4, 6}, {1, 4, 6, 6}};
    for (const Shape& sh : ap_shapes) {
        AttnPoolParams<double> pool = make_attn_pool<double>("gc.pool", sh.c);
        Rng prng(s.rng.next_u64());
        pool.score_weight.value = Td::uniform(Shape{1, sh.c, 1, 1}, prng, -0.8, 0.8);
        pool.score_bias.value = Td::uniform(Shape{1, 1, 1, 1}, prng, -0.2, 0.2);
        const Td q = s.random(Shape{sh.n, sh.c, sh.h / 2, sh.w / 2});
        s.check("attention_pool_2x", [&](const Td& x) { return sum_of(mul(attention_pool_2x(x.graph, x, pool), q)); },
                s.random(sh));
        const Td x = s.random(sh);
        auto loss_fn = [&](Graph<double>* g) { return sum_of(mul(attention_pool_2x(g, x, pool), q)); };
        s.merge("attention_pool_2x", finite_difference_check_param<double>(loss_fn, pool.score_weight, kGradcheckStep, kGradcheckTolerance));
        s.merge("attention_pool_2x", finite_difference_check_param<double>(loss_fn, pool.score_bias, kGradcheckStep, kGradcheckTolerance));
    }
}

void check_gate_and_block(Suite& s) {
    for (int c : {4, 6, 8}) {
        Rng grng(s.rng.next_u64());
        AttentionGate<double> gate = AttentionGate<double>::make("gc.gate", c, c, 0.01, grng);
        const Shape sh{1, c, 4, 4};
        const Td gating = s.random(sh);
        s.check("attention_gate", [&](const Td& skip) { return sum_of(gate.forward(skip.graph, skip, gating)); },
                s.random(sh));
        const Td skip = s.random(sh);
        auto loss_fn = [&](Graph<double>* g) { return sum_of(gate.forward(g, skip, gating)); };
        s.merge("attention_gate", finite_difference_check_param<double>(loss_fn, gate.psi.weight, kGradcheckStep, kGradcheckTolerance));
        s.merge("attention_gate", finite_difference_check_param<double>(loss_fn, gate.wg.weight, kGradcheckStep, kGradcheckTolerance));
    }
    for (bool residual : {true, false}) {
        Rng brng(s.rng.next_u64());
        BlockConfig bc;
        bc.c_in = 3;
        bc.c_out = 4;
        bc.depth = 2;
        bc.gn_groups = 2;
        bc.residual = residual;
        BasicBlock<double> block = BasicBlock<double>::make("gc.block", bc, brng);
        const Shape sh{1, 3, 4, 4};
        s.check("basic_block", [&](const Td& x) { return sum_of(block.forward(x.graph, x)); }, s.random(sh));
        const Td x = s.random(sh);
        auto loss_fn = [&](Graph<double>* g) { return sum_of(block.forward(g, x)); };
        s.merge("basic_block", finite_difference_check_param<double>(loss_fn, block.entry.weight, kGradcheckStep, kGradcheckTolerance));
        s.merge("basic_block", finite_difference_check_param<double>(loss_fn, block.layers[0].ds.dw.weight, kGradcheckStep, kGradcheckTolerance));
        s.merge("basic_block", finite_difference_check_param<double>(loss_fn, block.layers[1].gn.gamma, kGradcheckStep, kGradcheckTolerance));
    }
}

void check_losses(Suite& s) {
    const Shape shapes[] = {{1, 1, 4, 4}, {2, 1, 3, 3}, {1, 1, 8, 8}};
    for (const Shape& sh : shapes) {
        const Td target = s.binary(sh);
        s.check("soft_dice_loss", [&](const Td& logits) { return soft_dice_loss(logits, target); },
                s.random(sh, -2.0, 2.0));
        s.check("bce_loss", [&](const Td& logits) { return bce_loss(logits, target); }, s.random(sh, -2.0, 2.0));
    }
}

void check_model(Suite& s, int size, int levels) {
    ModelConfig cfg;
    cfg.levels = levels;
    cfg.channels.clear();
    for (int i = 0; i < levels; ++i) cfg.channels.push_back(4 << i);
    cfg.bottleneck = 4 << levels;
    cfg.block_depth = 2;
    cfg.pooling = PoolKind::attention;
    cfg.residual = true;
    cfg.attention_gates = true;
    if (size % (1 << levels) != 0)
        throw std::invalid_argument("gradcheck: size " + std::to_string(size) +
                                    " not divisible by 2^levels = " + std::to_string(1 << levels));

    HybridUNet<double> model(cfg, s.rng.next_u64());
    const Shape in{1, 1, size, size};
    const Td target = s.binary(Shape{1, 1, size, size});
    const Td x0 = s.random(in, 0.0, 1.0);

    s.check("model_end_to_end",
            [&](const Td& x) { return soft_dice_loss(model.forward(x.graph, x), target); }, x0);
    auto loss_fn = [&](Graph<double>* g) { return soft_dice_loss(model.forward(g, x0), target); };
    for (Param<double>* p : model.params())
        s.merge("model_end_to_end", finite_difference_check_param<double>(loss_fn, *p, kGradcheckStep, kGradcheckTolerance));
}

}  // namespace

std::vector<OpCheck> run_gradcheck_suite(int size, int levels, std::uint64_t seed) {
    Suite s(seed);
    check_elementwise(s);
    check_convolutions(s);
    check_norm_and_activations(s);
    check_pooling(s);
    check_gate_and_block(s);
    check_losses(s);
    check_model(s, size, levels);
    return s.rows;
}

}  // namespace hunet
