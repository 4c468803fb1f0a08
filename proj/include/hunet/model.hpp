#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "hunet/layers.hpp"

namespace hunet {

enum class PoolKind { max, attention };

inline std::string to_string(PoolKind k) { return k == PoolKind::max ? "max" : "attention"; }
inline PoolKind pool_kind_from_string(const std::string& s) {
    if (s == "max") return PoolKind::max;
    if (s == "attention") return PoolKind::attention;
    throw std::invalid_argument("unknown pooling kind '" + s + "' (expected max|attention)");
}

struct BlockConfig {
    int c_in = 0;
    int c_out = 0;
    int depth = 2;  // number of 3x3 DS layers after the 1x1 entry
    int gn_groups = 1;
    double leaky_slope = 0.01;
    bool residual = true;
};

// Basic CNN block: 1x1 entry conv to c_out, then `depth` layers of
// DS-conv -> GroupNorm -> LeakyReLU. With residual sums on, layer i consumes
// the elementwise sum of all previous layer outputs (including the entry);
// with them off it consumes the previous output alone. Emits the last layer.
template <typename T>
struct BasicBlock {
    BlockConfig cfg;
    Conv2dParams<T> entry;
    struct Layer {
        DsConvParams<T> ds;
        GroupNormParams<T> gn;
    };
    std::vector<Layer> layers;

    static BasicBlock make(const std::string& prefix, const BlockConfig& cfg, Rng& rng) {
        if (cfg.depth < 1) throw std::invalid_argument(prefix + ": block depth must be >= 1");
        if (cfg.c_out % cfg.gn_groups != 0)
            throw std::invalid_argument(prefix + ": c_out " + std::to_string(cfg.c_out) +
                                        " not divisible by gn groups " + std::to_string(cfg.gn_groups));
        BasicBlock b;
        b.cfg = cfg;
        b.entry = make_conv2d<T>(prefix + ".entry", cfg.c_in, cfg.c_out, 1, true, rng);
        for (int i = 1; i <= cfg.depth; ++i) {
            Layer l;
            l.ds = make_ds_conv<T>(prefix + ".ds" + std::to_string(i), cfg.c_out, cfg.c_out, 3, rng);
            l.gn = make_group_norm<T>(prefix + ".gn" + std::to_string(i), cfg.c_out, cfg.gn_groups);
            b.layers.push_back(std::move(l));
        }
        return b;
    }

    Tensor<T> forward(Graph<T>* g, const Tensor<T>& x) {
        if (x.shape.c != cfg.c_in)
            throw std::invalid_argument("basic_block: input channels " + std::to_string(x.shape.c) +
                                        " do not match configured " + std::to_string(cfg.c_in));
        Tensor<T> prev = conv2d(g, x, entry);  // x0
        Tensor<T> running_sum = prev;
        const T slope = static_cast<T>(cfg.leaky_slope);
        for (std::size_t i = 0; i < layers.size(); ++i) {
            const Tensor<T>& in = cfg.residual ? running_sum : prev;
            Tensor<T> out = leaky_relu(group_norm(g, depthwise_separable_conv(g, in, layers[i].ds), layers[i].gn), slope);
            if (cfg.residual && i + 1 < layers.size()) running_sum = add(running_sum, out);
            prev = out;
        }
        return prev;
    }

    void collect(std::vector<Param<T>*>& out) {
        out.push_back(&entry.weight);
        if (entry.bias) out.push_back(&*entry.bias);
        for (auto& l : layers) {
            out.push_back(&l.ds.dw.weight);
            out.push_back(&l.ds.pw.weight);
            if (l.ds.pw.bias) out.push_back(&*l.ds.pw.bias);
            out.push_back(&l.gn.gamma);
            out.push_back(&l.gn.beta);
        }
    }
};

// Additive soft-attention gate on a skip connection. Produces a single-channel
// map in (0,1) and reweights the skip features with it.
template <typename T>
struct AttentionGate {
    Conv2dParams<T> wg;   // gating path, 1x1
    Conv2dParams<T> wx;   // skip path, 1x1
    Conv2dParams<T> psi;  // to single channel, 1x1
    double leaky_slope = 0.01;

    static AttentionGate make(const std::string& prefix, int c_skip, int c_gate, double slope, Rng& rng) {
        const int c_int = std::max(c_skip / 2, 1);
        AttentionGate gate;
        gate.wg = make_conv2d<T>(prefix + ".wg", c_gate, c_int, 1, true, rng);
        gate.wx = make_conv2d<T>(prefix + ".wx", c_skip, c_int, 1, true, rng);
        gate.psi = make_conv2d<T>(prefix + ".psi", c_int, 1, 1, true, rng);
        gate.leaky_slope = slope;
        return gate;
    }

    // alpha = sigmoid(psi(LeakyReLU(wg*g + wx*skip))); returns skip (.) alpha.
    Tensor<T> forward(Graph<T>* g, const Tensor<T>& skip, const Tensor<T>& gating) {
        if (skip.shape.h != gating.shape.h || skip.shape.w != gating.shape.w)
            throw std::invalid_argument("attention_gate: spatial mismatch " + to_string(skip.shape) +
                                        " vs " + to_string(gating.shape));
        Tensor<T> a = add(conv2d(g, gating, wg), conv2d(g, skip, wx));
        Tensor<T> alpha = sigmoid(conv2d(g, leaky_relu(a, static_cast<T>(leaky_slope)), psi));
        return mul(skip, alpha);
    }

    void collect(std::vector<Param<T>*>& out) {
        for (Conv2dParams<T>* c : {&wg, &wx, &psi}) {
            out.push_back(&c->weight);
            if (c->bias) out.push_back(&*c->bias);
        }
    }
};

struct ModelConfig {
    int levels = 4;
    std::vector<int> channels = {16, 32, 64, 128};
    int bottleneck = 256;
    int block_depth = 2;
    PoolKind pooling = PoolKind::attention;
    bool residual = true;
    bool attention_gates = true;
    int in_channels = 1;
    int classes = 1;
    int gn_groups = 8;  // upper bound; per-block groups = min(gn_groups, c_out)
    double leaky_slope = 0.01;

    int block_groups(int c_out) const { return std::min(gn_groups, c_out); }

    void validate() const {
        if (levels < 1) throw std::invalid_argument("model config: levels must be >= 1");
        if (static_cast<int>(channels.size()) != levels)
            throw std::invalid_argument("model config: channels list has " + std::to_string(channels.size()) +
                                        " entries for " + std::to_string(levels) + " levels");
        for (std::size_t i = 0; i < channels.size(); ++i) {
            if (channels[i] < 1) throw std::invalid_argument("model config: channel counts must be positive");
            if (i > 0 && channels[i] <= channels[i - 1])
                throw std::invalid_argument("model config: channels must be strictly increasing down the encoder");
        }
        if (bottleneck <= channels.back())
            throw std::invalid_argument("model config: bottleneck channels must exceed the last encoder level");
        if (block_depth < 1) throw std::invalid_argument("model config: block_depth must be >= 1");
        if (in_channels < 1 || classes < 1)
            throw std::invalid_argument("model config: in_channels and classes must be >= 1");
        if (gn_groups < 1) throw std::invalid_argument("model config: gn_groups must be >= 1");
        auto check_divisible = [&](int c) {
            if (c % block_groups(c) != 0)
                throw std::invalid_argument("model config: channel count " + std::to_string(c) +
                                            " not divisible by group-norm groups " +
                                            std::to_string(block_groups(c)));
        };
        for (int c : channels) check_divisible(c);
        check_divisible(bottleneck);
    }
};

enum class Variant { dc, dc_rc, dc_rc_ap };

inline Variant variant_from_string(const std::string& s) {
    if (s == "dc") return Variant::dc;
    if (s == "dc-rc") return Variant::dc_rc;
    if (s == "dc-rc-ap") return Variant::dc_rc_ap;
    throw std::invalid_argument("unknown variant '" + s + "' (expected dc|dc-rc|dc-rc-ap)");
}

inline std::string variant_label(Variant v) {
    switch (v) {
        case Variant::dc: return "U-Net + DC";
        case Variant::dc_rc: return "U-Net + DC + RC";
        case Variant::dc_rc_ap: return "U-Net + DC + RC + Attention Pooling";
    }
    throw std::logic_error("variant_label: bad variant");
}

// The three ablation rows: depthwise convs only, plus residual sums, plus
// attention pooling. Residual sums add no parameters, so dc and dc-rc report
// identical counts.
inline ModelConfig make_ablation_variant(Variant v, ModelConfig base = ModelConfig{}) {
    switch (v) {
        case Variant::dc:
            base.residual = false;
            base.pooling = PoolKind::max;
            break;
        case Variant::dc_rc:
            base.residual = true;
            base.pooling = PoolKind::max;
            break;
        case Variant::dc_rc_ap:
            base.residual = true;
            base.pooling = PoolKind::attention;
            break;
    }
    return base;
}

// Encoder/decoder network with DS-conv blocks, optional attention-gated skip
// connections and optional attention pooling. Spatial extents are preserved
// end to end; the head emits per-pixel class logits.
template <typename T>
class HybridUNet {
public:
    HybridUNet(ModelConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
        cfg_.validate();
        Rng rng(seed);
        const int L = cfg_.levels;
        for (int i = 0; i < L; ++i) {
            const int c_in = i == 0 ? cfg_.in_channels : cfg_.channels[i - 1];
            const int c = cfg_.channels[i];
            EncLevel lvl;
            lvl.block = BasicBlock<T>::make("enc" + std::to_string(i) + ".block",
                                            block_cfg(c_in, c), rng);
            if (cfg_.pooling == PoolKind::attention)
                lvl.pool = make_attn_pool<T>("enc" + std::to_string(i) + ".pool", c);
            enc_.push_back(std::move(lvl));
        }
        bottleneck_ = BasicBlock<T>::make("bottleneck", block_cfg(cfg_.channels[L - 1], cfg_.bottleneck), rng);
        dec_.resize(static_cast<std::size_t>(L));
        for (int i = L - 1; i >= 0; --i) {
            const int c = cfg_.channels[i];
            const int c_deep = i == L - 1 ? cfg_.bottleneck : cfg_.channels[i + 1];
            DecLevel lvl;
            lvl.up_reduce = make_conv2d<T>("dec" + std::to_string(i) + ".up", c_deep, c, 1, true, rng);
            if (cfg_.attention_gates)
                lvl.gate = AttentionGate<T>::make("dec" + std::to_string(i) + ".gate", c, c,
                                                  cfg_.leaky_slope, rng);
            lvl.block = BasicBlock<T>::make("dec" + std::to_string(i) + ".block", block_cfg(2 * c, c), rng);
            dec_[static_cast<std::size_t>(i)] = std::move(lvl);
        }
        head_ = make_conv2d<T>("head", cfg_.channels[0], cfg_.classes, 1, true, rng);
        build_registry();
    }

    HybridUNet(const HybridUNet&) = delete;
    HybridUNet& operator=(const HybridUNet&) = delete;

    Tensor<T> forward(Graph<T>* g, const Tensor<T>& x) {
        if (x.shape.c != cfg_.in_channels)
            throw std::invalid_argument("model_forward: input has " + std::to_string(x.shape.c) +
                                        " channels, config expects " + std::to_string(cfg_.in_channels));
        const int div = 1 << cfg_.levels;
        if (x.shape.h % div != 0 || x.shape.w % div != 0)
            throw std::invalid_argument("model_forward: spatial extents " + to_string(x.shape) +
                                        " must be divisible by 2^levels = " + std::to_string(div));
        std::vector<Tensor<T>> skips;
        Tensor<T> feat = x;
        for (std::size_t i = 0; i < enc_.size(); ++i) {
            feat = enc_[i].block.forward(g, feat);
            skips.push_back(feat);
            feat = enc_[i].pool ? attention_pool_2x(g, feat, *enc_[i].pool) : max_pool_2x(feat);
        }
        feat = bottleneck_.forward(g, feat);
        for (int i = cfg_.levels - 1; i >= 0; --i) {
            DecLevel& lvl = dec_[static_cast<std::size_t>(i)];
            Tensor<T> up = conv2d(g, upsample_nearest_2x(feat), lvl.up_reduce);
            const Tensor<T>& skip = skips[static_cast<std::size_t>(i)];
            Tensor<T> fused = lvl.gate ? lvl.gate->forward(g, skip, up) : skip;
            feat = lvl.block.forward(g, concat_channels(fused, up));
        }
        return conv2d(g, feat, head_);
    }

    const ModelConfig& config() const { return cfg_; }
    std::vector<Param<T>*>& params() { return registry_; }
    const std::vector<Param<T>*>& params() const { return registry_; }

    Param<T>* find(const std::string& name) {
        for (Param<T>* p : registry_)
            if (p->name == name) return p;
        return nullptr;
    }

    std::int64_t param_total() const {
        std::int64_t total = 0;
        for (const Param<T>* p : registry_) total += p->value.numel();
        return total;
    }

    void zero_grads() {
        for (Param<T>* p : registry_) p->zero_grad();
    }

private:
    BlockConfig block_cfg(int c_in, int c_out) const {
        BlockConfig b;
        b.c_in = c_in;
        b.c_out = c_out;
        b.depth = cfg_.block_depth;
        b.gn_groups = cfg_.block_groups(c_out);
        b.leaky_slope = cfg_.leaky_slope;
        b.residual = cfg_.residual;
        return b;
    }

    void build_registry() {
        registry_.clear();
        for (auto& lvl : enc_) {
            lvl.block.collect(registry_);
            if (lvl.pool) {
                registry_.push_back(&lvl.pool->score_weight);
                registry_.push_back(&lvl.pool->score_bias);
            }
        }
        bottleneck_.collect(registry_);
        for (int i = cfg_.levels - 1; i >= 0; --i) {
            DecLevel& lvl = dec_[static_cast<std::size_t>(i)];
            registry_.push_back(&lvl.up_reduce.weight);
            if (lvl.up_reduce.bias) registry_.push_back(&*lvl.up_reduce.bias);
            if (lvl.gate) lvl.gate->collect(registry_);
            lvl.block.collect(registry_);
        }
        registry_.push_back(&head_.weight);
        if (head_.bias) registry_.push_back(&*head_.bias);

        std::set<std::string> names;
        for (Param<T>* p : registry_)
            if (!names.insert(p->name).second)
                throw std::logic_error("model registry: duplicate parameter name " + p->name);
    }

    struct EncLevel {
        BasicBlock<T> block;
        std::optional<AttnPoolParams<T>> pool;
    };
    struct DecLevel {
        Conv2dParams<T> up_reduce;
        std::optional<AttentionGate<T>> gate;
        BasicBlock<T> block;
    };

    ModelConfig cfg_;
    std::vector<EncLevel> enc_;
    BasicBlock<T> bottleneck_;
    std::vector<DecLevel> dec_;
    Conv2dParams<T> head_;
    std::vector<Param<T>*> registry_;
};

// --- parameter accounting -------------------------------------------------

struct ParamReport {
    struct Row {
        std::string layer;
        std::int64_t count;
    };
    std::vector<Row> rows;
    std::int64_t total = 0;
    // Same widths with each DS conv replaced by a standard 3x3 conv.
    std::int64_t standard_total = 0;
    double reduction_pct = 0.0;
};

namespace detail {

inline std::int64_t ds_count(std::int64_t k, std::int64_t c_in, std::int64_t c_out) {
    return k * k * c_in + c_in * c_out + c_out;
}
inline std::int64_t std_conv_count(std::int64_t k, std::int64_t c_in, std::int64_t c_out) {
    return k * k * c_in * c_out + c_out;
}

}  // namespace detail

// Closed-form per-layer parameter counts for a config, in the same structural
// walk order as HybridUNet's registry. `standard_equiv` swaps every DS conv
// for a standard 3x3 convolution of the same widths.
inline std::int64_t model_param_count(const ModelConfig& cfg, bool standard_equiv = false,
                                      std::vector<ParamReport::Row>* rows = nullptr) {
    cfg.validate();
    std::int64_t total = 0;
    auto emit = [&](const std::string& layer, std::int64_t count) {
        total += count;
        if (rows) rows->push_back({layer, count});
    };
    auto block = [&](const std::string& name, std::int64_t c_in, std::int64_t c_out) {
        std::int64_t count = c_in * c_out + c_out;  // 1x1 entry with bias
        for (int i = 0; i < cfg.block_depth; ++i) {
            count += standard_equiv ? detail::std_conv_count(3, c_out, c_out) : detail::ds_count(3, c_out, c_out);
            count += 2 * c_out;  // group norm
        }
        emit(name, count);
    };
    for (int i = 0; i < cfg.levels; ++i) {
        const std::int64_t c = cfg.channels[static_cast<std::size_t>(i)];
        block("enc" + std::to_string(i) + ".block", i == 0 ? cfg.in_channels : cfg.channels[static_cast<std::size_t>(i - 1)], c);
        if (cfg.pooling == PoolKind::attention) emit("enc" + std::to_string(i) + ".pool", c + 1);
    }
    block("bottleneck", cfg.channels.back(), cfg.bottleneck);
    for (int i = cfg.levels - 1; i >= 0; --i) {
        const std::int64_t c = cfg.channels[static_cast<std::size_t>(i)];
        const std::int64_t c_deep = i == cfg.levels - 1 ? cfg.bottleneck : cfg.channels[static_cast<std::size_t>(i + 1)];
        emit("dec" + std::to_string(i) + ".up", c_deep * c + c);
        if (cfg.attention_gates) {
            const std::int64_t c_int = std::max<std::int64_t>(c / 2, 1);
            emit("dec" + std::to_string(i) + ".gate",
                 (c * c_int + c_int) * 2 + (c_int * 1 + 1));
        }
        block("dec" + std::to_string(i) + ".block", 2 * c, c);
    }
    emit("head", static_cast<std::int64_t>(cfg.channels.front()) * cfg.classes + cfg.classes);
    return total;
}

inline ParamReport param_report(const ModelConfig& cfg) {
    ParamReport rep;
    rep.total = model_param_count(cfg, false, &rep.rows);
    rep.standard_total = model_param_count(cfg, true);
    rep.reduction_pct = 100.0 * (1.0 - static_cast<double>(rep.total) / static_cast<double>(rep.standard_total));
    return rep;
}

}  // namespace hunet
