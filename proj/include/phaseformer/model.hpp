#pragma once

// Encoder-decoder restoration network.
//
//   input 3x3 conv -> per level: transformer blocks, [stride-2 3x3 conv] ->
//   bottleneck blocks -> per level (deepest-1 .. 1): x2 transposed conv,
//   concat with gated encoder skip, 1x1 reduce, transformer blocks ->
//   full-resolution 3x3 head and a x2 head (transposed conv + 3x3 conv).
//
// Level l (1-based) runs at 2^(l-1)*C channels and H/2^(l-1) x W/2^(l-1).
// Skips are taken from each encoder level's pre-downsampling output for
// levels 1..L-1.

#include <cmath>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "phaseformer/attention.hpp"
#include "phaseformer/config.hpp"
#include "phaseformer/conv.hpp"
#include "phaseformer/params.hpp"
#include "phaseformer/phase_skip.hpp"

namespace phaseformer {

template <typename T>
struct ModelOutput {
    Tensor<T> full_res;    // N,3,H,W
    Tensor<T> double_res;  // N,3,2H,2W
};

/// (name, shape) of intermediate activations, recorded when requested.
using ShapeTrace = std::vector<std::pair<std::string, Shape>>;

template <typename T>
class Phaseformer {
public:
    Phaseformer(ModelConfig config, std::uint64_t seed) : config_(std::move(config)) {
        config_.validate();
        Rng rng(derive_seed(seed, 0));
        build(rng);
    }

    const ModelConfig& config() const { return config_; }
    ParamStore<T>& params() { return store_; }
    const ParamStore<T>& params() const { return store_; }

    ModelOutput<T> forward(const Tensor<T>& x, ShapeTrace* trace = nullptr) const {
        detail::require_rank(x.shape(), 4, "Phaseformer::forward");
        if (x.dim(1) != 3) throw DimensionError("Phaseformer::forward: expected 3 input channels on axis 1");
        const std::size_t H = x.dim(2), W = x.dim(3);
        const std::size_t div = std::size_t{1} << (config_.levels - 1);
        if (!is_power_of_two(H) || !is_power_of_two(W) || H % div || W % div || H < div || W < div) {
            throw ConfigError("Phaseformer::forward: input " + std::to_string(H) + "x" + std::to_string(W) +
                              " must be powers of two divisible by " + std::to_string(div));
        }
        const auto opts = config_.block_options();
        auto record = [trace](const std::string& name, const Tensor<T>& t) {
            if (trace) trace->emplace_back(name, t.shape());
        };
        const std::size_t L = config_.levels;

        auto feat = conv2d_same(x, input_proj_);
        record("input_proj", feat);
        std::vector<Tensor<T>> skips(L);
        for (std::size_t l = 0; l < L; ++l) {
            for (const auto& b : enc_blocks_[l]) feat = pbtb(feat, b, opts);
            record("encoder." + std::to_string(l + 1), feat);
            skips[l] = feat;
            if (l + 1 < L) {
                feat = conv2d(feat, down_[l], 2, 1);
                record("encoder." + std::to_string(l + 1) + ".down", feat);
            }
        }
        for (const auto& b : bottleneck_) feat = pbtb(feat, b, opts);
        record("bottleneck", feat);

        for (std::size_t l = L - 1; l-- > 0;) {
            feat = conv_transpose2d(feat, up_[l], 2, (config_.upsample_kernel - 2) / 2);
            const auto gated = apply_skip(config_.skip_kind, skips[l], skip_gates_[l], config_.pem_differentiable);
            feat = conv2d(concat_channels(feat, gated), reduce_[l], 1, 0);
            for (const auto& b : dec_blocks_[l]) feat = pbtb(feat, b, opts);
            record("decoder." + std::to_string(l + 1), feat);
        }

        ModelOutput<T> out;
        out.full_res = conv2d_same(feat, head_full_);
        auto up = conv_transpose2d(feat, head_up_, 2, (config_.upsample_kernel - 2) / 2);
        out.double_res = conv2d_same(up, head_double_);
        record("head.full", out.full_res);
        record("head.double", out.double_res);
        return out;
    }

private:
    void build(Rng& rng) {
        const auto& c = config_;
        const std::size_t L = c.levels;
        input_proj_ = store_.add("input_proj.weight", conv_weight<T>(c.channels_at(0), 3, 3, rng));
        enc_blocks_.resize(L);
        dec_blocks_.resize(L);
        for (std::size_t l = 0; l < L; ++l) {
            const std::string lv = std::to_string(l + 1);
            for (std::size_t b = 0; b < c.blocks_per_level[l]; ++b) {
                enc_blocks_[l].push_back(BlockParams<T>::create(store_, "encoder." + lv + ".blocks." + std::to_string(b),
                                                                c.channels_at(l), c.heads_per_level[l], c.ffn_expansion,
                                                                rng));
            }
            if (l + 1 < L) {
                down_.push_back(store_.add("encoder." + lv + ".down.weight",
                                           conv_weight<T>(c.channels_at(l + 1), c.channels_at(l), 3, rng)));
            }
        }
        for (std::size_t b = 0; b < c.bottleneck_blocks; ++b) {
            bottleneck_.push_back(BlockParams<T>::create(store_, "bottleneck.blocks." + std::to_string(b),
                                                         c.channels_at(L - 1), c.heads_per_level[L - 1],
                                                         c.ffn_expansion, rng));
        }
        skip_gates_.resize(L - 1);
        up_.resize(L - 1);
        reduce_.resize(L - 1);
        for (std::size_t l = L - 1; l-- > 0;) {
            const std::string lv = std::to_string(l + 1);
            const std::size_t ch = c.channels_at(l);
            up_[l] = store_.add("decoder." + lv + ".up.weight",
                                transposed_weight<T>(c.channels_at(l + 1), ch, c.upsample_kernel, rng));
            if (c.skip_kind != SkipKind::identity) {
                skip_gates_[l] = OpabParams<T>::create(store_, "skip." + lv, ch, l + 1, rng);
            }
            reduce_[l] = store_.add("decoder." + lv + ".reduce.weight", conv_weight<T>(ch, 2 * ch, 1, rng));
            for (std::size_t b = 0; b < c.decoder_blocks_per_level[l]; ++b) {
                dec_blocks_[l].push_back(BlockParams<T>::create(store_, "decoder." + lv + ".blocks." + std::to_string(b),
                                                                ch, c.heads_per_level[l], c.ffn_expansion, rng));
            }
        }
        const std::size_t c0 = c.channels_at(0);
        head_full_ = store_.add("head.full.weight", conv_weight<T>(3, c0, 3, rng));
        head_up_ = store_.add("head.double.up.weight", transposed_weight<T>(c0, c0, c.upsample_kernel, rng));
        head_double_ = store_.add("head.double.conv.weight", conv_weight<T>(3, c0, 3, rng));
    }

    ModelConfig config_;
    ParamStore<T> store_;
    Tensor<T> input_proj_;
    std::vector<std::vector<BlockParams<T>>> enc_blocks_;
    std::vector<Tensor<T>> down_;
    std::vector<BlockParams<T>> bottleneck_;
    std::vector<OpabParams<T>> skip_gates_;
    std::vector<Tensor<T>> up_;
    std::vector<Tensor<T>> reduce_;
    std::vector<std::vector<BlockParams<T>>> dec_blocks_;
    Tensor<T> head_full_, head_up_, head_double_;
};

// ------------------------------------------------------------------ accounting

struct ParameterReport {
    std::size_t total = 0;
    std::map<std::string, std::size_t> by_module;  // parameter name minus its last segment
};

inline ParameterReport count_parameters(const ModelConfig& config) {
    Phaseformer<float> model(config, 0);
    ParameterReport r;
    for (const auto& [name, t] : model.params()) {
        r.total += t.numel();
        const auto dot = name.rfind('.');
        r.by_module[dot == std::string::npos ? name : name.substr(0, dot)] += t.numel();
    }
    return r;
}

/// FLOP counting rule: 2 x multiply-accumulates for convolutions and matrix
/// products, 2*5*HW*log2(HW) per 2D FFT per channel; elementwise work ignored.
namespace flops {

inline double conv2d(std::size_t cin, std::size_t cout, std::size_t k, std::size_t ho, std::size_t wo) {
    return 2.0 * static_cast<double>(cin) * cout * k * k * ho * wo;
}

inline double depthwise(std::size_t c, std::size_t k, std::size_t h, std::size_t w) {
    return 2.0 * static_cast<double>(c) * k * k * h * w;
}

/// Transposed conv counted per input pixel: every input tap touches k*k outputs.
inline double conv_transpose2d(std::size_t cin, std::size_t cout, std::size_t k, std::size_t h, std::size_t w) {
    return 2.0 * static_cast<double>(cin) * cout * k * k * h * w;
}

inline double fft2(std::size_t channels, std::size_t h, std::size_t w) {
    const double hw = static_cast<double>(h) * w;
    return static_cast<double>(channels) * 2.0 * 5.0 * hw * std::log2(hw);
}

inline double pem(std::size_t channels, std::size_t h, std::size_t w) { return 2.0 * fft2(channels, h, w); }

/// Both channel-attention products: (C/h x HW)(HW x C/h) and its application to V.
inline double transposed_attention(std::size_t c, std::size_t heads, std::size_t h, std::size_t w) {
    const double per_head = static_cast<double>(c / heads);
    return 2.0 * 2.0 * heads * per_head * per_head * h * w;
}

}  // namespace flops

struct FlopReport {
    double total = 0.0;
    std::map<std::string, double> by_module;
};

inline double block_flops(const ModelConfig& cfg, std::size_t c, std::size_t heads, std::size_t h, std::size_t w) {
    const std::size_t hidden = FfnParams<float>::hidden_channels(c, cfg.ffn_expansion);
    double f = 0.0;
    if (cfg.attention_kind == AttentionKind::phase) f += flops::pem(c, h, w);
    f += 3.0 * (flops::conv2d(c, c, 1, h, w) + flops::depthwise(c, 3, h, w));
    f += flops::transposed_attention(c, heads, h, w);
    f += flops::conv2d(c, c, 1, h, w);
    f += flops::conv2d(c, 2 * hidden, 1, h, w) + flops::depthwise(2 * hidden, 3, h, w);
    f += flops::conv2d(hidden, c, 1, h, w);
    return f;
}

inline FlopReport estimate_flops(const ModelConfig& cfg, std::size_t height, std::size_t width) {
    FlopReport r;
    auto add = [&r](const std::string& k, double v) {
        r.by_module[k] += v;
        r.total += v;
    };
    const std::size_t L = cfg.levels;
    auto hh = [&](std::size_t l) { return height >> l; };
    auto ww = [&](std::size_t l) { return width >> l; };
    const std::size_t k_up = cfg.upsample_kernel;
    add("input_proj", flops::conv2d(3, cfg.channels_at(0), 3, height, width));
    for (std::size_t l = 0; l < L; ++l) {
        const std::string lv = std::to_string(l + 1);
        for (std::size_t b = 0; b < cfg.blocks_per_level[l]; ++b)
            add("encoder." + lv, block_flops(cfg, cfg.channels_at(l), cfg.heads_per_level[l], hh(l), ww(l)));
        if (l + 1 < L) add("encoder." + lv + ".down", flops::conv2d(cfg.channels_at(l), cfg.channels_at(l + 1), 3, hh(l + 1), ww(l + 1)));
    }
    for (std::size_t b = 0; b < cfg.bottleneck_blocks; ++b)
        add("bottleneck", block_flops(cfg, cfg.channels_at(L - 1), cfg.heads_per_level[L - 1], hh(L - 1), ww(L - 1)));
    for (std::size_t l = 0; l + 1 < L; ++l) {
        const std::string lv = std::to_string(l + 1);
        const std::size_t c = cfg.channels_at(l);
        add("decoder." + lv + ".up", flops::conv_transpose2d(cfg.channels_at(l + 1), c, k_up, hh(l + 1), ww(l + 1)));
        if (cfg.skip_kind != SkipKind::identity) {
            double gate = 2.0 * static_cast<double>(adaptive_kernel_size(static_cast<long long>(c))) * c;
            if (cfg.skip_kind == SkipKind::opab) gate += flops::pem(c, hh(l), ww(l));
            add("skip." + lv, gate);
        }
        add("decoder." + lv + ".reduce", flops::conv2d(2 * c, c, 1, hh(l), ww(l)));
        for (std::size_t b = 0; b < cfg.decoder_blocks_per_level[l]; ++b)
            add("decoder." + lv, block_flops(cfg, c, cfg.heads_per_level[l], hh(l), ww(l)));
    }
    const std::size_t c0 = cfg.channels_at(0);
    add("head.full", flops::conv2d(c0, 3, 3, height, width));
    add("head.double", flops::conv_transpose2d(c0, c0, k_up, height, width) +
                           flops::conv2d(c0, 3, 3, 2 * height, 2 * width));
    return r;
}

}  // namespace phaseformer
