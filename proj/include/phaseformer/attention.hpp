#pragma once

// Phase-based multi-head self-attention (PMSA), gated feed-forward network
// and the transformer block that chains them.
//
// Attention is "transposed": per head the map is (C/h x C/h), built from the
// key and query projections of the phase-only features, so cost grows with
// H*W*C^2/h and no (H*W x H*W) matrix is ever formed.

#include <cmath>
#include <string>

#include "phaseformer/conv.hpp"
#include "phaseformer/ops.hpp"
#include "phaseformer/params.hpp"
#include "phaseformer/spectral.hpp"

namespace phaseformer {

enum class AttentionKind { phase, plain };
enum class ResidualKind { normalized, pre_norm };

template <typename T>
Tensor<T> reciprocal(const Tensor<T>& x) {
    return detail::unary_op(
        x, [](T v) { return T(1) / v; }, [](T, T y) { return -y * y; }, "reciprocal");
}

template <typename T>
struct PmsaParams {
    Tensor<T> q_point, q_depth;
    Tensor<T> k_point, k_depth;
    Tensor<T> v_point, v_depth;
    Tensor<T> out_point;
    Tensor<T> alpha;  // [heads]

    static PmsaParams create(ParamStore<T>& store, const std::string& prefix, std::size_t channels,
                             std::size_t heads, Rng& rng) {
        if (heads == 0 || channels % heads != 0) {
            throw ConfigError("pmsa: " + std::to_string(channels) + " channels not divisible by " +
                              std::to_string(heads) + " heads");
        }
        PmsaParams p;
        p.q_point = store.add(prefix + ".q_point", conv_weight<T>(channels, channels, 1, rng));
        p.q_depth = store.add(prefix + ".q_depth", depthwise_weight<T>(channels, 3, rng));
        p.k_point = store.add(prefix + ".k_point", conv_weight<T>(channels, channels, 1, rng));
        p.k_depth = store.add(prefix + ".k_depth", depthwise_weight<T>(channels, 3, rng));
        p.v_point = store.add(prefix + ".v_point", conv_weight<T>(channels, channels, 1, rng));
        p.v_depth = store.add(prefix + ".v_depth", depthwise_weight<T>(channels, 3, rng));
        p.out_point = store.add(prefix + ".out_point", conv_weight<T>(channels, channels, 1, rng));
        const T alpha0 = static_cast<T>(std::sqrt(static_cast<double>(channels / heads)));
        p.alpha = store.add(prefix + ".alpha", Tensor<T>::full(Shape{heads}, alpha0));
        return p;
    }

    std::size_t heads() const { return alpha.numel(); }
};

template <typename T>
struct FfnParams {
    Tensor<T> expand_point;   // [2*hidden, C, 1, 1]
    Tensor<T> expand_depth;   // [2*hidden, 1, 3, 3]
    Tensor<T> project_point;  // [C, hidden, 1, 1]

    static std::size_t hidden_channels(std::size_t channels, double expansion) {
        return static_cast<std::size_t>(std::floor(static_cast<double>(channels) * expansion));
    }

    static FfnParams create(ParamStore<T>& store, const std::string& prefix, std::size_t channels, double expansion,
                            Rng& rng) {
        const std::size_t hidden = hidden_channels(channels, expansion);
        if (hidden == 0) throw ConfigError("ffn: expansion " + std::to_string(expansion) + " leaves no hidden channels");
        FfnParams p;
        p.expand_point = store.add(prefix + ".expand_point", conv_weight<T>(2 * hidden, channels, 1, rng));
        p.expand_depth = store.add(prefix + ".expand_depth", depthwise_weight<T>(2 * hidden, 3, rng));
        p.project_point = store.add(prefix + ".project_point", conv_weight<T>(channels, hidden, 1, rng));
        return p;
    }
};

template <typename T>
struct AttentionResult {
    Tensor<T> out;        // N,C,H,W
    Tensor<T> attention;  // N,heads,C/h,C/h softmaxed maps
};

/// Multi-head channel attention: out = V * Softmax(K Q^T / alpha) per head,
/// softmax along the last axis of each (C/h x C/h) map.
template <typename T>
AttentionResult<T> transposed_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                                        const Tensor<T>& alpha, std::size_t heads) {
    detail::require_rank(q.shape(), 4, "transposed_attention", "query");
    detail::require_same_shape(q.shape(), k.shape(), "transposed_attention");
    detail::require_same_shape(q.shape(), v.shape(), "transposed_attention");
    const std::size_t N = q.dim(0), C = q.dim(1), P = q.dim(2) * q.dim(3);
    if (heads == 0 || C % heads != 0) {
        throw ConfigError("attention: " + std::to_string(C) + " channels not divisible by " + std::to_string(heads) +
                          " heads");
    }
    if (alpha.numel() != heads) throw DimensionError("attention: alpha must hold one value per head");
    const std::size_t c = C / heads, B = N * heads;

    auto qm = reshape(q, Shape{B, c, P});
    auto km = reshape(k, Shape{B, c, P});
    auto vm = reshape(v, Shape{B, c, P});
    auto logits = bmm(km, transpose_last2(qm));  // [B, c, c]: k_i . q_j

    std::vector<Tensor<T>> per_batch(N, reciprocal(alpha));
    auto inv_alpha = reshape(stack(per_batch), Shape{N, heads, 1, 1});
    auto scaled = scale_channels(reshape(logits, Shape{N, heads, c, c}), inv_alpha);
    auto attn = softmax_last(scaled);

    auto mixed = bmm(transpose_last2(reshape(attn, Shape{B, c, c})), vm);  // out_j = sum_i A[i,j] v_i
    return {reshape(mixed, q.shape()), attn};
}

struct BlockOptions {
    AttentionKind attention = AttentionKind::phase;
    ResidualKind residual = ResidualKind::normalized;
    bool pem_differentiable = true;
};

/// PMSA on a normalized input y; `residual` is the tensor added back
/// (y itself for the literal formulation).
template <typename T>
AttentionResult<T> pmsa_full(const Tensor<T>& y, const PmsaParams<T>& p, const Tensor<T>& residual,
                             const BlockOptions& opt = {}) {
    const Tensor<T> source = opt.attention == AttentionKind::phase ? pem(y, opt.pem_differentiable) : y;
    auto q = depthwise_conv2d(conv2d(source, p.q_point, 1, 0), p.q_depth);
    auto k = depthwise_conv2d(conv2d(source, p.k_point, 1, 0), p.k_depth);
    auto v = depthwise_conv2d(conv2d(y, p.v_point, 1, 0), p.v_depth);
    auto attended = transposed_attention(q, k, v, p.alpha, p.heads());
    return {add(conv2d(attended.out, p.out_point, 1, 0), residual), attended.attention};
}

template <typename T>
Tensor<T> pmsa(const Tensor<T>& y, const PmsaParams<T>& p, const BlockOptions& opt = {}) {
    return pmsa_full(y, p, y, opt).out;
}

/// Gated feed-forward: project(gelu(a) * b) + residual, where [a, b] are the
/// two halves of the expanded, depthwise-filtered input.
template <typename T>
Tensor<T> ffn(const Tensor<T>& z, const FfnParams<T>& p, const Tensor<T>& residual) {
    const std::size_t expanded = p.expand_point.dim(0);
    if (expanded % 2 != 0) throw ConfigError("ffn: expanded channel count " + std::to_string(expanded) + " is odd");
    auto h = depthwise_conv2d(conv2d(z, p.expand_point, 1, 0), p.expand_depth);
    auto a = slice_channels(h, 0, expanded / 2);
    auto b = slice_channels(h, expanded / 2, expanded / 2);
    return add(conv2d(mul(gelu(a), b), p.project_point, 1, 0), residual);
}

template <typename T>
Tensor<T> ffn(const Tensor<T>& z, const FfnParams<T>& p) {
    return ffn(z, p, z);
}

template <typename T>
struct BlockParams {
    Tensor<T> norm1;  // [C]
    Tensor<T> norm2;  // [C]
    PmsaParams<T> attn;
    FfnParams<T> ffn;

    static BlockParams create(ParamStore<T>& store, const std::string& prefix, std::size_t channels,
                              std::size_t heads, double expansion, Rng& rng) {
        BlockParams b;
        b.norm1 = store.add(prefix + ".norm1", Tensor<T>::full(Shape{channels}, T(1)));
        b.attn = PmsaParams<T>::create(store, prefix + ".attn", channels, heads, rng);
        b.norm2 = store.add(prefix + ".norm2", Tensor<T>::full(Shape{channels}, T(1)));
        b.ffn = FfnParams<T>::create(store, prefix + ".ffn", channels, expansion, rng);
        return b;
    }
};

/// Phase-based transformer block: norm -> PMSA (+residual) -> norm -> FFN (+residual).
template <typename T>
Tensor<T> pbtb(const Tensor<T>& x, const BlockParams<T>& p, const BlockOptions& opt = {}) {
    const bool literal = opt.residual == ResidualKind::normalized;
    auto y = layer_norm_channels(x, p.norm1);
    auto y_hat = pmsa_full(y, p.attn, literal ? y : x, opt).out;
    auto z = layer_norm_channels(y_hat, p.norm2);
    return ffn(z, p.ffn, literal ? z : y_hat);
}

}  // namespace phaseformer
