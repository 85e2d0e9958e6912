#pragma once

// Optimized phase attention block (OPAB): a per-channel sigmoid gate on
// encoder skip features, computed from the phase-only features by global
// average pooling and a 1D convolution across channels whose length adapts
// to the channel count.

#include <cmath>
#include <string>

#include "phaseformer/conv.hpp"
#include "phaseformer/ops.hpp"
#include "phaseformer/params.hpp"
#include "phaseformer/spectral.hpp"

namespace phaseformer {

enum class SkipKind { opab, oa, identity };

/// Odd 1D kernel length for `channels`: t = log2(C')/gamma + b/gamma,
/// k = floor(t) if that is odd, else floor(t) + 1.
inline std::size_t adaptive_kernel_size(long long channels, int gamma = 2, int b = 1) {
    if (channels < 1) throw DomainError("adaptive_kernel_size: channel count must be >= 1, got " + std::to_string(channels));
    if (gamma <= 0) throw DomainError("adaptive_kernel_size: gamma must be positive");
    const double t = std::log2(static_cast<double>(channels)) / gamma + static_cast<double>(b) / gamma;
    const auto f = static_cast<long long>(std::floor(t));
    const long long k = (f % 2 != 0) ? f : f + 1;
    return static_cast<std::size_t>(std::max(1LL, k));
}

template <typename T>
struct OpabParams {
    Tensor<T> kernel;  // [1, 1, k]
    std::size_t level = 1;

    static OpabParams create(ParamStore<T>& store, const std::string& prefix, std::size_t channels, std::size_t level,
                             Rng& rng) {
        const std::size_t k = adaptive_kernel_size(static_cast<long long>(channels));
        OpabParams p;
        p.kernel = store.add(prefix + ".kernel", fan_in_uniform<T>(Shape{1, 1, k}, k, rng));
        p.level = level;
        return p;
    }
};

namespace detail {

template <typename T>
Tensor<T> channel_gate(const Tensor<T>& u, const Tensor<T>& source, const OpabParams<T>& p) {
    detail::require_rank(u.shape(), 4, "opab");
    const std::size_t N = u.dim(0), C = u.dim(1);
    const std::size_t expected = adaptive_kernel_size(static_cast<long long>(C));
    if (p.kernel.rank() != 3 || p.kernel.dim(2) != expected) {
        throw ConfigError("opab: kernel length " + std::to_string(p.kernel.numel()) + " does not match adaptive size " +
                          std::to_string(expected) + " for " + std::to_string(C) + " channels");
    }
    auto pooled = reshape(global_avg_pool2d(source), Shape{N, 1, C});
    auto gate = sigmoid(conv1d(pooled, p.kernel));
    return scale_channels(u, reshape(gate, Shape{N, C, 1, 1}));
}

}  // namespace detail

/// Z = u * sigmoid(conv1d(GAP(pem(u)))), gate broadcast over H x W.
template <typename T>
Tensor<T> opab(const Tensor<T>& u, const OpabParams<T>& p, bool pem_differentiable = true) {
    return detail::channel_gate(u, pem(u, pem_differentiable), p);
}

/// Same gate without the phase extraction step.
template <typename T>
Tensor<T> oa_ablation(const Tensor<T>& u, const OpabParams<T>& p) {
    return detail::channel_gate(u, u, p);
}

template <typename T>
Tensor<T> apply_skip(SkipKind kind, const Tensor<T>& u, const OpabParams<T>& p, bool pem_differentiable = true) {
    switch (kind) {
        case SkipKind::opab: return opab(u, p, pem_differentiable);
        case SkipKind::oa: return oa_ablation(u, p);
        case SkipKind::identity: return u;
    }
    return u;
}

}  // namespace phaseformer
