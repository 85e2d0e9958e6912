#pragma once

// Bias-free convolutions (cross-correlation, zero padding).

#include <algorithm>
#include <string>

#include "phaseformer/tensor.hpp"

namespace phaseformer {

namespace detail {

inline std::size_t conv_out_size(std::size_t in, std::size_t k, std::size_t stride, std::size_t pad) {
    if (in + 2 * pad < k) return 0;
    return (in + 2 * pad - k) / stride + 1;
}

/// Range [lo, hi) of output columns whose input column o*stride + kx - pad lies in [0, in).
inline std::pair<std::size_t, std::size_t> valid_range(std::size_t out, std::size_t in, std::size_t kx,
                                                       std::size_t stride, std::size_t pad) {
    // need o*stride + kx >= pad and o*stride + kx - pad <= in - 1
    std::size_t lo = 0;
    if (kx < pad) lo = (pad - kx + stride - 1) / stride;
    if (in + pad < kx + 1) return {0, 0};
    std::size_t hi = (in - 1 + pad - kx) / stride + 1;
    hi = std::min(hi, out);
    if (lo > hi) lo = hi;
    return {lo, hi};
}

/// Shared kernel for dense (groups == 1) and depthwise (groups == C) convolution.
template <typename T>
Tensor<T> conv2d_impl(const Tensor<T>& x, const Tensor<T>& w, std::size_t stride, std::size_t pad, bool depthwise,
                      const char* name) {
    require_rank(x.shape(), 4, name, "input");
    require_rank(w.shape(), 4, name, "weight");
    const std::size_t N = x.dim(0), Cin = x.dim(1), H = x.dim(2), W = x.dim(3);
    const std::size_t Cout = w.dim(0), wc = w.dim(1), K = w.dim(2);
    if (w.dim(3) != K) throw DimensionError(std::string(name) + ": kernel axes 2 and 3 differ in " + to_string(w.shape()));
    if (depthwise) {
        if (wc != 1 || Cout != Cin) {
            throw DimensionError(std::string(name) + ": weight " + to_string(w.shape()) +
                                 " must be [C,1,k,k] with C = input axis 1 (" + std::to_string(Cin) + ")");
        }
    } else if (wc != Cin) {
        throw DimensionError(std::string(name) + ": weight axis 1 (" + std::to_string(wc) +
                             ") does not match input channel axis 1 (" + std::to_string(Cin) + ")");
    }
    if (stride == 0) throw ConfigError(std::string(name) + ": stride must be positive");
    const std::size_t Ho = conv_out_size(H, K, stride, pad), Wo = conv_out_size(W, K, stride, pad);
    if (Ho == 0 || Wo == 0) {
        throw DimensionError(std::string(name) + ": kernel " + std::to_string(K) + " larger than padded input axes 2/3 of " +
                             to_string(x.shape()));
    }
    const std::size_t cin_per = depthwise ? 1 : Cin;
    const auto& xv = x.values();
    const auto& wv = w.values();
    std::vector<T> out(N * Cout * Ho * Wo, T(0));

    // Visits every (output pixel, input pixel, weight) triple once.
    auto visit = [=](auto&& fn) {
        for (std::size_t n = 0; n < N; ++n)
            for (std::size_t co = 0; co < Cout; ++co)
                for (std::size_t cj = 0; cj < cin_per; ++cj) {
                    const std::size_t ci = depthwise ? co : cj;
                    const std::size_t xoff = (n * Cin + ci) * H * W;
                    const std::size_t ooff = (n * Cout + co) * Ho * Wo;
                    const std::size_t woff = (co * cin_per + cj) * K * K;
                    for (std::size_t ky = 0; ky < K; ++ky) {
                        auto [oy0, oy1] = valid_range(Ho, H, ky, stride, pad);
                        for (std::size_t kx = 0; kx < K; ++kx) {
                            auto [ox0, ox1] = valid_range(Wo, W, kx, stride, pad);
                            if (ox0 >= ox1) continue;
                            const std::size_t widx = woff + ky * K + kx;
                            for (std::size_t oy = oy0; oy < oy1; ++oy) {
                                const std::size_t iy = oy * stride + ky - pad;
                                fn(widx, ooff + oy * Wo + ox0, xoff + iy * W + ox0 * stride + kx - pad, ox1 - ox0);
                            }
                        }
                    }
                }
    };

    visit([&](std::size_t widx, std::size_t orow, std::size_t xrow, std::size_t count) {
        const T wvv = wv[widx];
        T* o = out.data() + orow;
        const T* in = xv.data() + xrow;
        for (std::size_t j = 0; j < count; ++j) o[j] += wvv * in[j * stride];
    });

    auto xn = x.node_ptr();
    auto wn = w.node_ptr();
    return make_result<T>(
        Shape{N, Cout, Ho, Wo}, std::move(out), {&x, &w},
        [xn, wn, visit, stride](const Node<T>& self) {
            auto* gx = grad_sink(xn);
            auto* gw = grad_sink(wn);
            const T* gy = self.grad.data();
            visit([&](std::size_t widx, std::size_t orow, std::size_t xrow, std::size_t count) {
                const T* g = gy + orow;
                if (gx) {
                    const T wvv = wn->data[widx];
                    T* d = gx->data() + xrow;
                    for (std::size_t j = 0; j < count; ++j) d[j * stride] += wvv * g[j];
                }
                if (gw) {
                    const T* in = xn->data.data() + xrow;
                    T acc = 0;
                    for (std::size_t j = 0; j < count; ++j) acc += g[j] * in[j * stride];
                    (*gw)[widx] += acc;
                }
            });
        },
        name);
}

}  // namespace detail

/// Dense 2D cross-correlation. x: [N,Cin,H,W], weight: [Cout,Cin,k,k].
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, std::size_t stride, std::size_t padding) {
    return detail::conv2d_impl(x, weight, stride, padding, false, "conv2d");
}

/// Same-size convolution with padding (k-1)/2.
template <typename T>
Tensor<T> conv2d_same(const Tensor<T>& x, const Tensor<T>& weight) {
    const std::size_t k = weight.dim(2);
    if (k % 2 == 0) throw ConfigError("conv2d: kernel size must be odd, got " + std::to_string(k));
    return conv2d(x, weight, 1, (k - 1) / 2);
}

/// One spatial filter per channel, no cross-channel mixing; size preserving.
/// x: [N,C,H,W], weight: [C,1,k,k].
template <typename T>
Tensor<T> depthwise_conv2d(const Tensor<T>& x, const Tensor<T>& weight) {
    const std::size_t k = weight.rank() == 4 ? weight.dim(2) : 0;
    if (k % 2 == 0) throw ConfigError("depthwise_conv2d: kernel size must be odd, got " + std::to_string(k));
    return detail::conv2d_impl(x, weight, 1, (k - 1) / 2, true, "depthwise_conv2d");
}

/// Transposed convolution. x: [N,Cin,H,W], weight: [Cin,Cout,k,k].
/// Output extent (H-1)*stride - 2*padding + k.
template <typename T>
Tensor<T> conv_transpose2d(const Tensor<T>& x, const Tensor<T>& weight, std::size_t stride = 2,
                           std::size_t padding = 0) {
    detail::require_rank(x.shape(), 4, "conv_transpose2d", "input");
    detail::require_rank(weight.shape(), 4, "conv_transpose2d", "weight");
    const std::size_t N = x.dim(0), Cin = x.dim(1), H = x.dim(2), W = x.dim(3);
    if (weight.dim(0) != Cin) {
        throw DimensionError("conv_transpose2d: weight axis 0 (" + std::to_string(weight.dim(0)) +
                             ") does not match input channel axis 1 (" + std::to_string(Cin) + ")");
    }
    const std::size_t Cout = weight.dim(1), K = weight.dim(2);
    if ((H - 1) * stride + K < 2 * padding + 1) throw DimensionError("conv_transpose2d: padding too large");
    const std::size_t Ho = (H - 1) * stride + K - 2 * padding;
    const std::size_t Wo = (W - 1) * stride + K - 2 * padding;
    const auto& xv = x.values();
    const auto& wv = weight.values();
    std::vector<T> out(N * Cout * Ho * Wo, T(0));

    auto visit = [=](auto&& fn) {
        for (std::size_t n = 0; n < N; ++n)
            for (std::size_t ci = 0; ci < Cin; ++ci)
                for (std::size_t co = 0; co < Cout; ++co)
                    for (std::size_t ky = 0; ky < K; ++ky)
                        for (std::size_t kx = 0; kx < K; ++kx) {
                            const std::size_t widx = ((ci * Cout + co) * K + ky) * K + kx;
                            for (std::size_t iy = 0; iy < H; ++iy) {
                                const std::ptrdiff_t oy = static_cast<std::ptrdiff_t>(iy * stride + ky) -
                                                          static_cast<std::ptrdiff_t>(padding);
                                if (oy < 0 || oy >= static_cast<std::ptrdiff_t>(Ho)) continue;
                                // ix range with 0 <= ix*stride + kx - padding < Wo
                                std::size_t ix0 = kx < padding ? (padding - kx + stride - 1) / stride : 0;
                                std::size_t ix1 = std::min(W, (Wo - 1 + padding - kx) / stride + 1);
                                if (Wo + padding < kx + 1) ix1 = 0;
                                if (ix0 >= ix1) continue;
                                fn(widx, ((n * Cin + ci) * H + iy) * W + ix0,
                                   ((n * Cout + co) * Ho + static_cast<std::size_t>(oy)) * Wo + ix0 * stride + kx - padding,
                                   ix1 - ix0);
                            }
                        }
    };

    visit([&](std::size_t widx, std::size_t xrow, std::size_t orow, std::size_t count) {
        const T wvv = wv[widx];
        const T* in = xv.data() + xrow;
        T* o = out.data() + orow;
        for (std::size_t j = 0; j < count; ++j) o[j * stride] += wvv * in[j];
    });

    auto xn = x.node_ptr();
    auto wn = weight.node_ptr();
    return detail::make_result<T>(
        Shape{N, Cout, Ho, Wo}, std::move(out), {&x, &weight},
        [xn, wn, visit, stride](const detail::Node<T>& self) {
            auto* gx = detail::grad_sink(xn);
            auto* gw = detail::grad_sink(wn);
            const T* gy = self.grad.data();
            visit([&](std::size_t widx, std::size_t xrow, std::size_t orow, std::size_t count) {
                const T* g = gy + orow;
                if (gx) {
                    const T wvv = wn->data[widx];
                    T* d = gx->data() + xrow;
                    for (std::size_t j = 0; j < count; ++j) d[j] += wvv * g[j * stride];
                }
                if (gw) {
                    const T* in = xn->data.data() + xrow;
                    T acc = 0;
                    for (std::size_t j = 0; j < count; ++j) acc += in[j] * g[j * stride];
                    (*gw)[widx] += acc;
                }
            });
        },
        "conv_transpose2d");
}

/// Length-preserving 1D convolution over the last axis of x: [N,1,L] with
/// weight [1,1,k], k odd, zero padding (k-1)/2.
template <typename T>
Tensor<T> conv1d(const Tensor<T>& x, const Tensor<T>& weight) {
    detail::require_rank(x.shape(), 3, "conv1d", "input");
    detail::require_rank(weight.shape(), 3, "conv1d", "weight");
    if (x.dim(1) != 1 || weight.dim(0) != 1 || weight.dim(1) != 1) {
        throw DimensionError("conv1d: expected input [N,1,L] and weight [1,1,k], got " + to_string(x.shape()) + " and " +
                             to_string(weight.shape()));
    }
    const std::size_t K = weight.dim(2);
    if (K % 2 == 0) throw ConfigError("conv1d: kernel length must be odd, got " + std::to_string(K));
    const std::size_t N = x.dim(0), L = x.dim(2);
    const std::ptrdiff_t half = static_cast<std::ptrdiff_t>(K / 2);
    const auto& xv = x.values();
    const auto& wv = weight.values();
    std::vector<T> out(N * L, T(0));
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t i = 0; i < L; ++i) {
            T s = 0;
            for (std::size_t k = 0; k < K; ++k) {
                const std::ptrdiff_t j = static_cast<std::ptrdiff_t>(i + k) - half;
                if (j >= 0 && j < static_cast<std::ptrdiff_t>(L)) s += wv[k] * xv[n * L + static_cast<std::size_t>(j)];
            }
            out[n * L + i] = s;
        }
    auto xn = x.node_ptr();
    auto wn = weight.node_ptr();
    return detail::make_result<T>(
        x.shape(), std::move(out), {&x, &weight},
        [xn, wn, N, L, K, half](const detail::Node<T>& self) {
            auto* gx = detail::grad_sink(xn);
            auto* gw = detail::grad_sink(wn);
            for (std::size_t n = 0; n < N; ++n)
                for (std::size_t i = 0; i < L; ++i) {
                    const T g = self.grad[n * L + i];
                    for (std::size_t k = 0; k < K; ++k) {
                        const std::ptrdiff_t j = static_cast<std::ptrdiff_t>(i + k) - half;
                        if (j < 0 || j >= static_cast<std::ptrdiff_t>(L)) continue;
                        if (gx) (*gx)[n * L + static_cast<std::size_t>(j)] += g * wn->data[k];
                        if (gw) (*gw)[k] += g * xn->data[n * L + static_cast<std::size_t>(j)];
                    }
                }
        },
        "conv1d");
}

}  // namespace phaseformer
