#pragma once

// Training losses: Charbonnier, forward-difference gradient loss, MS-SSIM,
// a perceptual loss over a frozen feature extractor, and the learnable
// softmax weighting that combines them at two output resolutions.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "phaseformer/config.hpp"
#include "phaseformer/conv.hpp"
#include "phaseformer/model.hpp"
#include "phaseformer/ops.hpp"

namespace phaseformer {

template <typename T>
Tensor<T> charbonnier(const Tensor<T>& x, const Tensor<T>& y, T eps = T(1e-3)) {
    detail::require_same_shape(x.shape(), y.shape(), "charbonnier");
    return mean(sqrt(add_scalar(square(sub(x, y)), eps * eps)));
}

/// mean|dx(x) - dx(y)| + mean|dy(x) - dy(y)| with forward differences.
template <typename T>
Tensor<T> gradient_loss(const Tensor<T>& x, const Tensor<T>& y) {
    detail::require_same_shape(x.shape(), y.shape(), "gradient_loss");
    if (x.rank() < 2) throw DimensionError("gradient_loss: expected image-shaped tensors, got " + to_string(x.shape()));
    auto d = sub(x, y);
    return add(mean(abs(diff_last(d))), mean(abs(diff_rows(d))));
}

// -------------------------------------------------------------------- MS-SSIM

namespace ssim_constants {
inline constexpr std::size_t window = 11;
inline constexpr double sigma = 1.5;
inline constexpr double k1 = 0.01;
inline constexpr double k2 = 0.03;
inline constexpr std::array<double, 5> scale_weights{0.0448, 0.2856, 0.3001, 0.2363, 0.1333};
}  // namespace ssim_constants

inline std::vector<double> gaussian_window(std::size_t size = ssim_constants::window,
                                           double sigma = ssim_constants::sigma) {
    std::vector<double> g(size);
    const double c = (static_cast<double>(size) - 1.0) / 2.0;
    double s = 0.0;
    for (std::size_t i = 0; i < size; ++i) {
        g[i] = std::exp(-(static_cast<double>(i) - c) * (static_cast<double>(i) - c) / (2.0 * sigma * sigma));
        s += g[i];
    }
    for (auto& v : g) v /= s;
    return g;
}

/// Number of dyadic scales used for an image whose smaller side is `min_side`.
inline std::size_t ms_ssim_scales(std::size_t min_side) {
    if (min_side < ssim_constants::window) {
        throw ConfigError("ms_ssim: image side " + std::to_string(min_side) + " smaller than the " +
                          std::to_string(ssim_constants::window) + "-pixel window");
    }
    const auto s = static_cast<std::size_t>(
        std::floor(std::log2(static_cast<double>(min_side) / static_cast<double>(ssim_constants::window))) + 1);
    return std::min<std::size_t>(5, s);
}

namespace detail {

/// Valid 1D filtering of every row (axis 3) or every column (axis 2) of N,C,H,W.
template <typename T>
Tensor<T> filter_valid(const Tensor<T>& x, const std::vector<double>& taps, bool along_rows) {
    require_rank(x.shape(), 4, "filter_valid");
    const std::size_t planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3), k = taps.size();
    const std::size_t ho = along_rows ? h - k + 1 : h, wo = along_rows ? w : w - k + 1;
    if ((along_rows ? h : w) < k) throw ConfigError("filter_valid: window larger than image in " + to_string(x.shape()));
    const std::size_t step = along_rows ? w : 1;
    std::vector<T> g(taps.begin(), taps.end());
    const auto& xv = x.values();
    std::vector<T> out(planes * ho * wo);
    for (std::size_t p = 0; p < planes; ++p)
        for (std::size_t i = 0; i < ho; ++i)
            for (std::size_t j = 0; j < wo; ++j) {
                const T* src = xv.data() + (p * h + i) * w + j;
                T s = 0;
                for (std::size_t t = 0; t < k; ++t) s += g[t] * src[t * step];
                out[(p * ho + i) * wo + j] = s;
            }
    auto xn = x.node_ptr();
    return make_result<T>(
        Shape{x.dim(0), x.dim(1), ho, wo}, std::move(out), {&x},
        [xn, g, planes, h, w, ho, wo, k, step](const Node<T>& self) {
            auto* gx = grad_sink(xn);
            if (!gx) return;
            for (std::size_t p = 0; p < planes; ++p)
                for (std::size_t i = 0; i < ho; ++i)
                    for (std::size_t j = 0; j < wo; ++j) {
                        const T gv = self.grad[(p * ho + i) * wo + j];
                        T* dst = gx->data() + (p * h + i) * w + j;
                        for (std::size_t t = 0; t < k; ++t) dst[t * step] += g[t] * gv;
                    }
        },
        "filter_valid");
}

template <typename T>
Tensor<T> gaussian_blur_valid(const Tensor<T>& x, const std::vector<double>& taps) {
    return filter_valid(filter_valid(x, taps, false), taps, true);
}

template <typename T>
struct SsimMaps {
    Tensor<T> luminance_cs;  // per (n,c) mean of the full SSIM map, [N,C]
    Tensor<T> cs;            // per (n,c) mean of the contrast-structure map, [N,C]
};

template <typename T>
SsimMaps<T> ssim_terms(const Tensor<T>& x, const Tensor<T>& y, const std::vector<double>& taps, double peak = 1.0) {
    const T c1 = static_cast<T>((ssim_constants::k1 * peak) * (ssim_constants::k1 * peak));
    const T c2 = static_cast<T>((ssim_constants::k2 * peak) * (ssim_constants::k2 * peak));
    auto mx = gaussian_blur_valid(x, taps);
    auto my = gaussian_blur_valid(y, taps);
    auto mxx = mul(mx, mx), myy = mul(my, my), mxy = mul(mx, my);
    auto sxx = sub(gaussian_blur_valid(mul(x, x), taps), mxx);
    auto syy = sub(gaussian_blur_valid(mul(y, y), taps), myy);
    auto sxy = sub(gaussian_blur_valid(mul(x, y), taps), mxy);
    auto cs_map = div(add_scalar(mul_scalar(sxy, T(2)), c2), add_scalar(add(sxx, syy), c2));
    auto lum = div(add_scalar(mul_scalar(mxy, T(2)), c1), add_scalar(add(mxx, myy), c1));
    return {mean_planes(mul(lum, cs_map)), mean_planes(cs_map)};
}

}  // namespace detail

/// Multi-scale SSIM per (n, c) plane, averaged: returns a scalar in [0, 1].
template <typename T>
Tensor<T> ms_ssim(const Tensor<T>& x, const Tensor<T>& y, std::size_t max_scales = 5) {
    detail::require_same_shape(x.shape(), y.shape(), "ms_ssim");
    detail::require_rank(x.shape(), 4, "ms_ssim");
    const std::size_t scales = std::min(max_scales, ms_ssim_scales(std::min(x.dim(2), x.dim(3))));
    if (scales == 0) throw ConfigError("ms_ssim: at least one scale is required");
    double wsum = 0.0;
    for (std::size_t s = 0; s < scales; ++s) wsum += ssim_constants::scale_weights[s];
    const auto taps = gaussian_window();
    const T floor_value = T(1e-6);

    Tensor<T> xs = x, ys = y, product;
    for (std::size_t s = 0; s < scales; ++s) {
        const T weight = static_cast<T>(ssim_constants::scale_weights[s] / wsum);
        auto terms = detail::ssim_terms(xs, ys, taps);
        const bool last = s + 1 == scales;
        auto base = clamp(last ? terms.luminance_cs : terms.cs, floor_value, T(1e30));
        auto factor = pow_scalar(base, weight);
        product = product.defined() ? mul(product, factor) : factor;
        if (!last) {
            xs = avg_pool2x2(xs);
            ys = avg_pool2x2(ys);
        }
    }
    return mean(product);
}

template <typename T>
Tensor<T> ms_ssim_loss(const Tensor<T>& x, const Tensor<T>& y, std::size_t max_scales = 5) {
    return add_scalar(neg(ms_ssim(x, y, max_scales)), T(1));
}

// ----------------------------------------------------------------- perceptual

/// Frozen three-stage conv stack (3 -> 16 -> 32 -> 64, stride 2, ReLU).
template <typename T>
class FeatureExtractor {
public:
    static constexpr std::array<std::size_t, 4> widths{3, 16, 32, 64};

    explicit FeatureExtractor(std::uint64_t seed = 20240317) {
        Rng rng(derive_seed(seed, 0x9e4c));
        for (std::size_t s = 0; s + 1 < widths.size(); ++s) {
            const std::size_t fan_in = widths[s] * 9;
            weights_.push_back(
                Tensor<T>::randn(Shape{widths[s + 1], widths[s], 3, 3}, rng, std::sqrt(2.0 / static_cast<double>(fan_in))));
        }
    }

    explicit FeatureExtractor(std::vector<Tensor<T>> weights) : weights_(std::move(weights)) {
        if (weights_.size() != widths.size() - 1) throw ConfigError("feature extractor needs 3 stage weights");
        for (std::size_t s = 0; s < weights_.size(); ++s) {
            const Shape want{widths[s + 1], widths[s], 3, 3};
            if (weights_[s].shape() != want) {
                throw DimensionError("feature extractor stage " + std::to_string(s) + ": expected " + to_string(want) +
                                     ", got " + to_string(weights_[s].shape()));
            }
            weights_[s] = weights_[s].detach();
        }
    }

    /// Loads the three stage weights as raw little-endian float32 in stage order.
    static FeatureExtractor load(const std::string& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw IngestionError("cannot open feature weights '" + path + "'");
        std::vector<Tensor<T>> ws;
        for (std::size_t s = 0; s + 1 < widths.size(); ++s) {
            const Shape shape{widths[s + 1], widths[s], 3, 3};
            std::vector<T> v(phaseformer::numel(shape));
            for (auto& e : v) {
                unsigned char b[4];
                if (!in.read(reinterpret_cast<char*>(b), 4)) {
                    throw IngestionError("feature weights '" + path + "' truncated at byte " +
                                         std::to_string(static_cast<long long>(in.gcount())));
                }
                const std::uint32_t u = b[0] | (b[1] << 8) | (b[2] << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
                float f;
                std::memcpy(&f, &u, 4);
                e = static_cast<T>(f);
            }
            ws.emplace_back(shape, std::move(v));
        }
        return FeatureExtractor(std::move(ws));
    }

    std::vector<Tensor<T>> features(const Tensor<T>& x) const {
        std::vector<Tensor<T>> out;
        Tensor<T> h = x;
        for (const auto& w : weights_) {
            h = relu(conv2d(h, w, 2, 1));
            out.push_back(h);
        }
        return out;
    }

    const std::vector<Tensor<T>>& weights() const { return weights_; }

private:
    std::vector<Tensor<T>> weights_;
};

template <typename T>
Tensor<T> perceptual_loss(const Tensor<T>& x, const Tensor<T>& y, const FeatureExtractor<T>& extractor) {
    detail::require_same_shape(x.shape(), y.shape(), "perceptual_loss");
    const auto fx = extractor.features(x);
    const auto fy = extractor.features(y);
    Tensor<T> total;
    for (std::size_t s = 0; s < fx.size(); ++s) {
        auto term = mean(square(sub(fx[s], fy[s])));
        total = total.defined() ? add(total, term) : term;
    }
    return total;
}

// -------------------------------------------------------------- loss weights

/// Omega_1..4 = softmax(logits); Omega_H / Omega_L fixed.
template <typename T>
class LossWeights {
public:
    LossWeights(LossWeightMode mode = LossWeightMode::learnable, std::array<double, 4> initial = {0.25, 0.25, 0.25, 0.25},
                double omega_high = 0.4, double omega_low = 0.6, std::array<bool, 4> enabled = {true, true, true, true})
        : mode_(mode), omega_high_(omega_high), omega_low_(omega_low), enabled_(enabled) {
        if (std::abs(omega_high + omega_low - 1.0) > 1e-12) {
            throw ConfigError("omega_high + omega_low must equal 1, got " + std::to_string(omega_high + omega_low));
        }
        std::vector<T> l(4);
        for (std::size_t i = 0; i < 4; ++i) {
            if (!(initial[i] > 0.0)) throw ConfigError("loss weights must be positive");
            l[i] = static_cast<T>(std::log(initial[i]));
        }
        logits_ = Tensor<T>(Shape{4}, std::move(l));
        logits_.set_requires_grad(mode == LossWeightMode::learnable);
    }

    static LossWeights from_config(const TrainConfig& tc) {
        return LossWeights(tc.loss_weight_mode, tc.fixed_omegas, tc.omega_high, tc.omega_low, tc.enabled_losses);
    }

    LossWeightMode mode() const { return mode_; }
    double omega_high() const { return omega_high_; }
    double omega_low() const { return omega_low_; }
    Tensor<T>& logits() { return logits_; }
    const Tensor<T>& logits() const { return logits_; }

    const std::array<bool, 4>& enabled() const { return enabled_; }

    /// Differentiable Omega_1..4; disabled losses get weight 0 and the rest
    /// are renormalized.
    Tensor<T> omegas() const {
        if (std::all_of(enabled_.begin(), enabled_.end(), [](bool b) { return b; })) return softmax_last(logits_);
        std::vector<T> offset(4);
        for (std::size_t i = 0; i < 4; ++i) offset[i] = enabled_[i] ? T(0) : T(-1e4);
        return softmax_last(add(logits_, Tensor<T>(Shape{4}, std::move(offset))));
    }

    std::array<double, 4> realized() const {
        NoGradGuard guard;
        const auto o = omegas();
        return {o.values()[0], o.values()[1], o.values()[2], o.values()[3]};
    }

    void set_logits(const std::array<T, 4>& l) {
        auto d = logits_.mutable_data();
        for (std::size_t i = 0; i < 4; ++i) d[i] = l[i];
    }

private:
    LossWeightMode mode_;
    double omega_high_, omega_low_;
    std::array<bool, 4> enabled_;
    Tensor<T> logits_;
};

template <typename T>
struct LossSuite {
    T charbonnier_eps = T(1e-3);
    FeatureExtractor<T> extractor;

    static LossSuite from_config(const TrainConfig& tc) {
        return LossSuite{static_cast<T>(tc.charbonnier_eps), FeatureExtractor<T>(tc.perceptual_seed)};
    }
};

template <typename T>
struct ResolutionLoss {
    Tensor<T> total;
    std::array<Tensor<T>, 4> terms;  // charbonnier, gradient, ms-ssim, perceptual
};

/// Omega_1 L_C + Omega_2 L_G + Omega_3 L_M + Omega_4 L_P at one resolution.
template <typename T>
ResolutionLoss<T> resolution_loss(const Tensor<T>& pred, const Tensor<T>& gt, const LossWeights<T>& weights,
                                  const LossSuite<T>& suite) {
    detail::require_same_shape(pred.shape(), gt.shape(), "resolution_loss");
    ResolutionLoss<T> r;
    const auto& on = weights.enabled();
    r.terms[0] = on[0] ? charbonnier(pred, gt, suite.charbonnier_eps) : Tensor<T>::scalar(T(0));
    r.terms[1] = on[1] ? gradient_loss(pred, gt) : Tensor<T>::scalar(T(0));
    r.terms[2] = on[2] ? ms_ssim_loss(pred, gt) : Tensor<T>::scalar(T(0));
    r.terms[3] = on[3] ? perceptual_loss(pred, gt, suite.extractor) : Tensor<T>::scalar(T(0));
    auto stacked = reshape(stack(std::vector<Tensor<T>>(r.terms.begin(), r.terms.end())), Shape{4});
    r.total = dot(weights.omegas(), stacked);
    return r;
}

template <typename T>
struct TotalLoss {
    Tensor<T> total;
    ResolutionLoss<T> high;  // x2 output
    ResolutionLoss<T> low;   // full-resolution output
};

/// Omega_H L_H + Omega_L L_L.
template <typename T>
TotalLoss<T> total_loss(const ModelOutput<T>& out, const Tensor<T>& gt_full, const Tensor<T>& gt_double,
                        const LossWeights<T>& weights, const LossSuite<T>& suite) {
    detail::require_rank(gt_full.shape(), 4, "total_loss", "gt_full");
    detail::require_rank(gt_double.shape(), 4, "total_loss", "gt_double");
    if (gt_double.dim(2) != 2 * gt_full.dim(2) || gt_double.dim(3) != 2 * gt_full.dim(3)) {
        throw DimensionError("total_loss: gt_double " + to_string(gt_double.shape()) + " is not twice gt_full " +
                             to_string(gt_full.shape()));
    }
    TotalLoss<T> t;
    t.high = resolution_loss(out.double_res, gt_double, weights, suite);
    t.low = resolution_loss(out.full_res, gt_full, weights, suite);
    t.total = add(mul_scalar(t.high.total, static_cast<T>(weights.omega_high())),
                  mul_scalar(t.low.total, static_cast<T>(weights.omega_low())));
    return t;
}

}  // namespace phaseformer
