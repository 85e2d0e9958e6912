#pragma once

// Training-time augmentation of (degraded, clean) pairs: shared random flips,
// plus Gaussian noise and contrast jitter on the degraded image only.

#include <algorithm>
#include <utility>

#include "phaseformer/config.hpp"
#include "phaseformer/random.hpp"
#include "phaseformer/tensor.hpp"

namespace phaseformer {

struct AugmentDraw {
    bool hflip = false;
    bool vflip = false;
    double noise_sigma = 0.0;
    double contrast = 1.0;
};

struct AugmentRanges {
    double flip_prob = 0.5;
    double noise_sigma_max = 0.02;
    double contrast_min = 0.8;
    double contrast_max = 1.2;

    static AugmentRanges from_config(const TrainConfig& tc) {
        return {tc.flip_prob, tc.noise_sigma_max, tc.contrast_min, tc.contrast_max};
    }
};

/// Always consumes the same number of draws, in a fixed order.
inline AugmentDraw draw_augment(Rng& rng, const AugmentRanges& r) {
    AugmentDraw d;
    d.hflip = rng.bernoulli(r.flip_prob);
    d.vflip = rng.bernoulli(r.flip_prob);
    d.noise_sigma = rng.uniform(0.0, r.noise_sigma_max);
    d.contrast = rng.uniform(r.contrast_min, r.contrast_max);
    return d;
}

template <typename T>
Tensor<T> flip(const Tensor<T>& x, bool horizontal, bool vertical) {
    if (!horizontal && !vertical) return x.detach();
    const std::size_t h = x.dim(x.rank() - 2), w = x.dim(x.rank() - 1), planes = x.numel() / (h * w);
    const auto& v = x.values();
    std::vector<T> out(v.size());
    for (std::size_t p = 0; p < planes; ++p)
        for (std::size_t i = 0; i < h; ++i)
            for (std::size_t j = 0; j < w; ++j) {
                const std::size_t si = vertical ? h - 1 - i : i, sj = horizontal ? w - 1 - j : j;
                out[(p * h + i) * w + j] = v[(p * h + si) * w + sj];
            }
    return Tensor<T>(x.shape(), std::move(out));
}

template <typename T>
struct ImagePair {
    Tensor<T> degraded;
    Tensor<T> clean;
};

/// Applies a concrete draw. Noise samples come from `rng` only when sigma > 0.
template <typename T>
ImagePair<T> apply_augment(const ImagePair<T>& pair, const AugmentDraw& d, Rng& rng) {
    ImagePair<T> out{flip(pair.degraded, d.hflip, d.vflip), flip(pair.clean, d.hflip, d.vflip)};
    if (d.noise_sigma == 0.0 && d.contrast == 1.0) return out;
    auto v = out.degraded.mutable_data();
    double m = 0.0;
    for (T e : v) m += e;
    m /= static_cast<double>(v.size());
    for (auto& e : v) {
        double x = (static_cast<double>(e) - m) * d.contrast + m;
        if (d.noise_sigma > 0.0) x += rng.normal(0.0, d.noise_sigma);
        e = static_cast<T>(std::clamp(x, 0.0, 1.0));
    }
    return out;
}

template <typename T>
ImagePair<T> augment(const ImagePair<T>& pair, Rng& rng, const AugmentRanges& ranges = {}) {
    const auto d = draw_augment(rng, ranges);
    return apply_augment(pair, d, rng);
}

}  // namespace phaseformer
