#pragma once

// Evaluation metrics on images in [0, 1]: PSNR, single-scale SSIM on luma,
// and the no-reference underwater measures UICM / UISM / UIConM / UIQM.
//
// UIQM follows Panetta, Gao & Agaian, "Human-Visual-System-Inspired Underwater
// Image Quality Measures" (IEEE J. Oceanic Eng., 2016): pixel values on the
// 0-255 scale, alpha-trimmed (0.1 / 0.1) colour statistics, Sobel-weighted EME
// and logAMEE over 8x8 blocks, c1 = 0.0282, c2 = 0.2953, c3 = 3.5753.

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "phaseformer/error.hpp"
#include "phaseformer/losses.hpp"
#include "phaseformer/tensor.hpp"

namespace phaseformer {

namespace uiqm_constants {
inline constexpr double c1 = 0.0282;
inline constexpr double c2 = 0.2953;
inline constexpr double c3 = 3.5753;
inline constexpr double trim_low = 0.1;
inline constexpr double trim_high = 0.1;
inline constexpr double uicm_mean_weight = -0.0268;
inline constexpr double uicm_var_weight = 0.1586;
inline constexpr std::size_t block = 8;
inline constexpr double luma_r = 0.299, luma_g = 0.587, luma_b = 0.114;
}  // namespace uiqm_constants

inline constexpr double psnr_cap_db = 100.0;

/// A single plane of doubles.
struct Plane {
    std::size_t h = 0, w = 0;
    std::vector<double> v;
    double at(std::size_t i, std::size_t j) const { return v[i * w + j]; }
};

namespace detail {

/// Accepts [C,H,W] or [1,C,H,W]; returns the channel planes.
template <typename T>
std::vector<Plane> planes_of(const Tensor<T>& x, const char* op) {
    Shape s = x.shape();
    if (s.size() == 4) {
        if (s[0] != 1) throw DimensionError(std::string(op) + ": expects a single image, got " + to_string(s));
        s.erase(s.begin());
    }
    if (s.size() == 2) s.insert(s.begin(), 1);
    if (s.size() != 3) throw DimensionError(std::string(op) + ": expected [C,H,W], got " + to_string(x.shape()));
    std::vector<Plane> out(s[0]);
    const auto& d = x.values();
    for (std::size_t c = 0; c < s[0]; ++c) {
        out[c].h = s[1];
        out[c].w = s[2];
        out[c].v.assign(d.begin() + static_cast<std::ptrdiff_t>(c * s[1] * s[2]),
                        d.begin() + static_cast<std::ptrdiff_t>((c + 1) * s[1] * s[2]));
    }
    return out;
}

inline Plane luma(const std::vector<Plane>& rgb) {
    if (rgb.size() == 1) return rgb[0];
    if (rgb.size() != 3) throw DimensionError("luma: expected 1 or 3 channels, got " + std::to_string(rgb.size()));
    Plane y{rgb[0].h, rgb[0].w, std::vector<double>(rgb[0].v.size())};
    for (std::size_t i = 0; i < y.v.size(); ++i) {
        y.v[i] = uiqm_constants::luma_r * rgb[0].v[i] + uiqm_constants::luma_g * rgb[1].v[i] +
                 uiqm_constants::luma_b * rgb[2].v[i];
    }
    return y;
}

inline Plane blur_valid(const Plane& p, const std::vector<double>& g) {
    const std::size_t k = g.size(), ho = p.h - k + 1, wo = p.w - k + 1;
    Plane tmp{p.h, wo, std::vector<double>(p.h * wo)};
    for (std::size_t i = 0; i < p.h; ++i)
        for (std::size_t j = 0; j < wo; ++j) {
            double s = 0.0;
            for (std::size_t t = 0; t < k; ++t) s += g[t] * p.at(i, j + t);
            tmp.v[i * wo + j] = s;
        }
    Plane out{ho, wo, std::vector<double>(ho * wo)};
    for (std::size_t i = 0; i < ho; ++i)
        for (std::size_t j = 0; j < wo; ++j) {
            double s = 0.0;
            for (std::size_t t = 0; t < k; ++t) s += g[t] * tmp.at(i + t, j);
            out.v[i * wo + j] = s;
        }
    return out;
}

inline double ssim_plane(const Plane& x, const Plane& y, double peak) {
    if (std::min(x.h, x.w) < ssim_constants::window) {
        throw ConfigError("ssim: image " + std::to_string(x.h) + "x" + std::to_string(x.w) + " smaller than the " +
                          std::to_string(ssim_constants::window) + "-pixel window");
    }
    const auto g = gaussian_window();
    auto prod = [](const Plane& a, const Plane& b) {
        Plane r{a.h, a.w, std::vector<double>(a.v.size())};
        for (std::size_t i = 0; i < r.v.size(); ++i) r.v[i] = a.v[i] * b.v[i];
        return r;
    };
    const Plane mx = blur_valid(x, g), my = blur_valid(y, g);
    const Plane exx = blur_valid(prod(x, x), g), eyy = blur_valid(prod(y, y), g), exy = blur_valid(prod(x, y), g);
    const double c1 = (ssim_constants::k1 * peak) * (ssim_constants::k1 * peak);
    const double c2 = (ssim_constants::k2 * peak) * (ssim_constants::k2 * peak);
    double total = 0.0;
    for (std::size_t i = 0; i < mx.v.size(); ++i) {
        const double ux = mx.v[i], uy = my.v[i];
        const double vx = exx.v[i] - ux * ux, vy = eyy.v[i] - uy * uy, cxy = exy.v[i] - ux * uy;
        total += ((2 * ux * uy + c1) * (2 * cxy + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
    }
    return total / static_cast<double>(mx.v.size());
}

/// Mean of the values left after dropping ceil(low*K) smallest and floor(high*K) largest.
inline double trimmed_mean(std::vector<double> v, double low, double high) {
    std::sort(v.begin(), v.end());
    const std::size_t k = v.size();
    const auto lo = static_cast<std::size_t>(std::ceil(low * static_cast<double>(k)));
    const auto hi = static_cast<std::size_t>(std::floor(high * static_cast<double>(k)));
    if (lo + hi >= k) return 0.0;
    double s = 0.0;
    for (std::size_t i = lo; i < k - hi; ++i) s += v[i];
    return s / static_cast<double>(k - lo - hi);
}

/// Sobel gradient magnitude with edge-replicated borders.
inline Plane sobel_magnitude(const Plane& p) {
    Plane out{p.h, p.w, std::vector<double>(p.v.size())};
    auto px = [&p](long i, long j) {
        i = std::clamp<long>(i, 0, static_cast<long>(p.h) - 1);
        j = std::clamp<long>(j, 0, static_cast<long>(p.w) - 1);
        return p.at(static_cast<std::size_t>(i), static_cast<std::size_t>(j));
    };
    for (long i = 0; i < static_cast<long>(p.h); ++i)
        for (long j = 0; j < static_cast<long>(p.w); ++j) {
            const double gx = (px(i - 1, j + 1) + 2 * px(i, j + 1) + px(i + 1, j + 1)) -
                              (px(i - 1, j - 1) + 2 * px(i, j - 1) + px(i + 1, j - 1));
            const double gy = (px(i + 1, j - 1) + 2 * px(i + 1, j) + px(i + 1, j + 1)) -
                              (px(i - 1, j - 1) + 2 * px(i - 1, j) + px(i - 1, j + 1));
            out.v[static_cast<std::size_t>(i) * p.w + static_cast<std::size_t>(j)] = std::hypot(gx, gy);
        }
    return out;
}

/// Visits each full block x block tile, passing (min, max) over `channels`.
template <typename F>
void for_each_block(const std::vector<Plane>& channels, std::size_t block, F&& fn) {
    const std::size_t h = channels[0].h, w = channels[0].w;
    for (std::size_t bi = 0; bi + block <= h; bi += block)
        for (std::size_t bj = 0; bj + block <= w; bj += block) {
            double lo = std::numeric_limits<double>::infinity(), hi = -lo;
            for (const auto& c : channels)
                for (std::size_t i = bi; i < bi + block; ++i)
                    for (std::size_t j = bj; j < bj + block; ++j) {
                        lo = std::min(lo, c.at(i, j));
                        hi = std::max(hi, c.at(i, j));
                    }
            fn(lo, hi);
        }
}

inline std::size_t block_count(const Plane& p, std::size_t block) { return (p.h / block) * (p.w / block); }

inline Plane to_255(const Plane& p) {
    Plane r = p;
    for (auto& v : r.v) v *= 255.0;
    return r;
}

inline std::vector<Plane> rgb_255(const std::vector<Plane>& rgb, const char* op) {
    if (rgb.size() != 3) throw DomainError(std::string(op) + ": needs a 3-channel colour image, got " +
                                           std::to_string(rgb.size()) + " channel(s)");
    return {to_255(rgb[0]), to_255(rgb[1]), to_255(rgb[2])};
}

/// 2/(k1 k2) * sum log(max/min); blocks with a zero extreme contribute 0.
inline double eme(const Plane& p, std::size_t block) {
    const std::size_t n = block_count(p, block);
    if (n == 0) throw ConfigError("eme: image smaller than one " + std::to_string(block) + "x" + std::to_string(block) + " block");
    double s = 0.0;
    for_each_block(std::vector<Plane>{p}, block, [&s](double lo, double hi) {
        if (lo > 0.0 && hi > 0.0) s += std::log(hi / lo);
    });
    return 2.0 / static_cast<double>(n) * s;
}

}  // namespace detail

template <typename T>
double psnr(const Tensor<T>& x, const Tensor<T>& y, double peak = 1.0) {
    detail::require_same_shape(x.shape(), y.shape(), "psnr");
    double se = 0.0;
    const auto& a = x.values();
    const auto& b = y.values();
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
        se += d * d;
    }
    const double mse = se / static_cast<double>(a.size());
    if (mse == 0.0) return psnr_cap_db;
    return std::min(psnr_cap_db, 10.0 * std::log10(peak * peak / mse));
}

/// Single-scale SSIM on ITU-R 601 luma (or the single channel of a grey image).
template <typename T>
double ssim(const Tensor<T>& x, const Tensor<T>& y, double peak = 1.0) {
    detail::require_same_shape(x.shape(), y.shape(), "ssim");
    return detail::ssim_plane(detail::luma(detail::planes_of(x, "ssim")), detail::luma(detail::planes_of(y, "ssim")),
                              peak);
}

template <typename T>
double uicm(const Tensor<T>& x) {
    const auto rgb = detail::rgb_255(detail::planes_of(x, "uicm"), "uicm");
    const std::size_t n = rgb[0].v.size();
    std::vector<double> rg(n), yb(n);
    for (std::size_t i = 0; i < n; ++i) {
        rg[i] = rgb[0].v[i] - rgb[1].v[i];
        yb[i] = 0.5 * (rgb[0].v[i] + rgb[1].v[i]) - rgb[2].v[i];
    }
    const double mrg = detail::trimmed_mean(rg, uiqm_constants::trim_low, uiqm_constants::trim_high);
    const double myb = detail::trimmed_mean(yb, uiqm_constants::trim_low, uiqm_constants::trim_high);
    double vrg = 0.0, vyb = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        vrg += (rg[i] - mrg) * (rg[i] - mrg);
        vyb += (yb[i] - myb) * (yb[i] - myb);
    }
    vrg /= static_cast<double>(n);
    vyb /= static_cast<double>(n);
    return uiqm_constants::uicm_mean_weight * std::sqrt(mrg * mrg + myb * myb) +
           uiqm_constants::uicm_var_weight * std::sqrt(vrg + vyb);
}

template <typename T>
double uism(const Tensor<T>& x) {
    const auto rgb = detail::rgb_255(detail::planes_of(x, "uism"), "uism");
    const double w[3] = {uiqm_constants::luma_r, uiqm_constants::luma_g, uiqm_constants::luma_b};
    double s = 0.0;
    for (std::size_t c = 0; c < 3; ++c) {
        auto edge = detail::sobel_magnitude(rgb[c]);
        for (std::size_t i = 0; i < edge.v.size(); ++i) edge.v[i] *= rgb[c].v[i];
        s += w[c] * detail::eme(edge, uiqm_constants::block);
    }
    return s;
}

/// logAMEE contrast: -1/(k1 k2) * sum (r log r), r = (max-min)/(max+min) over all channels of a block.
template <typename T>
double uiconm(const Tensor<T>& x) {
    const auto rgb = detail::rgb_255(detail::planes_of(x, "uiconm"), "uiconm");
    const std::size_t n = detail::block_count(rgb[0], uiqm_constants::block);
    if (n == 0) throw ConfigError("uiconm: image smaller than one block");
    double s = 0.0;
    detail::for_each_block(rgb, uiqm_constants::block, [&s](double lo, double hi) {
        const double top = hi - lo, bot = hi + lo;
        if (top > 0.0 && bot > 0.0) {
            const double r = top / bot;
            s += r * std::log(r);
        }
    });
    return -s / static_cast<double>(n);
}

template <typename T>
double uiqm(const Tensor<T>& x) {
    return uiqm_constants::c1 * uicm(x) + uiqm_constants::c2 * uism(x) + uiqm_constants::c3 * uiconm(x);
}

struct MetricRow {
    std::string name;
    double psnr = 0, ssim = 0, uiqm = 0, uism = 0;
};

struct MetricReport {
    std::vector<MetricRow> rows;
    MetricRow mean() const {
        MetricRow m{"mean"};
        if (rows.empty()) return m;
        for (const auto& r : rows) {
            m.psnr += r.psnr;
            m.ssim += r.ssim;
            m.uiqm += r.uiqm;
            m.uism += r.uism;
        }
        const double n = static_cast<double>(rows.size());
        m.psnr /= n;
        m.ssim /= n;
        m.uiqm /= n;
        m.uism /= n;
        return m;
    }
};

/// All four metrics for a restored image against its reference.
template <typename T>
MetricRow evaluate_pair(const std::string& name, const Tensor<T>& restored, const Tensor<T>& reference) {
    return {name, psnr(restored, reference), ssim(restored, reference), uiqm(restored), uism(restored)};
}

}  // namespace phaseformer
