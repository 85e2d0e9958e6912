#pragma once

// Independent slow reference implementations used as test oracles. None of
// these call into the library's numeric kernels: they work on flat
// std::vector<double> buffers with explicit loops.

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <numbers>
#include <vector>

#include "phaseformer/phaseformer.hpp"

namespace oracle {

using phaseformer::Rng;
using phaseformer::Shape;
using phaseformer::Tensor;
using Vec = std::vector<double>;

inline Tensor<double> random_tensor(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
    Rng rng(seed);
    return Tensor<double>::uniform(std::move(shape), rng, lo, hi);
}

inline double max_abs_diff(const Vec& a, const Vec& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

template <typename T>
double max_abs_diff(const Tensor<T>& a, const Vec& b) {
    Vec av(a.values().begin(), a.values().end());
    return max_abs_diff(av, b);
}

/// Direct cross-correlation, zero padding.
inline Vec conv2d(const Vec& x, std::size_t N, std::size_t C, std::size_t H, std::size_t W, const Vec& w,
                  std::size_t O, std::size_t K, std::size_t stride, std::size_t pad, std::size_t* Ho_out = nullptr,
                  std::size_t* Wo_out = nullptr) {
    const std::size_t Ho = (H + 2 * pad - K) / stride + 1, Wo = (W + 2 * pad - K) / stride + 1;
    Vec out(N * O * Ho * Wo, 0.0);
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t o = 0; o < O; ++o)
            for (std::size_t i = 0; i < Ho; ++i)
                for (std::size_t j = 0; j < Wo; ++j) {
                    double s = 0.0;
                    for (std::size_t c = 0; c < C; ++c)
                        for (std::size_t a = 0; a < K; ++a)
                            for (std::size_t b = 0; b < K; ++b) {
                                const long yi = static_cast<long>(i * stride + a) - static_cast<long>(pad);
                                const long xj = static_cast<long>(j * stride + b) - static_cast<long>(pad);
                                if (yi < 0 || xj < 0 || yi >= static_cast<long>(H) || xj >= static_cast<long>(W)) continue;
                                s += x[((n * C + c) * H + static_cast<std::size_t>(yi)) * W + static_cast<std::size_t>(xj)] *
                                     w[((o * C + c) * K + a) * K + b];
                            }
                    out[((n * O + o) * Ho + i) * Wo + j] = s;
                }
    if (Ho_out) *Ho_out = Ho;
    if (Wo_out) *Wo_out = Wo;
    return out;
}

/// Grouped (one filter per channel) convolution with same padding.
inline Vec depthwise(const Vec& x, std::size_t N, std::size_t C, std::size_t H, std::size_t W, const Vec& w,
                     std::size_t K) {
    Vec out(x.size(), 0.0);
    const long p = static_cast<long>(K / 2);
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t c = 0; c < C; ++c)
            for (long i = 0; i < static_cast<long>(H); ++i)
                for (long j = 0; j < static_cast<long>(W); ++j) {
                    double s = 0.0;
                    for (long a = 0; a < static_cast<long>(K); ++a)
                        for (long b = 0; b < static_cast<long>(K); ++b) {
                            const long yi = i + a - p, xj = j + b - p;
                            if (yi < 0 || xj < 0 || yi >= static_cast<long>(H) || xj >= static_cast<long>(W)) continue;
                            s += x[((n * C + c) * H + yi) * W + xj] * w[(c * K + a) * K + b];
                        }
                    out[((n * C + c) * H + i) * W + j] = s;
                }
    return out;
}

/// Length-preserving 1D correlation with zero padding.
inline Vec conv1d(const Vec& x, const Vec& w) {
    const long L = static_cast<long>(x.size()), K = static_cast<long>(w.size()), p = K / 2;
    Vec out(x.size(), 0.0);
    for (long i = 0; i < L; ++i)
        for (long t = 0; t < K; ++t) {
            const long src = i + t - p;
            if (src >= 0 && src < L) out[i] += w[t] * x[src];
        }
    return out;
}

/// Transposed convolution as zero-stuffing + padding + correlation with the flipped kernel.
inline Vec conv_transpose2d(const Vec& x, std::size_t N, std::size_t Ci, std::size_t H, std::size_t W, const Vec& w,
                            std::size_t Co, std::size_t K, std::size_t stride, std::size_t pad) {
    const std::size_t Hs = (H - 1) * stride + 1, Ws = (W - 1) * stride + 1;
    const std::size_t border = K - 1 - pad;
    const std::size_t Hp = Hs + 2 * border, Wp = Ws + 2 * border;
    Vec z(N * Ci * Hp * Wp, 0.0);
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t c = 0; c < Ci; ++c)
            for (std::size_t i = 0; i < H; ++i)
                for (std::size_t j = 0; j < W; ++j)
                    z[((n * Ci + c) * Hp + border + i * stride) * Wp + border + j * stride] = x[((n * Ci + c) * H + i) * W + j];
    Vec wf(Co * Ci * K * K);
    for (std::size_t c = 0; c < Ci; ++c)
        for (std::size_t o = 0; o < Co; ++o)
            for (std::size_t a = 0; a < K; ++a)
                for (std::size_t b = 0; b < K; ++b)
                    wf[((o * Ci + c) * K + a) * K + b] = w[((c * Co + o) * K + (K - 1 - a)) * K + (K - 1 - b)];
    return conv2d(z, N, Ci, Hp, Wp, wf, Co, K, 1, 0);
}

/// O(N^2) DFT of one plane; inverse=true uses +i and divides by H*W.
inline std::vector<std::complex<double>> dft2(const std::vector<std::complex<double>>& x, std::size_t H, std::size_t W,
                                              bool inverse = false) {
    std::vector<std::complex<double>> out(H * W);
    const double sign = inverse ? 1.0 : -1.0;
    for (std::size_t u = 0; u < H; ++u)
        for (std::size_t v = 0; v < W; ++v) {
            std::complex<double> s = 0.0;
            for (std::size_t i = 0; i < H; ++i)
                for (std::size_t j = 0; j < W; ++j) {
                    const double ang = sign * 2.0 * std::numbers::pi *
                                       (static_cast<double>(u * i) / static_cast<double>(H) +
                                        static_cast<double>(v * j) / static_cast<double>(W));
                    s += x[i * W + j] * std::complex<double>(std::cos(ang), std::sin(ang));
                }
            out[u * W + v] = inverse ? s / static_cast<double>(H * W) : s;
        }
    return out;
}

/// Phase-only reconstruction per plane via the direct DFT.
inline Vec pem(const Vec& x, std::size_t planes, std::size_t H, std::size_t W) {
    Vec out(x.size());
    for (std::size_t p = 0; p < planes; ++p) {
        std::vector<std::complex<double>> plane(H * W);
        for (std::size_t i = 0; i < H * W; ++i) plane[i] = x[p * H * W + i];
        auto s = dft2(plane, H, W);
        for (auto& z : s) {
            const double ph = (z.real() == 0.0 && z.imag() == 0.0) ? 0.0 : std::arg(z);
            z = std::complex<double>(std::cos(ph), std::sin(ph));
        }
        auto r = dft2(s, H, W, true);
        for (std::size_t i = 0; i < H * W; ++i) out[p * H * W + i] = r[i].real();
    }
    return out;
}

inline double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

/// Dense-matrix PMSA for one image (N = 1): explicit per-head matrices.
inline Vec pmsa(const Vec& y, std::size_t C, std::size_t H, std::size_t W, std::size_t heads,
                const phaseformer::PmsaParams<double>& p, bool phase = true) {
    auto vals = [](const Tensor<double>& t) { return Vec(t.values().begin(), t.values().end()); };
    const std::size_t P = H * W, c = C / heads;
    const Vec src = phase ? pem(y, C, H, W) : y;
    auto proj = [&](const Vec& in, const Tensor<double>& point, const Tensor<double>& depth) {
        Vec a = conv2d(in, 1, C, H, W, vals(point), C, 1, 1, 0);
        return depthwise(a, 1, C, H, W, vals(depth), 3);
    };
    const Vec q = proj(src, p.q_point, p.q_depth), k = proj(src, p.k_point, p.k_depth), v = proj(y, p.v_point, p.v_depth);
    Vec attended(C * P, 0.0);
    for (std::size_t h = 0; h < heads; ++h) {
        // Phi_q: P x c, Phi_k: c x P, V: P x c
        std::vector<Vec> phiq(P, Vec(c)), phik(c, Vec(P)), vm(P, Vec(c));
        for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t pos = 0; pos < P; ++pos) {
                phiq[pos][ch] = q[(h * c + ch) * P + pos];
                phik[ch][pos] = k[(h * c + ch) * P + pos];
                vm[pos][ch] = v[(h * c + ch) * P + pos];
            }
        const double alpha = p.alpha.values()[h];
        std::vector<Vec> A(c, Vec(c, 0.0));
        for (std::size_t i = 0; i < c; ++i)
            for (std::size_t j = 0; j < c; ++j) {
                for (std::size_t pos = 0; pos < P; ++pos) A[i][j] += phik[i][pos] * phiq[pos][j];
                A[i][j] /= alpha;
            }
        for (std::size_t i = 0; i < c; ++i) {
            double m = A[i][0];
            for (double e : A[i]) m = std::max(m, e);
            double s = 0.0;
            for (auto& e : A[i]) s += (e = std::exp(e - m));
            for (auto& e : A[i]) e /= s;
        }
        for (std::size_t pos = 0; pos < P; ++pos)
            for (std::size_t j = 0; j < c; ++j) {
                double s = 0.0;
                for (std::size_t i = 0; i < c; ++i) s += vm[pos][i] * A[i][j];
                attended[(h * c + j) * P + pos] = s;
            }
    }
    Vec out = conv2d(attended, 1, C, H, W, vals(p.out_point), C, 1, 1, 0);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += y[i];
    return out;
}

/// u * sigmoid(conv1d(mean(pem(u)))) for one image.
inline Vec opab(const Vec& u, std::size_t C, std::size_t H, std::size_t W, const Vec& kernel, bool phase = true) {
    const Vec src = phase ? pem(u, C, H, W) : u;
    Vec pooled(C, 0.0);
    for (std::size_t c = 0; c < C; ++c) {
        for (std::size_t i = 0; i < H * W; ++i) pooled[c] += src[c * H * W + i];
        pooled[c] /= static_cast<double>(H * W);
    }
    const Vec g = conv1d(pooled, kernel);
    Vec out(u.size());
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t i = 0; i < H * W; ++i) out[c * H * W + i] = u[c * H * W + i] * sigmoid(g[c]);
    return out;
}

// ----------------------------------------------------------------- SSIM family

inline Vec gauss11() {
    Vec g(11);
    double s = 0.0;
    for (int i = 0; i < 11; ++i) s += (g[i] = std::exp(-(i - 5.0) * (i - 5.0) / (2.0 * 1.5 * 1.5)));
    for (auto& v : g) v /= s;
    return g;
}

struct SsimPair {
    double ssim = 0.0, cs = 0.0;
};

/// Single pass over every valid 11x11 window, accumulating all moments at once.
inline SsimPair ssim_window_pass(const Vec& x, const Vec& y, std::size_t H, std::size_t W) {
    const Vec g = gauss11();
    const double C1 = 1e-4, C2 = 9e-4;
    double ss = 0.0, cs = 0.0;
    std::size_t count = 0;
    for (std::size_t i = 0; i + 11 <= H; ++i)
        for (std::size_t j = 0; j + 11 <= W; ++j) {
            double mx = 0, my = 0, xx = 0, yy = 0, xy = 0;
            for (std::size_t a = 0; a < 11; ++a)
                for (std::size_t b = 0; b < 11; ++b) {
                    const double wt = g[a] * g[b];
                    const double xv = x[(i + a) * W + j + b], yv = y[(i + a) * W + j + b];
                    mx += wt * xv;
                    my += wt * yv;
                    xx += wt * xv * xv;
                    yy += wt * yv * yv;
                    xy += wt * xv * yv;
                }
            const double vx = xx - mx * mx, vy = yy - my * my, cxy = xy - mx * my;
            const double c = (2 * cxy + C2) / (vx + vy + C2);
            const double l = (2 * mx * my + C1) / (mx * mx + my * my + C1);
            ss += l * c;
            cs += c;
            ++count;
        }
    return {ss / static_cast<double>(count), cs / static_cast<double>(count)};
}

inline Vec pool2(const Vec& x, std::size_t H, std::size_t W) {
    Vec out((H / 2) * (W / 2));
    for (std::size_t i = 0; i < H / 2; ++i)
        for (std::size_t j = 0; j < W / 2; ++j)
            out[i * (W / 2) + j] = 0.25 * (x[2 * i * W + 2 * j] + x[2 * i * W + 2 * j + 1] + x[(2 * i + 1) * W + 2 * j] +
                                           x[(2 * i + 1) * W + 2 * j + 1]);
    return out;
}

/// MS-SSIM of one plane pair.
inline double ms_ssim_plane(Vec x, Vec y, std::size_t H, std::size_t W) {
    const double weights[5] = {0.0448, 0.2856, 0.3001, 0.2363, 0.1333};
    std::size_t scales = 0;
    for (std::size_t m = std::min(H, W); m >= 11 && scales < 5; m /= 2) ++scales;
    double wsum = 0.0;
    for (std::size_t s = 0; s < scales; ++s) wsum += weights[s];
    double prod = 1.0;
    for (std::size_t s = 0; s < scales; ++s) {
        const auto r = ssim_window_pass(x, y, H, W);
        const double base = std::max(s + 1 == scales ? r.ssim : r.cs, 1e-6);
        prod *= std::pow(base, weights[s] / wsum);
        if (s + 1 < scales) {
            x = pool2(x, H, W);
            y = pool2(y, H, W);
            H /= 2;
            W /= 2;
        }
    }
    return prod;
}

// ----------------------------------------------------------------------- UIQM

/// Per-block reference of the Panetta UIQM on an RGB image in [0,1], [3,H,W].
struct UiqmParts {
    double uicm = 0, uism = 0, uiconm = 0, uiqm = 0;
};

inline UiqmParts uiqm(const Vec& img, std::size_t H, std::size_t W) {
    const std::size_t P = H * W;
    auto px = [&](std::size_t c, long i, long j) {
        i = std::clamp(i, 0L, static_cast<long>(H) - 1);
        j = std::clamp(j, 0L, static_cast<long>(W) - 1);
        return 255.0 * img[c * P + static_cast<std::size_t>(i) * W + static_cast<std::size_t>(j)];
    };
    UiqmParts r;
    // colourfulness
    Vec rg(P), yb(P);
    for (std::size_t i = 0; i < P; ++i) {
        const double R = 255.0 * img[i], G = 255.0 * img[P + i], B = 255.0 * img[2 * P + i];
        rg[i] = R - G;
        yb[i] = (R + G) / 2.0 - B;
    }
    auto stats = [P](Vec v) {
        std::sort(v.begin(), v.end());
        const std::size_t tl = static_cast<std::size_t>(std::ceil(0.1 * P)), tr = static_cast<std::size_t>(std::floor(0.1 * P));
        double mu = 0.0;
        for (std::size_t i = tl; i < P - tr; ++i) mu += v[i];
        mu /= static_cast<double>(P - tl - tr);
        double var = 0.0;
        for (double e : v) var += (e - mu) * (e - mu);
        return std::pair{mu, var / static_cast<double>(P)};
    };
    const auto [mrg, vrg] = stats(rg);
    const auto [myb, vyb] = stats(yb);
    r.uicm = -0.0268 * std::sqrt(mrg * mrg + myb * myb) + 0.1586 * std::sqrt(vrg + vyb);
    // sharpness
    const long k1 = static_cast<long>(H / 8), k2 = static_cast<long>(W / 8);
    const double lw[3] = {0.299, 0.587, 0.114};
    for (std::size_t c = 0; c < 3; ++c) {
        double acc = 0.0;
        for (long bi = 0; bi < k1; ++bi)
            for (long bj = 0; bj < k2; ++bj) {
                double lo = 1e300, hi = -1e300;
                for (long i = bi * 8; i < bi * 8 + 8; ++i)
                    for (long j = bj * 8; j < bj * 8 + 8; ++j) {
                        const double sx = -px(c, i - 1, j - 1) - 2 * px(c, i, j - 1) - px(c, i + 1, j - 1) +
                                          px(c, i - 1, j + 1) + 2 * px(c, i, j + 1) + px(c, i + 1, j + 1);
                        const double sy = -px(c, i - 1, j - 1) - 2 * px(c, i - 1, j) - px(c, i - 1, j + 1) +
                                          px(c, i + 1, j - 1) + 2 * px(c, i + 1, j) + px(c, i + 1, j + 1);
                        const double e = std::sqrt(sx * sx + sy * sy) * px(c, i, j);
                        lo = std::min(lo, e);
                        hi = std::max(hi, e);
                    }
                if (lo > 0 && hi > 0) acc += std::log(hi / lo);
            }
        r.uism += lw[c] * 2.0 / static_cast<double>(k1 * k2) * acc;
    }
    // contrast
    double acc = 0.0;
    for (long bi = 0; bi < k1; ++bi)
        for (long bj = 0; bj < k2; ++bj) {
            double lo = 1e300, hi = -1e300;
            for (std::size_t c = 0; c < 3; ++c)
                for (long i = bi * 8; i < bi * 8 + 8; ++i)
                    for (long j = bj * 8; j < bj * 8 + 8; ++j) {
                        lo = std::min(lo, px(c, i, j));
                        hi = std::max(hi, px(c, i, j));
                    }
            const double top = hi - lo, bot = hi + lo;
            if (top > 0 && bot > 0) acc += (top / bot) * std::log(top / bot);
        }
    r.uiconm = -acc / static_cast<double>(k1 * k2);
    r.uiqm = 0.0282 * r.uicm + 0.2953 * r.uism + 3.5753 * r.uiconm;
    return r;
}

/// Scalar Adam trace, written out step by step.
inline std::vector<double> adam_trace(double p, const std::vector<double>& grads, double lr, double b1 = 0.9,
                                      double b2 = 0.999, double eps = 1e-8) {
    std::vector<double> out;
    double m = 0, v = 0;
    for (std::size_t t = 1; t <= grads.size(); ++t) {
        const double g = grads[t - 1];
        m = b1 * m + (1 - b1) * g;
        v = b2 * v + (1 - b2) * g * g;
        const double mh = m / (1 - std::pow(b1, static_cast<double>(t)));
        const double vh = v / (1 - std::pow(b2, static_cast<double>(t)));
        p -= lr * mh / (std::sqrt(vh) + eps);
        out.push_back(p);
    }
    return out;
}

}  // namespace oracle
