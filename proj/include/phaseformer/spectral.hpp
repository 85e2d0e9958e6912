#pragma once

// Radix-2 2D FFT, amplitude/phase decomposition and the phase extraction
// module (PEM): real(IFFT(exp(i * phase(FFT(x))))).
//
// Conventions: the forward transform is unnormalized (DC bin = sum of the
// samples); the inverse carries the 1/(H*W) factor. Transforms are evaluated
// in double precision regardless of the tensor scalar type.

#include <cmath>
#include <complex>
#include <map>
#include <numbers>
#include <string>
#include <vector>

#include "phaseformer/ops.hpp"

namespace phaseformer {

inline bool is_power_of_two(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

namespace fft {

using cd = std::complex<double>;

/// Twiddles exp(-2*pi*i*k/n) for k < n/2, cached per length.
inline const std::vector<cd>& twiddles(std::size_t n) {
    thread_local std::map<std::size_t, std::vector<cd>> cache;
    auto it = cache.find(n);
    if (it != cache.end()) return it->second;
    std::vector<cd> w(n / 2);
    for (std::size_t k = 0; k < n / 2; ++k) {
        const double a = -2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(n);
        w[k] = cd(std::cos(a), std::sin(a));
    }
    return cache.emplace(n, std::move(w)).first->second;
}

/// In-place iterative radix-2 transform of `n` values spaced `stride` apart.
/// inverse=true flips the exponent sign; no scaling is applied.
inline void transform_1d(cd* a, std::size_t n, std::size_t stride, bool inverse) {
    for (std::size_t i = 1, j = 0; i < n; ++i) {
        std::size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(a[i * stride], a[j * stride]);
    }
    const auto& w = twiddles(n);
    for (std::size_t len = 2; len <= n; len <<= 1) {
        const std::size_t half = len / 2, step = n / len;
        for (std::size_t i = 0; i < n; i += len) {
            for (std::size_t k = 0; k < half; ++k) {
                cd t = w[k * step];
                if (inverse) t = std::conj(t);
                const cd u = a[(i + k) * stride];
                const cd v = a[(i + k + half) * stride] * t;
                a[(i + k) * stride] = u + v;
                a[(i + k + half) * stride] = u - v;
            }
        }
    }
}

/// Unscaled 2D transform of one row-major h x w plane.
inline void transform_2d(cd* plane, std::size_t h, std::size_t w, bool inverse) {
    for (std::size_t r = 0; r < h; ++r) transform_1d(plane + r * w, w, 1, inverse);
    for (std::size_t c = 0; c < w; ++c) transform_1d(plane + c, h, w, inverse);
}

}  // namespace fft

/// Per-channel complex spectrum of an N,C,H,W tensor.
template <typename T>
struct ComplexSpectrum {
    Tensor<T> real;
    Tensor<T> imag;

    const Shape& shape() const { return real.shape(); }
};

namespace detail {

inline void require_radix2(const Shape& s, const char* op) {
    require_rank(s, 4, op);
    if (!is_power_of_two(s[2]) || !is_power_of_two(s[3])) {
        throw ConfigError(std::string(op) + ": spatial dims H=" + std::to_string(s[2]) + ", W=" + std::to_string(s[3]) +
                          " must both be powers of two");
    }
}

}  // namespace detail

/// Unnormalized forward 2D DFT of every (n, c) plane.
template <typename T>
ComplexSpectrum<T> fft2(const Tensor<T>& x) {
    detail::require_radix2(x.shape(), "fft2");
    const std::size_t planes = x.dim(0) * x.dim(1), H = x.dim(2), W = x.dim(3), hw = H * W;
    std::vector<T> out(2 * planes * hw);
    std::vector<fft::cd> buf(hw);
    for (std::size_t p = 0; p < planes; ++p) {
        for (std::size_t i = 0; i < hw; ++i) buf[i] = fft::cd(static_cast<double>(x.values()[p * hw + i]), 0.0);
        fft::transform_2d(buf.data(), H, W, false);
        for (std::size_t i = 0; i < hw; ++i) {
            out[p * hw + i] = static_cast<T>(buf[i].real());
            out[(planes + p) * hw + i] = static_cast<T>(buf[i].imag());
        }
    }
    Shape packed{2};
    packed.insert(packed.end(), x.shape().begin(), x.shape().end());
    auto xn = x.node_ptr();
    auto spectrum = detail::make_result<T>(
        std::move(packed), std::move(out), {&x},
        [xn, planes, H, W, hw](const detail::Node<T>& self) {
            auto* g = detail::grad_sink(xn);
            if (!g) return;
            // adjoint of the forward DFT: Re(conj-exponent transform of gR + i*gI)
            std::vector<fft::cd> b(hw);
            for (std::size_t p = 0; p < planes; ++p) {
                for (std::size_t i = 0; i < hw; ++i) {
                    b[i] = fft::cd(static_cast<double>(self.grad[p * hw + i]),
                                   static_cast<double>(self.grad[(planes + p) * hw + i]));
                }
                fft::transform_2d(b.data(), H, W, true);
                for (std::size_t i = 0; i < hw; ++i) (*g)[p * hw + i] += static_cast<T>(b[i].real());
            }
        },
        "fft2");
    return {select_leading(spectrum, 0), select_leading(spectrum, 1)};
}

/// Result of an inverse transform plus the largest discarded imaginary part.
template <typename T>
struct InverseTransform {
    Tensor<T> real;
    double max_imag_residue = 0.0;
};

/// Inverse 2D DFT scaled by 1/(H*W), keeping the real part.
template <typename T>
InverseTransform<T> ifft2_checked(const ComplexSpectrum<T>& s) {
    detail::require_radix2(s.real.shape(), "ifft2");
    detail::require_same_shape(s.real.shape(), s.imag.shape(), "ifft2");
    const Shape& shape = s.real.shape();
    const std::size_t planes = shape[0] * shape[1], H = shape[2], W = shape[3], hw = H * W;
    const double scale = 1.0 / static_cast<double>(hw);
    std::vector<T> out(planes * hw);
    std::vector<fft::cd> buf(hw);
    double residue = 0.0;
    for (std::size_t p = 0; p < planes; ++p) {
        for (std::size_t i = 0; i < hw; ++i) {
            buf[i] = fft::cd(static_cast<double>(s.real.values()[p * hw + i]),
                             static_cast<double>(s.imag.values()[p * hw + i]));
        }
        fft::transform_2d(buf.data(), H, W, true);
        for (std::size_t i = 0; i < hw; ++i) {
            out[p * hw + i] = static_cast<T>(buf[i].real() * scale);
            residue = std::max(residue, std::abs(buf[i].imag() * scale));
        }
    }
    auto rn = s.real.node_ptr();
    auto in = s.imag.node_ptr();
    auto y = detail::make_result<T>(
        shape, std::move(out), {&s.real, &s.imag},
        [rn, in, planes, H, W, hw, scale](const detail::Node<T>& self) {
            auto* gr = detail::grad_sink(rn);
            auto* gi = detail::grad_sink(in);
            // gR + i*gI = (1/HW) * forward DFT of the real upstream gradient
            std::vector<fft::cd> b(hw);
            for (std::size_t p = 0; p < planes; ++p) {
                for (std::size_t i = 0; i < hw; ++i) b[i] = fft::cd(static_cast<double>(self.grad[p * hw + i]), 0.0);
                fft::transform_2d(b.data(), H, W, false);
                for (std::size_t i = 0; i < hw; ++i) {
                    if (gr) (*gr)[p * hw + i] += static_cast<T>(b[i].real() * scale);
                    if (gi) (*gi)[p * hw + i] += static_cast<T>(b[i].imag() * scale);
                }
            }
        },
        "ifft2");
    return {y, residue};
}

template <typename T>
Tensor<T> ifft2(const ComplexSpectrum<T>& s) {
    return ifft2_checked(s).real;
}

/// Amplitude sqrt(re^2 + im^2) and phase atan2(im, re), with atan2(0,0) = 0.
template <typename T>
struct Decomposition {
    Tensor<T> amplitude;
    Tensor<T> phase;
};

template <typename T>
Decomposition<T> decompose(const ComplexSpectrum<T>& s) {
    detail::require_same_shape(s.real.shape(), s.imag.shape(), "decompose");
    auto amplitude = phaseformer::sqrt(add(square(s.real), square(s.imag)));
    return {amplitude, phaseformer::atan2(s.imag, s.real)};
}

/// Phase-only reconstruction: unit amplitude, original phase.
template <typename T>
InverseTransform<T> pem_checked(const Tensor<T>& x, bool differentiable = true) {
    auto body = [](const Tensor<T>& in) {
        const auto spectrum = fft2(in);
        const auto phase = phaseformer::atan2(spectrum.imag, spectrum.real);
        return ifft2_checked(ComplexSpectrum<T>{phaseformer::cos(phase), phaseformer::sin(phase)});
    };
    if (differentiable) return body(x);
    NoGradGuard guard;
    return body(x.detach());
}

template <typename T>
Tensor<T> pem(const Tensor<T>& x, bool differentiable = true) {
    return pem_checked(x, differentiable).real;
}

}  // namespace phaseformer
