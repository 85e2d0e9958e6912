#pragma once

// Amplitude-vs-phase sensitivity of a degradation: how far the luma spectrum
// of a degraded image moves from its clean counterpart in amplitude and in
// phase, each on a normalized scale.

#include <cmath>
#include <complex>
#include <numbers>
#include <vector>

#include "phaseformer/data.hpp"
#include "phaseformer/spectral.hpp"

namespace phaseformer {

struct PhaseDistance {
    double amplitude = 0.0;  // ||M_c - M_d|| / ||M_c||
    double phase = 0.0;      // ||wrap(phi_c - phi_d)|| / (pi sqrt(HW))
};

struct PhaseDiagnosis {
    std::vector<PhaseDistance> pairs;
    double mean_amplitude = 0.0;
    double mean_phase = 0.0;
    double fraction_amplitude_dominant = 0.0;  // share of pairs with D_amp > D_phase
};

namespace detail {

inline std::vector<std::complex<double>> luma_spectrum(const Tensor<float>& img) {
    if (img.rank() != 3 || img.dim(0) != 3) throw DimensionError("diagnose: expected [3,H,W], got " + to_string(img.shape()));
    const std::size_t h = img.dim(1), w = img.dim(2), hw = h * w;
    if (!is_power_of_two(h) || !is_power_of_two(w)) {
        throw ConfigError("diagnose: spatial dims " + std::to_string(h) + "x" + std::to_string(w) + " are not powers of two");
    }
    const auto& v = img.values();
    std::vector<std::complex<double>> s(hw);
    for (std::size_t i = 0; i < hw; ++i) s[i] = 0.299 * v[i] + 0.587 * v[hw + i] + 0.114 * v[2 * hw + i];
    fft::transform_2d(s.data(), h, w, false);
    return s;
}

inline double safe_arg(const std::complex<double>& z) {
    return (z.real() == 0.0 && z.imag() == 0.0) ? 0.0 : std::atan2(z.imag(), z.real());
}

/// Wraps an angle difference into (-pi, pi].
inline double wrap_angle(double a) {
    a = std::remainder(a, 2.0 * std::numbers::pi);
    return a <= -std::numbers::pi ? a + 2.0 * std::numbers::pi : a;
}

}  // namespace detail

inline PhaseDistance phase_distance(const Tensor<float>& clean, const Tensor<float>& degraded) {
    detail::require_same_shape(clean.shape(), degraded.shape(), "diagnose_phase");
    const auto sc = detail::luma_spectrum(clean), sd = detail::luma_spectrum(degraded);
    double da = 0.0, na = 0.0, dp = 0.0;
    for (std::size_t i = 0; i < sc.size(); ++i) {
        const double mc = std::abs(sc[i]), md = std::abs(sd[i]);
        da += (mc - md) * (mc - md);
        na += mc * mc;
        const double d = detail::wrap_angle(detail::safe_arg(sc[i]) - detail::safe_arg(sd[i]));
        dp += d * d;
    }
    PhaseDistance r;
    r.amplitude = na > 0.0 ? std::sqrt(da) / std::sqrt(na) : std::sqrt(da);
    r.phase = std::sqrt(dp) / (std::numbers::pi * std::sqrt(static_cast<double>(sc.size())));
    return r;
}

inline PhaseDiagnosis diagnose_phase(const PairedDataset& ds) {
    if (ds.empty()) throw UsageError("diagnose_phase: no image pairs");
    PhaseDiagnosis out;
    std::size_t dominant = 0;
    for (const auto& p : ds.pairs) {
        if (!p.clean.defined() || !p.degraded.defined()) throw UsageError("diagnose_phase: unpaired entry");
        const auto d = phase_distance(p.clean, p.degraded);
        out.pairs.push_back(d);
        out.mean_amplitude += d.amplitude;
        out.mean_phase += d.phase;
        if (d.amplitude > d.phase) ++dominant;
    }
    const double n = static_cast<double>(ds.size());
    out.mean_amplitude /= n;
    out.mean_phase /= n;
    out.fraction_amplitude_dominant = static_cast<double>(dominant) / n;
    return out;
}

}  // namespace phaseformer
