#pragma once

// Paired (degraded, clean) image sets: loading from a directory tree and a
// synthetic generator (smooth scenes under a per-channel haze model).

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numbers>
#include <set>
#include <string>
#include <vector>

#include "phaseformer/augment.hpp"
#include "phaseformer/error.hpp"
#include "phaseformer/image_io.hpp"
#include "phaseformer/random.hpp"

namespace phaseformer {

struct PairedDataset {
    std::vector<std::string> names;
    std::vector<ImagePair<float>> pairs;  // each Tensor[3,H,W]

    std::size_t size() const { return pairs.size(); }
    bool empty() const { return pairs.empty(); }
};

inline bool is_image_file(const std::filesystem::path& p) {
    auto e = detail::extension_of(p.string());
    return e == "ppm" || e == "png" || e == "pnm";
}

/// Loads `dir/degraded/*` paired with `dir/clean/*` by identical filename.
inline PairedDataset load_paired_dataset(const std::string& dir, std::size_t height, std::size_t width) {
    namespace fs = std::filesystem;
    const fs::path deg = fs::path(dir) / "degraded", cln = fs::path(dir) / "clean";
    for (const auto& d : {deg, cln}) {
        if (!fs::is_directory(d)) throw IngestionError("dataset directory '" + d.string() + "' does not exist");
    }
    std::set<std::string> dnames, cnames;
    for (const auto& e : fs::directory_iterator(deg))
        if (e.is_regular_file() && is_image_file(e.path())) dnames.insert(e.path().filename().string());
    for (const auto& e : fs::directory_iterator(cln))
        if (e.is_regular_file() && is_image_file(e.path())) cnames.insert(e.path().filename().string());
    for (const auto& n : dnames)
        if (!cnames.count(n)) throw IngestionError("'" + (deg / n).string() + "' has no clean counterpart");
    for (const auto& n : cnames)
        if (!dnames.count(n)) throw IngestionError("'" + (cln / n).string() + "' has no degraded counterpart");
    if (dnames.empty()) throw IngestionError("dataset '" + dir + "' contains no image pairs");
    PairedDataset ds;
    for (const auto& n : dnames) {
        ds.names.push_back(n);
        ds.pairs.push_back({load_image<float>((deg / n).string(), height, width),
                            load_image<float>((cln / n).string(), height, width)});
    }
    return ds;
}

/// Writes a dataset as PPM files under dir/degraded and dir/clean.
inline void write_paired_dataset(const std::string& dir, const PairedDataset& ds) {
    namespace fs = std::filesystem;
    fs::create_directories(fs::path(dir) / "degraded");
    fs::create_directories(fs::path(dir) / "clean");
    for (std::size_t i = 0; i < ds.size(); ++i) {
        save_image((fs::path(dir) / "degraded" / ds.names[i]).string(), ds.pairs[i].degraded);
        save_image((fs::path(dir) / "clean" / ds.names[i]).string(), ds.pairs[i].clean);
    }
}

/// Random scene in [0.05, 0.95]. Like natural images the colour channels
/// share one luminance structure (low-frequency waves, a soft-edged disc and
/// fine pixel texture) and differ by a per-channel base, gain and a weak
/// channel-specific wave.
inline Tensor<float> synthetic_clean_image(Rng& rng, std::size_t h, std::size_t w) {
    const std::size_t hw = h * w;
    std::vector<double> shared(hw);
    const double cy = rng.uniform(0.25, 0.75), cx = rng.uniform(0.25, 0.75), radius = rng.uniform(0.12, 0.3);
    const double disc = rng.uniform(-0.3, 0.3);
    double amp[3], fy[3], fx[3], ph[3];
    for (int k = 0; k < 3; ++k) {
        amp[k] = rng.uniform(0.03, 0.12);
        fy[k] = rng.uniform(0.5, 3.0);
        fx[k] = rng.uniform(0.5, 3.0);
        ph[k] = rng.uniform(0.0, 2.0 * std::numbers::pi);
    }
    auto coord = [](std::size_t i, std::size_t n) { return (static_cast<double>(i) + 0.5) / static_cast<double>(n); };
    for (std::size_t i = 0; i < h; ++i)
        for (std::size_t j = 0; j < w; ++j) {
            const double y = coord(i, h), x = coord(j, w);
            double s = 0.0;
            for (int k = 0; k < 3; ++k) s += amp[k] * std::sin(2.0 * std::numbers::pi * (fy[k] * y + fx[k] * x) + ph[k]);
            s += disc / (1.0 + std::exp((std::hypot(y - cy, x - cx) - radius) * 40.0));
            shared[i * w + j] = s + rng.normal(0.0, 0.03);
        }
    std::vector<float> v(3 * hw);
    for (std::size_t c = 0; c < 3; ++c) {
        const double base = rng.uniform(0.3, 0.7), gain = rng.uniform(0.7, 1.3);
        const double a = rng.uniform(0.0, 0.03), f = rng.uniform(0.5, 3.0), p = rng.uniform(0.0, 2.0 * std::numbers::pi);
        for (std::size_t i = 0; i < h; ++i)
            for (std::size_t j = 0; j < w; ++j) {
                const double s = base + gain * shared[i * w + j] +
                                 a * std::sin(2.0 * std::numbers::pi * f * (coord(i, h) + coord(j, w)) + p);
                v[(c * h + i) * w + j] = static_cast<float>(std::clamp(s, 0.05, 0.95));
            }
    }
    return Tensor<float>(Shape{3, h, w}, std::move(v));
}

struct HazeParams {
    std::array<double, 3> beta{};
    std::array<double, 3> airlight{};
};

/// x * beta_c + A_c per channel, clamped to [0, 1].
inline Tensor<float> apply_haze(const Tensor<float>& clean, const HazeParams& p) {
    const std::size_t hw = clean.dim(1) * clean.dim(2);
    std::vector<float> v(clean.values());
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t i = 0; i < hw; ++i)
            v[c * hw + i] = static_cast<float>(std::clamp(v[c * hw + i] * p.beta[c] + p.airlight[c], 0.0, 1.0));
    return Tensor<float>(clean.shape(), std::move(v));
}

inline HazeParams draw_haze(Rng& rng, double beta_lo = 0.5, double beta_hi = 0.8, double a_lo = 0.1, double a_hi = 0.3) {
    HazeParams p;
    for (auto& b : p.beta) b = rng.uniform(beta_lo, beta_hi);
    for (auto& a : p.airlight) a = rng.uniform(a_lo, a_hi);
    return p;
}

inline PairedDataset synthetic_haze_dataset(std::size_t count, std::size_t h, std::size_t w, std::uint64_t seed) {
    Rng rng(derive_seed(seed, 0x5eed));
    PairedDataset ds;
    for (std::size_t i = 0; i < count; ++i) {
        auto clean = synthetic_clean_image(rng, h, w);
        auto degraded = apply_haze(clean, draw_haze(rng));
        char name[32];
        std::snprintf(name, sizeof name, "pair_%03zu.ppm", i);
        ds.names.emplace_back(name);
        ds.pairs.push_back({degraded, clean});
    }
    return ds;
}

}  // namespace phaseformer
