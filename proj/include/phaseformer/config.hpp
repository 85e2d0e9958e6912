#pragma once

// Architecture and training configuration, with a flat `key = value` text
// format. Lines starting with '#' are comments; lists are comma separated.

#include <algorithm>
#include <array>
#include <charconv>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "phaseformer/attention.hpp"
#include "phaseformer/error.hpp"
#include "phaseformer/phase_skip.hpp"
#include "phaseformer/spectral.hpp"

namespace phaseformer {

struct ModelConfig {
    std::size_t base_channels = 16;
    std::size_t levels = 4;
    std::vector<std::size_t> blocks_per_level{2, 2, 2, 4};
    std::size_t bottleneck_blocks = 4;
    std::vector<std::size_t> decoder_blocks_per_level{2, 2, 2};
    std::vector<std::size_t> heads_per_level{1, 2, 4, 8};
    double ffn_expansion = 2.0;
    AttentionKind attention_kind = AttentionKind::phase;
    SkipKind skip_kind = SkipKind::opab;
    ResidualKind residual_kind = ResidualKind::normalized;
    bool pem_differentiable = true;
    std::size_t input_height = 256;
    std::size_t input_width = 256;
    std::size_t upsample_kernel = 2;

    std::size_t channels_at(std::size_t level) const { return base_channels << level; }  // level is 0-based
    std::size_t height_at(std::size_t level) const { return input_height >> level; }
    std::size_t width_at(std::size_t level) const { return input_width >> level; }

    BlockOptions block_options() const { return {attention_kind, residual_kind, pem_differentiable}; }

    /// Throws ConfigError on any inconsistency.
    void validate() const {
        if (base_channels == 0) throw ConfigError("base_channels must be positive");
        if (levels == 0) throw ConfigError("levels must be positive");
        if (blocks_per_level.size() != levels) {
            throw ConfigError("blocks_per_level has " + std::to_string(blocks_per_level.size()) + " entries for " +
                              std::to_string(levels) + " levels");
        }
        if (heads_per_level.size() != levels) {
            throw ConfigError("heads_per_level has " + std::to_string(heads_per_level.size()) + " entries for " +
                              std::to_string(levels) + " levels");
        }
        if (decoder_blocks_per_level.size() != levels - 1) {
            throw ConfigError("decoder_blocks_per_level needs " + std::to_string(levels - 1) + " entries, got " +
                              std::to_string(decoder_blocks_per_level.size()));
        }
        for (std::size_t i = 0; i < levels; ++i) {
            const auto h = heads_per_level[i];
            if (h == 0 || channels_at(i) % h != 0) {
                throw ConfigError("level " + std::to_string(i + 1) + ": " + std::to_string(channels_at(i)) +
                                  " channels not divisible by " + std::to_string(h) + " heads");
            }
        }
        if (!(ffn_expansion > 0.0)) throw ConfigError("ffn_expansion must be positive");
        if (!is_power_of_two(input_height) || !is_power_of_two(input_width)) {
            throw ConfigError("input_size " + std::to_string(input_height) + "x" + std::to_string(input_width) +
                              " must be powers of two");
        }
        const std::size_t div = std::size_t{1} << (levels - 1);
        if (input_height % div != 0 || input_width % div != 0 || input_height < div || input_width < div) {
            throw ConfigError("input_size " + std::to_string(input_height) + "x" + std::to_string(input_width) +
                              " not divisible by 2^(levels-1) = " + std::to_string(div));
        }
        if (upsample_kernel < 2 || upsample_kernel % 2 != 0) {
            throw ConfigError("upsample_kernel must be even and >= 2 so that stride-2 upsampling doubles exactly");
        }
    }
};

enum class LossWeightMode { learnable, fixed };

struct TrainConfig {
    std::size_t batch_size = 2;
    double lr0 = 3e-4;
    double lr_min = 1e-6;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    LossWeightMode loss_weight_mode = LossWeightMode::learnable;
    std::array<double, 4> fixed_omegas{0.25, 0.25, 0.25, 0.25};
    std::array<bool, 4> enabled_losses{true, true, true, true};  // charbonnier, gradient, ms-ssim, perceptual
    double omega_high = 0.4;
    double omega_low = 0.6;
    double charbonnier_eps = 1e-3;
    std::uint64_t perceptual_seed = 20240317;
    bool augment = true;
    double flip_prob = 0.5;
    double noise_sigma_max = 0.02;
    double contrast_min = 0.8;
    double contrast_max = 1.2;
    std::size_t holdout = 0;
    std::size_t epochs = 100;
};

struct RunConfig {
    ModelConfig model;
    TrainConfig train;
};

/// Frozen default for the full-size network (~1.78M parameters).
inline ModelConfig paper_config() { return ModelConfig{}; }

/// Small network for CPU experiments.
inline ModelConfig desk_config() {
    ModelConfig c;
    c.base_channels = 8;
    c.levels = 3;
    c.blocks_per_level = {1, 1, 1};
    c.bottleneck_blocks = 1;
    c.decoder_blocks_per_level = {1, 1};
    c.heads_per_level = {1, 2, 4};
    c.input_height = c.input_width = 64;
    return c;
}

/// Tiny network used for end-to-end gradient verification.
inline ModelConfig micro_config() {
    ModelConfig c = desk_config();
    c.base_channels = 4;
    c.bottleneck_blocks = 1;
    c.input_height = c.input_width = 16;
    return c;
}

inline RunConfig desk_run_config() {
    RunConfig r;
    r.model = desk_config();
    r.train.epochs = 1000;
    r.train.lr0 = 1e-3;
    return r;
}

// ----------------------------------------------------------------- text form

inline std::string to_string(AttentionKind k) { return k == AttentionKind::phase ? "phase" : "plain"; }
inline std::string to_string(ResidualKind k) { return k == ResidualKind::normalized ? "normalized" : "pre_norm"; }
inline std::string to_string(LossWeightMode m) { return m == LossWeightMode::learnable ? "learnable" : "fixed"; }
inline std::string to_string(SkipKind k) {
    switch (k) {
        case SkipKind::opab: return "opab";
        case SkipKind::oa: return "oa";
        case SkipKind::identity: return "identity";
    }
    return "opab";
}

namespace detail {

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

/// Shortest text that parses back to the same double.
inline std::string format_double(double v) {
    char buf[32];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
}

template <typename Int>
Int parse_int(const std::string& key, const std::string& v) {
    Int out{};
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size()) throw ConfigError("config key '" + key + "': bad integer '" + v + "'");
    return out;
}

inline double parse_double(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        double d = std::stod(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return d;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': bad number '" + v + "'");
    }
}

inline bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError("config key '" + key + "': expected true/false, got '" + v + "'");
}

inline std::vector<std::string> split(const std::string& v, char sep) {
    std::vector<std::string> out;
    std::string item;
    std::istringstream is(v);
    while (std::getline(is, item, sep)) out.push_back(trim(item));
    return out;
}

inline std::vector<std::size_t> parse_list(const std::string& key, const std::string& v) {
    std::vector<std::size_t> out;
    if (trim(v).empty()) return out;
    for (const auto& item : split(v, ',')) out.push_back(parse_int<std::size_t>(key, item));
    return out;
}

template <typename Seq>
std::string join(const Seq& xs) {
    std::ostringstream os;
    bool first = true;
    for (const auto& x : xs) {
        if (!first) os << ',';
        first = false;
        if constexpr (std::is_floating_point_v<std::decay_t<decltype(x)>>) {
            os << format_double(x);
        } else {
            os << x;
        }
    }
    return os.str();
}

}  // namespace detail

/// Ordered key/value view of a configuration (stable order for printing and checkpoints).
inline std::vector<std::pair<std::string, std::string>> to_key_values(const RunConfig& rc) {
    using detail::format_double;
    using detail::join;
    const auto& m = rc.model;
    const auto& t = rc.train;
    return {
        {"base_channels", std::to_string(m.base_channels)},
        {"levels", std::to_string(m.levels)},
        {"blocks_per_level", join(m.blocks_per_level)},
        {"bottleneck_blocks", std::to_string(m.bottleneck_blocks)},
        {"decoder_blocks_per_level", join(m.decoder_blocks_per_level)},
        {"heads_per_level", join(m.heads_per_level)},
        {"ffn_expansion", format_double(m.ffn_expansion)},
        {"attention_kind", to_string(m.attention_kind)},
        {"skip_kind", to_string(m.skip_kind)},
        {"residual_kind", to_string(m.residual_kind)},
        {"pem_differentiable", m.pem_differentiable ? "true" : "false"},
        {"input_size", std::to_string(m.input_height) + "x" + std::to_string(m.input_width)},
        {"upsample_kernel", std::to_string(m.upsample_kernel)},
        {"batch_size", std::to_string(t.batch_size)},
        {"epochs", std::to_string(t.epochs)},
        {"lr0", format_double(t.lr0)},
        {"lr_min", format_double(t.lr_min)},
        {"adam_beta1", format_double(t.beta1)},
        {"adam_beta2", format_double(t.beta2)},
        {"adam_eps", format_double(t.adam_eps)},
        {"loss_weight_mode", to_string(t.loss_weight_mode)},
        {"fixed_omegas", join(t.fixed_omegas)},
        {"enabled_losses", join(std::array<int, 4>{t.enabled_losses[0], t.enabled_losses[1], t.enabled_losses[2],
                                                  t.enabled_losses[3]})},
        {"omega_high", format_double(t.omega_high)},
        {"omega_low", format_double(t.omega_low)},
        {"charbonnier_eps", format_double(t.charbonnier_eps)},
        {"perceptual_seed", std::to_string(t.perceptual_seed)},
        {"augment", t.augment ? "true" : "false"},
        {"flip_prob", format_double(t.flip_prob)},
        {"noise_sigma_max", format_double(t.noise_sigma_max)},
        {"contrast_min", format_double(t.contrast_min)},
        {"contrast_max", format_double(t.contrast_max)},
        {"holdout", std::to_string(t.holdout)},
    };
}

inline std::string format_config(const RunConfig& rc) {
    std::string out;
    for (const auto& [k, v] : to_key_values(rc)) out += k + " = " + v + "\n";
    return out;
}

/// Applies `key = value` lines on top of `base`. Unknown keys are errors.
inline RunConfig parse_config(const std::string& text, RunConfig base = {}) {
    using namespace detail;
    auto& m = base.model;
    auto& t = base.train;
    std::istringstream is(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        line = trim(line);
        if (line.empty() || line[0] == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
        const std::string key = trim(line.substr(0, eq));
        const std::string v = trim(line.substr(eq + 1));
        if (key == "base_channels") m.base_channels = parse_int<std::size_t>(key, v);
        else if (key == "levels") m.levels = parse_int<std::size_t>(key, v);
        else if (key == "blocks_per_level") m.blocks_per_level = parse_list(key, v);
        else if (key == "bottleneck_blocks") m.bottleneck_blocks = parse_int<std::size_t>(key, v);
        else if (key == "decoder_blocks_per_level") m.decoder_blocks_per_level = parse_list(key, v);
        else if (key == "heads_per_level") m.heads_per_level = parse_list(key, v);
        else if (key == "ffn_expansion") m.ffn_expansion = parse_double(key, v);
        else if (key == "attention_kind") {
            if (v == "phase") m.attention_kind = AttentionKind::phase;
            else if (v == "plain") m.attention_kind = AttentionKind::plain;
            else throw ConfigError("attention_kind must be phase|plain, got '" + v + "'");
        } else if (key == "skip_kind") {
            if (v == "opab") m.skip_kind = SkipKind::opab;
            else if (v == "oa") m.skip_kind = SkipKind::oa;
            else if (v == "identity") m.skip_kind = SkipKind::identity;
            else throw ConfigError("skip_kind must be opab|oa|identity, got '" + v + "'");
        } else if (key == "residual_kind") {
            if (v == "normalized") m.residual_kind = ResidualKind::normalized;
            else if (v == "pre_norm") m.residual_kind = ResidualKind::pre_norm;
            else throw ConfigError("residual_kind must be normalized|pre_norm, got '" + v + "'");
        } else if (key == "pem_differentiable") m.pem_differentiable = parse_bool(key, v);
        else if (key == "input_size") {
            const auto parts = split(v, 'x');
            if (parts.size() != 2) throw ConfigError("input_size must look like HxW, got '" + v + "'");
            m.input_height = parse_int<std::size_t>(key, parts[0]);
            m.input_width = parse_int<std::size_t>(key, parts[1]);
        } else if (key == "upsample_kernel") m.upsample_kernel = parse_int<std::size_t>(key, v);
        else if (key == "batch_size") t.batch_size = parse_int<std::size_t>(key, v);
        else if (key == "epochs") t.epochs = parse_int<std::size_t>(key, v);
        else if (key == "lr0") t.lr0 = parse_double(key, v);
        else if (key == "lr_min") t.lr_min = parse_double(key, v);
        else if (key == "adam_beta1") t.beta1 = parse_double(key, v);
        else if (key == "adam_beta2") t.beta2 = parse_double(key, v);
        else if (key == "adam_eps") t.adam_eps = parse_double(key, v);
        else if (key == "loss_weight_mode") {
            if (v == "learnable") t.loss_weight_mode = LossWeightMode::learnable;
            else if (v == "fixed") t.loss_weight_mode = LossWeightMode::fixed;
            else throw ConfigError("loss_weight_mode must be learnable|fixed, got '" + v + "'");
        } else if (key == "fixed_omegas") {
            const auto parts = split(v, ',');
            if (parts.size() != 4) throw ConfigError("fixed_omegas needs 4 values");
            for (std::size_t i = 0; i < 4; ++i) t.fixed_omegas[i] = parse_double(key, parts[i]);
        } else if (key == "enabled_losses") {
            const auto parts = split(v, ',');
            if (parts.size() != 4) throw ConfigError("enabled_losses needs 4 flags");
            for (std::size_t i = 0; i < 4; ++i) t.enabled_losses[i] = parse_bool(key, parts[i]);
        } else if (key == "omega_high") t.omega_high = parse_double(key, v);
        else if (key == "omega_low") t.omega_low = parse_double(key, v);
        else if (key == "charbonnier_eps") t.charbonnier_eps = parse_double(key, v);
        else if (key == "perceptual_seed") t.perceptual_seed = parse_int<std::uint64_t>(key, v);
        else if (key == "augment") t.augment = parse_bool(key, v);
        else if (key == "flip_prob") t.flip_prob = parse_double(key, v);
        else if (key == "noise_sigma_max") t.noise_sigma_max = parse_double(key, v);
        else if (key == "contrast_min") t.contrast_min = parse_double(key, v);
        else if (key == "contrast_max") t.contrast_max = parse_double(key, v);
        else if (key == "holdout") t.holdout = parse_int<std::size_t>(key, v);
        else throw ConfigError("unknown config key '" + key + "' on line " + std::to_string(lineno));
    }
    base.model.validate();
    if (base.train.batch_size == 0) throw ConfigError("batch_size must be positive");
    if (std::none_of(t.enabled_losses.begin(), t.enabled_losses.end(), [](bool b) { return b; })) {
        throw ConfigError("enabled_losses must enable at least one loss");
    }
    return base;
}

inline RunConfig load_config_file(const std::string& path, RunConfig base = {}) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str(), std::move(base));
}

struct NamedVariant {
    std::string name;
    RunConfig config;
};

/// The attention / loss-weighting / skip-gate ablation grid.
inline std::vector<NamedVariant> ablation_variants(const RunConfig& base) {
    auto make = [&base](std::string name, AttentionKind a, SkipKind s, LossWeightMode w) {
        NamedVariant v{std::move(name), base};
        v.config.model.attention_kind = a;
        v.config.model.skip_kind = s;
        v.config.train.loss_weight_mode = w;
        return v;
    };
    return {
        make("self_attention+dynamic_weights", AttentionKind::plain, SkipKind::identity, LossWeightMode::learnable),
        make("phase_attention+dynamic_weights", AttentionKind::phase, SkipKind::identity, LossWeightMode::learnable),
        make("phase_attention+gate_without_phase", AttentionKind::phase, SkipKind::oa, LossWeightMode::fixed),
        make("phase_attention+phase_gate", AttentionKind::phase, SkipKind::opab, LossWeightMode::fixed),
        make("full", AttentionKind::phase, SkipKind::opab, LossWeightMode::learnable),
    };
}

/// Cumulative loss subsets: {C}, {C,G}, {C,G,M}, {C,G,M,P}.
inline std::vector<NamedVariant> loss_subset_variants(const RunConfig& base) {
    std::vector<NamedVariant> out;
    const char* names[] = {"charbonnier", "charbonnier+gradient", "charbonnier+gradient+ms_ssim", "all"};
    for (std::size_t k = 1; k <= 4; ++k) {
        NamedVariant v{names[k - 1], base};
        for (std::size_t i = 0; i < 4; ++i) v.config.train.enabled_losses[i] = i < k;
        out.push_back(std::move(v));
    }
    return out;
}

}  // namespace phaseformer
