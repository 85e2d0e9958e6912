#pragma once

#include <cmath>
#include <map>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include "phaseformer/error.hpp"
#include "phaseformer/tensor.hpp"

namespace phaseformer {

/// lr_min + (lr0 - lr_min) (1 + cos(pi step / total)) / 2, held at lr_min past the end.
inline double cosine_lr(std::size_t step, std::size_t total_steps, double lr0 = 3e-4, double lr_min = 1e-6) {
    if (step >= total_steps) return lr_min;
    const double frac = static_cast<double>(step) / static_cast<double>(total_steps);
    return lr_min + 0.5 * (lr0 - lr_min) * (1.0 + std::cos(std::numbers::pi * frac));
}

struct AdamOptions {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

template <typename T>
struct AdamMoments {
    std::vector<T> m;
    std::vector<T> v;
};

/// Bias-corrected Adam over named tensors.
template <typename T>
class Adam {
public:
    using Named = std::vector<std::pair<std::string, Tensor<T>>>;

    explicit Adam(AdamOptions opt = {}) : opt_(opt) {}

    /// One update of every tensor in `params` from its accumulated gradient.
    /// Missing gradients count as zero. Nothing is modified if any gradient is
    /// non-finite.
    void step(const Named& params, double lr) {
        for (const auto& [name, t] : params) {
            if (!t.has_grad()) continue;
            for (T g : t.grad()) {
                if (!std::isfinite(static_cast<double>(g))) {
                    throw NumericalError("non-finite gradient in parameter '" + name + "'");
                }
            }
        }
        ++t_;
        const double bc1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(t_));
        const T b1 = static_cast<T>(opt_.beta1), b2 = static_cast<T>(opt_.beta2);
        for (const auto& [name, t] : params) {
            auto& mom = moments_[name];
            const std::size_t n = t.numel();
            if (mom.m.size() != n) {
                mom.m.assign(n, T(0));
                mom.v.assign(n, T(0));
            }
            Tensor<T> p = t;
            auto data = p.mutable_data();
            const bool has = t.has_grad();
            for (std::size_t i = 0; i < n; ++i) {
                const T g = has ? t.grad()[i] : T(0);
                mom.m[i] = b1 * mom.m[i] + (T(1) - b1) * g;
                mom.v[i] = b2 * mom.v[i] + (T(1) - b2) * g * g;
                const double mhat = static_cast<double>(mom.m[i]) / bc1;
                const double vhat = static_cast<double>(mom.v[i]) / bc2;
                data[i] = static_cast<T>(static_cast<double>(data[i]) - lr * mhat / (std::sqrt(vhat) + opt_.eps));
            }
        }
    }

    std::size_t step_count() const { return t_; }
    void set_step_count(std::size_t t) { t_ = t; }
    const AdamOptions& options() const { return opt_; }

    std::map<std::string, AdamMoments<T>>& moments() { return moments_; }
    const std::map<std::string, AdamMoments<T>>& moments() const { return moments_; }

private:
    AdamOptions opt_;
    std::size_t t_ = 0;
    std::map<std::string, AdamMoments<T>> moments_;
};

}  // namespace phaseformer
