#pragma once

// Central finite-difference verification of reverse-mode gradients.
//
// error = max_i |analytic_i - numeric_i| / max(max_i |analytic_i|, max_i |numeric_i|, 1e-10)

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "phaseformer/config.hpp"
#include "phaseformer/model.hpp"
#include "phaseformer/random.hpp"

namespace phaseformer {

struct GradCheckResult {
    double max_rel_error = 0.0;
    double max_abs_diff = 0.0;
    std::size_t checked = 0;
    std::string worst;  // "<input>[<index>]" of the largest discrepancy
};

struct GradCheckOptions {
    double step = 1e-5;
    std::size_t max_entries_per_input = 0;  // 0: every entry
    std::uint64_t sample_seed = 7;
    double inject_fault = 0.0;  // relative corruption of the first analytic entry (self-test)
};

namespace detail {

/// `fault` perturbs the first analytic entry by fault * (1 + max|numeric|).
inline GradCheckResult summarize(std::vector<double> analytic, const std::vector<double>& numeric,
                                 const std::vector<std::string>& labels, double fault) {
    if (fault != 0.0 && !analytic.empty()) {
        double m = 0.0;
        for (double v : numeric) m = std::max(m, std::abs(v));
        analytic[0] += fault * (1.0 + m);
    }
    GradCheckResult r;
    r.checked = analytic.size();
    double scale = 1e-10;
    for (std::size_t i = 0; i < analytic.size(); ++i) scale = std::max({scale, std::abs(analytic[i]), std::abs(numeric[i])});
    for (std::size_t i = 0; i < analytic.size(); ++i) {
        const double d = std::abs(analytic[i] - numeric[i]);
        if (d > r.max_abs_diff) {
            r.max_abs_diff = d;
            r.worst = labels[i];
        }
    }
    r.max_rel_error = r.max_abs_diff / scale;
    return r;
}

}  // namespace detail

/// `loss` must rebuild the graph from the current values of `inputs` and
/// return a one-element tensor.
inline GradCheckResult grad_check(const std::function<Tensor<double>()>& loss, std::vector<Tensor<double>> inputs,
                                  const GradCheckOptions& opt = {}, const std::vector<std::string>& names = {}) {
    for (auto& x : inputs) {
        x.set_requires_grad(true);
        x.zero_grad();
    }
    loss().backward();
    Rng rng(opt.sample_seed);

    std::vector<double> analytic, numeric;
    std::vector<std::string> labels;
    for (std::size_t k = 0; k < inputs.size(); ++k) {
        auto& x = inputs[k];
        std::vector<std::size_t> idx(x.numel());
        for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
        if (opt.max_entries_per_input && idx.size() > opt.max_entries_per_input) {
            rng.shuffle(idx);
            idx.resize(opt.max_entries_per_input);
            std::sort(idx.begin(), idx.end());
        }
        const std::vector<double> grad(x.grad().begin(), x.grad().end());
        auto data = x.mutable_data();
        for (std::size_t i : idx) {
            const double orig = data[i];
            double fp, fm;
            {
                NoGradGuard guard;
                data[i] = orig + opt.step;
                fp = loss().item();
                data[i] = orig - opt.step;
                fm = loss().item();
                data[i] = orig;
            }
            analytic.push_back(grad[i]);
            numeric.push_back((fp - fm) / (2.0 * opt.step));
            labels.push_back((k < names.size() ? names[k] : "input" + std::to_string(k)) + "[" + std::to_string(i) + "]");
        }
    }
    return detail::summarize(analytic, numeric, labels, opt.inject_fault);
}

/// End-to-end check of a double-precision model: loss is a fixed random
/// projection of both outputs; `sample` random parameter scalars are perturbed.
inline GradCheckResult model_grad_check(const ModelConfig& cfg, std::uint64_t seed, std::size_t sample = 20,
                                        double inject_fault = 0.0) {
    Phaseformer<double> model(cfg, seed);
    Rng rng(derive_seed(seed, 99));
    const std::size_t H = cfg.input_height, W = cfg.input_width;
    auto x = Tensor<double>::uniform(Shape{1, 3, H, W}, rng, 0.0, 1.0);
    auto r1 = Tensor<double>::randn(Shape{1, 3, H, W}, rng);
    auto r2 = Tensor<double>::randn(Shape{1, 3, 2 * H, 2 * W}, rng);
    auto loss = [&]() {
        auto out = model.forward(x);
        return add(dot(out.full_res, r1), dot(out.double_res, r2));
    };

    std::vector<std::pair<std::string, Tensor<double>>> all(model.params().begin(), model.params().end());
    std::vector<std::pair<std::string, std::size_t>> flat;
    for (std::size_t k = 0; k < all.size(); ++k)
        for (std::size_t i = 0; i < all[k].second.numel(); ++i) flat.emplace_back(all[k].first, i);
    rng.shuffle(flat);
    flat.resize(std::min(sample, flat.size()));

    model.params().zero_grad();
    loss().backward();
    std::vector<double> analytic, numeric;
    std::vector<std::string> labels;
    const double h = 1e-5;
    for (const auto& [name, i] : flat) {
        Tensor<double> p = model.params().get(name);
        analytic.push_back(p.grad()[i]);
        auto d = p.mutable_data();
        const double orig = d[i];
        NoGradGuard guard;
        d[i] = orig + h;
        const double fp = loss().item();
        d[i] = orig - h;
        const double fm = loss().item();
        d[i] = orig;
        numeric.push_back((fp - fm) / (2 * h));
        labels.push_back(name + "[" + std::to_string(i) + "]");
    }
    return detail::summarize(analytic, numeric, labels, inject_fault);
}

}  // namespace phaseformer
