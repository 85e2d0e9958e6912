#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "phaseformer/tensor.hpp"

namespace phaseformer {

/// Named trainable tensors of a model, kept in sorted-name order.
template <typename T>
class ParamStore {
public:
    /// Registers a new parameter; names must be unique.
    Tensor<T> add(const std::string& name, Tensor<T> value) {
        if (params_.count(name)) throw UsageError("duplicate parameter name '" + name + "'");
        value.set_requires_grad(true);
        params_.emplace(name, value);
        return value;
    }

    const Tensor<T>& get(const std::string& name) const {
        auto it = params_.find(name);
        if (it == params_.end()) throw UsageError("unknown parameter '" + name + "'");
        return it->second;
    }

    bool contains(const std::string& name) const { return params_.count(name) != 0; }

    std::size_t size() const { return params_.size(); }

    std::size_t scalar_count() const {
        std::size_t n = 0;
        for (const auto& [_, t] : params_) n += t.numel();
        return n;
    }

    void zero_grad() {
        for (auto& [_, t] : params_) t.zero_grad();
    }

    auto begin() const { return params_.begin(); }
    auto end() const { return params_.end(); }
    auto begin() { return params_.begin(); }
    auto end() { return params_.end(); }

private:
    std::map<std::string, Tensor<T>> params_;
};

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)), the usual default for bias-free convolutions.
template <typename T>
Tensor<T> fan_in_uniform(Shape shape, std::size_t fan_in, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    return Tensor<T>::uniform(std::move(shape), rng, -bound, bound);
}

/// Conv weight [cout, cin, k, k].
template <typename T>
Tensor<T> conv_weight(std::size_t cout, std::size_t cin, std::size_t k, Rng& rng) {
    return fan_in_uniform<T>(Shape{cout, cin, k, k}, cin * k * k, rng);
}

/// Depthwise weight [c, 1, k, k].
template <typename T>
Tensor<T> depthwise_weight(std::size_t c, std::size_t k, Rng& rng) {
    return fan_in_uniform<T>(Shape{c, 1, k, k}, k * k, rng);
}

/// Transposed-conv weight [cin, cout, k, k]; fan-in follows the forward-conv convention (cout*k*k).
template <typename T>
Tensor<T> transposed_weight(std::size_t cin, std::size_t cout, std::size_t k, Rng& rng) {
    return fan_in_uniform<T>(Shape{cin, cout, k, k}, cout * k * k, rng);
}

}  // namespace phaseformer
