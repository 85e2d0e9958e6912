#pragma once

// Dense row-major tensor with reverse-mode differentiation.
//
// A Tensor is a cheap handle onto a shared graph node, the same ownership
// model as the mainstream frameworks: copying a Tensor aliases it, and every
// operation returns a fresh node. Nodes only remember their parents and a
// backward closure when at least one input requires a gradient and grad mode
// is enabled, so inference builds no graph.

#include <algorithm>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "phaseformer/error.hpp"
#include "phaseformer/random.hpp"

namespace phaseformer {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string to_string(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ']';
    return os.str();
}

namespace detail {

inline bool& grad_mode() {
    thread_local bool enabled = true;
    return enabled;
}

template <typename T>
struct Node {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;  // empty until a gradient reaches this node
    bool requires_grad = false;
    const char* op = "leaf";
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(const Node&)> backward;  // reads this node's data/grad

    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), T(0));
    }
};

}  // namespace detail

/// Disables graph recording for its lifetime (per thread).
class NoGradGuard {
public:
    NoGradGuard() : previous_(detail::grad_mode()) { detail::grad_mode() = false; }
    ~NoGradGuard() { detail::grad_mode() = previous_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

template <typename T>
class Tensor {
public:
    using value_type = T;
    using NodePtr = std::shared_ptr<detail::Node<T>>;

    Tensor() = default;

    Tensor(Shape shape, std::vector<T> data) : node_(std::make_shared<detail::Node<T>>()) {
        if (phaseformer::numel(shape) != data.size()) {
            throw DimensionError("Tensor: shape " + to_string(shape) + " holds " +
                                 std::to_string(phaseformer::numel(shape)) + " values, got " +
                                 std::to_string(data.size()));
        }
        node_->shape = std::move(shape);
        node_->data = std::move(data);
    }

    static Tensor zeros(Shape shape) { return full(std::move(shape), T(0)); }

    static Tensor full(Shape shape, T value) {
        const auto n = phaseformer::numel(shape);
        return Tensor(std::move(shape), std::vector<T>(n, value));
    }

    static Tensor scalar(T value) { return Tensor(Shape{1}, {value}); }

    static Tensor randn(Shape shape, Rng& rng, double stddev = 1.0) {
        std::vector<T> v(phaseformer::numel(shape));
        for (auto& x : v) x = static_cast<T>(rng.normal(0.0, stddev));
        return Tensor(std::move(shape), std::move(v));
    }

    static Tensor uniform(Shape shape, Rng& rng, double lo, double hi) {
        std::vector<T> v(phaseformer::numel(shape));
        for (auto& x : v) x = static_cast<T>(rng.uniform(lo, hi));
        return Tensor(std::move(shape), std::move(v));
    }

    /// Internal constructor used by operations.
    static Tensor from_node(NodePtr node) {
        Tensor t;
        t.node_ = std::move(node);
        return t;
    }

    bool defined() const { return static_cast<bool>(node_); }
    const Shape& shape() const { return node_->shape; }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t dim(std::size_t axis) const {
        if (axis >= rank()) {
            throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " +
                                 to_string(shape()));
        }
        return node_->shape[axis];
    }
    std::size_t numel() const { return node_->data.size(); }

    std::span<const T> data() const { return node_->data; }
    /// Mutable view; only meaningful on leaves (parameters, inputs).
    std::span<T> mutable_data() { return node_->data; }
    const std::vector<T>& values() const { return node_->data; }

    T item() const {
        if (numel() != 1) throw UsageError("item() on tensor of shape " + to_string(shape()));
        return node_->data[0];
    }

    T at(std::initializer_list<std::size_t> index) const { return node_->data[offset(index)]; }

    bool requires_grad() const { return node_->requires_grad; }
    Tensor& set_requires_grad(bool on) {
        node_->requires_grad = on;
        return *this;
    }

    bool has_grad() const { return node_->grad.size() == node_->data.size(); }
    std::span<const T> grad() const { return node_->grad; }
    std::span<T> mutable_grad() {
        node_->ensure_grad();
        return node_->grad;
    }
    void zero_grad() {
        if (has_grad()) std::fill(node_->grad.begin(), node_->grad.end(), T(0));
    }

    /// Copy of the values with no history.
    Tensor detach() const { return Tensor(shape(), node_->data); }

    template <typename U>
    Tensor<U> cast() const {
        std::vector<U> v(node_->data.begin(), node_->data.end());
        return Tensor<U>(shape(), std::move(v));
    }

    const char* op_name() const { return node_->op; }
    detail::Node<T>* node() const { return node_.get(); }
    const NodePtr& node_ptr() const { return node_; }

    /// Reverse-mode sweep from a scalar. Leaf gradients accumulate across
    /// calls; intermediate gradients are scratch space and are released.
    void backward() const {
        if (numel() != 1) {
            throw UsageError("backward() requires a scalar loss, got shape " + to_string(shape()));
        }
        if (!node_->requires_grad) return;

        std::vector<detail::Node<T>*> order;
        std::unordered_set<detail::Node<T>*> seen;
        // iterative post-order DFS: parents precede children in `order`
        std::vector<std::pair<detail::Node<T>*, std::size_t>> stack{{node_.get(), 0}};
        seen.insert(node_.get());
        while (!stack.empty()) {
            auto& [n, next] = stack.back();
            if (next < n->parents.size()) {
                detail::Node<T>* p = n->parents[next++].get();
                if (p->requires_grad && seen.insert(p).second) stack.push_back({p, 0});
            } else {
                order.push_back(n);
                stack.pop_back();
            }
        }

        for (auto* n : order) {
            if (n->backward) n->grad.assign(n->data.size(), T(0));
        }
        node_->ensure_grad();
        node_->grad[0] += T(1);
        for (auto it = order.rbegin(); it != order.rend(); ++it) {
            detail::Node<T>* n = *it;
            if (!n->backward) continue;
            n->backward(*n);
            std::vector<T>().swap(n->grad);
        }
    }

private:
    std::size_t offset(std::initializer_list<std::size_t> index) const {
        if (index.size() != rank()) {
            throw DimensionError("index rank " + std::to_string(index.size()) +
                                 " does not match shape " + to_string(shape()));
        }
        std::size_t off = 0;
        std::size_t axis = 0;
        for (auto i : index) {
            if (i >= node_->shape[axis]) throw DimensionError("index out of range on axis " + std::to_string(axis));
            off = off * node_->shape[axis] + i;
            ++axis;
        }
        return off;
    }

    NodePtr node_;
};

/// A named trainable tensor.
template <typename T>
struct Parameter {
    std::string name;
    Tensor<T> tensor;
};

namespace detail {

/// Wraps freshly computed values into a node, wiring the backward closure
/// only when some input is tracked.
template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> data,
                      std::initializer_list<const Tensor<T>*> inputs,
                      std::function<void(const Node<T>&)> backward, const char* op) {
    auto node = std::make_shared<Node<T>>();
    node->shape = std::move(shape);
    node->data = std::move(data);
    node->op = op;
    bool track = false;
    if (grad_mode()) {
        for (const auto* in : inputs) track = track || in->requires_grad();
    }
    if (track) {
        node->requires_grad = true;
        for (const auto* in : inputs) node->parents.push_back(in->node_ptr());
        node->backward = std::move(backward);
    }
    return Tensor<T>::from_node(std::move(node));
}

template <typename T>
Tensor<T> make_result_n(Shape shape, std::vector<T> data, const std::vector<Tensor<T>>& inputs,
                        std::function<void(const Node<T>&)> backward, const char* op) {
    auto node = std::make_shared<Node<T>>();
    node->shape = std::move(shape);
    node->data = std::move(data);
    node->op = op;
    bool track = false;
    if (grad_mode()) {
        for (const auto& in : inputs) track = track || in.requires_grad();
    }
    if (track) {
        node->requires_grad = true;
        for (const auto& in : inputs) node->parents.push_back(in.node_ptr());
        node->backward = std::move(backward);
    }
    return Tensor<T>::from_node(std::move(node));
}

/// Accumulation target for an input's gradient, or nullptr when untracked.
template <typename T>
std::vector<T>* grad_sink(const std::shared_ptr<Node<T>>& n) {
    if (!n->requires_grad) return nullptr;
    n->ensure_grad();
    return &n->grad;
}

inline void require_same_shape(const Shape& a, const Shape& b, const char* op) {
    if (a != b) {
        throw DimensionError(std::string(op) + ": shape mismatch " + to_string(a) + " vs " + to_string(b));
    }
}

inline void require_rank(const Shape& s, std::size_t r, const char* op, const char* what = "input") {
    if (s.size() != r) {
        throw DimensionError(std::string(op) + ": " + what + " must have rank " + std::to_string(r) +
                             ", got shape " + to_string(s));
    }
}

}  // namespace detail
}  // namespace phaseformer
