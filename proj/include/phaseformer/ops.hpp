#pragma once

// Elementwise, reduction, shape and normalization operations.
//
// Broadcasting is limited to tensor-with-scalar (the *_scalar functions) and
// per-channel vectors against N,C,H,W maps (scale_channels, layer_norm
// weights). Everything else requires identical shapes.

#include <cmath>
#include <limits>
#include <numbers>

#include "phaseformer/tensor.hpp"

namespace phaseformer {

namespace detail {

/// y = f(x) elementwise with dy/dx = df(x, y).
template <typename T, typename F, typename DF>
Tensor<T> unary_op(const Tensor<T>& x, F f, DF df, const char* name) {
    const auto& xv = x.values();
    std::vector<T> out(xv.size());
    for (std::size_t i = 0; i < xv.size(); ++i) out[i] = f(xv[i]);
    auto xn = x.node_ptr();
    return make_result<T>(
        x.shape(), std::move(out), {&x},
        [xn, df](const Node<T>& self) {
            auto* g = grad_sink(xn);
            if (!g) return;
            for (std::size_t i = 0; i < self.grad.size(); ++i) {
                (*g)[i] += self.grad[i] * df(xn->data[i], self.data[i]);
            }
        },
        name);
}

/// z = f(a, b) elementwise; da/db return partial derivatives.
template <typename T, typename F, typename DA, typename DB>
Tensor<T> binary_op(const Tensor<T>& a, const Tensor<T>& b, F f, DA da, DB db, const char* name) {
    require_same_shape(a.shape(), b.shape(), name);
    const auto& av = a.values();
    const auto& bv = b.values();
    std::vector<T> out(av.size());
    for (std::size_t i = 0; i < av.size(); ++i) out[i] = f(av[i], bv[i]);
    auto an = a.node_ptr();
    auto bn = b.node_ptr();
    return make_result<T>(
        a.shape(), std::move(out), {&a, &b},
        [an, bn, da, db](const Node<T>& self) {
            if (auto* g = grad_sink(an)) {
                for (std::size_t i = 0; i < self.grad.size(); ++i) {
                    (*g)[i] += self.grad[i] * da(an->data[i], bn->data[i], self.data[i]);
                }
            }
            if (auto* g = grad_sink(bn)) {
                for (std::size_t i = 0; i < self.grad.size(); ++i) {
                    (*g)[i] += self.grad[i] * db(an->data[i], bn->data[i], self.data[i]);
                }
            }
        },
        name);
}

}  // namespace detail

// ---------------------------------------------------------------- elementwise

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    return detail::binary_op(
        a, b, [](T x, T y) { return x + y; }, [](T, T, T) { return T(1); }, [](T, T, T) { return T(1); },
        "add");
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    return detail::binary_op(
        a, b, [](T x, T y) { return x - y; }, [](T, T, T) { return T(1); }, [](T, T, T) { return T(-1); },
        "sub");
}

/// Hadamard product.
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    return detail::binary_op(
        a, b, [](T x, T y) { return x * y; }, [](T, T y, T) { return y; }, [](T x, T, T) { return x; }, "mul");
}

template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
    return detail::binary_op(
        a, b, [](T x, T y) { return x / y; }, [](T, T y, T) { return T(1) / y; },
        [](T, T y, T z) { return -z / y; }, "div");
}

/// atan2(y, x) with atan2(0, 0) := 0 (signed zeros included).
template <typename T>
T safe_atan2(T y, T x) {
    if (y == T(0) && x == T(0)) return T(0);
    return std::atan2(y, x);
}

/// Elementwise angle of (re, im); zero-magnitude bins have angle 0 and zero gradient.
template <typename T>
Tensor<T> atan2(const Tensor<T>& im, const Tensor<T>& re) {
    return detail::binary_op(
        im, re, [](T y, T x) { return safe_atan2(y, x); },
        [](T y, T x, T) {
            const T r2 = x * x + y * y;
            return r2 > T(0) ? x / r2 : T(0);
        },
        [](T y, T x, T) {
            const T r2 = x * x + y * y;
            return r2 > T(0) ? -y / r2 : T(0);
        },
        "atan2");
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& x, T c) {
    return detail::unary_op(x, [c](T v) { return v + c; }, [](T, T) { return T(1); }, "add_scalar");
}

template <typename T>
Tensor<T> mul_scalar(const Tensor<T>& x, T c) {
    return detail::unary_op(x, [c](T v) { return v * c; }, [c](T, T) { return c; }, "mul_scalar");
}

template <typename T>
Tensor<T> neg(const Tensor<T>& x) {
    return mul_scalar(x, T(-1));
}

template <typename T>
Tensor<T> square(const Tensor<T>& x) {
    return detail::unary_op(x, [](T v) { return v * v; }, [](T v, T) { return T(2) * v; }, "square");
}

template <typename T>
Tensor<T> sqrt(const Tensor<T>& x) {
    return detail::unary_op(
        x, [](T v) { return std::sqrt(v); }, [](T, T y) { return y > T(0) ? T(0.5) / y : T(0); }, "sqrt");
}

/// x^p for x > 0 (callers clamp first when needed).
template <typename T>
Tensor<T> pow_scalar(const Tensor<T>& x, T p) {
    return detail::unary_op(
        x, [p](T v) { return std::pow(v, p); },
        [p](T v, T) { return v > T(0) ? p * std::pow(v, p - T(1)) : T(0); }, "pow_scalar");
}

template <typename T>
Tensor<T> abs(const Tensor<T>& x) {
    return detail::unary_op(
        x, [](T v) { return std::abs(v); }, [](T v, T) { return v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0)); },
        "abs");
}

template <typename T>
Tensor<T> exp(const Tensor<T>& x) {
    return detail::unary_op(x, [](T v) { return std::exp(v); }, [](T, T y) { return y; }, "exp");
}

template <typename T>
Tensor<T> log(const Tensor<T>& x) {
    return detail::unary_op(x, [](T v) { return std::log(v); }, [](T v, T) { return T(1) / v; }, "log");
}

template <typename T>
Tensor<T> cos(const Tensor<T>& x) {
    return detail::unary_op(x, [](T v) { return std::cos(v); }, [](T v, T) { return -std::sin(v); }, "cos");
}

template <typename T>
Tensor<T> sin(const Tensor<T>& x) {
    return detail::unary_op(x, [](T v) { return std::sin(v); }, [](T v, T) { return std::cos(v); }, "sin");
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
    return detail::unary_op(
        x,
        [](T v) {
            if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
            const T e = std::exp(v);
            return e / (T(1) + e);
        },
        [](T, T y) { return y * (T(1) - y); }, "sigmoid");
}

/// Exact (erf) GELU.
template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
    constexpr T inv_sqrt2 = T(0.70710678118654752440);
    constexpr T inv_sqrt_2pi = T(0.39894228040143267794);
    return detail::unary_op(
        x, [](T v) { return T(0.5) * v * (T(1) + std::erf(v * inv_sqrt2)); },
        [](T v, T) { return T(0.5) * (T(1) + std::erf(v * inv_sqrt2)) + v * inv_sqrt_2pi * std::exp(T(-0.5) * v * v); },
        "gelu");
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
    return detail::unary_op(
        x, [](T v) { return v > T(0) ? v : T(0); }, [](T v, T) { return v > T(0) ? T(1) : T(0); }, "relu");
}

/// Values limited to [lo, hi]; gradient passes only strictly inside.
template <typename T>
Tensor<T> clamp(const Tensor<T>& x, T lo, T hi) {
    return detail::unary_op(
        x, [lo, hi](T v) { return std::clamp(v, lo, hi); },
        [lo, hi](T v, T) { return (v > lo && v < hi) ? T(1) : T(0); }, "clamp");
}

// ----------------------------------------------------------------- reductions

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
    T s = 0;
    for (T v : x.values()) s += v;
    auto xn = x.node_ptr();
    return detail::make_result<T>(
        Shape{1}, {s}, {&x},
        [xn](const detail::Node<T>& self) {
            auto* g = detail::grad_sink(xn);
            if (!g) return;
            for (auto& v : *g) v += self.grad[0];
        },
        "sum");
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
    return mul_scalar(sum(x), T(1) / static_cast<T>(x.numel()));
}

/// Global average pooling over the trailing two axes: N,C,H,W -> N,C,1,1.
template <typename T>
Tensor<T> global_avg_pool2d(const Tensor<T>& x) {
    detail::require_rank(x.shape(), 4, "global_avg_pool2d");
    const std::size_t nc = x.dim(0) * x.dim(1);
    const std::size_t hw = x.dim(2) * x.dim(3);
    const auto& xv = x.values();
    std::vector<T> out(nc);
    for (std::size_t i = 0; i < nc; ++i) {
        T s = 0;
        for (std::size_t j = 0; j < hw; ++j) s += xv[i * hw + j];
        out[i] = s / static_cast<T>(hw);
    }
    auto xn = x.node_ptr();
    return detail::make_result<T>(
        Shape{x.dim(0), x.dim(1), 1, 1}, std::move(out), {&x},
        [xn, nc, hw](const detail::Node<T>& self) {
            auto* g = detail::grad_sink(xn);
            if (!g) return;
            const T inv = T(1) / static_cast<T>(hw);
            for (std::size_t i = 0; i < nc; ++i) {
                const T gi = self.grad[i] * inv;
                for (std::size_t j = 0; j < hw; ++j) (*g)[i * hw + j] += gi;
            }
        },
        "global_avg_pool2d");
}

/// Sum of a * b over all elements.
template <typename T>
Tensor<T> dot(const Tensor<T>& a, const Tensor<T>& b) {
    return sum(mul(a, b));
}

// ---------------------------------------------------------------------- shape

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
    if (numel(shape) != x.numel()) {
        throw DimensionError("reshape: cannot view " + to_string(x.shape()) + " as " + to_string(shape));
    }
    auto xn = x.node_ptr();
    return detail::make_result<T>(
        std::move(shape), x.values(), {&x},
        [xn](const detail::Node<T>& self) {
            auto* g = detail::grad_sink(xn);
            if (!g) return;
            for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[i] += self.grad[i];
        },
        "reshape");
}

/// Swap the last two axes of a rank >= 2 tensor.
template <typename T>
Tensor<T> transpose_last2(const Tensor<T>& x) {
    if (x.rank() < 2) throw DimensionError("transpose_last2: rank < 2, shape " + to_string(x.shape()));
    const std::size_t r = x.dim(x.rank() - 2);
    const std::size_t c = x.dim(x.rank() - 1);
    const std::size_t batch = x.numel() / (r * c);
    Shape shape = x.shape();
    std::swap(shape[shape.size() - 1], shape[shape.size() - 2]);
    const auto& xv = x.values();
    std::vector<T> out(xv.size());
    for (std::size_t b = 0; b < batch; ++b) {
        const T* src = xv.data() + b * r * c;
        T* dst = out.data() + b * r * c;
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) dst[j * r + i] = src[i * c + j];
    }
    auto xn = x.node_ptr();
    return detail::make_result<T>(
        std::move(shape), std::move(out), {&x},
        [xn, batch, r, c](const detail::Node<T>& self) {
            auto* g = detail::grad_sink(xn);
            if (!g) return;
            for (std::size_t b = 0; b < batch; ++b) {
                const T* src = self.grad.data() + b * r * c;
                T* dst = g->data() + b * r * c;
                for (std::size_t i = 0; i < r; ++i)
                    for (std::size_t j = 0; j < c; ++j) dst[i * c + j] += src[j * r + i];
            }
        },
        "transpose_last2");
}

/// Concatenate rank-4 tensors along the channel axis.
template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require_rank(a.shape(), 4, "concat_channels", "first input");
    detail::require_rank(b.shape(), 4, "concat_channels", "second input");
    if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3)) {
        throw DimensionError("concat_channels: N/H/W mismatch " + to_string(a.shape()) + " vs " +
                             to_string(b.shape()));
    }
    const std::size_t n = a.dim(0), ca = a.dim(1), cb = b.dim(1), hw = a.dim(2) * a.dim(3);
    std::vector<T> out(n * (ca + cb) * hw);
    for (std::size_t i = 0; i < n; ++i) {
        std::copy_n(a.values().data() + i * ca * hw, ca * hw, out.data() + i * (ca + cb) * hw);
        std::copy_n(b.values().data() + i * cb * hw, cb * hw, out.data() + i * (ca + cb) * hw + ca * hw);
    }
    auto an = a.node_ptr();
    auto bn = b.node_ptr();
    return detail::make_result<T>(
        Shape{n, ca + cb, a.dim(2), a.dim(3)}, std::move(out), {&a, &b},
        [an, bn, n, ca, cb, hw](const detail::Node<T>& self) {
            auto* ga = detail::grad_sink(an);
            auto* gb = detail::grad_sink(bn);
            for (std::size_t i = 0; i < n; ++i) {
                const T* src = self.grad.data() + i * (ca + cb) * hw;
                if (ga)
                    for (std::size_t j = 0; j < ca * hw; ++j) (*ga)[i * ca * hw + j] += src[j];
                if (gb)
                    for (std::size_t j = 0; j < cb * hw; ++j) (*gb)[i * cb * hw + j] += src[ca * hw + j];
            }
        },
        "concat_channels");
}

/// Channels [start, start+count) of a rank-4 tensor.
template <typename T>
Tensor<T> slice_channels(const Tensor<T>& x, std::size_t start, std::size_t count) {
    detail::require_rank(x.shape(), 4, "slice_channels");
    const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
    if (start + count > c) {
        throw DimensionError("slice_channels: [" + std::to_string(start) + "," + std::to_string(start + count) +
                             ") exceeds channel axis of " + to_string(x.shape()));
    }
    std::vector<T> out(n * count * hw);
    for (std::size_t i = 0; i < n; ++i) {
        std::copy_n(x.values().data() + (i * c + start) * hw, count * hw, out.data() + i * count * hw);
    }
    auto xn = x.node_ptr();
    return detail::make_result<T>(
        Shape{n, count, x.dim(2), x.dim(3)}, std::move(out), {&x},
        [xn, n, c, hw, start, count](const detail::Node<T>& self) {
            auto* g = detail::grad_sink(xn);
            if (!g) return;
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < count * hw; ++j) (*g)[(i * c + start) * hw + j] += self.grad[i * count * hw + j];
        },
        "slice_channels");
}

/// x[index] along the leading axis.
template <typename T>
Tensor<T> select_leading(const Tensor<T>& x, std::size_t index) {
    if (x.rank() < 2) throw DimensionError("select_leading: rank < 2, shape " + to_string(x.shape()));
    if (index >= x.dim(0)) throw DimensionError("select_leading: index out of range on axis 0");
    Shape shape(x.shape().begin() + 1, x.shape().end());
    const std::size_t block = numel(shape);
    std::vector<T> out(x.values().begin() + index * block, x.values().begin() + (index + 1) * block);
    auto xn = x.node_ptr();
    return detail::make_result<T>(
        std::move(shape), std::move(out), {&x},
        [xn, index, block](const detail::Node<T>& self) {
            auto* g = detail::grad_sink(xn);
            if (!g) return;
            for (std::size_t j = 0; j < block; ++j) (*g)[index * block + j] += self.grad[j];
        },
        "select_leading");
}

/// Stack same-shaped tensors along a new leading axis.
template <typename T>
Tensor<T> stack(const std::vector<Tensor<T>>& xs) {
    if (xs.empty()) throw UsageError("stack: no inputs");
    const Shape inner = xs.front().shape();
    const std::size_t block = numel(inner);
    std::vector<T> out;
    out.reserve(block * xs.size());
    for (const auto& x : xs) {
        detail::require_same_shape(inner, x.shape(), "stack");
        out.insert(out.end(), x.values().begin(), x.values().end());
    }
    Shape shape{xs.size()};
    shape.insert(shape.end(), inner.begin(), inner.end());
    std::vector<typename Tensor<T>::NodePtr> nodes;
    for (const auto& x : xs) nodes.push_back(x.node_ptr());
    return detail::make_result_n<T>(
        std::move(shape), std::move(out), xs,
        [nodes, block](const detail::Node<T>& self) {
            for (std::size_t i = 0; i < nodes.size(); ++i) {
                auto* g = detail::grad_sink(nodes[i]);
                if (!g) continue;
                for (std::size_t j = 0; j < block; ++j) (*g)[j] += self.grad[i * block + j];
            }
        },
        "stack");
}

/// Forward difference along the last axis: y[..., j] = x[..., j+1] - x[..., j].
template <typename T>
Tensor<T> diff_last(const Tensor<T>& x) {
    const std::size_t w = x.dim(x.rank() - 1);
    if (w < 2) throw DimensionError("diff_last: last axis shorter than 2 in " + to_string(x.shape()));
    const std::size_t rows = x.numel() / w;
    Shape shape = x.shape();
    shape.back() = w - 1;
    const auto& xv = x.values();
    std::vector<T> out(rows * (w - 1));
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j + 1 < w; ++j) out[r * (w - 1) + j] = xv[r * w + j + 1] - xv[r * w + j];
    auto xn = x.node_ptr();
    return detail::make_result<T>(
        std::move(shape), std::move(out), {&x},
        [xn, rows, w](const detail::Node<T>& self) {
            auto* g = detail::grad_sink(xn);
            if (!g) return;
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t j = 0; j + 1 < w; ++j) {
                    const T gv = self.grad[r * (w - 1) + j];
                    (*g)[r * w + j + 1] += gv;
                    (*g)[r * w + j] -= gv;
                }
        },
        "diff_last");
}

/// Forward difference along the second-to-last axis (image rows).
template <typename T>
Tensor<T> diff_rows(const Tensor<T>& x) {
    if (x.rank() < 2) throw DimensionError("diff_rows: rank < 2, shape " + to_string(x.shape()));
    const std::size_t h = x.dim(x.rank() - 2), w = x.dim(x.rank() - 1);
    if (h < 2) throw DimensionError("diff_rows: row axis shorter than 2 in " + to_string(x.shape()));
    const std::size_t planes = x.numel() / (h * w);
    Shape shape = x.shape();
    shape[shape.size() - 2] = h - 1;
    const auto& xv = x.values();
    std::vector<T> out(planes * (h - 1) * w);
    for (std::size_t p = 0; p < planes; ++p)
        for (std::size_t i = 0; i + 1 < h; ++i)
            for (std::size_t j = 0; j < w; ++j)
                out[(p * (h - 1) + i) * w + j] = xv[(p * h + i + 1) * w + j] - xv[(p * h + i) * w + j];
    auto xn = x.node_ptr();
    return detail::make_result<T>(
        std::move(shape), std::move(out), {&x},
        [xn, planes, h, w](const detail::Node<T>& self) {
            auto* g = detail::grad_sink(xn);
            if (!g) return;
            for (std::size_t p = 0; p < planes; ++p)
                for (std::size_t i = 0; i + 1 < h; ++i)
                    for (std::size_t j = 0; j < w; ++j) {
                        const T gv = self.grad[(p * (h - 1) + i) * w + j];
                        (*g)[(p * h + i + 1) * w + j] += gv;
                        (*g)[(p * h + i) * w + j] -= gv;
                    }
        },
        "diff_rows");
}

/// 2x2 average pooling with stride 2 on N,C,H,W (H, W even).
template <typename T>
Tensor<T> avg_pool2x2(const Tensor<T>& x) {
    detail::require_rank(x.shape(), 4, "avg_pool2x2");
    const std::size_t planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
    if (h % 2 || w % 2) throw DimensionError("avg_pool2x2: odd spatial dims in " + to_string(x.shape()));
    const std::size_t ho = h / 2, wo = w / 2;
    const auto& xv = x.values();
    std::vector<T> out(planes * ho * wo);
    for (std::size_t p = 0; p < planes; ++p)
        for (std::size_t i = 0; i < ho; ++i)
            for (std::size_t j = 0; j < wo; ++j) {
                const T* s = xv.data() + (p * h + 2 * i) * w + 2 * j;
                out[(p * ho + i) * wo + j] = T(0.25) * (s[0] + s[1] + s[w] + s[w + 1]);
            }
    auto xn = x.node_ptr();
    return detail::make_result<T>(
        Shape{x.dim(0), x.dim(1), ho, wo}, std::move(out), {&x},
        [xn, planes, h, w, ho, wo](const detail::Node<T>& self) {
            auto* g = detail::grad_sink(xn);
            if (!g) return;
            for (std::size_t p = 0; p < planes; ++p)
                for (std::size_t i = 0; i < ho; ++i)
                    for (std::size_t j = 0; j < wo; ++j) {
                        const T gv = T(0.25) * self.grad[(p * ho + i) * wo + j];
                        T* d = g->data() + (p * h + 2 * i) * w + 2 * j;
                        d[0] += gv;
                        d[1] += gv;
                        d[w] += gv;
                        d[w + 1] += gv;
                    }
        },
        "avg_pool2x2");
}

/// Spatial mean of each (n, c) plane: N,C,H,W -> N,C.
template <typename T>
Tensor<T> mean_planes(const Tensor<T>& x) {
    auto pooled = global_avg_pool2d(x);
    return reshape(pooled, Shape{x.dim(0), x.dim(1)});
}

// ------------------------------------------------------- attention primitives

/// Softmax along the last axis, computed with max subtraction.
template <typename T>
Tensor<T> softmax_last(const Tensor<T>& x) {
    const std::size_t n = x.dim(x.rank() - 1);
    const std::size_t rows = x.numel() / n;
    const auto& xv = x.values();
    std::vector<T> out(xv.size());
    for (std::size_t r = 0; r < rows; ++r) {
        const T* src = xv.data() + r * n;
        T* dst = out.data() + r * n;
        T m = *std::max_element(src, src + n);
        T s = 0;
        for (std::size_t j = 0; j < n; ++j) s += (dst[j] = std::exp(src[j] - m));
        for (std::size_t j = 0; j < n; ++j) dst[j] /= s;
    }
    auto xn = x.node_ptr();
    return detail::make_result<T>(
        x.shape(), std::move(out), {&x},
        [xn, rows, n](const detail::Node<T>& self) {
            auto* g = detail::grad_sink(xn);
            if (!g) return;
            for (std::size_t r = 0; r < rows; ++r) {
                const T* y = self.data.data() + r * n;
                const T* gy = self.grad.data() + r * n;
                T inner = 0;
                for (std::size_t j = 0; j < n; ++j) inner += y[j] * gy[j];
                for (std::size_t j = 0; j < n; ++j) (*g)[r * n + j] += y[j] * (gy[j] - inner);
            }
        },
        "softmax_last");
}

/// Softmax along `axis`, computed with max subtraction.
template <typename T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis) {
    if (axis >= x.rank()) {
        throw DimensionError("softmax: axis " + std::to_string(axis) + " out of range for shape " +
                             to_string(x.shape()));
    }
    if (axis == x.rank() - 1) return softmax_last(x);
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= x.dim(i);
    for (std::size_t i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);
    const std::size_t n = x.dim(axis);
    const auto& xv = x.values();
    std::vector<T> out(xv.size());
    for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t i = 0; i < inner; ++i) {
            const std::size_t base = o * n * inner + i;
            T m = xv[base];
            for (std::size_t k = 1; k < n; ++k) m = std::max(m, xv[base + k * inner]);
            T s = 0;
            for (std::size_t k = 0; k < n; ++k) s += (out[base + k * inner] = std::exp(xv[base + k * inner] - m));
            for (std::size_t k = 0; k < n; ++k) out[base + k * inner] /= s;
        }
    auto xn = x.node_ptr();
    return detail::make_result<T>(
        x.shape(), out, {&x},
        [xn, y = out, outer, inner, n](const detail::Node<T>& self) {
            auto* g = detail::grad_sink(xn);
            if (!g) return;
            for (std::size_t o = 0; o < outer; ++o)
                for (std::size_t i = 0; i < inner; ++i) {
                    const std::size_t base = o * n * inner + i;
                    T dot = 0;
                    for (std::size_t k = 0; k < n; ++k) dot += y[base + k * inner] * self.grad[base + k * inner];
                    for (std::size_t k = 0; k < n; ++k)
                        (*g)[base + k * inner] += y[base + k * inner] * (self.grad[base + k * inner] - dot);
                }
        },
        "softmax");
}

/// Batched matrix product: [B,M,K] x [B,K,N] -> [B,M,N].
template <typename T>
Tensor<T> bmm(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require_rank(a.shape(), 3, "bmm", "left operand");
    detail::require_rank(b.shape(), 3, "bmm", "right operand");
    if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(1)) {
        throw DimensionError("bmm: incompatible operands " + to_string(a.shape()) + " x " + to_string(b.shape()) +
                             " (batch axis 0 and contraction axes a:2/b:1 must agree)");
    }
    const std::size_t B = a.dim(0), M = a.dim(1), K = a.dim(2), N = b.dim(2);
    const auto& av = a.values();
    const auto& bv = b.values();
    std::vector<T> out(B * M * N, T(0));
    for (std::size_t z = 0; z < B; ++z)
        for (std::size_t i = 0; i < M; ++i) {
            T* o = out.data() + (z * M + i) * N;
            for (std::size_t k = 0; k < K; ++k) {
                const T aik = av[(z * M + i) * K + k];
                const T* brow = bv.data() + (z * K + k) * N;
                for (std::size_t j = 0; j < N; ++j) o[j] += aik * brow[j];
            }
        }
    auto an = a.node_ptr();
    auto bn = b.node_ptr();
    return detail::make_result<T>(
        Shape{B, M, N}, std::move(out), {&a, &b},
        [an, bn, B, M, K, N](const detail::Node<T>& self) {
            const T* gy = self.grad.data();
            if (auto* ga = detail::grad_sink(an)) {
                // dA = dY * B^T
                for (std::size_t z = 0; z < B; ++z)
                    for (std::size_t i = 0; i < M; ++i)
                        for (std::size_t k = 0; k < K; ++k) {
                            const T* grow = gy + (z * M + i) * N;
                            const T* brow = bn->data.data() + (z * K + k) * N;
                            T s = 0;
                            for (std::size_t j = 0; j < N; ++j) s += grow[j] * brow[j];
                            (*ga)[(z * M + i) * K + k] += s;
                        }
            }
            if (auto* gb = detail::grad_sink(bn)) {
                // dB = A^T * dY
                for (std::size_t z = 0; z < B; ++z)
                    for (std::size_t i = 0; i < M; ++i) {
                        const T* grow = gy + (z * M + i) * N;
                        for (std::size_t k = 0; k < K; ++k) {
                            const T aik = an->data[(z * M + i) * K + k];
                            T* d = gb->data() + (z * K + k) * N;
                            for (std::size_t j = 0; j < N; ++j) d[j] += aik * grow[j];
                        }
                    }
            }
        },
        "bmm");
}

/// Plain 2D matrix product built on bmm.
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require_rank(a.shape(), 2, "matmul", "left operand");
    detail::require_rank(b.shape(), 2, "matmul", "right operand");
    auto r = bmm(reshape(a, Shape{1, a.dim(0), a.dim(1)}), reshape(b, Shape{1, b.dim(0), b.dim(1)}));
    return reshape(r, Shape{a.dim(0), b.dim(1)});
}

/// Multiply every H x W plane of x[N,C,H,W] by s[N,C,1,1] (or s[N,C]).
template <typename T>
Tensor<T> scale_channels(const Tensor<T>& x, const Tensor<T>& s) {
    detail::require_rank(x.shape(), 4, "scale_channels");
    const std::size_t nc = x.dim(0) * x.dim(1), hw = x.dim(2) * x.dim(3);
    if (s.numel() != nc || s.dim(0) != x.dim(0)) {
        throw DimensionError("scale_channels: gate " + to_string(s.shape()) + " does not match N,C of " +
                             to_string(x.shape()));
    }
    const auto& xv = x.values();
    const auto& sv = s.values();
    std::vector<T> out(xv.size());
    for (std::size_t i = 0; i < nc; ++i)
        for (std::size_t j = 0; j < hw; ++j) out[i * hw + j] = xv[i * hw + j] * sv[i];
    auto xn = x.node_ptr();
    auto sn = s.node_ptr();
    return detail::make_result<T>(
        x.shape(), std::move(out), {&x, &s},
        [xn, sn, nc, hw](const detail::Node<T>& self) {
            auto* gx = detail::grad_sink(xn);
            auto* gs = detail::grad_sink(sn);
            for (std::size_t i = 0; i < nc; ++i) {
                T acc = 0;
                for (std::size_t j = 0; j < hw; ++j) {
                    const T gy = self.grad[i * hw + j];
                    if (gx) (*gx)[i * hw + j] += gy * sn->data[i];
                    acc += gy * xn->data[i * hw + j];
                }
                if (gs) (*gs)[i] += acc;
            }
        },
        "scale_channels");
}

/// Bias-free layer normalization across the channel axis of N,C,H,W:
/// each spatial position is centred and scaled to unit variance over its C
/// values, then multiplied by a learnable per-channel weight.
template <typename T>
Tensor<T> layer_norm_channels(const Tensor<T>& x, const Tensor<T>& weight, T eps = T(1e-5)) {
    detail::require_rank(x.shape(), 4, "layer_norm_channels");
    const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
    if (weight.numel() != c) {
        throw DimensionError("layer_norm_channels: weight has " + std::to_string(weight.numel()) +
                             " entries for channel axis (1) of size " + std::to_string(c));
    }
    const auto& xv = x.values();
    const auto& wv = weight.values();
    std::vector<T> out(xv.size());
    std::vector<T> xhat(xv.size());
    std::vector<T> inv_std(n * hw);
    for (std::size_t b = 0; b < n; ++b)
        for (std::size_t p = 0; p < hw; ++p) {
            const T* src = xv.data() + b * c * hw + p;
            T m = 0;
            for (std::size_t k = 0; k < c; ++k) m += src[k * hw];
            m /= static_cast<T>(c);
            T var = 0;
            for (std::size_t k = 0; k < c; ++k) var += (src[k * hw] - m) * (src[k * hw] - m);
            var /= static_cast<T>(c);
            const T is = T(1) / std::sqrt(var + eps);
            inv_std[b * hw + p] = is;
            for (std::size_t k = 0; k < c; ++k) {
                const std::size_t idx = b * c * hw + k * hw + p;
                xhat[idx] = (src[k * hw] - m) * is;
                out[idx] = xhat[idx] * wv[k];
            }
        }
    auto xn = x.node_ptr();
    auto wn = weight.node_ptr();
    return detail::make_result<T>(
        x.shape(), std::move(out), {&x, &weight},
        [xn, wn, xhat = std::move(xhat), inv_std = std::move(inv_std), n, c, hw](const detail::Node<T>& self) {
            auto* gx = detail::grad_sink(xn);
            auto* gw = detail::grad_sink(wn);
            const T inv_c = T(1) / static_cast<T>(c);
            for (std::size_t b = 0; b < n; ++b)
                for (std::size_t p = 0; p < hw; ++p) {
                    T sum_g = 0, sum_gx = 0;
                    for (std::size_t k = 0; k < c; ++k) {
                        const std::size_t idx = b * c * hw + k * hw + p;
                        const T gh = self.grad[idx] * wn->data[k];
                        sum_g += gh;
                        sum_gx += gh * xhat[idx];
                        if (gw) (*gw)[k] += self.grad[idx] * xhat[idx];
                    }
                    if (!gx) continue;
                    const T is = inv_std[b * hw + p];
                    for (std::size_t k = 0; k < c; ++k) {
                        const std::size_t idx = b * c * hw + k * hw + p;
                        const T gh = self.grad[idx] * wn->data[k];
                        (*gx)[idx] += is * (gh - inv_c * sum_g - xhat[idx] * inv_c * sum_gx);
                    }
                }
        },
        "layer_norm_channels");
}

}  // namespace phaseformer
