#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "phaseformer/phaseformer.hpp"

namespace gradcases {

using namespace phaseformer;
using V = std::vector<Tensor<double>>;
using Fn = std::function<Tensor<double>(const V&)>;

struct OpCase {
    std::string name;
    std::vector<std::vector<Shape>> shape_sets;  // >= 3 input shape lists
    Fn fn;
    double lo = -1.0, hi = 1.0;
};

/// Reverse-mode vs central differences of dot(fn(inputs), r) for a fixed random r.
inline GradCheckResult check_case(const Fn& fn, const std::vector<Shape>& shapes, std::uint64_t seed, double lo = -1.0,
                                  double hi = 1.0) {
    V inputs;
    for (std::size_t i = 0; i < shapes.size(); ++i) inputs.push_back(oracle::random_tensor(shapes[i], seed + i, lo, hi));
    Tensor<double> probe;
    {
        NoGradGuard guard;
        const auto y = fn(inputs);
        probe = oracle::random_tensor(y.shape(), seed + 1000);
    }
    return grad_check([&] { return dot(fn(inputs), probe); }, inputs);
}

/// Worst relative error of a case over all of its shape sets.
inline GradCheckResult check_all(const OpCase& c) {
    GradCheckResult worst;
    std::uint64_t seed = 100;
    for (const auto& shapes : c.shape_sets) {
        auto r = check_case(c.fn, shapes, seed += 17, c.lo, c.hi);
        if (r.max_rel_error >= worst.max_rel_error) {
            r.checked += worst.checked;
            worst = r;
        } else {
            worst.checked += r.checked;
        }
    }
    return worst;
}

inline std::vector<OpCase> tensor_cases() {
    using S = Shape;
    const std::vector<std::vector<S>> unary4 = {{S{1, 2, 3, 3}}, {S{2, 1, 4, 2}}, {S{1, 3, 2, 5}}};
    const std::vector<std::vector<S>> binary = {{S{3}, S{3}}, {S{2, 3}, S{2, 3}}, {S{1, 2, 2, 3}, S{1, 2, 2, 3}}};
    std::vector<OpCase> c;
    c.push_back({"add", binary, [](const V& x) { return add(x[0], x[1]); }});
    c.push_back({"sub", binary, [](const V& x) { return sub(x[0], x[1]); }});
    c.push_back({"mul", binary, [](const V& x) { return mul(x[0], x[1]); }});
    c.push_back({"div", binary, [](const V& x) { return div(x[0], x[1]); }, 0.5, 2.0});
    c.push_back({"atan2", binary, [](const V& x) { return atan2(x[0], x[1]); }, 0.3, 1.5});
    c.push_back({"add_scalar", unary4, [](const V& x) { return add_scalar(x[0], 0.3); }});
    c.push_back({"mul_scalar", unary4, [](const V& x) { return mul_scalar(x[0], -1.7); }});
    c.push_back({"neg", unary4, [](const V& x) { return neg(x[0]); }});
    c.push_back({"square", unary4, [](const V& x) { return square(x[0]); }});
    c.push_back({"sqrt", unary4, [](const V& x) { return sqrt(x[0]); }, 0.2, 2.0});
    c.push_back({"pow_scalar", unary4, [](const V& x) { return pow_scalar(x[0], 1.7); }, 0.2, 2.0});
    c.push_back({"abs", unary4, [](const V& x) { return abs(x[0]); }, 0.1, 1.0});
    c.push_back({"exp", unary4, [](const V& x) { return exp(x[0]); }});
    c.push_back({"log", unary4, [](const V& x) { return log(x[0]); }, 0.2, 2.0});
    c.push_back({"cos", unary4, [](const V& x) { return cos(x[0]); }});
    c.push_back({"sin", unary4, [](const V& x) { return sin(x[0]); }});
    c.push_back({"sigmoid", unary4, [](const V& x) { return sigmoid(x[0]); }, -3, 3});
    c.push_back({"gelu", unary4, [](const V& x) { return gelu(x[0]); }, -3, 3});
    c.push_back({"relu", unary4, [](const V& x) { return relu(x[0]); }, 0.1, 1.0});
    c.push_back({"clamp", unary4, [](const V& x) { return clamp(x[0], -0.5, 0.5); }});
    c.push_back({"sum", unary4, [](const V& x) { return sum(x[0]); }});
    c.push_back({"mean", unary4, [](const V& x) { return mean(x[0]); }});
    c.push_back({"global_avg_pool2d", unary4, [](const V& x) { return global_avg_pool2d(x[0]); }});
    c.push_back({"mean_planes", unary4, [](const V& x) { return mean_planes(x[0]); }});
    c.push_back({"dot", binary, [](const V& x) { return dot(x[0], x[1]); }});
    c.push_back({"reshape", unary4, [](const V& x) { return reshape(x[0], Shape{x[0].numel()}); }});
    c.push_back({"transpose_last2", unary4, [](const V& x) { return transpose_last2(x[0]); }});
    c.push_back({"diff_last", unary4, [](const V& x) { return diff_last(x[0]); }});
    c.push_back({"diff_rows", unary4, [](const V& x) { return diff_rows(x[0]); }});
    c.push_back({"avg_pool2x2",
                 {{S{1, 1, 4, 4}}, {S{2, 2, 2, 6}}, {S{1, 3, 6, 2}}},
                 [](const V& x) { return avg_pool2x2(x[0]); }});
    c.push_back({"concat_channels",
                 {{S{1, 1, 2, 2}, S{1, 2, 2, 2}}, {S{2, 2, 3, 1}, S{2, 1, 3, 1}}, {S{1, 3, 2, 3}, S{1, 3, 2, 3}}},
                 [](const V& x) { return concat_channels(x[0], x[1]); }});
    c.push_back({"slice_channels", unary4, [](const V& x) { return slice_channels(x[0], 0, 1); }});
    c.push_back({"select_leading", unary4, [](const V& x) { return select_leading(x[0], x[0].dim(0) - 1); }});
    c.push_back({"stack", binary, [](const V& x) { return stack(x); }});
    c.push_back({"softmax_last", unary4, [](const V& x) { return softmax_last(mul_scalar(x[0], 2.0)); }});
    c.push_back({"softmax_axis1", unary4, [](const V& x) { return softmax(mul_scalar(x[0], 2.0), 1); }});
    c.push_back({"bmm",
                 {{S{1, 2, 3}, S{1, 3, 2}}, {S{2, 3, 4}, S{2, 4, 1}}, {S{3, 1, 2}, S{3, 2, 3}}},
                 [](const V& x) { return bmm(x[0], x[1]); }});
    c.push_back({"matmul",
                 {{S{2, 3}, S{3, 2}}, {S{1, 4}, S{4, 3}}, {S{3, 3}, S{3, 1}}},
                 [](const V& x) { return matmul(x[0], x[1]); }});
    c.push_back({"scale_channels",
                 {{S{1, 2, 3, 3}, S{1, 2, 1, 1}}, {S{2, 3, 2, 2}, S{2, 3}}, {S{1, 1, 4, 2}, S{1, 1, 1, 1}}},
                 [](const V& x) { return scale_channels(x[0], x[1]); }});
    c.push_back({"layer_norm_channels",
                 {{S{1, 3, 2, 2}, S{3}}, {S{2, 4, 1, 3}, S{4}}, {S{1, 2, 3, 3}, S{2}}},
                 [](const V& x) { return layer_norm_channels(x[0], x[1]); }});
    c.push_back({"conv2d",
                 {{S{1, 2, 5, 5}, S{3, 2, 3, 3}}, {S{2, 1, 4, 6}, S{2, 1, 1, 1}}, {S{1, 2, 6, 5}, S{1, 2, 5, 5}}},
                 [](const V& x) { return conv2d_same(x[0], x[1]); }});
    c.push_back({"conv2d_stride2",
                 {{S{1, 2, 5, 5}, S{3, 2, 3, 3}}, {S{1, 1, 6, 6}, S{2, 1, 3, 3}}, {S{2, 2, 4, 7}, S{1, 2, 3, 3}}},
                 [](const V& x) { return conv2d(x[0], x[1], 2, 1); }});
    c.push_back({"depthwise_conv2d",
                 {{S{1, 2, 4, 4}, S{2, 1, 3, 3}}, {S{2, 3, 3, 5}, S{3, 1, 3, 3}}, {S{1, 1, 5, 5}, S{1, 1, 5, 5}}},
                 [](const V& x) { return depthwise_conv2d(x[0], x[1]); }});
    c.push_back({"conv_transpose2d",
                 {{S{1, 2, 3, 3}, S{2, 3, 2, 2}}, {S{2, 1, 2, 4}, S{1, 2, 2, 2}}, {S{1, 3, 2, 2}, S{3, 1, 4, 4}}},
                 [](const V& x) { return conv_transpose2d(x[0], x[1], 2, x[1].dim(2) == 4 ? 1 : 0); }});
    c.push_back({"conv1d",
                 {{S{1, 1, 6}, S{1, 1, 3}}, {S{2, 1, 5}, S{1, 1, 5}}, {S{3, 1, 8}, S{1, 1, 1}}},
                 [](const V& x) { return conv1d(x[0], x[1]); }});
    return c;
}


inline std::vector<OpCase> spectral_cases() {
    using S = Shape;
    const std::vector<std::vector<S>> shapes = {{S{1, 1, 4, 4}}, {S{1, 2, 2, 8}}, {S{2, 1, 8, 4}}};
    return {
        {"fft2.real", shapes, [](const V& x) { return fft2(x[0]).real; }},
        {"fft2.imag", shapes, [](const V& x) { return fft2(x[0]).imag; }},
        {"ifft2", {{S{1, 1, 4, 4}, S{1, 1, 4, 4}}, {S{1, 2, 2, 8}, S{1, 2, 2, 8}}, {S{2, 1, 8, 4}, S{2, 1, 8, 4}}},
         [](const V& x) { return ifft2(ComplexSpectrum<double>{x[0], x[1]}); }},
        {"decompose.amplitude", shapes, [](const V& x) { return decompose(fft2(x[0])).amplitude; }},
        {"decompose.phase", shapes, [](const V& x) { return decompose(fft2(x[0])).phase; }},
        {"pem", shapes, [](const V& x) { return pem(x[0]); }},
    };
}

/// Attention, feed-forward, block and skip modules with every weight as an input.
inline std::vector<OpCase> module_cases() {
    using S = Shape;
    auto pmsa_shapes = [](std::size_t n, std::size_t c, std::size_t h, std::size_t H, std::size_t W) {
        const S point{c, c, 1, 1}, depth{c, 1, 3, 3};
        return std::vector<S>{S{n, c, H, W}, point, depth, point, depth, point, depth, point, S{h}};
    };
    auto pmsa_of = [](const V& x, std::size_t off) {
        PmsaParams<double> p;
        p.q_point = x[off];
        p.q_depth = x[off + 1];
        p.k_point = x[off + 2];
        p.k_depth = x[off + 3];
        p.v_point = x[off + 4];
        p.v_depth = x[off + 5];
        p.out_point = x[off + 6];
        p.alpha = x[off + 7];
        return p;
    };
    auto ffn_shapes = [](std::size_t c) {
        const std::size_t hidden = 2 * c;
        return std::vector<S>{S{2 * hidden, c, 1, 1}, S{2 * hidden, 1, 3, 3}, S{c, hidden, 1, 1}};
    };
    auto block_shapes = [&](std::size_t n, std::size_t c, std::size_t h, std::size_t H, std::size_t W) {
        auto s = pmsa_shapes(n, c, h, H, W);
        s.insert(s.begin() + 1, {S{c}, S{c}});
        for (const auto& f : ffn_shapes(c)) s.push_back(f);
        return s;
    };
    auto block_fn = [=](ResidualKind r, AttentionKind a) {
        return [=](const V& x) {
            BlockParams<double> p;
            p.norm1 = x[1];
            p.norm2 = x[2];
            p.attn = pmsa_of(x, 3);
            p.ffn = FfnParams<double>{x[11], x[12], x[13]};
            return pbtb(x[0], p, BlockOptions{a, r});
        };
    };
    std::vector<OpCase> c;
    c.push_back({"transposed_attention",
                 {{S{1, 4, 2, 2}, S{1, 4, 2, 2}, S{1, 4, 2, 2}, S{2}},
                  {S{2, 2, 3, 1}, S{2, 2, 3, 1}, S{2, 2, 3, 1}, S{1}},
                  {S{1, 6, 2, 3}, S{1, 6, 2, 3}, S{1, 6, 2, 3}, S{3}}},
                 [](const V& x) { return transposed_attention(x[0], x[1], x[2], x[3], x[3].numel()).out; }});
    c.push_back({"pmsa.phase",
                 {pmsa_shapes(1, 4, 2, 4, 4), pmsa_shapes(1, 2, 1, 2, 8), pmsa_shapes(2, 4, 4, 2, 2)},
                 [=](const V& x) { return pmsa(x[0], pmsa_of(x, 1)); }});
    c.push_back({"pmsa.plain",
                 {pmsa_shapes(1, 4, 2, 4, 4), pmsa_shapes(1, 2, 1, 2, 8), pmsa_shapes(2, 4, 4, 2, 2)},
                 [=](const V& x) { return pmsa(x[0], pmsa_of(x, 1), BlockOptions{AttentionKind::plain}); }});
    auto with_input = [&](std::size_t n, std::size_t ch, std::size_t H, std::size_t W) {
        auto s = ffn_shapes(ch);
        s.insert(s.begin(), S{n, ch, H, W});
        return s;
    };
    c.push_back({"ffn",
                 {with_input(1, 2, 4, 4), with_input(1, 3, 2, 5), with_input(2, 1, 3, 3)},
                 [](const V& x) { return ffn(x[0], FfnParams<double>{x[1], x[2], x[3]}); }});
    c.push_back({"pbtb.normalized",
                 {block_shapes(1, 4, 2, 4, 4), block_shapes(1, 2, 1, 4, 2), block_shapes(2, 4, 4, 2, 2)},
                 block_fn(ResidualKind::normalized, AttentionKind::phase)});
    c.push_back({"pbtb.pre_norm",
                 {block_shapes(1, 4, 2, 4, 4), block_shapes(1, 2, 1, 4, 2), block_shapes(2, 4, 4, 2, 2)},
                 block_fn(ResidualKind::pre_norm, AttentionKind::phase)});
    c.push_back({"pbtb.plain",
                 {block_shapes(1, 4, 2, 4, 4), block_shapes(1, 2, 1, 4, 2), block_shapes(2, 4, 4, 2, 2)},
                 block_fn(ResidualKind::normalized, AttentionKind::plain)});
    const std::vector<std::vector<S>> skip = {
        {S{1, 16, 4, 4}, S{1, 1, 3}}, {S{1, 8, 2, 8}, S{1, 1, 3}}, {S{2, 4, 2, 2}, S{1, 1, 1}}};
    c.push_back({"opab", skip, [](const V& x) { return opab(x[0], OpabParams<double>{x[1], 1}); }});
    c.push_back({"oa_ablation", skip, [](const V& x) { return oa_ablation(x[0], OpabParams<double>{x[1], 1}); }});
    return c;
}

inline std::vector<OpCase> loss_cases() {
    using S = Shape;
    auto fe = std::make_shared<FeatureExtractor<double>>(3);
    auto target = [](S s) { return oracle::random_tensor(s, 77, 0.0, 1.0); };
    const std::vector<std::vector<S>> small = {{S{1, 3, 8, 8}}, {S{1, 1, 8, 8}}, {S{2, 3, 8, 4}}};
    const std::vector<std::vector<S>> large = {{S{1, 1, 16, 16}}, {S{1, 2, 16, 16}}, {S{1, 1, 16, 32}}};
    return {
        {"charbonnier", small, [=](const V& x) { return charbonnier(x[0], target(x[0].shape())); }, 0.0, 1.0},
        {"gradient_loss", small, [=](const V& x) { return gradient_loss(x[0], target(x[0].shape())); }, 0.0, 1.0},
        {"ms_ssim_loss", large, [=](const V& x) { return ms_ssim_loss(x[0], target(x[0].shape()), 1); }, 0.0, 1.0},
        {"perceptual", {{S{1, 3, 8, 8}}, {S{2, 3, 8, 8}}, {S{1, 3, 8, 16}}},
         [=](const V& x) { return perceptual_loss(x[0], target(x[0].shape()), *fe); }, 0.0, 1.0},
    };
}

inline std::vector<OpCase> all_cases() {
    std::vector<OpCase> all;
    for (auto list : {tensor_cases(), spectral_cases(), module_cases(), loss_cases()})
        for (auto& c : list) all.push_back(std::move(c));
    return all;
}

}  // namespace gradcases
