#include <gtest/gtest.h>

#include <cmath>

#include "oracles.hpp"
#include "test_util.hpp"

using namespace phaseformer;
using V = std::vector<Tensor<double>>;

namespace {

Tensor<double> image(Shape s, std::uint64_t seed) { return oracle::random_tensor(s, seed, 0.0, 1.0); }

double scalar(const Tensor<double>& t) { return t.values()[0]; }

}  // namespace

TEST(Charbonnier, EqualInputsGiveEps) {
    auto x = image(Shape{1, 3, 8, 8}, 1);
    EXPECT_DOUBLE_EQ(scalar(charbonnier(x, x)), 1e-3);
}

TEST(Charbonnier, UniformOffsetHandValue) {
    auto x = image(Shape{1, 3, 4, 4}, 2);
    auto y = add_scalar(x, 0.003);
    EXPECT_NEAR(scalar(charbonnier(x, y)), std::sqrt(9e-6 + 1e-6), 1e-12);
    EXPECT_NEAR(scalar(charbonnier(x, y)), 3.16228e-3, 1e-8);
}

TEST(Charbonnier, ShapeMismatchIsDimensionError) {
    EXPECT_THROW(charbonnier(Tensor<double>::zeros(Shape{1, 3, 4, 4}), Tensor<double>::zeros(Shape{1, 3, 4, 2})),
                 DimensionError);
}

TEST(Charbonnier, GradientFiniteAtZeroDifference) {
    auto x = image(Shape{1, 1, 4, 4}, 3);
    V inputs{x};
    const auto r = grad_check([&] { return charbonnier(inputs[0], x.detach()); }, inputs);
    EXPECT_LT(r.max_rel_error, 1e-3);
    auto xg = x.detach();
    xg.set_requires_grad(true);
    charbonnier(xg, x.detach()).backward();
    for (double g : xg.grad()) EXPECT_TRUE(std::isfinite(g));
}

TEST(GradientLoss, ZeroForEqualAndShiftedInputs) {
    auto x = image(Shape{1, 3, 8, 8}, 4);
    EXPECT_EQ(scalar(gradient_loss(x, x)), 0.0);
    EXPECT_NEAR(scalar(gradient_loss(x, add_scalar(x, 0.25))), 0.0, 1e-15);
}

TEST(GradientLoss, RampAgainstFlatHandValue) {
    // two identical rows 0, 0.5, 1.0, 1.5: every horizontal step is 0.5, every vertical step 0
    Tensor<double> ramp(Shape{1, 1, 2, 4}, {0, 0.5, 1.0, 1.5, 0, 0.5, 1.0, 1.5});
    auto flat = Tensor<double>::full(ramp.shape(), 0.7);
    EXPECT_NEAR(scalar(gradient_loss(ramp, flat)), 0.5, 1e-12);
    // transposed ramp swaps the roles of the two directions
    Tensor<double> col(Shape{1, 1, 4, 2}, {0, 0, 0.5, 0.5, 1.0, 1.0, 1.5, 1.5});
    EXPECT_NEAR(scalar(gradient_loss(col, Tensor<double>::full(col.shape(), 0.1))), 0.5, 1e-12);
}

TEST(GradientLoss, CheckerboardHandValue) {
    Tensor<double> x(Shape{1, 1, 2, 2}, {1, 0, 0, 1});
    auto y = Tensor<double>::zeros(x.shape());
    EXPECT_NEAR(scalar(gradient_loss(x, y)), 2.0, 1e-12);
}

TEST(MsSsim, IdenticalImagesGiveZeroLoss) {
    auto x = image(Shape{1, 3, 64, 64}, 5);
    EXPECT_NEAR(scalar(ms_ssim_loss(x, x)), 0.0, 1e-7);
}

TEST(MsSsim, ScaleCountRule) {
    EXPECT_EQ(ms_ssim_scales(11), 1u);
    EXPECT_EQ(ms_ssim_scales(16), 1u);
    EXPECT_EQ(ms_ssim_scales(22), 2u);
    EXPECT_EQ(ms_ssim_scales(64), 3u);
    EXPECT_EQ(ms_ssim_scales(256), 5u);
    EXPECT_EQ(ms_ssim_scales(4096), 5u);
}

TEST(MsSsim, TooSmallIsConfigError) {
    EXPECT_THROW(ms_ssim_loss(Tensor<double>::zeros(Shape{1, 1, 8, 8}), Tensor<double>::zeros(Shape{1, 1, 8, 8})),
                 ConfigError);
}

TEST(MsSsim, MatchesSinglePassReference) {
    for (std::uint64_t seed : {6u, 7u, 8u}) {
        auto x = image(Shape{1, 3, 64, 64}, seed);
        auto y = add(mul_scalar(x, 0.7), mul_scalar(image(x.shape(), seed + 50), 0.3));
        double ref = 0.0;
        for (std::size_t c = 0; c < 3; ++c) {
            const auto xv = testutil::values(x), yv = testutil::values(y);
            oracle::Vec xp(xv.begin() + c * 4096, xv.begin() + (c + 1) * 4096);
            oracle::Vec yp(yv.begin() + c * 4096, yv.begin() + (c + 1) * 4096);
            ref += oracle::ms_ssim_plane(xp, yp, 64, 64) / 3.0;
        }
        EXPECT_NEAR(scalar(ms_ssim(x, y)), ref, 1e-6);
        EXPECT_NEAR(scalar(ms_ssim_loss(x, y)), 1.0 - ref, 1e-6);
    }
}

TEST(MsSsim, LossWithinUnitRange) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const double l = scalar(ms_ssim_loss(image(Shape{1, 3, 32, 32}, seed), image(Shape{1, 3, 32, 32}, seed + 100)));
        EXPECT_GE(l, 0.0);
        EXPECT_LE(l, 1.0);
    }
}

TEST(Perceptual, ZeroSymmetricNonnegative) {
    FeatureExtractor<double> fe;
    auto x = image(Shape{1, 3, 16, 16}, 9), y = image(Shape{1, 3, 16, 16}, 10);
    EXPECT_EQ(scalar(perceptual_loss(x, x, fe)), 0.0);
    EXPECT_EQ(scalar(perceptual_loss(x, y, fe)), scalar(perceptual_loss(y, x, fe)));
    EXPECT_GT(scalar(perceptual_loss(x, y, fe)), 0.0);
}

TEST(Perceptual, ExtractorStagesAndDeterminism) {
    FeatureExtractor<float> a(5), b(5), c(6);
    for (std::size_t s = 0; s < 3; ++s) {
        EXPECT_EQ(a.weights()[s].values(), b.weights()[s].values());
        EXPECT_NE(a.weights()[s].values(), c.weights()[s].values());
    }
    const auto f = a.features(Tensor<float>::zeros(Shape{1, 3, 16, 16}));
    ASSERT_EQ(f.size(), 3u);
    EXPECT_EQ(f[0].shape(), (Shape{1, 16, 8, 8}));
    EXPECT_EQ(f[1].shape(), (Shape{1, 32, 4, 4}));
    EXPECT_EQ(f[2].shape(), (Shape{1, 64, 2, 2}));
    EXPECT_FALSE(a.weights()[0].requires_grad());
}

TEST(Perceptual, LoadsRawWeightsFile) {
    const std::string path = testing::TempDir() + "/fe.bin";
    FeatureExtractor<float> a(7);
    {
        std::ofstream out(path, std::ios::binary);
        for (const auto& w : a.weights())
            for (float v : w.values()) out.write(reinterpret_cast<const char*>(&v), 4);
    }
    const auto b = FeatureExtractor<float>::load(path);
    for (std::size_t s = 0; s < 3; ++s) EXPECT_EQ(a.weights()[s].values(), b.weights()[s].values());
    std::filesystem::resize_file(path, 100);
    EXPECT_THROW(FeatureExtractor<float>::load(path), IngestionError);
}

TEST(LossWeights, EqualLogitsGiveQuarterEach) {
    LossWeights<double> w;
    for (double o : w.realized()) EXPECT_NEAR(o, 0.25, 1e-15);
    EXPECT_DOUBLE_EQ(w.omega_high() + w.omega_low(), 1.0);
}

TEST(LossWeights, SimplexForArbitraryLogits) {
    Rng rng(11);
    LossWeights<double> w;
    for (int k = 0; k < 100; ++k) {
        w.set_logits({rng.normal(0, 5), rng.normal(0, 5), rng.normal(0, 5), rng.normal(0, 5)});
        const auto o = w.realized();
        double s = 0.0;
        for (double v : o) {
            EXPECT_GT(v, 0.0);
            EXPECT_LT(v, 1.0);
            s += v;
        }
        EXPECT_NEAR(s, 1.0, 1e-6);
    }
}

TEST(LossWeights, FixedModeReproducesReportedWeights) {
    LossWeights<double> w(LossWeightMode::fixed, {0.2741, 0.2222, 0.3357, 0.1680});
    const auto o = w.realized();
    EXPECT_NEAR(o[0], 0.2741, 1e-4);
    EXPECT_NEAR(o[1], 0.2222, 1e-4);
    EXPECT_NEAR(o[2], 0.3357, 1e-4);
    EXPECT_NEAR(o[3], 0.1680, 1e-4);
    EXPECT_FALSE(w.logits().requires_grad());

    LossSuite<double> suite;
    auto x = image(Shape{1, 3, 16, 16}, 12), y = image(Shape{1, 3, 16, 16}, 13);
    const auto r = resolution_loss(x, y, w, suite);
    const double hand = o[0] * scalar(charbonnier(x, y)) + o[1] * scalar(gradient_loss(x, y)) +
                        o[2] * scalar(ms_ssim_loss(x, y)) + o[3] * scalar(perceptual_loss(x, y, suite.extractor));
    EXPECT_NEAR(scalar(r.total), hand, 1e-12);
}

TEST(LossWeights, RejectsInvalidSettings) {
    EXPECT_THROW(LossWeights<double>(LossWeightMode::fixed, {0.25, 0.25, 0.25, 0.25}, 0.5, 0.6), ConfigError);
    EXPECT_THROW(LossWeights<double>(LossWeightMode::fixed, {0.5, 0.5, 0.0, 0.0}), ConfigError);
}

TEST(LossWeights, DisabledLossGetsZeroWeight) {
    LossWeights<double> w(LossWeightMode::learnable, {0.25, 0.25, 0.25, 0.25}, 0.4, 0.6, {true, false, true, true});
    const auto o = w.realized();
    EXPECT_NEAR(o[1], 0.0, 1e-12);
    EXPECT_NEAR(o[0], 1.0 / 3.0, 1e-12);
}

TEST(ResolutionLoss, PerfectPredictionLeavesCharbonnierFloor) {
    LossWeights<double> w;
    w.set_logits({0.3, -0.2, 0.1, 0.4});
    LossSuite<double> suite;
    auto x = image(Shape{1, 3, 16, 16}, 14);
    EXPECT_NEAR(scalar(resolution_loss(x, x, w, suite).total), w.realized()[0] * 1e-3, 1e-10);
}

TEST(ResolutionLoss, GradientReachesLogits) {
    LossWeights<double> w;
    LossSuite<double> suite;
    auto x = image(Shape{1, 3, 16, 16}, 15), y = image(Shape{1, 3, 16, 16}, 16);
    resolution_loss(x, y, w, suite).total.backward();
    double mag = 0.0;
    for (double g : w.logits().grad()) mag += std::abs(g);
    EXPECT_GT(mag, 0.0);
}

TEST(TotalLoss, PerfectPredictionsGiveOmegaOneEps) {
    LossWeights<double> w;
    w.set_logits({1.0, 0.0, -1.0, 0.5});
    LossSuite<double> suite;
    auto gt = image(Shape{1, 3, 16, 16}, 17), gt2 = image(Shape{1, 3, 32, 32}, 18);
    const auto t = total_loss(ModelOutput<double>{gt, gt2}, gt, gt2, w, suite);
    EXPECT_NEAR(scalar(t.total), w.realized()[0] * 1e-3, 1e-10);
}

TEST(TotalLoss, CombinesResolutionsWithFixedOmegas) {
    LossWeights<double> w;
    LossSuite<double> suite;
    auto gt = image(Shape{1, 3, 16, 16}, 19), gt2 = image(Shape{1, 3, 32, 32}, 20);
    auto p = image(gt.shape(), 21), p2 = image(gt2.shape(), 22);
    const auto t = total_loss(ModelOutput<double>{p, p2}, gt, gt2, w, suite);
    EXPECT_NEAR(scalar(t.total), 0.4 * scalar(t.high.total) + 0.6 * scalar(t.low.total), 1e-14);
    EXPECT_THROW(total_loss(ModelOutput<double>{p, p}, gt, gt, w, suite), DimensionError);
}

TEST(TotalLoss, GradientReachesBothHeads) {
    Phaseformer<double> m(micro_config(), 23);
    auto x = image(Shape{1, 3, 16, 16}, 24), gt = image(x.shape(), 25), gt2 = image(Shape{1, 3, 32, 32}, 26);
    LossWeights<double> w;
    LossSuite<double> suite;
    total_loss(m.forward(x), gt, gt2, w, suite).total.backward();
    for (const char* head : {"head.full", "head.double"}) {
        bool found = false;
        for (const auto& [name, p] : m.params()) {
            if (name.rfind(head, 0) != 0) continue;
            found = true;
            double mag = 0.0;
            for (double g : p.grad()) mag += std::abs(g);
            EXPECT_GT(mag, 0.0) << name;
        }
        EXPECT_TRUE(found) << head;
    }
}

TEST(Losses, NonnegativeWithMinimumAtEquality) {
    FeatureExtractor<double> fe;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        auto x = image(Shape{1, 3, 16, 16}, 30 + seed), y = image(Shape{1, 3, 16, 16}, 60 + seed);
        EXPECT_GE(scalar(charbonnier(x, y)), 1e-3);
        EXPECT_GE(scalar(gradient_loss(x, y)), 0.0);
        EXPECT_GE(scalar(ms_ssim_loss(x, y)), 0.0);
        EXPECT_GE(scalar(perceptual_loss(x, y, fe)), 0.0);
        EXPECT_GT(scalar(charbonnier(x, y)), scalar(charbonnier(x, x)));
        EXPECT_GT(scalar(ms_ssim_loss(x, y)), scalar(ms_ssim_loss(x, x)));
    }
}

TEST(Losses, ColorCastSeenByCharbonnierOnly) {
    auto x = image(Shape{1, 3, 16, 16}, 40);
    std::vector<double> shift(x.numel());
    for (std::size_t i = 0; i < shift.size(); ++i) shift[i] = (i / 256 == 2) ? 0.2 : 0.0;
    auto y = add(x, Tensor<double>(x.shape(), shift));
    EXPECT_GT(scalar(charbonnier(x, y)), 0.01);
    EXPECT_NEAR(scalar(gradient_loss(x, y)), 0.0, 1e-15);
}

TEST(Losses, FiniteDifferenceGradients) {
    for (const auto& c : gradcases::loss_cases()) {
        SCOPED_TRACE(c.name);
        testutil::expect_gradients(c);
    }
}

TEST(Losses, LogitGradientMatchesFiniteDifference) {
    LossSuite<double> suite;
    auto x = image(Shape{1, 3, 16, 16}, 80), y = image(Shape{1, 3, 16, 16}, 81);
    LossWeights<double> w;
    V inputs{Tensor<double>(Shape{4}, {0.1, -0.3, 0.2, 0.0})};
    const auto r = grad_check(
        [&] {
            w.logits() = inputs[0];
            return resolution_loss(x, y, w, suite).total;
        },
        inputs);
    EXPECT_LT(r.max_rel_error, 1e-3) << r.worst;
}
