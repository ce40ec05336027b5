// Copyright 2026 The xmodal Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <gtest/gtest.h>

#include <limits>

#include "mind_oracle.hpp"
#include "test_util.hpp"
#include "xmodal/mind.hpp"

namespace xmodal {
namespace {

using mind::MindConfig;
using mind::Offset;
using testing::naive_from;
using testing::random_tensor;

Tensor<double> constant_image(int h, int w, double v) { return Tensor<double>(Shape{1, 1, h, w}, v); }

TEST(MindConfig, DefaultsMatchDescriptorLayout) {
    MindConfig cfg;
    EXPECT_EQ(cfg.patch_count(), 81);
    EXPECT_EQ(cfg.channels(), 9);
    EXPECT_EQ(cfg.variance_offsets.size(), 8u);
    EXPECT_DOUBLE_EQ(cfg.epsilon, 1e-8);
    EXPECT_NO_THROW(cfg.validate());
}

TEST(MindConfig, RejectsInvalid) {
    MindConfig cfg;
    cfg.patch_radius = 0;
    EXPECT_THROW(cfg.validate(), Error);
    cfg = MindConfig{};
    cfg.search_offsets.clear();
    EXPECT_THROW(cfg.validate(), Error);
    cfg = MindConfig{};
    cfg.variance_offsets.clear();
    EXPECT_THROW(cfg.validate(), Error);
    cfg = MindConfig{};
    cfg.epsilon = 0;
    EXPECT_THROW(cfg.validate(), Error);
    cfg = MindConfig{};
    cfg.search_offsets.push_back({mind::kMaxOffsetBound + 1, 0});
    EXPECT_THROW(cfg.validate(), Error);
}

TEST(PatchDistance, ZeroOffsetIsZero) {
    std::mt19937_64 rng(1);
    auto img = random_tensor({1, 1, 12, 10}, rng);
    auto d = mind::patch_distance(img, {0, 0}, MindConfig{});
    for (double v : d.vec()) EXPECT_EQ(v, 0.0);
}

TEST(PatchDistance, ConstantImageIsZero) {
    auto d = mind::patch_distance(constant_image(9, 9, 0.3), {1, -1}, MindConfig{});
    for (double v : d.vec()) EXPECT_NEAR(v, 0.0, 1e-15);
}

TEST(PatchDistance, MatchesLoopOracle) {
    std::mt19937_64 rng(2);
    MindConfig cfg;
    auto img = random_tensor({1, 1, 16, 16}, rng);
    auto naive = naive_from(img);
    for (Offset o : {Offset{1, 0}, Offset{0, -1}, Offset{-1, 1}, Offset{2, 3}}) {
        auto d = mind::patch_distance(img, o, cfg);
        for (int y = 0; y < 16; ++y)
            for (int x = 0; x < 16; ++x) {
                EXPECT_GE(d.at(0, 0, y, x), -1e-12);
                EXPECT_NEAR(d.at(0, 0, y, x), testing::naive_dp(naive, y, x, o, cfg.patch_radius), 1e-6);
            }
    }
}

TEST(PatchDistance, RejectsNonFiniteAndOutOfBoundOffsets) {
    auto img = constant_image(8, 8, 0.0);
    img[5] = std::numeric_limits<double>::quiet_NaN();
    try {
        mind::patch_distance(img, {1, 0}, MindConfig{});
        FAIL() << "expected non-finite rejection";
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::non_finite);
    }
    EXPECT_THROW(mind::patch_distance(constant_image(8, 8, 0.0), {20, 0}, MindConfig{}), Error);
}

TEST(LocalVariance, ConstantImageHitsFloor) {
    MindConfig cfg;
    auto v = mind::local_variance(constant_image(10, 10, -0.4), cfg);
    for (double x : v.vec()) EXPECT_DOUBLE_EQ(x, cfg.epsilon);
}

TEST(LocalVariance, ScalesQuadratically) {
    std::mt19937_64 rng(3);
    auto img = random_tensor({1, 1, 12, 12}, rng);
    auto scaled = img;
    for (auto& v : scaled.vec()) v *= 0.5;
    auto v1 = mind::local_variance(img, MindConfig{});
    auto v2 = mind::local_variance(scaled, MindConfig{});
    for (std::size_t i = 0; i < v1.size(); ++i) EXPECT_NEAR(v2[i], 0.25 * v1[i], 1e-9 * v1[i]);
}

TEST(LocalVariance, MatchesLoopOracleInBothModes) {
    std::mt19937_64 rng(4);
    auto img = random_tensor({1, 1, 16, 16}, rng);
    auto naive = naive_from(img);
    for (auto mode : {mind::VarianceMode::sum, mind::VarianceMode::mean}) {
        MindConfig cfg;
        cfg.variance_mode = mode;
        auto v = mind::local_variance(img, cfg);
        for (int y = 0; y < 16; ++y)
            for (int x = 0; x < 16; ++x)
                EXPECT_NEAR(v.at(0, 0, y, x), testing::naive_variance(naive, y, x, cfg), 1e-6);
    }
}

TEST(MindDescriptor, ConstantImageIsAllOnes) {
    auto field = mind::mind_descriptor(constant_image(8, 8, 0.7), MindConfig{});
    EXPECT_EQ(field.channels(), 9);
    for (double v : field.values.vec()) EXPECT_DOUBLE_EQ(v, 1.0);
}

TEST(MindDescriptor, MatchesLoopOracleOnTwentyImages) {
    MindConfig cfg;
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 20; ++trial) {
        auto img = random_tensor({1, 1, 16, 16}, rng);
        auto field = mind::mind_descriptor(img, cfg);
        auto expected = testing::naive_descriptor(naive_from(img), cfg);
        for (int r = 0; r < cfg.channels(); ++r)
            for (int y = 0; y < 16; ++y)
                for (int x = 0; x < 16; ++x) ASSERT_NEAR(field.at(y, x, r), expected[r][y * 16 + x], 1e-6);
    }
}

TEST(MindDescriptor, RangeAndUnitChannelMax) {
    std::mt19937_64 rng(6);
    auto img = random_tensor({2, 1, 14, 11}, rng);
    auto field = mind::mind_descriptor(img, MindConfig{});
    for (int n = 0; n < 2; ++n)
        for (int y = 0; y < 14; ++y)
            for (int x = 0; x < 11; ++x) {
                double mx = 0;
                for (int r = 0; r < field.channels(); ++r) {
                    double v = field.at(y, x, r, n);
                    EXPECT_GT(v, 0.0);
                    EXPECT_LE(v, 1.0);
                    mx = std::max(mx, v);
                }
                EXPECT_NEAR(mx, 1.0, 1e-12);
            }
}

TEST(MindDescriptor, AffineIntensityInvariance) {
    std::mt19937_64 rng(7);
    MindConfig cfg;
    for (double a : {2.0, -0.5, 3.0}) {
        auto img = random_tensor({1, 1, 16, 16}, rng);
        auto var = mind::local_variance(img, cfg);
        for (double v : var.vec()) ASSERT_GE(v, 10 * cfg.epsilon);
        auto mapped = img;
        for (auto& v : mapped.vec()) v = a * v + 0.1;
        auto d1 = mind::mind_descriptor(img, cfg);
        auto d2 = mind::mind_descriptor(mapped, cfg);
        EXPECT_LT(max_abs_diff(d1.values, d2.values), 1e-5);
    }
}

TEST(MindDescriptor, TranslationEquivariantInInterior) {
    std::mt19937_64 rng(8);
    MindConfig cfg;
    const int size = 32, sx = 3, sy = 2;
    auto big = random_tensor({1, 1, size + sy, size + sx}, rng);
    Tensor<double> a({1, 1, size, size}), b({1, 1, size, size});
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
            a.at(0, 0, y, x) = big.at(0, 0, y, x);
            b.at(0, 0, y, x) = big.at(0, 0, y + sy, x + sx);
        }
    auto da = mind::mind_descriptor(a, cfg);
    auto db = mind::mind_descriptor(b, cfg);
    const int margin = cfg.patch_radius + cfg.max_offset();
    for (int y = margin + sy; y < size - margin; ++y)
        for (int x = margin + sx; x < size - margin; ++x)
            for (int r = 0; r < cfg.channels(); ++r)
                EXPECT_NEAR(da.at(y, x, r), db.at(y - sy, x - sx, r), 1e-6);
}

TEST(MindLoss, ZeroOnIdenticalAndAffinePairs) {
    std::mt19937_64 rng(9);
    MindConfig cfg;
    auto img = random_tensor({1, 1, 16, 16}, rng);
    EXPECT_EQ(mind::mind_loss(img, img, cfg), 0.0);
    auto mapped = img;
    for (auto& v : mapped.vec()) v = 2 * v + 0.1;
    EXPECT_LT(mind::mind_loss(img, mapped, cfg), 1e-5);
}

TEST(MindLoss, SymmetricAndMatchesOracle) {
    std::mt19937_64 rng(10);
    MindConfig cfg;
    for (int trial = 0; trial < 5; ++trial) {
        auto a = random_tensor({1, 1, 16, 16}, rng);
        auto b = random_tensor({1, 1, 16, 16}, rng);
        double l = mind::mind_loss(a, b, cfg);
        EXPECT_NEAR(l, mind::mind_loss(b, a, cfg), 1e-15);
        EXPECT_NEAR(l, testing::naive_mind_loss(naive_from(a), naive_from(b), cfg), 1e-6);
    }
}

TEST(MindLoss, ShapeMismatchThrows) {
    try {
        mind::mind_loss(constant_image(8, 8, 0), constant_image(8, 9, 0), MindConfig{});
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::shape_mismatch);
    }
}

TEST(MindLoss, GradientMatchesFiniteDifferences) {
    std::mt19937_64 rng(11);
    MindConfig cfg;
    auto a = random_tensor({1, 1, 8, 8}, rng);
    auto b = Var<double>::constant(random_tensor({1, 1, 8, 8}, rng));
    double err = testing::gradient_check([&](const Var<double>& x) { return mind::loss(x, b, cfg); }, a);
    EXPECT_LT(err, 1e-3);
    // Second argument receives gradient too.
    auto av = Var<double>::constant(a);
    double err_b = testing::gradient_check([&](const Var<double>& x) { return mind::loss(av, x, cfg); },
                                           b.value());
    EXPECT_LT(err_b, 1e-3);
}

TEST(MindLoss, GradientWithCustomOffsetsAndMeanVariance) {
    std::mt19937_64 rng(12);
    MindConfig cfg;
    cfg.patch_radius = 1;
    cfg.search_offsets = {{2, 0}, {0, 2}, {-1, -1}};
    cfg.variance_offsets = {{1, 0}, {0, 1}, {-1, 0}, {0, -1}};
    cfg.variance_mode = mind::VarianceMode::mean;
    auto a = random_tensor({1, 1, 8, 8}, rng);
    auto b = Var<double>::constant(random_tensor({1, 1, 8, 8}, rng));
    EXPECT_LT(testing::gradient_check([&](const Var<double>& x) { return mind::loss(x, b, cfg); }, a), 1e-3);
    auto field = mind::mind_descriptor(a, cfg);
    auto expected = testing::naive_descriptor(naive_from(a), cfg);
    for (int r = 0; r < 3; ++r)
        for (int i = 0; i < 64; ++i) EXPECT_NEAR(field.values.plane(0, r)[i], expected[r][i], 1e-9);
}

} // namespace
} // namespace xmodal
