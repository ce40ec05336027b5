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

#include "test_util.hpp"
#include "xmodal/networks.hpp"

namespace xmodal {
namespace {

using testing::random_tensor;
using V = Var<double>;

NetworkSpec toy_spec(Variant v, std::uint64_t seed = 1) {
    NetworkSpec base;
    base.image_size = 8;
    base.base_channels = 2;
    base.downsample_count = 1;
    base.residual_block_count = 1;
    base.discriminator_layers = 2;
    base.seed = seed;
    return NetworkSpec::for_variant(v, base);
}

NetworkSpec desk_spec(Variant v) {
    NetworkSpec base;
    base.seed = 3;
    return NetworkSpec::for_variant(v, base);
}

TEST(CamAttend, ZeroWeightsGiveZeroLogitAndHeatmap) {
    std::mt19937_64 rng(1);
    auto feat = V::constant(random_tensor({2, 4, 3, 3}, rng));
    auto r = cam_attend(feat, V::constant(Tensor<double>({1, 4, 1, 1}, 0.0)));
    for (double v : r.logit.value().vec()) EXPECT_EQ(v, 0.0);
    for (double v : r.heatmap.value().vec()) EXPECT_EQ(v, 0.0);
}

TEST(CamAttend, OneHotWeightSelectsChannel) {
    std::mt19937_64 rng(2);
    auto feat = random_tensor({1, 4, 3, 3}, rng);
    Tensor<double> w({1, 4, 1, 1}, 0.0);
    w[2] = 1.0;
    auto r = cam_attend(V::constant(feat), V::constant(w));
    for (int i = 0; i < 9; ++i) EXPECT_DOUBLE_EQ(r.heatmap.value().plane(0, 0)[i], feat.plane(0, 2)[i]);
}

TEST(CamAttend, MatchesPerChannelArithmetic) {
    std::mt19937_64 rng(3);
    auto feat = random_tensor({2, 5, 4, 3}, rng);
    auto w = random_tensor({1, 5, 1, 1}, rng);
    for (auto pooling : {CamPooling::average, CamPooling::max}) {
        auto r = cam_attend(V::constant(feat), V::constant(w), pooling);
        for (int n = 0; n < 2; ++n) {
            double logit = 0;
            for (int c = 0; c < 5; ++c) {
                const double* p = feat.plane(n, c);
                double pooled = pooling == CamPooling::average ? 0.0 : p[0];
                for (int i = 0; i < 12; ++i)
                    pooled = pooling == CamPooling::average ? pooled + p[i] / 12 : std::max(pooled, p[i]);
                logit += w[c] * pooled;
            }
            EXPECT_NEAR(r.logit.value()[n], logit, 1e-6);
            for (int i = 0; i < 12; ++i) {
                double heat = 0;
                for (int c = 0; c < 5; ++c) {
                    EXPECT_NEAR(r.attended.value().plane(n, c)[i], feat.plane(n, c)[i] * w[c], 1e-6);
                    heat += feat.plane(n, c)[i] * w[c];
                }
                EXPECT_NEAR(r.heatmap.value().plane(n, 0)[i], heat, 1e-6);
            }
        }
    }
}

TEST(CamAttend, LengthMismatchThrows) {
    auto feat = V::constant(Tensor<double>({1, 4, 2, 2}, 1.0));
    EXPECT_THROW(cam_attend(feat, V::constant(Tensor<double>({1, 3, 1, 1}, 1.0))), Error);
}

TEST(NetworkSpec, Validation) {
    NetworkSpec s;
    EXPECT_NO_THROW(s.validate());
    s.image_size = 66;
    EXPECT_THROW(s.validate(), Error);
    s = NetworkSpec{};
    s.residual_block_count = 0;
    EXPECT_THROW(s.validate(), Error);
    s = toy_spec(Variant::ugatit);
    s.discriminator_layers = 4;
    EXPECT_THROW(s.validate(), Error);
}

TEST(ModelBundle, DeterministicInitialization) {
    auto a = init_bundle<double>(toy_spec(Variant::ugatit, 1));
    auto b = init_bundle<double>(toy_spec(Variant::ugatit, 1));
    auto c = init_bundle<double>(toy_spec(Variant::ugatit, 2));
    auto pa = a.all_params(), pb = b.all_params(), pc = c.all_params();
    ASSERT_EQ(pa.size(), pb.size());
    bool any_diff = false;
    for (std::size_t i = 0; i < pa.size(); ++i) {
        EXPECT_EQ(pa[i].name, pb[i].name);
        EXPECT_EQ(pa[i].var.value(), pb[i].var.value());
        EXPECT_TRUE(pa[i].var.value().all_finite());
        any_diff = any_diff || !(pa[i].var.value() == pc[i].var.value());
    }
    EXPECT_TRUE(any_diff);
}

TEST(ModelBundle, CloneIsDeep) {
    auto a = init_bundle<double>(toy_spec(Variant::cyclegan));
    auto b = a.clone();
    a.all_params()[0].var.mutable_value()[0] += 1.0;
    EXPECT_NE(a.all_params()[0].var.value()[0], b.all_params()[0].var.value()[0]);
}

TEST(ModelBundle, DeskScaleShapesAndParameterBudget) {
    for (auto v : {Variant::cyclegan, Variant::ugatit}) {
        NetworkSpec spec = desk_spec(v);
        spec.discriminator_scales = 2;
        auto bundle = init_bundle<float>(spec);
        EXPECT_LE(bundle.parameter_count(), 5'000'000u);
        std::mt19937_64 rng(4);
        auto x = Var<float>::constant(random_tensor({1, 1, 64, 64}, rng).cast<float>());
        auto out = generator_forward(bundle.g_mri2ct, x);
        EXPECT_EQ(out.image.shape(), (Shape{1, 1, 64, 64}));
        for (float val : out.image.value().vec()) EXPECT_LE(std::abs(val), 1.0f);
        if (is_ugatit(v)) {
            EXPECT_EQ(out.cam_logit.shape(), (Shape{1, 2, 1, 1}));
            EXPECT_EQ(out.heatmap.shape(), (Shape{1, 1, 16, 16}));
            for (float h : out.heatmap.value().vec()) EXPECT_GE(h, 0.0f);
        } else {
            EXPECT_FALSE(out.cam_logit.defined());
        }
        for (const auto& d : bundle.d_ct) {
            auto dout = discriminator_forward(spec, d, x);
            EXPECT_TRUE(dout.patch_logits.value().all_finite());
            EXPECT_EQ(dout.cam_logit.defined(), is_ugatit(v));
        }
    }
}

TEST(Generator, DeterministicAndRejectsWrongShape) {
    auto bundle = init_bundle<double>(toy_spec(Variant::ugatit_mind));
    std::mt19937_64 rng(5);
    auto x = V::constant(random_tensor({2, 1, 8, 8}, rng));
    auto a = generator_forward(bundle.g_ct2mri, x);
    auto b = generator_forward(bundle.g_ct2mri, x);
    EXPECT_EQ(a.image.value(), b.image.value());
    EXPECT_EQ(a.cam_logit.value(), b.cam_logit.value());
    EXPECT_THROW(generator_forward(bundle.g_ct2mri, V::constant(Tensor<double>({1, 1, 16, 16}))), Error);
}

// ReLU and max-pool kinks sit within 1e-4 of some inputs, so network checks use a 1e-5 step.
TEST(Generator, InputGradientMatchesFiniteDifferences) {
    for (auto v : {Variant::cyclegan, Variant::ugatit}) {
        auto bundle = init_bundle<double>(toy_spec(v));
        std::mt19937_64 rng(6);
        auto x = random_tensor({1, 1, 8, 8}, rng);
        double err = testing::gradient_check(
            [&](const V& in) { return ops::mean(bundle.g_mri2ct.forward(in).image); }, x, 1e-5);
        EXPECT_LT(err, 1e-3) << to_string(v);
    }
}

TEST(Discriminator, InputGradientMatchesFiniteDifferences) {
    for (auto v : {Variant::cyclegan, Variant::ugatit}) {
        auto bundle = init_bundle<double>(toy_spec(v));
        std::mt19937_64 rng(7);
        auto x = random_tensor({1, 1, 8, 8}, rng);
        double err = testing::gradient_check(
            [&](const V& in) {
                auto out = bundle.d_ct[0].forward(in);
                V total = ops::mean(out.patch_logits);
                if (out.cam_logit.defined()) total = ops::add(total, ops::mean(out.cam_logit));
                return total;
            },
            x, 1e-5);
        EXPECT_LT(err, 1e-3) << to_string(v);
    }
}

} // namespace
} // namespace xmodal
