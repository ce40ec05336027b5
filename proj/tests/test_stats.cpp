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

#include <numeric>
#include <random>

#include "xmodal/stats.hpp"

namespace xmodal::stats {
namespace {

// Enumerates all 2^n sign assignments over the observed ranks.
double brute_force_p(const SignedRanks& r) {
    const std::size_t n = r.n();
    const double w_obs = std::min(r.w_plus, r.w_minus);
    double hits = 0;
    for (std::uint32_t mask = 0; mask < (1u << n); ++mask) {
        double plus = 0, minus = 0;
        for (std::size_t i = 0; i < n; ++i) ((mask >> i) & 1 ? plus : minus) += r.ranks[i];
        if (std::min(plus, minus) <= w_obs + 1e-9) hits += 1;
    }
    return hits / double(1u << n);
}

TEST(Wilcoxon, AllPositiveFiveDifferences) {
    const std::vector<double> a{1, 2, 3, 4, 5}, b(5, 0.0);
    const auto r = wilcoxon_signed_rank(a, b);
    EXPECT_EQ(r.statistic, 0.0);
    EXPECT_NEAR(r.p_value, 0.0625, 1e-12);
    EXPECT_TRUE(r.exact);
    EXPECT_EQ(r.n, 5u);
}

TEST(Wilcoxon, IdenticalSamplesAreDegenerate) {
    const std::vector<double> a{0.3, 0.1, 0.7, 0.7, 0.2, 0.9};
    const auto r = wilcoxon_signed_rank(a, a);
    EXPECT_TRUE(r.degenerate);
    EXPECT_EQ(r.statistic, 0.0);
    EXPECT_EQ(r.p_value, 1.0);
}

TEST(Wilcoxon, ZeroDifferencesAreDropped) {
    const std::vector<double> a{1, 2, 3, 4, 5, 7, 7}, b{0, 0, 0, 0, 0, 7, 7};
    const auto r = wilcoxon_signed_rank(a, b);
    EXPECT_EQ(r.n, 5u);
    EXPECT_NEAR(r.p_value, 0.0625, 1e-12);
}

TEST(Wilcoxon, TiedRanksAreAveraged) {
    const auto r = signed_ranks({1, 1, -2, 3}, {0, 0, 0, 0});
    EXPECT_EQ(r.ranks, (std::vector<double>{1.5, 1.5, 3, 4}));
    EXPECT_EQ(r.w_plus, 7.0);
    EXPECT_EQ(r.w_minus, 3.0);
    EXPECT_EQ(r.tie_term, 6.0);
}

TEST(Wilcoxon, ExactMatchesSignEnumeration) {
    std::mt19937_64 rng(17);
    std::uniform_int_distribution<int> len(5, kExactMaxN), level(-4, 4);
    std::normal_distribution<double> gauss(0.3, 1.0);
    for (int trial = 0; trial < 100; ++trial) {
        const int n = len(rng);
        std::vector<double> a(n), b(n, 0.0);
        // Alternate between ties-heavy integer data and continuous data.
        for (auto& v : a) v = trial % 2 ? double(level(rng)) : gauss(rng);
        const auto r = signed_ranks(a, b);
        if (r.n() < std::size_t(kMinNonzero)) continue;
        const auto w = wilcoxon_signed_rank(a, b);
        ASSERT_TRUE(w.exact);
        EXPECT_NEAR(w.p_value, brute_force_p(r), 1e-12) << "trial " << trial;
    }
}

// Sweeps every attainable W at n = 12 without ties. The continuity-corrected approximation stays
// within 0.01 of the exact p for p <= 0.25 and peaks near 0.0137 around p = 0.42.
TEST(Wilcoxon, NormalApproximationAtTwelve) {
    std::vector<double> ranks(12);
    std::iota(ranks.begin(), ranks.end(), 1.0);
    double tail_worst = 0, worst = 0;
    for (int w = 0; w <= 39; ++w) {
        const double ex = exact_p(ranks, w), ap = normal_p(12, w, 0.0);
        worst = std::max(worst, std::abs(ex - ap));
        if (ex <= 0.25) tail_worst = std::max(tail_worst, std::abs(ex - ap));
    }
    EXPECT_LE(tail_worst, 0.01);
    EXPECT_NEAR(worst, 0.01371, 1e-4);
}

TEST(Wilcoxon, LargeSamplesUseNormalApproximation) {
    std::vector<double> a(30), b(30, 0.0);
    for (int i = 0; i < 30; ++i) a[i] = i % 3 ? i + 1.0 : -(i + 1.0);
    const auto r = wilcoxon_signed_rank(a, b);
    EXPECT_FALSE(r.exact);
    EXPECT_GT(r.p_value, 0.0);
    EXPECT_LE(r.p_value, 1.0);
}

TEST(Wilcoxon, Errors) {
    EXPECT_THROW(wilcoxon_signed_rank({1, 2}, {1}), Error);
    EXPECT_THROW(wilcoxon_signed_rank({1, 2, 3}, {0, 0, 0}), Error);
    EXPECT_THROW(wilcoxon_signed_rank({1, NAN, 3, 4, 5}, {0, 0, 0, 0, 0}), Error);
}

TEST(Bonferroni, Fixtures) {
    EXPECT_EQ(bonferroni_adjust({0.01}), (std::vector<double>{0.01}));
    const auto adj = bonferroni_adjust({0.0004, 0.2, 0.5});
    EXPECT_NEAR(adj[0], 0.0012, 1e-15);
    EXPECT_NEAR(adj[1], 0.6, 1e-15);
    EXPECT_EQ(adj[2], 1.0);
    EXPECT_EQ(bonferroni_adjust({1, 1}), (std::vector<double>{1, 1}));
    EXPECT_TRUE(bonferroni_adjust({}).empty());
    EXPECT_THROW(bonferroni_adjust({-0.1}), Error);
    EXPECT_THROW(bonferroni_adjust({1.5}), Error);
}

TEST(Summary, MedianEvenAndOdd) {
    const auto s = summarize({3, 1, 2, 10});
    EXPECT_EQ(s.median, 2.5);
    EXPECT_EQ(s.min, 1.0);
    EXPECT_EQ(s.max, 10.0);
    EXPECT_EQ(s.mean, 4.0);
    EXPECT_EQ(summarize({5, 1, 3}).median, 3.0);
    EXPECT_THROW(summarize({}), Error);
}

} // namespace
} // namespace xmodal::stats
