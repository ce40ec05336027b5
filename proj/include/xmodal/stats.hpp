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

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

#include "xmodal/error.hpp"

namespace xmodal::stats {

inline constexpr int kExactMaxN = 12;
inline constexpr int kMinNonzero = 5;

struct SignedRanks {
    std::vector<double> ranks;  // average ranks of |d| over nonzero differences
    std::vector<int> signs;     // +1 / -1
    double w_plus = 0;
    double w_minus = 0;
    double tie_term = 0;        // sum of t^3 - t over tie groups
    std::size_t n() const { return ranks.size(); }
};

inline SignedRanks signed_ranks(const std::vector<double>& a, const std::vector<double>& b) {
    require(a.size() == b.size(), ErrorCode::shape_mismatch, "wilcoxon: samples differ in length");
    std::vector<double> d;
    for (std::size_t i = 0; i < a.size(); ++i) {
        require(std::isfinite(a[i]) && std::isfinite(b[i]), ErrorCode::non_finite, "wilcoxon: non-finite sample");
        if (a[i] - b[i] != 0.0) d.push_back(a[i] - b[i]);
    }
    std::vector<std::size_t> order(d.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](auto x, auto y) { return std::abs(d[x]) < std::abs(d[y]); });
    SignedRanks r;
    r.ranks.assign(d.size(), 0);
    r.signs.assign(d.size(), 0);
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        while (j + 1 < order.size() && std::abs(d[order[j + 1]]) == std::abs(d[order[i]])) ++j;
        const double avg = 0.5 * double(i + j) + 1.0;
        const double t = double(j - i + 1);
        r.tie_term += t * t * t - t;
        for (std::size_t k = i; k <= j; ++k) r.ranks[order[k]] = avg;
        i = j + 1;
    }
    for (std::size_t i = 0; i < d.size(); ++i) {
        r.signs[i] = d[i] > 0 ? 1 : -1;
        (d[i] > 0 ? r.w_plus : r.w_minus) += r.ranks[i];
    }
    return r;
}

/// P(min(W+, W-) <= w) under random signs, by counting subsets of doubled (integer) ranks.
inline double exact_p(const std::vector<double>& ranks, double w) {
    std::vector<int> twice;
    int total = 0;
    for (double r : ranks) {
        twice.push_back(int(std::lround(2 * r)));
        total += twice.back();
    }
    std::vector<double> count(std::size_t(total) + 1, 0.0);
    count[0] = 1;
    int reach = 0;
    for (int t : twice) {
        for (int s = reach; s >= 0; --s)
            if (count[s] != 0) count[s + t] += count[s];
        reach += t;
    }
    const long long w2 = std::llround(2 * w);
    double hits = 0;
    for (int s = 0; s <= total; ++s)
        if (std::min<long long>(s, total - s) <= w2) hits += count[s];
    return std::min(1.0, std::ldexp(hits, -int(ranks.size())));
}

/// Two-sided normal approximation with tie and continuity corrections.
inline double normal_p(std::size_t n, double w, double tie_term) {
    const double nn = double(n);
    const double mean = nn * (nn + 1) / 4;
    const double var = nn * (nn + 1) * (2 * nn + 1) / 24 - tie_term / 48;
    if (var <= 0) return 1.0;
    const double z = std::max(0.0, std::abs(w - mean) - 0.5) / std::sqrt(var);
    return std::min(1.0, std::erfc(z / std::sqrt(2.0)));
}

struct WilcoxonResult {
    double statistic = 0;
    double p_value = 1;
    std::size_t n = 0;  // nonzero differences
    bool exact = false;
    bool degenerate = false;
};

inline WilcoxonResult wilcoxon_signed_rank(const std::vector<double>& a, const std::vector<double>& b) {
    const SignedRanks r = signed_ranks(a, b);
    WilcoxonResult out;
    out.n = r.n();
    if (r.n() == 0) {
        out.degenerate = true;
        return out;
    }
    require(r.n() >= std::size_t(kMinNonzero), ErrorCode::invalid_argument,
            "wilcoxon: fewer than " + std::to_string(kMinNonzero) + " nonzero differences");
    out.statistic = std::min(r.w_plus, r.w_minus);
    out.exact = r.n() <= std::size_t(kExactMaxN);
    out.p_value = out.exact ? exact_p(r.ranks, out.statistic) : normal_p(r.n(), out.statistic, r.tie_term);
    return out;
}

inline std::vector<double> bonferroni_adjust(const std::vector<double>& p) {
    std::vector<double> out;
    out.reserve(p.size());
    for (double v : p) {
        require(v >= 0.0 && v <= 1.0, ErrorCode::invalid_argument, "bonferroni: p-value outside [0, 1]");
        out.push_back(std::min(1.0, v * double(p.size())));
    }
    return out;
}

struct Summary {
    double median = 0, min = 0, max = 0, mean = 0;
};

inline Summary summarize(std::vector<double> v) {
    require(!v.empty(), ErrorCode::invalid_argument, "summary of an empty sample");
    std::sort(v.begin(), v.end());
    Summary s;
    s.min = v.front();
    s.max = v.back();
    const std::size_t m = v.size() / 2;
    s.median = v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
    s.mean = std::accumulate(v.begin(), v.end(), 0.0) / double(v.size());
    return s;
}

} // namespace xmodal::stats
