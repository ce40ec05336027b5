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
#include <cstdlib>
#include <vector>

#include "ops.hpp"

namespace xmodal::mind {

struct Offset {
    int dx = 0;
    int dy = 0;
    bool operator==(const Offset&) const = default;
};

enum class BoundaryPolicy { clamp_to_edge };
enum class VarianceMode { sum, mean };

/// Largest |component| accepted for any search or variance offset.
inline constexpr int kMaxOffsetBound = 8;

inline std::vector<Offset> block_offsets(int radius, bool include_center) {
    std::vector<Offset> out;
    for (int dy = -radius; dy <= radius; ++dy)
        for (int dx = -radius; dx <= radius; ++dx)
            if (include_center || dx != 0 || dy != 0) out.push_back({dx, dy});
    return out;
}

struct MindConfig {
    std::vector<Offset> search_offsets = block_offsets(1, true);
    int patch_radius = 4;
    std::vector<Offset> variance_offsets = block_offsets(1, false);
    double epsilon = 1e-8;
    VarianceMode variance_mode = VarianceMode::sum;
    BoundaryPolicy boundary_policy = BoundaryPolicy::clamp_to_edge;

    int patch_count() const { return (2 * patch_radius + 1) * (2 * patch_radius + 1); }
    int channels() const { return int(search_offsets.size()); }

    int max_offset() const {
        int m = 0;
        for (const auto* set : {&search_offsets, &variance_offsets})
            for (const auto& o : *set) m = std::max({m, std::abs(o.dx), std::abs(o.dy)});
        return m;
    }

    void validate() const {
        require(patch_radius >= 1, ErrorCode::invalid_argument, "mind: patch_radius must be >= 1");
        require(!search_offsets.empty(), ErrorCode::invalid_argument, "mind: search offsets empty");
        require(!variance_offsets.empty(), ErrorCode::invalid_argument, "mind: variance offsets empty");
        require(epsilon > 0, ErrorCode::invalid_argument, "mind: epsilon must be positive");
        require(max_offset() <= kMaxOffsetBound, ErrorCode::invalid_argument,
                "mind: offset component exceeds bound");
    }
};

/// Per-pixel descriptor stack: `values` is (N, |R|, H, W).
template <class T>
struct MindField {
    Tensor<T> values;

    int height() const { return values.shape().h; }
    int width() const { return values.shape().w; }
    int channels() const { return values.shape().c; }
    T at(int y, int x, int r, int n = 0) const { return values.at(n, r, y, x); }
};

namespace detail {

/// Clamp-to-edge replicated copy of one plane with margin `m`.
template <class T>
std::vector<T> pad_clamped(const T* img, int h, int w, int m) {
    const int hp = h + 2 * m, wp = w + 2 * m;
    std::vector<T> out(std::size_t(hp) * wp);
    for (int i = 0; i < hp; ++i) {
        int si = std::clamp(i - m, 0, h - 1);
        for (int j = 0; j < wp; ++j) out[std::size_t(i) * wp + j] = img[si * w + std::clamp(j - m, 0, w - 1)];
    }
    return out;
}

/// Sliding-window sum of width 2r+1 along rows then columns: (h+2r)x(w+2r) -> h x w.
template <class T>
std::vector<T> box_sum_valid(const std::vector<T>& src, int h, int w, int r) {
    const int sw = w + 2 * r, k = 2 * r + 1;
    std::vector<T> rows(std::size_t(h + 2 * r) * w);
    for (int i = 0; i < h + 2 * r; ++i) {
        const T* s = src.data() + std::size_t(i) * sw;
        T acc = 0;
        for (int t = 0; t < k; ++t) acc += s[t];
        T* d = rows.data() + std::size_t(i) * w;
        d[0] = acc;
        for (int j = 1; j < w; ++j) {
            acc += s[j + k - 1] - s[j - 1];
            d[j] = acc;
        }
    }
    std::vector<T> out(std::size_t(h) * w);
    for (int j = 0; j < w; ++j) {
        T acc = 0;
        for (int t = 0; t < k; ++t) acc += rows[std::size_t(t) * w + j];
        out[j] = acc;
        for (int i = 1; i < h; ++i) {
            acc += rows[std::size_t(i + k - 1) * w + j] - rows[std::size_t(i - 1) * w + j];
            out[std::size_t(i) * w + j] = acc;
        }
    }
    return out;
}

/// Adjoint of box_sum_valid: h x w -> (h+2r)x(w+2r), zero outside the valid domain.
template <class T>
std::vector<T> box_sum_adjoint(const std::vector<T>& g, int h, int w, int r) {
    const int oh = h + 2 * r, ow = w + 2 * r;
    std::vector<T> padded(std::size_t(oh + 2 * r) * (ow + 2 * r), T(0));
    const int pw = ow + 2 * r;
    for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j) padded[std::size_t(i + 2 * r) * pw + j + 2 * r] = g[std::size_t(i) * w + j];
    return box_sum_valid(padded, oh, ow, r);
}

/// Squared-difference map for one offset over the (h+2R)x(w+2R) support region.
template <class T>
std::vector<T> shifted_diff(const std::vector<T>& pad, int h, int w, int m, int radius, Offset o) {
    const int wp = w + 2 * m, rh = h + 2 * radius, rw = w + 2 * radius;
    const int base = m - radius;
    std::vector<T> diff(std::size_t(rh) * rw);
    for (int i = 0; i < rh; ++i)
        for (int j = 0; j < rw; ++j) {
            const std::size_t a = std::size_t(i + base) * wp + (j + base);
            const std::size_t b = std::size_t(i + base + o.dy) * wp + (j + base + o.dx);
            diff[std::size_t(i) * rw + j] = pad[a] - pad[b];
        }
    return diff;
}

template <class T>
void check_finite_plane(const Tensor<T>& t) {
    require(t.all_finite(), ErrorCode::non_finite, "mind: image contains non-finite pixels");
}

template <class T>
void check_single_channel(const Shape& s) {
    require(s.c == 1, ErrorCode::shape_mismatch, "mind: expected single-channel images, got " + s.str());
}

/// Distinct offsets of R ∪ N and the index of each R / N member within it.
struct OffsetTable {
    std::vector<Offset> all;
    std::vector<int> search_idx;
    std::vector<int> variance_idx;

    explicit OffsetTable(const MindConfig& cfg) {
        auto find_or_add = [this](Offset o) {
            for (std::size_t i = 0; i < all.size(); ++i)
                if (all[i] == o) return int(i);
            all.push_back(o);
            return int(all.size() - 1);
        };
        for (auto o : cfg.search_offsets) search_idx.push_back(find_or_add(o));
        for (auto o : cfg.variance_offsets) variance_idx.push_back(find_or_add(o));
    }
};

} // namespace detail

/// D_p(I, x, x+offset) for every pixel of a single (1,1,H,W) image.
template <class T>
Tensor<T> patch_distance(const Tensor<T>& image, Offset offset, const MindConfig& cfg) {
    cfg.validate();
    detail::check_single_channel<T>(image.shape());
    detail::check_finite_plane(image);
    require(std::max(std::abs(offset.dx), std::abs(offset.dy)) <= kMaxOffsetBound,
            ErrorCode::invalid_argument, "mind: offset component exceeds bound");
    const Shape s = image.shape();
    const int m = cfg.patch_radius + std::max({cfg.max_offset(), std::abs(offset.dx), std::abs(offset.dy)});
    Tensor<T> out(Shape{s.n, 1, s.h, s.w});
    for (int n = 0; n < s.n; ++n) {
        auto pad = detail::pad_clamped(image.plane(n, 0), s.h, s.w, m);
        auto diff = detail::shifted_diff(pad, s.h, s.w, m, cfg.patch_radius, offset);
        for (auto& d : diff) d *= d;
        auto dist = detail::box_sum_valid(diff, s.h, s.w, cfg.patch_radius);
        std::copy(dist.begin(), dist.end(), out.plane(n, 0));
    }
    return out;
}

/// V(I, x) = max(sum over N of D_p(I, x, x+n), epsilon); `mean` mode divides by |N| first.
template <class T>
Tensor<T> local_variance(const Tensor<T>& image, const MindConfig& cfg) {
    cfg.validate();
    Tensor<T> acc(Shape{image.shape().n, 1, image.shape().h, image.shape().w});
    for (auto o : cfg.variance_offsets) {
        auto d = patch_distance(image, o, cfg);
        for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += d[i];
    }
    const T scale = cfg.variance_mode == VarianceMode::mean ? T(1) / T(cfg.variance_offsets.size()) : T(1);
    for (auto& v : acc.vec()) v = std::max(v * scale, T(cfg.epsilon));
    return acc;
}

/// Differentiable descriptor: (N,1,H,W) -> (N,|R|,H,W), per-pixel channel max exactly 1.
template <class T>
Var<T> descriptor(const Var<T>& image, const MindConfig& cfg) {
    cfg.validate();
    const Shape s = image.shape();
    detail::check_single_channel<T>(s);
    detail::check_finite_plane(image.value());
    const detail::OffsetTable table(cfg);
    const int radius = cfg.patch_radius;
    const int m = radius + cfg.max_offset();
    const std::size_t plane = s.plane();
    const int nr = int(cfg.search_offsets.size());
    const T eps = T(cfg.epsilon);
    const T vscale = cfg.variance_mode == VarianceMode::mean ? T(1) / T(cfg.variance_offsets.size()) : T(1);

    struct Cache {
        std::vector<std::vector<T>> diff;  // per distinct offset, support region
        std::vector<std::vector<T>> dist;  // per distinct offset, H x W
        std::vector<T> var;
        std::vector<unsigned char> floored;
        std::vector<int> argmin;  // index into search offsets
    };
    auto caches = std::make_shared<std::vector<Cache>>(s.n);
    const bool keep = grad_enabled() && image.requires_grad();

    Tensor<T> out(Shape{s.n, nr, s.h, s.w});
    for (int n = 0; n < s.n; ++n) {
        Cache& cache = (*caches)[n];
        auto pad = detail::pad_clamped(image.value().plane(n, 0), s.h, s.w, m);
        cache.diff.resize(table.all.size());
        cache.dist.resize(table.all.size());
        for (std::size_t u = 0; u < table.all.size(); ++u) {
            auto diff = detail::shifted_diff(pad, s.h, s.w, m, radius, table.all[u]);
            std::vector<T> sq(diff.size());
            for (std::size_t i = 0; i < diff.size(); ++i) sq[i] = diff[i] * diff[i];
            cache.dist[u] = detail::box_sum_valid(sq, s.h, s.w, radius);
            if (keep) cache.diff[u] = std::move(diff);
        }
        cache.var.assign(plane, T(0));
        cache.floored.assign(plane, 0);
        cache.argmin.assign(plane, 0);
        for (std::size_t i = 0; i < plane; ++i) {
            T acc = 0;
            for (int vi : table.variance_idx) acc += cache.dist[vi][i];
            acc *= vscale;
            cache.floored[i] = acc < eps;
            cache.var[i] = std::max(acc, eps);
            int best = 0;
            for (int r = 1; r < nr; ++r)
                if (cache.dist[table.search_idx[r]][i] < cache.dist[table.search_idx[best]][i]) best = r;
            cache.argmin[i] = best;
            const T dmin = cache.dist[table.search_idx[best]][i];
            for (int r = 0; r < nr; ++r)
                out.plane(n, r)[i] = std::exp(-(cache.dist[table.search_idx[r]][i] - dmin) / cache.var[i]);
        }
    }

    return make_op<T>(std::move(out), {image}, [=](Node<T>& self) {
        auto& gimg = self.parents[0]->ensure_grad();
        const int wp = s.w + 2 * m;
        const int rw = s.w + 2 * radius;
        for (int n = 0; n < s.n; ++n) {
            const Cache& cache = (*caches)[n];
            std::vector<std::vector<T>> gdist(table.all.size(), std::vector<T>(plane, T(0)));
            for (std::size_t i = 0; i < plane; ++i) {
                const T v = cache.var[i];
                const T dmin = cache.dist[table.search_idx[cache.argmin[i]]][i];
                T gmin = 0, gvar = 0;
                for (int r = 0; r < nr; ++r) {
                    const T d = self.value.plane(n, r)[i];
                    const T gd = self.grad.plane(n, r)[i] * d;
                    const T q = (cache.dist[table.search_idx[r]][i] - dmin) / v;
                    gdist[table.search_idx[r]][i] -= gd / v;
                    gmin += gd / v;
                    gvar += gd * q / v;
                }
                gdist[table.search_idx[cache.argmin[i]]][i] += gmin;
                if (!cache.floored[i])
                    for (int vi : table.variance_idx) gdist[vi][i] += gvar * vscale;
            }
            std::vector<T> gpad(std::size_t(s.h + 2 * m) * wp, T(0));
            const int base = m - radius;
            for (std::size_t u = 0; u < table.all.size(); ++u) {
                auto gsq = detail::box_sum_adjoint(gdist[u], s.h, s.w, radius);
                const auto& diff = cache.diff[u];
                const Offset o = table.all[u];
                for (int i = 0; i < s.h + 2 * radius; ++i)
                    for (int j = 0; j < rw; ++j) {
                        const std::size_t k = std::size_t(i) * rw + j;
                        const T gdiff = T(2) * diff[k] * gsq[k];
                        gpad[std::size_t(i + base) * wp + (j + base)] += gdiff;
                        gpad[std::size_t(i + base + o.dy) * wp + (j + base + o.dx)] -= gdiff;
                    }
            }
            T* gi = gimg.plane(n, 0);
            for (int i = 0; i < s.h + 2 * m; ++i) {
                const int si = std::clamp(i - m, 0, s.h - 1);
                for (int j = 0; j < wp; ++j)
                    gi[si * s.w + std::clamp(j - m, 0, s.w - 1)] += gpad[std::size_t(i) * wp + j];
            }
        }
    });
}

template <class T>
MindField<T> mind_descriptor(const Tensor<T>& image, const MindConfig& cfg) {
    NoGradGuard guard;
    return MindField<T>{descriptor(Var<T>::constant(image), cfg).value()};
}

/// Mean absolute descriptor difference over pixels and channels.
template <class T>
Var<T> loss(const Var<T>& a, const Var<T>& b, const MindConfig& cfg) {
    require(a.shape() == b.shape(), ErrorCode::shape_mismatch,
            "mind_loss: " + a.shape().str() + " vs " + b.shape().str());
    return ops::mean_abs_diff(descriptor(a, cfg), descriptor(b, cfg));
}

template <class T>
T mind_loss(const Tensor<T>& a, const Tensor<T>& b, const MindConfig& cfg) {
    NoGradGuard guard;
    return loss(Var<T>::constant(a), Var<T>::constant(b), cfg).item();
}

} // namespace xmodal::mind
