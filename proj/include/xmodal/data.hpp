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
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <deque>
#include <filesystem>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"
#include "xmodal/error.hpp"
#include "xmodal/io.hpp"

namespace xmodal::data {

namespace fs = std::filesystem;

static_assert(std::endian::native == std::endian::little, "GRD1 I/O assumes a little-endian host");

/// Row-major float32 raster.
struct Grid {
    int height = 0;
    int width = 0;
    std::vector<float> values;

    Grid() = default;
    Grid(int h, int w, float fill = 0.0f) : height(h), width(w), values(std::size_t(h) * w, fill) {}

    std::size_t size() const { return values.size(); }
    float& at(int y, int x) { return values[std::size_t(y) * width + x]; }
    float at(int y, int x) const { return values[std::size_t(y) * width + x]; }
    bool same_shape(const Grid& o) const { return height == o.height && width == o.width; }
    bool operator==(const Grid&) const = default;
};

struct Mask {
    int height = 0;
    int width = 0;
    std::vector<std::uint8_t> bits;

    Mask() = default;
    Mask(int h, int w, bool fill = false) : height(h), width(w), bits(std::size_t(h) * w, fill ? 1 : 0) {}

    std::size_t size() const { return bits.size(); }
    std::size_t count() const { return std::size_t(std::count(bits.begin(), bits.end(), 1)); }
    bool empty() const { return count() == 0; }
    std::uint8_t& at(int y, int x) { return bits[std::size_t(y) * width + x]; }
    bool at(int y, int x) const { return bits[std::size_t(y) * width + x] != 0; }
    bool same_shape(const Mask& o) const { return height == o.height && width == o.width; }
    bool operator==(const Mask&) const = default;
};

inline Grid to_grid(const Mask& m) {
    Grid g(m.height, m.width);
    for (std::size_t i = 0; i < m.size(); ++i) g.values[i] = m.bits[i] ? 1.0f : 0.0f;
    return g;
}

inline Mask to_mask(const Grid& g) {
    Mask m(g.height, g.width);
    for (std::size_t i = 0; i < g.size(); ++i) {
        float v = g.values[i];
        require(v == 0.0f || v == 1.0f, ErrorCode::corrupt, "mask grid holds a value other than 0 or 1");
        m.bits[i] = v == 1.0f ? 1 : 0;
    }
    return m;
}

inline Mask mask_and(const Mask& a, const Mask& b) {
    require(a.same_shape(b), ErrorCode::shape_mismatch, "mask shapes differ");
    Mask out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out.bits[i] = a.bits[i] & b.bits[i];
    return out;
}

inline Mask mask_not(const Mask& a) {
    Mask out = a;
    for (auto& b : out.bits) b = b ? 0 : 1;
    return out;
}

/// Square structuring element of half-width `radius`.
inline Mask dilate(const Mask& m, int radius) {
    Mask out(m.height, m.width);
    for (int y = 0; y < m.height; ++y)
        for (int x = 0; x < m.width; ++x) {
            if (!m.at(y, x)) continue;
            for (int dy = -radius; dy <= radius; ++dy)
                for (int dx = -radius; dx <= radius; ++dx) {
                    int yy = y + dy, xx = x + dx;
                    if (yy >= 0 && yy < m.height && xx >= 0 && xx < m.width) out.at(yy, xx) = 1;
                }
        }
    return out;
}

/// Clears every false region that reaches the border through 4-connected false pixels, i.e. fills holes.
inline Mask fill_holes(const Mask& m) {
    const int h = m.height, w = m.width;
    Mask outside(h, w);
    std::deque<std::pair<int, int>> queue;
    auto seed = [&](int y, int x) {
        if (!m.at(y, x) && !outside.at(y, x)) {
            outside.at(y, x) = 1;
            queue.emplace_back(y, x);
        }
    };
    for (int x = 0; x < w; ++x) {
        seed(0, x);
        seed(h - 1, x);
    }
    for (int y = 0; y < h; ++y) {
        seed(y, 0);
        seed(y, w - 1);
    }
    constexpr std::array<std::pair<int, int>, 4> steps{{{1, 0}, {-1, 0}, {0, 1}, {0, -1}}};
    while (!queue.empty()) {
        auto [y, x] = queue.front();
        queue.pop_front();
        for (auto [dy, dx] : steps) {
            int yy = y + dy, xx = x + dx;
            if (yy >= 0 && yy < h && xx >= 0 && xx < w) seed(yy, xx);
        }
    }
    return mask_not(outside);
}

/// 4-connected components, labelled 1..count in raster order of first pixel.
inline std::pair<std::vector<int>, int> label_components(const Mask& m) {
    std::vector<int> labels(m.size(), 0);
    int count = 0;
    std::vector<std::pair<int, int>> stack;
    for (int y0 = 0; y0 < m.height; ++y0)
        for (int x0 = 0; x0 < m.width; ++x0) {
            if (!m.at(y0, x0) || labels[std::size_t(y0) * m.width + x0]) continue;
            ++count;
            stack.assign(1, {y0, x0});
            labels[std::size_t(y0) * m.width + x0] = count;
            while (!stack.empty()) {
                auto [y, x] = stack.back();
                stack.pop_back();
                const std::array<std::pair<int, int>, 4> nb{{{y + 1, x}, {y - 1, x}, {y, x + 1}, {y, x - 1}}};
                for (auto [yy, xx] : nb) {
                    if (yy < 0 || yy >= m.height || xx < 0 || xx >= m.width) continue;
                    auto& l = labels[std::size_t(yy) * m.width + xx];
                    if (m.at(yy, xx) && !l) {
                        l = count;
                        stack.emplace_back(yy, xx);
                    }
                }
            }
        }
    return {std::move(labels), count};
}

// ---------------------------------------------------------------------------
// GRD1 files

inline constexpr char kGridMagic[4] = {'G', 'R', 'D', '1'};

inline std::string encode_grid(const Grid& g) {
    require(g.height >= 0 && g.width >= 0 && g.size() == std::size_t(g.height) * g.width,
            ErrorCode::invalid_argument, "grid dimensions do not match its values");
    std::string bytes(12 + 4 * g.size(), '\0');
    std::memcpy(bytes.data(), kGridMagic, 4);
    auto h = std::uint32_t(g.height), w = std::uint32_t(g.width);
    std::memcpy(bytes.data() + 4, &h, 4);
    std::memcpy(bytes.data() + 8, &w, 4);
    if (!g.values.empty()) std::memcpy(bytes.data() + 12, g.values.data(), 4 * g.size());
    return bytes;
}

inline Grid decode_grid(std::string_view bytes) {
    require(bytes.size() >= 4 && std::memcmp(bytes.data(), kGridMagic, 4) == 0, ErrorCode::bad_magic,
            "not a GRD1 grid");
    require(bytes.size() >= 12, ErrorCode::truncated, "GRD1 header truncated");
    std::uint32_t h, w;
    std::memcpy(&h, bytes.data() + 4, 4);
    std::memcpy(&w, bytes.data() + 8, 4);
    const std::uint64_t expected = 12 + 4ULL * h * w;
    require(bytes.size() >= expected, ErrorCode::truncated, "GRD1 payload truncated");
    require(bytes.size() == expected, ErrorCode::corrupt, "GRD1 file has trailing bytes");
    Grid g(static_cast<int>(h), static_cast<int>(w));
    if (!g.values.empty()) std::memcpy(g.values.data(), bytes.data() + 12, 4 * g.size());
    for (float v : g.values) require(std::isfinite(v), ErrorCode::non_finite, "GRD1 grid holds a non-finite value");
    return g;
}

inline void write_grid(const fs::path& path, const Grid& g) { io::atomic_write(path, encode_grid(g)); }
inline Grid read_grid(const fs::path& path) { return decode_grid(io::read_file(path)); }

// ---------------------------------------------------------------------------
// Images and preprocessing

enum class Domain { mri_like, ct_like };
enum class Provenance { phantom, imported };

inline const char* to_string(Domain d) { return d == Domain::mri_like ? "mri_like" : "ct_like"; }
inline const char* to_string(Provenance p) { return p == Provenance::phantom ? "phantom" : "imported"; }

struct HuWindow {
    double width = 2000.0;
    double level = 350.0;
    bool operator==(const HuWindow&) const = default;
};

/// Normalized image, values in [-1, 1].
struct Image {
    Grid values;
    Domain domain = Domain::mri_like;
    Provenance provenance = Provenance::phantom;
    std::optional<HuWindow> hu_window;

    int height() const { return values.height; }
    int width() const { return values.width; }

    void validate(bool square = true) const {
        require(values.size() > 0, ErrorCode::invalid_argument, "image is empty");
        require(!square || values.height == values.width, ErrorCode::shape_mismatch, "image is not square");
        for (float v : values.values) {
            require(std::isfinite(v), ErrorCode::non_finite, "image holds a non-finite value");
            require(v >= -1.0f && v <= 1.0f, ErrorCode::invalid_argument, "image value outside [-1, 1]");
        }
    }
};

inline Image ct_window(const Grid& hu, double width_hu = 2000.0, double level_hu = 350.0) {
    require(width_hu > 0 && std::isfinite(width_hu) && std::isfinite(level_hu), ErrorCode::invalid_argument,
            "window width must be positive");
    Image out{hu, Domain::ct_like, Provenance::phantom, HuWindow{width_hu, level_hu}};
    const double half = width_hu / 2;
    for (auto& v : out.values.values) v = float(std::clamp((double(v) - level_hu) / half, -1.0, 1.0));
    return out;
}

inline double median(std::vector<double> v) {
    require(!v.empty(), ErrorCode::invalid_argument, "median of an empty set");
    const std::size_t mid = v.size() / 2;
    std::nth_element(v.begin(), v.begin() + mid, v.end());
    double hi = v[mid];
    if (v.size() % 2) return hi;
    double lo = *std::max_element(v.begin(), v.begin() + mid);
    return 0.5 * (lo + hi);
}

inline constexpr double kMriMedianTarget = 0.25;

/// Foreground median maps to kMriMedianTarget; background is -1.
inline Image mri_median_normalize(const Grid& intensity, const Mask& foreground) {
    require(intensity.height == foreground.height && intensity.width == foreground.width,
            ErrorCode::shape_mismatch, "intensity and foreground shapes differ");
    std::vector<double> fg;
    for (std::size_t i = 0; i < intensity.size(); ++i)
        if (foreground.bits[i]) fg.push_back(intensity.values[i]);
    require(!fg.empty(), ErrorCode::invalid_argument, "foreground mask is empty");
    const double med = median(std::move(fg));
    require(med > 0 && std::isfinite(med), ErrorCode::invalid_argument, "foreground median must be positive");
    const double scale = (kMriMedianTarget + 1.0) / med;
    Image out{Grid(intensity.height, intensity.width, -1.0f), Domain::mri_like, Provenance::phantom, std::nullopt};
    for (std::size_t i = 0; i < intensity.size(); ++i)
        if (foreground.bits[i])
            out.values.values[i] = float(std::clamp(-1.0 + scale * intensity.values[i], -1.0, 1.0));
    return out;
}

inline Mask remove_background(const Grid& image, double threshold) {
    Mask m(image.height, image.width);
    for (std::size_t i = 0; i < image.size(); ++i) m.bits[i] = image.values[i] >= threshold ? 1 : 0;
    return fill_holes(m);
}

/// Bilinear resampling under pixel-centre alignment.
inline Grid resize_grid(const Grid& src, int th, int tw) {
    require(src.size() > 0, ErrorCode::invalid_argument, "cannot resize an empty grid");
    require(th >= 8 && tw >= 8, ErrorCode::invalid_argument, "resize target must be at least 8 pixels");
    if (th == src.height && tw == src.width) return src;
    Grid out(th, tw);
    const double sy = double(src.height) / th, sx = double(src.width) / tw;
    for (int y = 0; y < th; ++y) {
        double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, double(src.height - 1));
        int y0 = int(fy), y1 = std::min(y0 + 1, src.height - 1);
        double wy = fy - y0;
        for (int x = 0; x < tw; ++x) {
            double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, double(src.width - 1));
            int x0 = int(fx), x1 = std::min(x0 + 1, src.width - 1);
            double wx = fx - x0;
            double top = (1 - wx) * src.at(y0, x0) + wx * src.at(y0, x1);
            double bot = (1 - wx) * src.at(y1, x0) + wx * src.at(y1, x1);
            out.at(y, x) = float((1 - wy) * top + wy * bot);
        }
    }
    return out;
}

inline Image resize_image(const Image& image, int target) {
    Image out = image;
    out.values = resize_grid(image.values, target, target);
    for (auto& v : out.values.values) v = std::clamp(v, -1.0f, 1.0f);
    return out;
}

// ---------------------------------------------------------------------------
// Procedural chest phantom

inline constexpr int kPhantomVersion = 1;

/// Nominal tissue values of the phantom; per-structure jitter is applied on top.
struct PhantomPalette {
    static constexpr double air_hu = -1000.0;
    static constexpr double lung_hu = -800.0;
    static constexpr double soft_hu = 40.0;
    static constexpr double bone_hu = 700.0;
    static constexpr double hu_jitter = 0.10;

    static constexpr double air_mri = 0.0;
    static constexpr double lung_mri = 0.12;
    static constexpr double bone_mri = 0.3;
    static constexpr double soft_mri = 1.0;
    static constexpr double mri_jitter = 0.10;
    static constexpr double bias_amplitude = 0.15;
    static constexpr double noise_sigma = 0.03;
};

struct PhantomCase {
    std::string case_id;
    std::uint64_t seed = 0;
    int version = kPhantomVersion;
    Grid ct_hu;
    Grid mri_intensity;
    Mask body;
    Mask lungs;
    Mask bones;

    bool operator==(const PhantomCase&) const = default;
};

namespace detail {

struct Ellipse {
    double cx, cy, a, b, angle;
    bool contains(double x, double y) const {
        const double c = std::cos(angle), s = std::sin(angle);
        const double u = (x - cx) * c + (y - cy) * s;
        const double v = -(x - cx) * s + (y - cy) * c;
        return (u * u) / (a * a) + (v * v) / (b * b) <= 1.0;
    }
};

/// Sum of a few random low-frequency sinusoids over normalized coordinates, in [-1, 1].
struct SmoothField {
    std::array<double, 3> fx{}, fy{}, phase{}, weight{};

    template <class Rng>
    explicit SmoothField(Rng& rng) {
        std::uniform_real_distribution<double> freq(0.3, 1.2), ph(0, 2 * std::numbers::pi), wt(0.5, 1.0);
        double total = 0;
        for (int k = 0; k < 3; ++k) {
            fx[k] = freq(rng) * (k % 2 ? -1 : 1);
            fy[k] = freq(rng);
            phase[k] = ph(rng);
            weight[k] = wt(rng);
            total += weight[k];
        }
        for (auto& w : weight) w /= total;
    }

    double operator()(double x, double y) const {
        double v = 0;
        for (int k = 0; k < 3; ++k) v += weight[k] * std::sin(std::numbers::pi * (fx[k] * x + fy[k] * y) + phase[k]);
        return v;
    }
};

} // namespace detail

inline std::string phantom_case_id(std::uint64_t index) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "case_%04llu", static_cast<unsigned long long>(index));
    return buf;
}

/// Seed of the `index`-th phantom in a cohort generated from `base`.
inline std::uint64_t phantom_seed(std::uint64_t base, std::uint64_t index) {
    std::seed_seq seq{std::uint32_t(base), std::uint32_t(base >> 32), std::uint32_t(index), std::uint32_t(index >> 32)};
    return std::mt19937_64(seq)();
}

/// Axial chest-like slice: body with arms, two lungs, spine, sternum, ribs and humeri, under a smooth warp.
inline PhantomCase generate_phantom(std::uint64_t seed, int size, std::string case_id = {}) {
    require(size >= 32 && size <= 4096, ErrorCode::invalid_argument, "phantom size must be in [32, 4096]");
    using P = PhantomPalette;
    using detail::Ellipse;
    std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
    auto uni = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
    auto jitter = [&](double frac) { return 1.0 + uni(-frac, frac); };

    const double px = 2.0 / size;
    const double min_bone_r = 1.6 * px;

    const Ellipse body{uni(-0.03, 0.03), uni(0.0, 0.06), uni(0.56, 0.64), uni(0.40, 0.48), uni(-0.08, 0.08)};
    std::array<Ellipse, 2> arms;
    for (int side = 0; side < 2; ++side) {
        const double sgn = side ? 1.0 : -1.0;
        const double r = uni(0.11, 0.14);
        arms[side] = {body.cx + sgn * (body.a + r * 0.6), body.cy + uni(-0.08, 0.02), r, r * uni(1.1, 1.4),
                      uni(-0.2, 0.2)};
    }
    std::array<Ellipse, 2> lungs;
    for (int side = 0; side < 2; ++side) {
        const double sgn = side ? 1.0 : -1.0;
        lungs[side] = {body.cx + sgn * body.a * uni(0.42, 0.50), body.cy - body.b * uni(0.02, 0.12),
                       body.a * uni(0.28, 0.34), body.b * uni(0.55, 0.68), sgn * uni(-0.15, 0.25)};
    }
    struct Disk {
        double cx, cy, r, hu;
    };
    std::vector<Disk> disks;
    disks.push_back({body.cx, body.cy + body.b * uni(0.62, 0.70), std::max(min_bone_r, uni(0.075, 0.095)),
                     P::bone_hu * jitter(P::hu_jitter)});
    disks.push_back({body.cx, body.cy - body.b * uni(0.78, 0.84), std::max(min_bone_r, uni(0.035, 0.05)),
                     P::bone_hu * jitter(P::hu_jitter)});
    const int ribs_per_side = 4 + int(rng() % 2);
    for (int side = 0; side < 2; ++side) {
        const double sgn = side ? 1.0 : -1.0;
        for (int k = 0; k < ribs_per_side; ++k) {
            const double t = (k + 0.5) / ribs_per_side;
            const double angle = std::numbers::pi * (-0.38 + 0.76 * t) + uni(-0.06, 0.06);
            const double shrink = uni(0.86, 0.90);
            disks.push_back({body.cx + sgn * body.a * shrink * std::cos(angle),
                             body.cy + body.b * shrink * std::sin(angle), std::max(min_bone_r, uni(0.035, 0.05)),
                             P::bone_hu * jitter(P::hu_jitter)});
        }
    }
    for (int side = 0; side < 2; ++side)
        disks.push_back({arms[side].cx + uni(-0.02, 0.02), arms[side].cy + uni(-0.02, 0.02),
                         std::max(min_bone_r, uni(0.045, 0.06)), P::bone_hu * jitter(P::hu_jitter)});

    const double soft_hu = P::soft_hu * jitter(P::hu_jitter);
    const double lung_hu = P::lung_hu * jitter(P::hu_jitter);
    const double soft_mri = P::soft_mri * jitter(P::mri_jitter);
    const double lung_mri = P::lung_mri * jitter(P::mri_jitter);
    const double bone_mri = P::bone_mri * jitter(P::mri_jitter);
    const double warp_amp = uni(0.015, 0.035);
    const detail::SmoothField warp_x(rng), warp_y(rng), bias(rng);

    PhantomCase pc;
    pc.case_id = case_id.empty() ? phantom_case_id(seed) : std::move(case_id);
    pc.seed = seed;
    pc.body = Mask(size, size);
    pc.lungs = Mask(size, size);
    pc.bones = Mask(size, size);
    std::vector<double> bone_value(std::size_t(size) * size, 0.0);
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
            double u = (x + 0.5) * px - 1.0, v = (y + 0.5) * px - 1.0;
            const double wu = u + warp_amp * warp_x(u, v), wv = v + warp_amp * warp_y(u, v);
            const bool in_body = body.contains(wu, wv) || arms[0].contains(wu, wv) || arms[1].contains(wu, wv);
            pc.body.at(y, x) = in_body;
            if (!in_body) continue;
            pc.lungs.at(y, x) = lungs[0].contains(wu, wv) || lungs[1].contains(wu, wv);
            for (const auto& d : disks)
                if ((wu - d.cx) * (wu - d.cx) + (wv - d.cy) * (wv - d.cy) <= d.r * d.r) {
                    pc.bones.at(y, x) = 1;
                    bone_value[std::size_t(y) * size + x] = d.hu;
                    break;
                }
        }
    pc.lungs = mask_and(pc.lungs, mask_not(dilate(pc.bones, 1)));

    pc.ct_hu = Grid(size, size, float(P::air_hu));
    pc.mri_intensity = Grid(size, size, float(P::air_mri));
    std::normal_distribution<double> noise(0.0, P::noise_sigma);
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
            const std::size_t i = std::size_t(y) * size + x;
            double hu = P::air_hu, mri = P::air_mri;
            if (pc.bones.bits[i]) {
                hu = bone_value[i];
                mri = bone_mri;
            } else if (pc.lungs.bits[i]) {
                hu = lung_hu;
                mri = lung_mri;
            } else if (pc.body.bits[i]) {
                hu = soft_hu;
                mri = soft_mri;
            }
            const double u = (x + 0.5) * px - 1.0, v = (y + 0.5) * px - 1.0;
            pc.ct_hu.values[i] = float(hu);
            pc.mri_intensity.values[i] = float(mri * (1.0 + P::bias_amplitude * bias(u, v)) + noise(rng));
        }
    return pc;
}

inline nlohmann::json phantom_meta(const PhantomCase& pc) {
    using P = PhantomPalette;
    return {
        {"case_id", pc.case_id},
        {"seed", pc.seed},
        {"generator_version", pc.version},
        {"size", pc.ct_hu.height},
        {"ct_window", {{"width_hu", 2000.0}, {"level_hu", 350.0}}},
        {"mri_normalization", {{"method", "foreground_median"}, {"target", kMriMedianTarget}}},
        {"palette_hu", {{"air", P::air_hu}, {"lung", P::lung_hu}, {"soft", P::soft_hu}, {"bone", P::bone_hu}}},
        {"palette_mri", {{"air", P::air_mri}, {"lung", P::lung_mri}, {"soft", P::soft_mri}, {"bone", P::bone_mri}}},
    };
}

inline void write_case(const fs::path& dir, const PhantomCase& pc) {
    fs::create_directories(dir);
    write_grid(dir / "ct_hu.grd", pc.ct_hu);
    write_grid(dir / "mri.grd", pc.mri_intensity);
    write_grid(dir / "mask_body.grd", to_grid(pc.body));
    write_grid(dir / "mask_lungs.grd", to_grid(pc.lungs));
    write_grid(dir / "mask_bones.grd", to_grid(pc.bones));
    io::atomic_write(dir / "meta.json", phantom_meta(pc).dump(2) + "\n");
}

inline PhantomCase read_case(const fs::path& dir) {
    require(fs::is_directory(dir), ErrorCode::missing_input, "case directory missing: " + dir.string());
    auto meta = nlohmann::json::parse(io::read_file(dir / "meta.json"));
    PhantomCase pc;
    pc.case_id = meta.at("case_id").get<std::string>();
    pc.seed = meta.at("seed").get<std::uint64_t>();
    pc.version = meta.at("generator_version").get<int>();
    pc.ct_hu = read_grid(dir / "ct_hu.grd");
    pc.mri_intensity = read_grid(dir / "mri.grd");
    pc.body = to_mask(read_grid(dir / "mask_body.grd"));
    pc.lungs = to_mask(read_grid(dir / "mask_lungs.grd"));
    pc.bones = to_mask(read_grid(dir / "mask_bones.grd"));
    for (const Grid* g : {&pc.mri_intensity}) require(g->same_shape(pc.ct_hu), ErrorCode::corrupt, "case grids differ in shape");
    for (const Mask* m : {&pc.body, &pc.lungs, &pc.bones})
        require(m->height == pc.ct_hu.height && m->width == pc.ct_hu.width, ErrorCode::corrupt,
                "case masks differ in shape");
    return pc;
}

// ---------------------------------------------------------------------------
// Pipeline

inline constexpr double kMriBackgroundThreshold = 0.35;

struct PreprocessedCase {
    std::string case_id;
    Image mri;
    Image ct;
};

/// Background removal then median normalisation, resized to `target`. An empty foreground falls back to `fallback`.
inline Image preprocess_mri(const Grid& intensity, int target, const Mask* fallback = nullptr) {
    const float hi = *std::max_element(intensity.values.begin(), intensity.values.end());
    Mask fg = remove_background(intensity, kMriBackgroundThreshold * hi);
    if (fg.empty() && fallback) fg = *fallback;
    require(!fg.empty(), ErrorCode::invalid_argument, "MRI has no foreground");
    Image out = resize_image(mri_median_normalize(intensity, fg), target);
    out.validate();
    return out;
}

/// MRI as in preprocess_mri; CT: HU window. Both resized to `target`.
inline PreprocessedCase preprocess_case(const PhantomCase& pc, int target) {
    PreprocessedCase out{pc.case_id, preprocess_mri(pc.mri_intensity, target, &pc.body),
                         resize_image(ct_window(pc.ct_hu), target)};
    out.ct.validate();
    return out;
}

inline void write_preprocessed(const fs::path& dir, const PreprocessedCase& pc) {
    fs::create_directories(dir);
    write_grid(dir / "mri_norm.grd", pc.mri.values);
    write_grid(dir / "ct_norm.grd", pc.ct.values);
}

/// Preprocessed pair for a case: reads `*_norm.grd` when present, otherwise preprocesses the raw case.
inline PreprocessedCase load_preprocessed(const fs::path& dir, int target) {
    if (fs::exists(dir / "mri_norm.grd") && fs::exists(dir / "ct_norm.grd")) {
        PreprocessedCase pc{dir.filename().string(),
                            Image{read_grid(dir / "mri_norm.grd"), Domain::mri_like, Provenance::phantom, {}},
                            Image{read_grid(dir / "ct_norm.grd"), Domain::ct_like, Provenance::phantom, HuWindow{}}};
        if (pc.mri.height() != target) pc.mri = resize_image(pc.mri, target);
        if (pc.ct.height() != target) pc.ct = resize_image(pc.ct, target);
        pc.mri.validate();
        pc.ct.validate();
        return pc;
    }
    return preprocess_case(read_case(dir), target);
}

// ---------------------------------------------------------------------------
// Splits

struct SplitRatios {
    double train = 120.0 / 171.0;
    double val = 30.0 / 171.0;
    static SplitRatios paper() { return {0.8, 0.2}; }
};

struct DatasetSplit {
    std::vector<std::string> train_ids;
    std::vector<std::string> val_ids;
    std::vector<std::string> test_ids;
    bool operator==(const DatasetSplit&) const = default;
};

inline DatasetSplit make_splits(std::vector<std::string> ids, SplitRatios ratios, std::uint64_t seed) {
    require(!ids.empty(), ErrorCode::invalid_argument, "no case ids to split");
    require(ratios.train >= 0 && ratios.val >= 0 && ratios.train + ratios.val <= 1.0 + 1e-12,
            ErrorCode::invalid_argument, "split ratios must be nonnegative and sum to at most 1");
    std::sort(ids.begin(), ids.end());
    require(std::adjacent_find(ids.begin(), ids.end()) == ids.end(), ErrorCode::invalid_argument,
            "duplicate case id");
    std::mt19937_64 rng(seed);
    std::shuffle(ids.begin(), ids.end(), rng);
    const std::size_t n = ids.size();
    const std::size_t n_train = std::min(n, std::size_t(std::llround(ratios.train * double(n))));
    const std::size_t n_val = std::min(n - n_train, std::size_t(std::llround(ratios.val * double(n))));
    DatasetSplit s;
    s.train_ids.assign(ids.begin(), ids.begin() + n_train);
    s.val_ids.assign(ids.begin() + n_train, ids.begin() + n_train + n_val);
    s.test_ids.assign(ids.begin() + n_train + n_val, ids.end());
    return s;
}

inline nlohmann::json to_json(const DatasetSplit& s) {
    return {{"train", s.train_ids}, {"val", s.val_ids}, {"test", s.test_ids}};
}

inline DatasetSplit split_from_json(const nlohmann::json& j) {
    return {j.at("train").get<std::vector<std::string>>(), j.at("val").get<std::vector<std::string>>(),
            j.at("test").get<std::vector<std::string>>()};
}

/// Case directories under `root` that hold a meta.json or preprocessed grids, sorted.
inline std::vector<std::string> list_cases(const fs::path& root) {
    require(fs::is_directory(root), ErrorCode::missing_input, "data root missing: " + root.string());
    std::vector<std::string> ids;
    for (const auto& e : fs::directory_iterator(root))
        if (e.is_directory() && (fs::exists(e.path() / "meta.json") || fs::exists(e.path() / "mri_norm.grd")))
            ids.push_back(e.path().filename().string());
    std::sort(ids.begin(), ids.end());
    return ids;
}

} // namespace xmodal::data
