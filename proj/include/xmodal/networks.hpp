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

#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "norm.hpp"

namespace xmodal {

enum class Variant { cyclegan, cyclegan_mind, ugatit, ugatit_mind };

inline const char* to_string(Variant v) {
    switch (v) {
    case Variant::cyclegan: return "cyclegan";
    case Variant::cyclegan_mind: return "cyclegan_mind";
    case Variant::ugatit: return "ugatit";
    case Variant::ugatit_mind: return "ugatit_mind";
    }
    return "?";
}

inline Variant parse_variant(std::string_view s) {
    for (auto v : {Variant::cyclegan, Variant::cyclegan_mind, Variant::ugatit, Variant::ugatit_mind})
        if (s == to_string(v)) return v;
    throw Error(ErrorCode::invalid_argument, "unknown variant '" + std::string(s) + "'");
}

inline bool is_ugatit(Variant v) { return v == Variant::ugatit || v == Variant::ugatit_mind; }
inline bool has_mind(Variant v) { return v == Variant::cyclegan_mind || v == Variant::ugatit_mind; }

enum class Norm { instance, ada_lin, layer_instance };

inline const char* to_string(Norm n) {
    switch (n) {
    case Norm::instance: return "instance";
    case Norm::ada_lin: return "ada_lin";
    case Norm::layer_instance: return "layer_instance";
    }
    return "?";
}

struct NetworkSpec {
    int image_size = 64;
    int base_channels = 8;
    int downsample_count = 2;
    int residual_block_count = 2;
    /// 1 = local discriminator only, 2 = local + global.
    int discriminator_scales = 1;
    /// Conv layers in the local discriminator; the global one uses two more.
    int discriminator_layers = 3;
    bool use_cam = true;
    Norm encoder_norm = Norm::instance;
    Norm decoder_norm = Norm::ada_lin;
    Norm upsample_norm = Norm::layer_instance;
    std::uint64_t seed = 0;

    /// Backbone settings for a variant: CycleGAN variants drop the CAM path and AdaLIN.
    static NetworkSpec for_variant(Variant v, NetworkSpec base) {
        if (is_ugatit(v)) {
            base.use_cam = true;
            base.decoder_norm = Norm::ada_lin;
            base.upsample_norm = Norm::layer_instance;
        } else {
            base.use_cam = false;
            base.decoder_norm = Norm::instance;
            base.upsample_norm = Norm::instance;
        }
        base.encoder_norm = Norm::instance;
        return base;
    }

    static NetworkSpec for_variant(Variant v);

    int feature_size() const { return image_size >> downsample_count; }
    int feature_channels() const { return base_channels << downsample_count; }

    static int discriminator_output_size(int size, int layers) {
        for (int i = 0; i < layers - 1; ++i) size = (size + 2 - 4) / 2 + 1;
        size = size + 2 - 4 + 1;
        return size + 2 - 4 + 1;
    }

    void validate() const {
        require(image_size >= 8 && base_channels >= 1 && downsample_count >= 1 && residual_block_count >= 1 &&
                    discriminator_scales >= 1 && discriminator_scales <= 2 && discriminator_layers >= 2,
                ErrorCode::invalid_argument, "network spec: counts must be >= 1");
        require(image_size % (1 << downsample_count) == 0, ErrorCode::invalid_argument,
                "network spec: image_size must be divisible by 2^downsample_count");
        require(feature_size() >= 2, ErrorCode::invalid_argument, "network spec: encoder features too small");
        require(encoder_norm == Norm::instance, ErrorCode::invalid_argument,
                "network spec: encoder uses instance norm");
        require(use_cam || decoder_norm != Norm::ada_lin, ErrorCode::invalid_argument,
                "network spec: ada_lin decoder needs the CAM/MLP path");
        for (int s = 0; s < discriminator_scales; ++s)
            require(discriminator_output_size(image_size, discriminator_layers + 2 * s) >= 1,
                    ErrorCode::invalid_argument, "network spec: discriminator too deep for image size");
    }

    bool operator==(const NetworkSpec&) const = default;
};

inline NetworkSpec NetworkSpec::for_variant(Variant v) { return for_variant(v, NetworkSpec{}); }

template <class T>
struct NamedParam {
    std::string name;
    Var<T> var;
    /// Clamp into [0,1] after each optimizer step (AdaLIN/ILN rho).
    bool unit_interval = false;
};

template <class T>
using ParamList = std::vector<NamedParam<T>>;

template <class T>
std::size_t count_parameters(const ParamList<T>& params) {
    std::size_t n = 0;
    for (const auto& p : params) n += p.var.value().size();
    return n;
}

namespace nn {

template <class T>
class ParamFactory {
public:
    ParamFactory(std::mt19937_64& rng, ParamList<T>& out) : rng_(rng), out_(out) {}

    /// Zero-mean Gaussian with std 1/sqrt(fan_in).
    Var<T> weight(const std::string& name, Shape s) {
        const double fan_in = double(s.c) * s.h * s.w;
        std::normal_distribution<double> dist(0.0, 1.0 / std::sqrt(fan_in));
        Tensor<T> t(s);
        for (auto& v : t.vec()) v = T(dist(rng_));
        return add(name, std::move(t));
    }
    Var<T> filled(const std::string& name, Shape s, T value, bool unit_interval = false) {
        return add(name, Tensor<T>(s, value), unit_interval);
    }

private:
    Var<T> add(const std::string& name, Tensor<T> t, bool unit_interval = false) {
        auto v = Var<T>::leaf(std::move(t), true);
        out_.push_back({name, v, unit_interval});
        return v;
    }
    std::mt19937_64& rng_;
    ParamList<T>& out_;
};

template <class T>
struct Conv {
    Var<T> weight;
    std::optional<Var<T>> bias;
    int stride = 1;
    int reflect = 0;

    Conv() = default;
    Conv(ParamFactory<T>& f, const std::string& name, int cin, int cout, int k, int stride_, int reflect_,
         bool with_bias)
        : stride(stride_), reflect(reflect_) {
        weight = f.weight(name + ".w", Shape{cout, cin, k, k});
        if (with_bias) bias = f.filled(name + ".b", Shape{1, cout, 1, 1}, T(0));
    }

    Var<T> operator()(const Var<T>& x) const {
        Var<T> in = reflect > 0 ? ops::reflect_pad(x, reflect) : x;
        return ops::conv2d(in, weight, bias, stride, 0);
    }
};

template <class T>
struct Linear {
    Var<T> weight;
    std::optional<Var<T>> bias;

    Linear() = default;
    Linear(ParamFactory<T>& f, const std::string& name, int in, int out, bool with_bias) {
        weight = f.weight(name + ".w", Shape{out, in, 1, 1});
        if (with_bias) bias = f.filled(name + ".b", Shape{1, out, 1, 1}, T(0));
    }
    Var<T> operator()(const Var<T>& x) const { return ops::linear(x, weight, bias); }
};

/// Learned-affine layer-instance norm (gamma/beta/rho are parameters, not adaptive).
template <class T>
struct LayerInstanceNorm {
    Var<T> gamma, beta, rho;

    LayerInstanceNorm() = default;
    LayerInstanceNorm(ParamFactory<T>& f, const std::string& name, int channels, T rho_init) {
        gamma = f.filled(name + ".gamma", Shape{1, channels, 1, 1}, T(1));
        beta = f.filled(name + ".beta", Shape{1, channels, 1, 1}, T(0));
        rho = f.filled(name + ".rho", Shape{1, channels, 1, 1}, rho_init, true);
    }
    Var<T> operator()(const Var<T>& x) const { return ops::blend_norm<T>(x, gamma, beta, rho); }
};

} // namespace nn

template <class T>
struct CamResult {
    Var<T> logit;     // (N,1,1,1)
    Var<T> attended;  // (N,C,H,W)
    Var<T> heatmap;   // (N,1,H,W)
};

enum class CamPooling { average, max };

/// Class-activation attention: the classifier scores globally pooled features and its
/// weights re-weight the feature channels.
template <class T>
CamResult<T> cam_attend(const Var<T>& features, const Var<T>& classifier_weights,
                        CamPooling pooling = CamPooling::average) {
    const int c = features.shape().c;
    require(classifier_weights.shape().size() == std::size_t(c), ErrorCode::shape_mismatch,
            "cam_attend: classifier weight count must equal channel count");
    auto pooled = pooling == CamPooling::average ? ops::global_avg_pool(features) : ops::global_max_pool(features);
    Var<T> w_fc = classifier_weights.shape() == Shape{1, c, 1, 1}
                      ? classifier_weights
                      : Var<T>::constant(classifier_weights.value().reshaped(Shape{1, c, 1, 1}));
    CamResult<T> r;
    r.logit = ops::linear<T>(pooled, w_fc, std::nullopt);
    r.attended = ops::channel_scale(features, w_fc);
    r.heatmap = ops::channel_sum(r.attended);
    return r;
}

template <class T>
struct GeneratorOutput {
    Var<T> image;      // (N,1,S,S) in [-1,1]
    Var<T> cam_logit;  // (N,2,1,1): average- and max-pooled classifier logits; empty without CAM
    Var<T> heatmap;    // (N,1,s,s) at encoder resolution; empty without CAM
};

template <class T>
class Generator {
public:
    Generator() = default;
    Generator(const NetworkSpec& spec, std::mt19937_64& rng, const std::string& prefix) : spec_(spec) {
        nn::ParamFactory<T> f(rng, params_);
        const int c0 = spec.base_channels;
        stem_ = nn::Conv<T>(f, prefix + ".stem", 1, c0, 7, 1, 3, false);
        int c = c0;
        for (int i = 0; i < spec.downsample_count; ++i) {
            down_.emplace_back(f, prefix + ".down" + std::to_string(i), c, 2 * c, 3, 2, 1, false);
            c *= 2;
        }
        for (int i = 0; i < spec.residual_block_count; ++i) {
            std::string n = prefix + ".enc_res" + std::to_string(i);
            enc_res_.push_back({nn::Conv<T>(f, n + ".a", c, c, 3, 1, 1, false),
                                nn::Conv<T>(f, n + ".b", c, c, 3, 1, 1, false)});
        }
        if (spec.use_cam) {
            gap_fc_ = f.weight(prefix + ".eta.gap", Shape{1, c, 1, 1});
            gmp_fc_ = f.weight(prefix + ".eta.gmp", Shape{1, c, 1, 1});
            fuse_ = nn::Conv<T>(f, prefix + ".cam_fuse", 2 * c, c, 1, 1, 0, true);
            mlp_[0] = nn::Linear<T>(f, prefix + ".mlp0", c, c, false);
            mlp_[1] = nn::Linear<T>(f, prefix + ".mlp1", c, c, false);
            gamma_fc_ = nn::Linear<T>(f, prefix + ".gamma", c, c, false);
            beta_fc_ = nn::Linear<T>(f, prefix + ".beta", c, c, false);
        }
        for (int i = 0; i < spec.residual_block_count; ++i) {
            std::string n = prefix + ".dec_res" + std::to_string(i);
            DecBlock b{nn::Conv<T>(f, n + ".a", c, c, 3, 1, 1, true), nn::Conv<T>(f, n + ".b", c, c, 3, 1, 1, true),
                       {}, {}};
            if (spec.decoder_norm == Norm::ada_lin) {
                b.rho_a = f.filled(n + ".rho_a", Shape{1, c, 1, 1}, T(1), true);
                b.rho_b = f.filled(n + ".rho_b", Shape{1, c, 1, 1}, T(1), true);
            }
            dec_res_.push_back(std::move(b));
        }
        for (int i = 0; i < spec.downsample_count; ++i) {
            std::string n = prefix + ".up" + std::to_string(i);
            UpBlock u{nn::Conv<T>(f, n, c, c / 2, 3, 1, 1, false), {}};
            if (spec.upsample_norm == Norm::layer_instance)
                u.norm = nn::LayerInstanceNorm<T>(f, n + ".iln", c / 2, T(0));
            up_.push_back(std::move(u));
            c /= 2;
        }
        head_ = nn::Conv<T>(f, prefix + ".head", c, 1, 7, 1, 3, true);
    }

    GeneratorOutput<T> forward(const Var<T>& x) const {
        using namespace ops;
        Var<T> h = relu(instance_norm(stem_(x)));
        for (const auto& d : down_) h = relu(instance_norm(d(h)));
        for (const auto& b : enc_res_) h = add(h, instance_norm(b.b(relu(instance_norm(b.a(h))))));

        GeneratorOutput<T> out;
        Var<T> gamma, beta;
        if (spec_.use_cam) {
            auto gap = cam_attend(h, gap_fc_, CamPooling::average);
            auto gmp = cam_attend(h, gmp_fc_, CamPooling::max);
            out.cam_logit = concat_channels(gap.logit, gmp.logit);
            h = relu(fuse_(concat_channels(gap.attended, gmp.attended)));
            out.heatmap = channel_sum(h);
            Var<T> z = relu(mlp_[1](relu(mlp_[0](global_avg_pool(h)))));
            gamma = gamma_fc_(z);
            beta = beta_fc_(z);
        }
        for (const auto& b : dec_res_) {
            if (spec_.decoder_norm == Norm::ada_lin) {
                Var<T> y = relu(ada_lin(b.a(h), gamma, beta, b.rho_a));
                h = add(h, ada_lin(b.b(y), gamma, beta, b.rho_b));
            } else {
                h = add(h, instance_norm(b.b(relu(instance_norm(b.a(h))))));
            }
        }
        for (const auto& u : up_) {
            Var<T> y = u.conv(upsample_nearest(h, 2));
            h = relu(spec_.upsample_norm == Norm::layer_instance ? u.norm(y) : instance_norm(y));
        }
        out.image = ops::tanh(head_(h));
        return out;
    }

    const NetworkSpec& spec() const { return spec_; }
    const ParamList<T>& params() const { return params_; }

private:
    struct ResBlock {
        nn::Conv<T> a, b;
    };
    struct DecBlock {
        nn::Conv<T> a, b;
        Var<T> rho_a, rho_b;
    };
    struct UpBlock {
        nn::Conv<T> conv;
        nn::LayerInstanceNorm<T> norm;
    };

    NetworkSpec spec_;
    ParamList<T> params_;
    nn::Conv<T> stem_, fuse_, head_;
    std::vector<nn::Conv<T>> down_;
    std::vector<ResBlock> enc_res_;
    std::vector<DecBlock> dec_res_;
    std::vector<UpBlock> up_;
    Var<T> gap_fc_, gmp_fc_;
    nn::Linear<T> mlp_[2], gamma_fc_, beta_fc_;
};

template <class T>
struct DiscriminatorOutput {
    Var<T> patch_logits;  // (N,1,h,w)
    Var<T> cam_logit;     // (N,2,1,1); empty without CAM
    Var<T> heatmap;
};

/// PatchGAN-style discriminator with an optional CAM auxiliary classifier.
template <class T>
class Discriminator {
public:
    Discriminator() = default;
    Discriminator(const NetworkSpec& spec, int layers, std::mt19937_64& rng, const std::string& prefix)
        : use_cam_(spec.use_cam) {
        nn::ParamFactory<T> f(rng, params_);
        int c = spec.base_channels;
        convs_.emplace_back(f, prefix + ".conv0", 1, c, 4, 2, 1, true);
        for (int i = 1; i < layers - 1; ++i) {
            convs_.emplace_back(f, prefix + ".conv" + std::to_string(i), c, 2 * c, 4, 2, 1, true);
            c *= 2;
        }
        convs_.emplace_back(f, prefix + ".conv" + std::to_string(layers - 1), c, 2 * c, 4, 1, 1, true);
        c *= 2;
        if (use_cam_) {
            gap_fc_ = f.weight(prefix + ".eta.gap", Shape{1, c, 1, 1});
            gmp_fc_ = f.weight(prefix + ".eta.gmp", Shape{1, c, 1, 1});
            fuse_ = nn::Conv<T>(f, prefix + ".cam_fuse", 2 * c, c, 1, 1, 0, true);
        }
        head_ = nn::Conv<T>(f, prefix + ".head", c, 1, 4, 1, 1, false);
    }

    DiscriminatorOutput<T> forward(const Var<T>& x) const {
        using namespace ops;
        Var<T> h = x;
        for (const auto& conv : convs_) h = leaky_relu(conv(h), T(0.2));
        DiscriminatorOutput<T> out;
        if (use_cam_) {
            auto gap = cam_attend(h, gap_fc_, CamPooling::average);
            auto gmp = cam_attend(h, gmp_fc_, CamPooling::max);
            out.cam_logit = concat_channels(gap.logit, gmp.logit);
            h = leaky_relu(fuse_(concat_channels(gap.attended, gmp.attended)), T(0.2));
            out.heatmap = channel_sum(h);
        }
        out.patch_logits = head_(h);
        return out;
    }

    const ParamList<T>& params() const { return params_; }

private:
    bool use_cam_ = false;
    ParamList<T> params_;
    std::vector<nn::Conv<T>> convs_;
    nn::Conv<T> fuse_, head_;
    Var<T> gap_fc_, gmp_fc_;
};

/// Both translation directions plus one discriminator stack per domain.
template <class T>
struct ModelBundle {
    NetworkSpec spec;
    Generator<T> g_mri2ct;
    Generator<T> g_ct2mri;
    std::vector<Discriminator<T>> d_ct;
    std::vector<Discriminator<T>> d_mri;

    ParamList<T> generator_params() const {
        ParamList<T> out = g_mri2ct.params();
        out.insert(out.end(), g_ct2mri.params().begin(), g_ct2mri.params().end());
        return out;
    }
    ParamList<T> discriminator_params() const {
        ParamList<T> out;
        for (const auto* stack : {&d_ct, &d_mri})
            for (const auto& d : *stack) out.insert(out.end(), d.params().begin(), d.params().end());
        return out;
    }
    ParamList<T> all_params() const {
        auto out = generator_params();
        auto d = discriminator_params();
        out.insert(out.end(), d.begin(), d.end());
        return out;
    }
    std::size_t parameter_count() const { return count_parameters(all_params()); }

    /// Deep copy; parameter nodes are not shared with the original.
    ModelBundle clone() const;
};

template <class T>
ModelBundle<T> init_bundle(const NetworkSpec& spec) {
    spec.validate();
    std::mt19937_64 rng(spec.seed);
    ModelBundle<T> b;
    b.spec = spec;
    b.g_mri2ct = Generator<T>(spec, rng, "g_mri2ct");
    b.g_ct2mri = Generator<T>(spec, rng, "g_ct2mri");
    for (int s = 0; s < spec.discriminator_scales; ++s) {
        const int layers = spec.discriminator_layers + 2 * s;
        b.d_ct.emplace_back(spec, layers, rng, "d_ct" + std::to_string(s));
        b.d_mri.emplace_back(spec, layers, rng, "d_mri" + std::to_string(s));
    }
    for (const auto& p : b.all_params())
        require(p.var.value().all_finite(), ErrorCode::non_finite, "init_bundle: non-finite parameter");
    return b;
}

template <class T>
ModelBundle<T> ModelBundle<T>::clone() const {
    ModelBundle<T> copy = init_bundle<T>(spec);
    auto src = all_params();
    auto dst = copy.all_params();
    for (std::size_t i = 0; i < src.size(); ++i) dst[i].var.mutable_value() = src[i].var.value();
    return copy;
}

namespace detail {
template <class T>
void check_image_input(const NetworkSpec& spec, const Var<T>& image) {
    const Shape s = image.shape();
    require(s.c == 1 && s.h == spec.image_size && s.w == spec.image_size, ErrorCode::shape_mismatch,
            "network input " + s.str() + " does not match image_size " + std::to_string(spec.image_size));
    require(image.value().all_finite(), ErrorCode::non_finite, "network input contains non-finite values");
}
} // namespace detail

/// Validated generator pass; a non-finite output surfaces as DivergenceError.
template <class T>
GeneratorOutput<T> generator_forward(const Generator<T>& g, const Var<T>& image) {
    detail::check_image_input(g.spec(), image);
    auto out = g.forward(image);
    if (!out.image.value().all_finite()) throw DivergenceError("generator output");
    return out;
}

template <class T>
DiscriminatorOutput<T> discriminator_forward(const NetworkSpec& spec, const Discriminator<T>& d,
                                             const Var<T>& image) {
    detail::check_image_input(spec, image);
    auto out = d.forward(image);
    if (!out.patch_logits.value().all_finite()) throw DivergenceError("discriminator logits");
    return out;
}

} // namespace xmodal
