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
#include <charconv>
#include <cstdio>
#include <filesystem>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "xmodal/binio.hpp"
#include "xmodal/data.hpp"
#include "xmodal/io.hpp"
#include "xmodal/losses.hpp"
#include "xmodal/mind.hpp"
#include "xmodal/networks.hpp"
#include "xmodal/optim.hpp"

namespace xmodal::train {

namespace fs = std::filesystem;
using Real = float;

inline constexpr const char* kCodeVersion = "xmodal 1.0.0";

// ---------------------------------------------------------------------------
// Configuration

struct TrainConfig {
    Variant variant = Variant::ugatit_mind;
    losses::LossWeights weights = losses::LossWeights::for_variant(Variant::ugatit_mind);
    double learning_rate = 1e-4;
    double beta1 = 0.5;
    double beta2 = 0.999;
    int epochs = 100;
    /// Step budget; 0 runs the full epoch count.
    long long max_steps = 0;
    int batch_size = 1;
    int image_size = 64;
    std::uint64_t seed = 0;
    int replay_pool_size = 50;
    int checkpoint_every = 500;
    double weight_decay = 1e-4;
    int base_channels = 8;
    int downsample_count = 2;
    int residual_block_count = 2;
    int discriminator_scales = 1;
    int discriminator_layers = 3;
    losses::LsqConvention lsq_convention = losses::LsqConvention::conventional;

    static TrainConfig for_variant(Variant v) {
        TrainConfig c;
        c.variant = v;
        c.weights = losses::LossWeights::for_variant(v);
        if (is_ugatit(v)) {
            c.learning_rate = 1e-4;
            c.epochs = 100;
            c.weight_decay = 1e-4;
        } else {
            c.learning_rate = 2e-4;
            c.epochs = 1000;
            c.weight_decay = 0.0;
        }
        return c;
    }

    /// Desk-scale profile: 64x64 images, 2000 steps.
    static TrainConfig desk(Variant v) {
        TrainConfig c = for_variant(v);
        c.max_steps = 2000;
        return c;
    }

    NetworkSpec network_spec() const {
        NetworkSpec s;
        s.image_size = image_size;
        s.base_channels = base_channels;
        s.downsample_count = downsample_count;
        s.residual_block_count = residual_block_count;
        s.discriminator_scales = discriminator_scales;
        s.discriminator_layers = discriminator_layers;
        s.seed = seed;
        return NetworkSpec::for_variant(variant, s);
    }

    AdamOptions adam() const { return {learning_rate, beta1, beta2, 1e-8, weight_decay}; }

    void validate() const {
        require(learning_rate > 0 && std::isfinite(learning_rate), ErrorCode::invalid_argument,
                "learning_rate must be > 0");
        require(epochs >= 1, ErrorCode::invalid_argument, "epochs must be >= 1");
        require(max_steps >= 0, ErrorCode::invalid_argument, "max_steps must be >= 0");
        require(replay_pool_size >= 0, ErrorCode::invalid_argument, "replay_pool_size must be >= 0");
        require(batch_size >= 1, ErrorCode::invalid_argument, "batch_size must be >= 1");
        require(checkpoint_every >= 1, ErrorCode::invalid_argument, "checkpoint_every must be >= 1");
        require(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1, ErrorCode::invalid_argument,
                "Adam betas must lie in [0, 1)");
        require(weight_decay >= 0, ErrorCode::invalid_argument, "weight_decay must be >= 0");
        weights.validate();
        network_spec().validate();
    }

    bool operator==(const TrainConfig&) const = default;
};

inline const std::vector<std::string>& config_keys() {
    static const std::vector<std::string> keys{
        "variant",          "lambda1",          "lambda2",         "lambda3",
        "lambda_mind",      "learning_rate",    "beta1",           "beta2",
        "epochs",           "max_steps",        "batch_size",      "image_size",
        "seed",             "replay_pool_size", "checkpoint_every", "weight_decay",
        "base_channels",    "downsample_count", "residual_block_count", "discriminator_scales",
        "discriminator_layers", "lsq_convention"};
    return keys;
}

namespace detail {

inline std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

template <class N>
N parse_number(const std::string& key, const std::string& text) {
    N v{};
    const char* first = text.data();
    const char* last = text.data() + text.size();
    auto [ptr, ec] = std::from_chars(first, last, v);
    require(ec == std::errc() && ptr == last, ErrorCode::invalid_argument,
            "config key '" + key + "': cannot parse '" + text + "'");
    return v;
}

inline std::string trim(std::string s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

} // namespace detail

inline std::map<std::string, std::string> to_map(const TrainConfig& c) {
    using detail::fmt_double;
    return {{"variant", to_string(c.variant)},
            {"lambda1", fmt_double(c.weights.lambda1)},
            {"lambda2", fmt_double(c.weights.lambda2)},
            {"lambda3", fmt_double(c.weights.lambda3)},
            {"lambda_mind", fmt_double(c.weights.lambda_mind)},
            {"learning_rate", fmt_double(c.learning_rate)},
            {"beta1", fmt_double(c.beta1)},
            {"beta2", fmt_double(c.beta2)},
            {"epochs", std::to_string(c.epochs)},
            {"max_steps", std::to_string(c.max_steps)},
            {"batch_size", std::to_string(c.batch_size)},
            {"image_size", std::to_string(c.image_size)},
            {"seed", std::to_string(c.seed)},
            {"replay_pool_size", std::to_string(c.replay_pool_size)},
            {"checkpoint_every", std::to_string(c.checkpoint_every)},
            {"weight_decay", fmt_double(c.weight_decay)},
            {"base_channels", std::to_string(c.base_channels)},
            {"downsample_count", std::to_string(c.downsample_count)},
            {"residual_block_count", std::to_string(c.residual_block_count)},
            {"discriminator_scales", std::to_string(c.discriminator_scales)},
            {"discriminator_layers", std::to_string(c.discriminator_layers)},
            {"lsq_convention", c.lsq_convention == losses::LsqConvention::literal ? "literal" : "conventional"}};
}

/// Builds a config from key=value pairs: `variant` selects the defaults, every other key overrides them.
inline TrainConfig from_map(const std::map<std::string, std::string>& kv) {
    using detail::parse_number;
    for (const auto& [k, _] : kv)
        require(std::find(config_keys().begin(), config_keys().end(), k) != config_keys().end(),
                ErrorCode::invalid_argument, "unknown config key '" + k + "'");
    TrainConfig c;
    if (auto it = kv.find("variant"); it != kv.end()) c = TrainConfig::for_variant(parse_variant(it->second));
    else c = TrainConfig::for_variant(c.variant);
    for (const auto& [k, v] : kv) {
        if (k == "variant") continue;
        else if (k == "lambda1") c.weights.lambda1 = parse_number<double>(k, v);
        else if (k == "lambda2") c.weights.lambda2 = parse_number<double>(k, v);
        else if (k == "lambda3") c.weights.lambda3 = parse_number<double>(k, v);
        else if (k == "lambda_mind") c.weights.lambda_mind = parse_number<double>(k, v);
        else if (k == "learning_rate") c.learning_rate = parse_number<double>(k, v);
        else if (k == "beta1") c.beta1 = parse_number<double>(k, v);
        else if (k == "beta2") c.beta2 = parse_number<double>(k, v);
        else if (k == "epochs") c.epochs = parse_number<int>(k, v);
        else if (k == "max_steps") c.max_steps = parse_number<long long>(k, v);
        else if (k == "batch_size") c.batch_size = parse_number<int>(k, v);
        else if (k == "image_size") c.image_size = parse_number<int>(k, v);
        else if (k == "seed") c.seed = parse_number<std::uint64_t>(k, v);
        else if (k == "replay_pool_size") c.replay_pool_size = parse_number<int>(k, v);
        else if (k == "checkpoint_every") c.checkpoint_every = parse_number<int>(k, v);
        else if (k == "weight_decay") c.weight_decay = parse_number<double>(k, v);
        else if (k == "base_channels") c.base_channels = parse_number<int>(k, v);
        else if (k == "downsample_count") c.downsample_count = parse_number<int>(k, v);
        else if (k == "residual_block_count") c.residual_block_count = parse_number<int>(k, v);
        else if (k == "discriminator_scales") c.discriminator_scales = parse_number<int>(k, v);
        else if (k == "discriminator_layers") c.discriminator_layers = parse_number<int>(k, v);
        else if (k == "lsq_convention") {
            require(v == "conventional" || v == "literal", ErrorCode::invalid_argument,
                    "lsq_convention must be 'conventional' or 'literal'");
            c.lsq_convention = v == "literal" ? losses::LsqConvention::literal : losses::LsqConvention::conventional;
        }
    }
    c.validate();
    return c;
}

/// Flat `key = value` lines; `#` starts a comment.
inline std::map<std::string, std::string> parse_config_text(const std::string& text) {
    std::map<std::string, std::string> kv;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        require(eq != std::string::npos, ErrorCode::invalid_argument,
                "config line " + std::to_string(lineno) + ": expected key = value");
        std::string key = detail::trim(line.substr(0, eq)), value = detail::trim(line.substr(eq + 1));
        require(!key.empty() && !value.empty(), ErrorCode::invalid_argument,
                "config line " + std::to_string(lineno) + ": empty key or value");
        kv[key] = value;
    }
    return kv;
}

// ---------------------------------------------------------------------------
// State

struct Batch {
    Tensor<Real> images;  // (N,1,S,S)
    std::vector<std::string> case_ids;
};

struct TrainState {
    Variant variant = Variant::ugatit_mind;
    long long step = 0;
    ModelBundle<Real> bundle;
    Adam<Real> opt_g;
    Adam<Real> opt_d;
    ImagePool<Real> pool_ct;
    ImagePool<Real> pool_mri;
    std::mt19937_64 rng;
};

inline TrainState init_state(const TrainConfig& cfg) {
    TrainState s;
    s.variant = cfg.variant;
    s.bundle = init_bundle<Real>(cfg.network_spec());
    s.opt_g = Adam<Real>(s.bundle.generator_params(), cfg.adam());
    s.opt_d = Adam<Real>(s.bundle.discriminator_params(), cfg.adam());
    s.pool_ct.capacity = s.pool_mri.capacity = cfg.replay_pool_size;
    s.rng.seed(cfg.seed ^ 0x243f6a8885a308d3ULL);
    return s;
}

inline constexpr char kCheckpointMagic[] = "CKPT";
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

inline void write_spec(binio::Writer& w, const NetworkSpec& s) {
    for (int v : {s.image_size, s.base_channels, s.downsample_count, s.residual_block_count, s.discriminator_scales,
                  s.discriminator_layers, int(s.use_cam), int(s.encoder_norm), int(s.decoder_norm),
                  int(s.upsample_norm)})
        w.pod(std::int32_t(v));
    w.u64(s.seed);
}

inline NetworkSpec read_spec(binio::Reader& r) {
    NetworkSpec s;
    s.image_size = r.pod<std::int32_t>();
    s.base_channels = r.pod<std::int32_t>();
    s.downsample_count = r.pod<std::int32_t>();
    s.residual_block_count = r.pod<std::int32_t>();
    s.discriminator_scales = r.pod<std::int32_t>();
    s.discriminator_layers = r.pod<std::int32_t>();
    s.use_cam = r.pod<std::int32_t>() != 0;
    s.encoder_norm = Norm(r.pod<std::int32_t>());
    s.decoder_norm = Norm(r.pod<std::int32_t>());
    s.upsample_norm = Norm(r.pod<std::int32_t>());
    s.seed = r.u64();
    return s;
}

inline void write_adam(binio::Writer& w, const Adam<Real>& a) {
    w.i64(a.steps());
    w.u64(a.first_moments().size());
    for (std::size_t i = 0; i < a.first_moments().size(); ++i) {
        w.tensor(a.first_moments()[i]);
        w.tensor(a.second_moments()[i]);
    }
}

inline void read_adam(binio::Reader& r, Adam<Real>& a) {
    a.set_steps(r.i64());
    const auto n = r.u64();
    require(n == a.first_moments().size(), ErrorCode::spec_mismatch, "optimizer moment count mismatch");
    for (std::size_t i = 0; i < n; ++i) {
        auto m = r.tensor<Real>();
        auto v = r.tensor<Real>();
        require(m.shape() == a.first_moments()[i].shape() && v.shape() == m.shape(), ErrorCode::spec_mismatch,
                "optimizer moment shape mismatch");
        a.first_moments()[i] = std::move(m);
        a.second_moments()[i] = std::move(v);
    }
}

inline void write_pool(binio::Writer& w, const ImagePool<Real>& p) {
    w.pod(std::int32_t(p.capacity));
    w.u64(p.images.size());
    for (const auto& t : p.images) w.tensor(t);
}

inline void read_pool(binio::Reader& r, ImagePool<Real>& p) {
    p.capacity = r.pod<std::int32_t>();
    const auto n = r.u64();
    require(n <= std::uint64_t(std::max(p.capacity, 0)), ErrorCode::corrupt, "replay pool over capacity");
    p.images.clear();
    for (std::size_t i = 0; i < n; ++i) p.images.push_back(r.tensor<Real>());
}

} // namespace detail

inline std::string serialize_state(const TrainState& s) {
    binio::Writer w;
    w.str(to_string(s.variant));
    detail::write_spec(w, s.bundle.spec);
    w.i64(s.step);
    std::ostringstream rng;
    rng << s.rng;
    w.str(rng.str());
    const auto params = s.bundle.all_params();
    w.u64(params.size());
    for (const auto& p : params) {
        w.str(p.name);
        w.tensor(p.var.value());
    }
    detail::write_adam(w, s.opt_g);
    detail::write_adam(w, s.opt_d);
    detail::write_pool(w, s.pool_ct);
    detail::write_pool(w, s.pool_mri);
    return binio::seal(std::string_view(kCheckpointMagic, 4), kCheckpointVersion, w.bytes());
}

/// Restores a state; `expected` (when given) must match the stored variant and network spec.
inline TrainState deserialize_state(std::string_view bytes, const TrainConfig* expected = nullptr) {
    const std::string payload = binio::unseal(bytes, std::string_view(kCheckpointMagic, 4), kCheckpointVersion);
    binio::Reader r(payload);
    TrainState s;
    s.variant = parse_variant(r.str());
    const NetworkSpec spec = detail::read_spec(r);
    if (expected) {
        require(expected->variant == s.variant, ErrorCode::spec_mismatch,
                std::string("checkpoint variant ") + to_string(s.variant) + " does not match " +
                    to_string(expected->variant));
        require(expected->network_spec() == spec, ErrorCode::spec_mismatch,
                "checkpoint network spec does not match the configuration");
    }
    spec.validate();
    s.step = r.i64();
    std::istringstream rng(r.str());
    rng >> s.rng;
    require(!rng.fail(), ErrorCode::corrupt, "checkpoint RNG state unreadable");
    s.bundle = init_bundle<Real>(spec);
    auto params = s.bundle.all_params();
    require(r.u64() == params.size(), ErrorCode::spec_mismatch, "checkpoint parameter count mismatch");
    for (auto& p : params) {
        require(r.str() == p.name, ErrorCode::spec_mismatch, "checkpoint parameter order mismatch at " + p.name);
        auto t = r.tensor<Real>();
        require(t.shape() == p.var.shape(), ErrorCode::spec_mismatch, "checkpoint shape mismatch for " + p.name);
        p.var.mutable_value() = std::move(t);
    }
    const AdamOptions opts = expected ? expected->adam() : AdamOptions{};
    s.opt_g = Adam<Real>(s.bundle.generator_params(), opts);
    s.opt_d = Adam<Real>(s.bundle.discriminator_params(), opts);
    detail::read_adam(r, s.opt_g);
    detail::read_adam(r, s.opt_d);
    detail::read_pool(r, s.pool_ct);
    detail::read_pool(r, s.pool_mri);
    require(r.done(), ErrorCode::corrupt, "checkpoint has trailing bytes");
    return s;
}

inline void save_checkpoint(const TrainState& s, const fs::path& path) { io::atomic_write(path, serialize_state(s)); }

inline TrainState load_checkpoint(const fs::path& path, const TrainConfig* expected = nullptr) {
    return deserialize_state(io::read_file(path), expected);
}

inline TrainState clone_state(const TrainState& s) { return deserialize_state(serialize_state(s)); }

// ---------------------------------------------------------------------------
// One optimisation step

inline void check_unpaired(const Batch& mri, const Batch& ct) {
    require(mri.images.shape().n == int(mri.case_ids.size()) && ct.images.shape().n == int(ct.case_ids.size()),
            ErrorCode::invalid_argument, "batch case ids do not match batch size");
    for (const auto& a : mri.case_ids)
        for (const auto& b : ct.case_ids)
            require(a != b, ErrorCode::unpaired_violation, "MRI and CT batches share case id " + a);
}

namespace detail {

inline void set_trainable(const ParamList<Real>& params, bool on) {
    for (auto p : params) p.var.set_requires_grad(on);
}

template <class F>
Var<Real> sum_over(std::size_t n, F f) {
    Var<Real> total = f(0);
    for (std::size_t i = 1; i < n; ++i) total = ops::add(total, f(i));
    return total;
}

/// Component graphs keyed by term; finite-checked as they are recorded.
struct Recorder {
    losses::Components<Var<Real>> graphs;
    void put(losses::Term t, Var<Real> v) {
        if (!std::isfinite(v.item())) throw DivergenceError(losses::to_string(t));
        graphs[t] = std::move(v);
    }
};

} // namespace detail

/// One discriminator update on real batches and pool-sampled fakes, then one generator update.
inline losses::LossReport train_step(TrainState& state, const Batch& mri, const Batch& ct, const TrainConfig& cfg) {
    using losses::Term;
    using namespace ops;
    check_unpaired(mri, ct);
    require(cfg.variant == state.variant, ErrorCode::spec_mismatch, "config variant differs from state");
    require(cfg.learning_rate >= 0 && std::isfinite(cfg.learning_rate), ErrorCode::invalid_argument,
            "learning_rate must be finite and >= 0");
    const Variant v = state.variant;
    auto& b = state.bundle;
    const bool log_form = !is_ugatit(v);
    const auto conv = cfg.lsq_convention;
    state.opt_g.set_options(cfg.adam());
    state.opt_d.set_options(cfg.adam());

    const auto xm = Var<Real>::constant(mri.images);
    const auto xc = Var<Real>::constant(ct.images);

    auto d_adv = [&](const Var<Real>& real, const Var<Real>& fake) {
        if (log_form) return scale(losses::adversarial_loss_log(real, fake).discriminator, Real(-1));
        return losses::adversarial_loss_lsq(real, fake, conv).discriminator;
    };
    auto g_adv = [&](const Var<Real>& fake) {
        if (log_form) return losses::adversarial_loss_log(fake, fake).generator;
        return losses::adversarial_loss_lsq(fake, fake, conv).generator;
    };

    // Discriminator update.
    detail::Recorder d_rec;
    {
        Tensor<Real> fake_ct, fake_mri;
        {
            NoGradGuard ng;
            fake_ct = generator_forward(b.g_mri2ct, xm).image.value();
            fake_mri = generator_forward(b.g_ct2mri, xc).image.value();
        }
        const auto pooled_ct = Var<Real>::constant(pool_sample_batch(state.pool_ct, fake_ct, state.rng));
        const auto pooled_mri = Var<Real>::constant(pool_sample_batch(state.pool_mri, fake_mri, state.rng));
        detail::set_trainable(b.discriminator_params(), true);
        auto domain = [&](const std::vector<Discriminator<Real>>& ds, const Var<Real>& real, const Var<Real>& fake,
                          Term adv, Term cam) {
            std::vector<DiscriminatorOutput<Real>> r, f;
            for (const auto& d : ds) {
                r.push_back(discriminator_forward(b.spec, d, real));
                f.push_back(discriminator_forward(b.spec, d, fake));
            }
            d_rec.put(adv, detail::sum_over(ds.size(), [&](std::size_t i) {
                          return d_adv(r[i].patch_logits, f[i].patch_logits);
                      }));
            if (is_ugatit(v))
                d_rec.put(cam, detail::sum_over(ds.size(), [&](std::size_t i) {
                              return losses::cam_loss_discriminator(r[i].cam_logit, f[i].cam_logit, conv);
                          }));
        };
        domain(b.d_ct, xc, pooled_ct, Term::adv_d_ct, Term::cam_d_ct);
        domain(b.d_mri, xm, pooled_mri, Term::adv_d_mri, Term::cam_d_mri);
        auto total = losses::discriminator_total(v, d_rec.graphs, cfg.weights);
        if (!std::isfinite(total.item())) throw DivergenceError("discriminator_total");
        state.opt_d.zero_grad();
        backward(total);
        state.opt_d.step();
    }

    // Generator update against the refreshed discriminators.
    detail::Recorder g_rec;
    detail::set_trainable(b.discriminator_params(), false);
    try {
        auto gm = generator_forward(b.g_mri2ct, xm);
        auto gc = generator_forward(b.g_ct2mri, xc);
        auto rec_mri = generator_forward(b.g_ct2mri, gm.image).image;
        auto rec_ct = generator_forward(b.g_mri2ct, gc.image).image;
        auto id_ct = generator_forward(b.g_mri2ct, xc);
        auto id_mri = generator_forward(b.g_ct2mri, xm);

        auto adversarial = [&](const std::vector<Discriminator<Real>>& ds, const Var<Real>& fake) {
            return detail::sum_over(ds.size(), [&](std::size_t i) {
                auto out = discriminator_forward(b.spec, ds[i], fake);
                Var<Real> term = g_adv(out.patch_logits);
                if (is_ugatit(v))
                    term = add(term, losses::adversarial_loss_lsq(out.cam_logit, out.cam_logit, conv).generator);
                return term;
            });
        };
        g_rec.put(Term::adv_g_mri2ct, adversarial(b.d_ct, gm.image));
        g_rec.put(Term::adv_g_ct2mri, adversarial(b.d_mri, gc.image));
        g_rec.put(Term::cycle, add(losses::cycle_loss(xm, rec_mri), losses::cycle_loss(xc, rec_ct)));
        g_rec.put(Term::identity,
                  add(losses::identity_loss(xc, id_ct.image), losses::identity_loss(xm, id_mri.image)));
        if (is_ugatit(v)) {
            g_rec.put(Term::cam_g_mri2ct, losses::cam_loss_generator_logits(gm.cam_logit, id_ct.cam_logit));
            g_rec.put(Term::cam_g_ct2mri, losses::cam_loss_generator_logits(gc.cam_logit, id_mri.cam_logit));
        }
        if (has_mind(v)) {
            const mind::MindConfig mcfg;
            g_rec.put(Term::mind, add(mind::loss(xc, gc.image, mcfg), mind::loss(xm, gm.image, mcfg)));
        }
        auto total = losses::generator_total(v, g_rec.graphs, cfg.weights);
        if (!std::isfinite(total.item())) throw DivergenceError("generator_total");
        state.opt_g.zero_grad();
        backward(total);
        state.opt_g.step();
    } catch (...) {
        detail::set_trainable(b.discriminator_params(), true);
        throw;
    }
    detail::set_trainable(b.discriminator_params(), true);

    for (const auto& p : b.all_params())
        if (!p.var.value().all_finite()) throw DivergenceError("parameter " + p.name);

    losses::Components<double> values;
    for (std::size_t i = 0; i < losses::kTermCount; ++i) {
        const auto& g = g_rec.graphs.values[i] ? g_rec.graphs.values[i] : d_rec.graphs.values[i];
        if (g) values.values[i] = double(g->item());
    }
    ++state.step;
    return losses::total_objective(v, values, cfg.weights);
}

// ---------------------------------------------------------------------------
// Runs

/// Per-epoch batch order: one shuffled permutation; CT items are read at a random cyclic offset
/// in [B, n - B] so no batch pairs a case with itself.
inline std::vector<std::pair<std::vector<int>, std::vector<int>>> plan_epoch(int n_cases, int batch,
                                                                             std::uint64_t seed, long long epoch) {
    require(n_cases >= 2 * batch, ErrorCode::invalid_argument, "need at least two batches' worth of cases");
    std::seed_seq seq{std::uint32_t(seed), std::uint32_t(seed >> 32), std::uint32_t(epoch),
                      std::uint32_t(epoch >> 32), 0x5eedu};
    std::mt19937_64 rng(seq);
    std::vector<int> perm(n_cases);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    const int offset = std::uniform_int_distribution<int>(batch, n_cases - batch)(rng);
    std::vector<std::pair<std::vector<int>, std::vector<int>>> plan;
    for (int k = 0; k + batch <= n_cases; k += batch) {
        std::vector<int> m, c;
        for (int j = 0; j < batch; ++j) {
            m.push_back(perm[k + j]);
            c.push_back(perm[(k + j + offset) % n_cases]);
        }
        plan.emplace_back(std::move(m), std::move(c));
    }
    return plan;
}

inline Batch make_batch(const std::vector<data::PreprocessedCase>& cases, const std::vector<int>& idx,
                        bool ct_domain) {
    std::vector<Tensor<Real>> items;
    Batch b;
    for (int i : idx) {
        const auto& img = ct_domain ? cases[i].ct : cases[i].mri;
        items.emplace_back(Shape{1, 1, img.height(), img.width()}, img.values.values);
        b.case_ids.push_back(cases[i].case_id);
    }
    b.images = stack_batch<Real>(items);
    return b;
}

inline std::string csv_header() {
    std::string h = "step,epoch";
    for (std::size_t i = 0; i < losses::kTermCount; ++i) h += std::string(",") + losses::to_string(losses::Term(i));
    return h + ",generator_total,discriminator_total";
}

inline std::string csv_row(long long step, long long epoch, const losses::LossReport& r) {
    auto num = [](double v) {
        char buf[40];
        std::snprintf(buf, sizeof buf, "%.9g", v);
        return std::string(buf);
    };
    std::string row = std::to_string(step) + "," + std::to_string(epoch);
    for (std::size_t i = 0; i < losses::kTermCount; ++i) row += "," + (r.present[i] ? num(r.terms[i]) : "");
    return row + "," + num(r.generator_total) + "," + num(r.discriminator_total);
}

inline std::string split_hash(const data::DatasetSplit& s) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%08x", binio::crc32(data::to_json(s).dump()));
    return buf;
}

inline std::string test_split_hash(const std::vector<std::string>& ids) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%08x", binio::crc32(nlohmann::json(ids).dump()));
    return buf;
}

inline nlohmann::json manifest(const TrainConfig& cfg, const data::DatasetSplit& split, std::size_t params) {
    nlohmann::json config;
    for (const auto& [k, v] : to_map(cfg)) config[k] = v;
    const bool cam = is_ugatit(cfg.variant);
    return {
        {"code_version", kCodeVersion},
        {"config", config},
        {"design", {{"adversarial_form", cam ? "least_squares" : "log_likelihood"},
                    {"cam_paths", cam},
                    {"mind_term", has_mind(cfg.variant)}}},
        {"conventions", {{"lsq_targets", to_map(cfg).at("lsq_convention")},
                         {"mind_reduction", "mean_l1"},
                         {"mind_patch_radius", mind::MindConfig{}.patch_radius},
                         {"mind_neighbourhood", "3x3 block with centre"},
                         {"mind_boundary", "clamp"},
                         {"update_order", "discriminator_then_generator"},
                         {"generator_cam_adversarial_weight", 1.0},
                         {"optimizer", "adam_l2"},
                         {"replay_pool", cfg.replay_pool_size},
                         {"precision", "float32"}}},
        {"network", {{"decoder_norm", to_string(cfg.network_spec().decoder_norm)},
                     {"upsample_norm", to_string(cfg.network_spec().upsample_norm)},
                     {"parameter_count", params}}},
        {"split", {{"hash", split_hash(split)},
                   {"test_hash", test_split_hash(split.test_ids)},
                   {"train", split.train_ids.size()},
                   {"val", split.val_ids.size()},
                   {"test", split.test_ids.size()}}},
        {"split_ids", data::to_json(split)},
    };
}

/// 8-bit binary PGM of a grid of tiles mapped from [-1, 1].
inline std::string encode_pgm(const std::vector<std::vector<const data::Grid*>>& rows) {
    const int th = rows.at(0).at(0)->height, tw = rows[0][0]->width;
    const int h = th * int(rows.size()), w = tw * int(rows[0].size());
    std::string out = "P5\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
    const std::size_t base = out.size();
    out.resize(base + std::size_t(h) * w);
    for (std::size_t r = 0; r < rows.size(); ++r)
        for (std::size_t c = 0; c < rows[r].size(); ++c)
            for (int y = 0; y < th; ++y)
                for (int x = 0; x < tw; ++x) {
                    const double v = std::clamp(double(rows[r][c]->at(y, x)), -1.0, 1.0);
                    out[base + (std::size_t(r) * th + y) * w + c * tw + x] = char(std::lround((v + 1) * 127.5));
                }
    return out;
}

inline data::Grid to_grid(const Tensor<Real>& t, int n = 0) {
    data::Grid g(t.shape().h, t.shape().w);
    std::copy(t.plane(n, 0), t.plane(n, 0) + t.shape().plane(), g.values.begin());
    return g;
}

inline void write_samples(const TrainState& s, const std::vector<data::PreprocessedCase>& val, const fs::path& path) {
    NoGradGuard ng;
    std::vector<data::Grid> keep;
    keep.reserve(val.size() * 2);
    std::vector<std::vector<const data::Grid*>> rows;
    for (const auto& c : val) {
        auto mri = Var<Real>::constant(Tensor<Real>(Shape{1, 1, c.mri.height(), c.mri.width()}, c.mri.values.values));
        auto ct = Var<Real>::constant(Tensor<Real>(Shape{1, 1, c.ct.height(), c.ct.width()}, c.ct.values.values));
        keep.push_back(to_grid(s.bundle.g_mri2ct.forward(mri).image.value()));
        keep.push_back(to_grid(s.bundle.g_ct2mri.forward(ct).image.value()));
    }
    for (std::size_t i = 0; i < val.size(); ++i)
        rows.push_back({&val[i].mri.values, &keep[2 * i], &val[i].ct.values, &keep[2 * i + 1]});
    if (!rows.empty()) io::atomic_write(path, encode_pgm(rows));
}

struct RunOptions {
    bool resume = true;
    int sample_cases = 4;
    /// Stop after this many steps in this invocation (0 = run to the budget); used to simulate interruption.
    long long stop_after = 0;
    /// Log a progress line to stderr every this many steps (0 = silent).
    long long progress_every = 0;
};

inline long long total_steps(const TrainConfig& cfg, std::size_t train_cases) {
    const long long per_epoch = (long long)train_cases / cfg.batch_size;
    long long total = per_epoch * cfg.epochs;
    if (cfg.max_steps > 0) total = std::min(total, cfg.max_steps);
    return total;
}

inline std::vector<data::PreprocessedCase> load_cases(const fs::path& root, const std::vector<std::string>& ids,
                                                      int size) {
    std::vector<data::PreprocessedCase> out;
    out.reserve(ids.size());
    for (const auto& id : ids) {
        out.push_back(data::load_preprocessed(root / id, size));
        out.back().case_id = id;
    }
    return out;
}

/// Trains to the configured budget, resuming from `out/checkpoints/latest.ckpt` when present.
inline fs::path train_run(const TrainConfig& cfg, const data::DatasetSplit& split, const fs::path& data_root,
                          const fs::path& out, RunOptions opts = {}) {
    cfg.validate();
    const auto train_cases = load_cases(data_root, split.train_ids, cfg.image_size);
    std::vector<std::string> val_ids(split.val_ids.begin(),
                                     split.val_ids.begin() + std::min<std::size_t>(split.val_ids.size(),
                                                                                   std::size_t(opts.sample_cases)));
    const auto val_cases = load_cases(data_root, val_ids, cfg.image_size);
    const long long budget = total_steps(cfg, train_cases.size());
    const long long per_epoch = (long long)train_cases.size() / cfg.batch_size;

    const fs::path ckpt_dir = out / "checkpoints";
    const fs::path latest = ckpt_dir / "latest.ckpt";
    fs::create_directories(ckpt_dir);
    fs::create_directories(out / "samples");

    TrainState state = opts.resume && fs::exists(latest) ? load_checkpoint(latest, &cfg) : init_state(cfg);
    io::atomic_write(out / "manifest.json", manifest(cfg, split, state.bundle.parameter_count()).dump(2) + "\n");

    std::vector<std::string> rows;
    if (state.step > 0 && fs::exists(out / "losses.csv")) {
        std::istringstream in(io::read_file(out / "losses.csv"));
        std::string line;
        std::getline(in, line);
        while (std::getline(in, line) && (long long)rows.size() < state.step) rows.push_back(line);
        require((long long)rows.size() == state.step, ErrorCode::corrupt, "losses.csv is shorter than the checkpoint");
    }
    auto flush_csv = [&] {
        std::string text = csv_header() + "\n";
        for (const auto& r : rows) text += r + "\n";
        io::atomic_write(out / "losses.csv", text);
    };
    auto checkpoint = [&] {
        char name[32];
        std::snprintf(name, sizeof name, "step_%07lld.ckpt", state.step);
        const std::string bytes = serialize_state(state);
        io::atomic_write(ckpt_dir / name, bytes);
        io::atomic_write(latest, bytes);
        std::snprintf(name, sizeof name, "step_%07lld.pgm", state.step);
        write_samples(state, val_cases, out / "samples" / name);
        flush_csv();
    };

    long long planned_epoch = -1;
    std::vector<std::pair<std::vector<int>, std::vector<int>>> plan;
    long long ran = 0;
    while (state.step < budget && (opts.stop_after == 0 || ran < opts.stop_after)) {
        const long long epoch = state.step / per_epoch;
        if (epoch != planned_epoch) {
            plan = plan_epoch(int(train_cases.size()), cfg.batch_size, cfg.seed, epoch);
            planned_epoch = epoch;
        }
        const auto& [mi, ci] = plan[std::size_t(state.step % per_epoch)];
        const long long step = state.step;
        auto report = train_step(state, make_batch(train_cases, mi, false), make_batch(train_cases, ci, true), cfg);
        rows.push_back(csv_row(step, epoch, report));
        ++ran;
        if (opts.progress_every > 0 && state.step % opts.progress_every == 0)
            std::fprintf(stderr, "[%s] step %lld/%lld  G %.4f  D %.4f\n", to_string(cfg.variant), state.step, budget,
                         report.generator_total, report.discriminator_total);
        if (state.step % cfg.checkpoint_every == 0 || state.step == budget) checkpoint();
    }
    if (state.step % cfg.checkpoint_every != 0 && state.step != budget) checkpoint();
    return out;
}

} // namespace xmodal::train
