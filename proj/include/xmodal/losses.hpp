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

#include <array>
#include <optional>
#include <string>
#include <utility>

#include "networks.hpp"

namespace xmodal::losses {

inline constexpr double kProbabilityClamp = 1e-12;

struct LossWeights {
    double lambda1 = 10.0;
    double lambda2 = 0.5;
    double lambda3 = 0.0;
    double lambda_mind = 20.0;

    static LossWeights for_variant(Variant v) {
        if (is_ugatit(v)) return {100.0, 100.0, 100.0, 5000.0};
        return {10.0, 0.5, 0.0, 20.0};
    }

    void validate() const {
        require(lambda1 >= 0 && lambda2 >= 0 && lambda3 >= 0 && lambda_mind >= 0, ErrorCode::invalid_argument,
                "loss weights must be nonnegative");
    }
    bool operator==(const LossWeights&) const = default;
};

/// How the least-squares adversarial terms are targeted.
enum class LsqConvention {
    conventional,  // D: real -> 1, fake -> 0; G: fake -> 1
    literal,       // the printed quadratic, D ascending it
};

template <class T>
struct AdversarialPair {
    Var<T> discriminator;  // log form: objective D ascends; lsq form: loss D descends
    Var<T> generator;      // always a loss G descends
};

namespace detail {
template <class T>
Var<T> clamped_log(const Var<T>& p) {
    return ops::log_clamped(p, T(kProbabilityClamp), T(1.0 - kProbabilityClamp));
}
template <class T>
Var<T> one_minus(const Var<T>& p) {
    return ops::add_scalar(ops::scale(p, T(-1)), T(1));
}
template <class T>
Var<T> mean_sq_to(const Var<T>& x, T target) {
    return ops::mean(ops::square(ops::add_scalar(x, -target)));
}
} // namespace detail

/// Log-likelihood adversarial terms from discriminator probabilities.
/// d_objective = mean log D(real) + mean log(1 - D(fake)); g_objective = -mean log D(fake).
template <class T>
AdversarialPair<T> adversarial_log_probs(const Var<T>& p_real, const Var<T>& p_fake) {
    using namespace detail;
    return {ops::add(ops::mean(clamped_log(p_real)), ops::mean(clamped_log(one_minus(p_fake)))),
            ops::scale(ops::mean(clamped_log(p_fake)), T(-1))};
}

/// Same as adversarial_log_probs, from raw logits; 1 - sigmoid(z) is evaluated as sigmoid(-z).
template <class T>
AdversarialPair<T> adversarial_loss_log(const Var<T>& d_real, const Var<T>& d_fake) {
    using namespace detail;
    Var<T> p_real = ops::sigmoid(d_real);
    Var<T> p_fake = ops::sigmoid(d_fake);
    Var<T> q_fake = ops::sigmoid(ops::scale(d_fake, T(-1)));
    return {ops::add(ops::mean(clamped_log(p_real)), ops::mean(clamped_log(q_fake))),
            ops::scale(ops::mean(clamped_log(p_fake)), T(-1))};
}

/// Least-squares adversarial terms on raw logits.
template <class T>
AdversarialPair<T> adversarial_loss_lsq(const Var<T>& d_real, const Var<T>& d_fake,
                                        LsqConvention convention = LsqConvention::conventional) {
    using namespace detail;
    if (convention == LsqConvention::literal) {
        Var<T> objective = ops::add(ops::mean(ops::square(d_real)), mean_sq_to(d_fake, T(1)));
        return {ops::scale(objective, T(-1)), mean_sq_to(d_fake, T(1))};
    }
    return {ops::add(mean_sq_to(d_real, T(1)), mean_sq_to(d_fake, T(0))), mean_sq_to(d_fake, T(1))};
}

template <class T>
Var<T> cycle_loss(const Var<T>& original, const Var<T>& reconstructed) {
    return ops::mean_abs_diff(original, reconstructed);
}

template <class T>
Var<T> identity_loss(const Var<T>& target_domain_input, const Var<T>& mapped) {
    return ops::mean_abs_diff(target_domain_input, mapped);
}

/// -(mean log eta_src(x_src) + mean log(1 - eta_tgt(x_tgt))) from probabilities.
template <class T>
Var<T> cam_loss_generator(const Var<T>& eta_source_on_source, const Var<T>& eta_target_on_target) {
    using namespace detail;
    return ops::scale(ops::add(ops::mean(clamped_log(eta_source_on_source)),
                               ops::mean(clamped_log(one_minus(eta_target_on_target)))),
                      T(-1));
}

/// cam_loss_generator from classifier logits (sigmoid applied, complement via sigmoid(-z)).
template <class T>
Var<T> cam_loss_generator_logits(const Var<T>& source_logits, const Var<T>& target_logits) {
    using namespace detail;
    return ops::scale(ops::add(ops::mean(clamped_log(ops::sigmoid(source_logits))),
                               ops::mean(clamped_log(ops::sigmoid(ops::scale(target_logits, T(-1)))))),
                      T(-1));
}

template <class T>
Var<T> cam_loss_discriminator(const Var<T>& eta_d_real, const Var<T>& eta_d_fake,
                              LsqConvention convention = LsqConvention::conventional) {
    return adversarial_loss_lsq(eta_d_real, eta_d_fake, convention).discriminator;
}

enum class Term {
    adv_g_mri2ct,
    adv_g_ct2mri,
    adv_d_ct,
    adv_d_mri,
    cycle,
    identity,
    cam_g_mri2ct,
    cam_g_ct2mri,
    cam_d_ct,
    cam_d_mri,
    mind,
};
inline constexpr std::size_t kTermCount = 11;

inline const char* to_string(Term t) {
    static constexpr std::array<const char*, kTermCount> names{
        "adv_g_mri2ct", "adv_g_ct2mri", "adv_d_ct",  "adv_d_mri",  "cycle", "identity",
        "cam_g_mri2ct", "cam_g_ct2mri", "cam_d_ct", "cam_d_mri", "mind"};
    return names[std::size_t(t)];
}

inline bool is_generator_term(Term t) {
    return t != Term::adv_d_ct && t != Term::adv_d_mri && t != Term::cam_d_ct && t != Term::cam_d_mri;
}

/// Whether a variant's objective includes `t`.
inline bool term_applies(Variant v, Term t) {
    switch (t) {
    case Term::cam_g_mri2ct:
    case Term::cam_g_ct2mri:
    case Term::cam_d_ct:
    case Term::cam_d_mri: return is_ugatit(v);
    case Term::mind: return has_mind(v);
    default: return true;
    }
}

/// One optional value per term; V is double for reports or Var<T> for training graphs.
template <class V>
struct Components {
    std::array<std::optional<V>, kTermCount> values;

    std::optional<V>& operator[](Term t) { return values[std::size_t(t)]; }
    const std::optional<V>& operator[](Term t) const { return values[std::size_t(t)]; }
};

namespace detail {
inline double lin_add(double a, double b) { return a + b; }
inline double lin_scale(double a, double w) { return a * w; }
template <class T>
Var<T> lin_add(const Var<T>& a, const Var<T>& b) {
    return ops::add(a, b);
}
template <class T>
Var<T> lin_scale(const Var<T>& a, double w) {
    return ops::scale(a, T(w));
}

template <class V>
V weighted_sum(Variant v, const Components<V>& c, const LossWeights& w, bool generator_side) {
    w.validate();
    std::optional<V> total;
    for (std::size_t i = 0; i < kTermCount; ++i) {
        const Term t = Term(i);
        if (is_generator_term(t) != generator_side) continue;
        const bool applies = term_applies(v, t);
        require(applies == c[t].has_value(), ErrorCode::invalid_argument,
                std::string(applies ? "missing" : "unexpected") + " loss component '" + to_string(t) +
                    "' for variant " + xmodal::to_string(v));
        if (!applies) continue;
        double weight = 1.0;
        switch (t) {
        case Term::cycle: weight = w.lambda1; break;
        case Term::identity: weight = w.lambda2; break;
        case Term::cam_g_mri2ct:
        case Term::cam_g_ct2mri:
        case Term::cam_d_ct:
        case Term::cam_d_mri: weight = w.lambda3; break;
        case Term::mind: weight = w.lambda_mind; break;
        default: break;
        }
        V term = weight == 1.0 ? *c[t] : lin_scale(*c[t], weight);
        total = total ? lin_add(*total, term) : term;
    }
    return *total;
}
} // namespace detail

/// Adversarial terms of both directions + lambda1 cycle + lambda2 identity
/// (+ lambda3 generator CAM terms) (+ lambda_mind MIND term).
template <class V>
V generator_total(Variant v, const Components<V>& c, const LossWeights& w) {
    return detail::weighted_sum(v, c, w, true);
}

/// Both discriminators' adversarial losses (+ lambda3 discriminator CAM terms).
template <class V>
V discriminator_total(Variant v, const Components<V>& c, const LossWeights& w) {
    return detail::weighted_sum(v, c, w, false);
}

struct LossReport {
    std::array<double, kTermCount> terms{};
    std::array<bool, kTermCount> present{};
    double generator_total = 0;
    double discriminator_total = 0;

    double operator[](Term t) const { return terms[std::size_t(t)]; }
    bool has(Term t) const { return present[std::size_t(t)]; }

    bool all_finite() const {
        for (double v : terms)
            if (!std::isfinite(v)) return false;
        return std::isfinite(generator_total) && std::isfinite(discriminator_total);
    }
};

inline Components<double> to_components(const LossReport& r) {
    Components<double> c;
    for (std::size_t i = 0; i < kTermCount; ++i)
        if (r.present[i]) c.values[i] = r.terms[i];
    return c;
}

/// Composes the variant objective; requires exactly the components the variant uses.
inline LossReport total_objective(Variant v, const Components<double>& c, const LossWeights& w) {
    LossReport r;
    for (std::size_t i = 0; i < kTermCount; ++i) {
        r.present[i] = c.values[i].has_value();
        r.terms[i] = c.values[i].value_or(0.0);
    }
    r.generator_total = generator_total(v, c, w);
    r.discriminator_total = discriminator_total(v, c, w);
    return r;
}

} // namespace xmodal::losses
