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
#include <random>
#include <vector>

#include "xmodal/networks.hpp"

namespace xmodal {

struct AdamOptions {
    double learning_rate = 2e-4;
    double beta1 = 0.5;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    double weight_decay = 0.0;
};

/// Adam with L2 weight decay folded into the gradient. Parameters flagged unit_interval are
/// clamped to [0, 1] after each step.
template <class T>
class Adam {
public:
    Adam() = default;
    Adam(ParamList<T> params, AdamOptions options) : params_(std::move(params)), options_(options) {
        for (const auto& p : params_) {
            m_.emplace_back(p.var.shape());
            v_.emplace_back(p.var.shape());
        }
    }

    void zero_grad() {
        for (auto& p : params_) p.var.zero_grad();
    }

    void step() {
        ++t_;
        const double lr = options_.learning_rate;
        const double b1 = options_.beta1, b2 = options_.beta2;
        const double c1 = 1.0 - std::pow(b1, double(t_)), c2 = 1.0 - std::pow(b2, double(t_));
        for (std::size_t i = 0; i < params_.size(); ++i) {
            auto& p = params_[i];
            if (!p.var.node()->grad.size()) continue;
            Tensor<T>& value = p.var.mutable_value();
            const Tensor<T>& grad = p.var.grad();
            T* m = m_[i].data();
            T* v = v_[i].data();
            for (std::size_t k = 0; k < value.size(); ++k) {
                const double g = double(grad[k]) + options_.weight_decay * double(value[k]);
                m[k] = T(b1 * m[k] + (1 - b1) * g);
                v[k] = T(b2 * v[k] + (1 - b2) * g * g);
                if (lr != 0.0) {
                    const double mh = m[k] / c1, vh = v[k] / c2;
                    value[k] = T(value[k] - lr * mh / (std::sqrt(vh) + options_.epsilon));
                }
            }
            if (p.unit_interval)
                for (auto& x : value.vec()) x = std::clamp(x, T(0), T(1));
        }
    }

    const AdamOptions& options() const { return options_; }
    void set_options(AdamOptions o) { options_ = o; }
    long long steps() const { return t_; }
    void set_steps(long long t) { t_ = t; }
    std::vector<Tensor<T>>& first_moments() { return m_; }
    std::vector<Tensor<T>>& second_moments() { return v_; }
    const std::vector<Tensor<T>>& first_moments() const { return m_; }
    const std::vector<Tensor<T>>& second_moments() const { return v_; }
    const ParamList<T>& params() const { return params_; }

private:
    ParamList<T> params_;
    AdamOptions options_;
    std::vector<Tensor<T>> m_, v_;
    long long t_ = 0;
};

/// Replay buffer of past generator outputs, one image (1,C,H,W) per slot.
template <class T>
struct ImagePool {
    int capacity = 50;
    std::vector<Tensor<T>> images;

    bool operator==(const ImagePool&) const = default;
};

template <class T>
Tensor<T> pool_sample(ImagePool<T>& pool, const Tensor<T>& fake, std::mt19937_64& rng) {
    if (pool.capacity <= 0) return fake;
    if (int(pool.images.size()) < pool.capacity) {
        pool.images.push_back(fake);
        return fake;
    }
    if (std::uniform_real_distribution<double>(0.0, 1.0)(rng) < 0.5) return fake;
    const auto idx = std::uniform_int_distribution<std::size_t>(0, pool.images.size() - 1)(rng);
    Tensor<T> old = std::move(pool.images[idx]);
    pool.images[idx] = fake;
    return old;
}

/// Applies pool_sample to each batch item of (N,C,H,W).
template <class T>
Tensor<T> pool_sample_batch(ImagePool<T>& pool, const Tensor<T>& fakes, std::mt19937_64& rng) {
    std::vector<Tensor<T>> out;
    for (int n = 0; n < fakes.shape().n; ++n) out.push_back(pool_sample(pool, fakes.slice_batch(n, 1), rng));
    return stack_batch<T>(out);
}

} // namespace xmodal
