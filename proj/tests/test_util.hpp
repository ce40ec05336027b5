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

#include <cmath>
#include <functional>
#include <random>

#include "xmodal/autograd.hpp"

namespace xmodal::testing {

inline Tensor<double> random_tensor(Shape s, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    Tensor<double> t(s);
    for (auto& v : t.vec()) v = u(rng);
    return t;
}

/// Max relative error between the analytic gradient of `f` at `x` and central differences.
/// The relative error uses max(|fd|, |an|, floor) as the denominator.
inline double gradient_check(const std::function<Var<double>(const Var<double>&)>& f, const Tensor<double>& x,
                             double step = 1e-4, double floor = 1e-6) {
    auto xv = Var<double>::leaf(x, true);
    auto out = f(xv);
    backward(out);
    const Tensor<double> analytic = xv.grad().size() ? xv.grad() : Tensor<double>(x.shape());
    double worst = 0;
    NoGradGuard guard;
    for (std::size_t i = 0; i < x.size(); ++i) {
        Tensor<double> plus = x, minus = x;
        plus[i] += step;
        minus[i] -= step;
        double fp = f(Var<double>::constant(plus)).item();
        double fm = f(Var<double>::constant(minus)).item();
        double fd = (fp - fm) / (2 * step);
        double denom = std::max({std::abs(fd), std::abs(analytic[i]), floor});
        worst = std::max(worst, std::abs(fd - analytic[i]) / denom);
    }
    return worst;
}

/// Same as gradient_check, but perturbs an existing leaf (e.g. a network parameter) in place.
inline double gradient_check_leaf(const std::function<Var<double>()>& f, Var<double> leaf,
                                  std::size_t max_entries = 0, double step = 1e-4, double floor = 1e-6) {
    leaf.zero_grad();
    backward(f());
    const Tensor<double> analytic = leaf.grad().size() ? leaf.grad() : Tensor<double>(leaf.shape());
    NoGradGuard guard;
    double worst = 0;
    std::size_t n = max_entries ? std::min(max_entries, leaf.value().size()) : leaf.value().size();
    for (std::size_t i = 0; i < n; ++i) {
        double orig = leaf.value()[i];
        leaf.mutable_value()[i] = orig + step;
        double fp = f().item();
        leaf.mutable_value()[i] = orig - step;
        double fm = f().item();
        leaf.mutable_value()[i] = orig;
        double fd = (fp - fm) / (2 * step);
        double denom = std::max({std::abs(fd), std::abs(analytic[i]), floor});
        worst = std::max(worst, std::abs(fd - analytic[i]) / denom);
    }
    return worst;
}

} // namespace xmodal::testing
