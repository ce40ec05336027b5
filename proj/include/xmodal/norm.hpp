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

#include <optional>

#include "ops.hpp"

namespace xmodal::ops {

inline constexpr double kNormEpsilon = 1e-5;

/// gamma * (rho * IN(x) + (1 - rho) * LN(x)) + beta.
///
/// IN normalizes each (sample, channel) plane; LN normalizes each sample over all channels
/// and positions. Both use the biased variance plus `kNormEpsilon`. gamma/beta may be per
/// sample (N,C,1,1) or shared (1,C,1,1); rho is (1,C,1,1) and is clamped into [0,1].
/// Absent gamma/beta/rho default to 1/0/1, so `blend_norm(x)` is plain instance norm.
template <class T>
Var<T> blend_norm(const Var<T>& x, const std::type_identity_t<std::optional<Var<T>>>& gamma = std::nullopt,
                  const std::type_identity_t<std::optional<Var<T>>>& beta = std::nullopt,
                  const std::type_identity_t<std::optional<Var<T>>>& rho = std::nullopt) {
    const Shape s = x.shape();
    auto check_param = [&](const std::optional<Var<T>>& p, bool per_sample_ok, const char* name) {
        if (!p) return;
        const Shape ps = p->shape();
        bool ok = ps.c == s.c && ps.h == 1 && ps.w == 1 && (ps.n == 1 || (per_sample_ok && ps.n == s.n));
        require(ok, ErrorCode::shape_mismatch, std::string("blend_norm: bad ") + name + " " + ps.str());
    };
    check_param(gamma, true, "gamma");
    check_param(beta, true, "beta");
    check_param(rho, false, "rho");

    const std::size_t plane = s.plane();
    const T eps = T(kNormEpsilon);
    // Cached normalized activations and inverse deviations for the backward pass.
    auto xi = std::make_shared<Tensor<T>>(s);
    auto xl = std::make_shared<Tensor<T>>(rho ? s : Shape{0, 0, 0, 0});
    auto inv_i = std::make_shared<std::vector<T>>(std::size_t(s.n) * s.c);
    auto inv_l = std::make_shared<std::vector<T>>(s.n);

    auto rho_at = [&rho](int c) { return rho ? std::clamp(rho->value()[c], T(0), T(1)) : T(1); };
    Tensor<T> out(s);
    for (int n = 0; n < s.n; ++n) {
        if (rho) {
            const T* p = x.value().plane(n, 0);
            const std::size_t cnt = std::size_t(s.c) * plane;
            T m = 0;
            for (std::size_t i = 0; i < cnt; ++i) m += p[i];
            m /= T(cnt);
            T v = 0;
            for (std::size_t i = 0; i < cnt; ++i) v += (p[i] - m) * (p[i] - m);
            v /= T(cnt);
            T inv = T(1) / std::sqrt(v + eps);
            (*inv_l)[n] = inv;
            T* q = xl->plane(n, 0);
            for (std::size_t i = 0; i < cnt; ++i) q[i] = (p[i] - m) * inv;
        }
        for (int c = 0; c < s.c; ++c) {
            const T* p = x.value().plane(n, c);
            T m = 0;
            for (std::size_t i = 0; i < plane; ++i) m += p[i];
            m /= T(plane);
            T v = 0;
            for (std::size_t i = 0; i < plane; ++i) v += (p[i] - m) * (p[i] - m);
            v /= T(plane);
            T inv = T(1) / std::sqrt(v + eps);
            (*inv_i)[std::size_t(n) * s.c + c] = inv;
            T* q = xi->plane(n, c);
            for (std::size_t i = 0; i < plane; ++i) q[i] = (p[i] - m) * inv;

            const T r = rho_at(c);
            const T g = gamma ? gamma->value()[(gamma->shape().n == 1 ? 0 : n) * s.c + c] : T(1);
            const T b = beta ? beta->value()[(beta->shape().n == 1 ? 0 : n) * s.c + c] : T(0);
            T* o = out.plane(n, c);
            const T* ql = rho ? xl->plane(n, c) : nullptr;
            for (std::size_t i = 0; i < plane; ++i) {
                T mixed = rho ? r * q[i] + (T(1) - r) * ql[i] : q[i];
                o[i] = g * mixed + b;
            }
        }
    }

    std::vector<Var<T>> parents{x};
    int gi = -1, bi = -1, ri = -1;
    if (gamma) { gi = int(parents.size()); parents.push_back(*gamma); }
    if (beta) { bi = int(parents.size()); parents.push_back(*beta); }
    if (rho) { ri = int(parents.size()); parents.push_back(*rho); }

    return make_op<T>(std::move(out), std::move(parents), [=](Node<T>& self) {
        auto param = [&](int idx) -> Node<T>* { return idx < 0 ? nullptr : self.parents[idx].get(); };
        Node<T>* gn = param(gi);
        Node<T>* bn = param(bi);
        Node<T>* rn = param(ri);
        const bool need_x = self.parent_needs_grad(0);
        std::vector<T> dxi(plane), dxl(rn ? std::size_t(s.c) * plane : 0);
        for (int n = 0; n < s.n; ++n) {
            for (int c = 0; c < s.c; ++c) {
                const T* up = self.grad.plane(n, c);
                const T* q = xi->plane(n, c);
                const T* ql = rn ? xl->plane(n, c) : nullptr;
                const T r = rn ? std::clamp(rn->value[c], T(0), T(1)) : T(1);
                const std::size_t gidx = gn ? std::size_t(gn->value.shape().n == 1 ? 0 : n) * s.c + c : 0;
                const std::size_t bidx = bn ? std::size_t(bn->value.shape().n == 1 ? 0 : n) * s.c + c : 0;
                const T g = gn ? gn->value[gidx] : T(1);
                T dg = 0, db = 0, dr = 0;
                for (std::size_t i = 0; i < plane; ++i) {
                    T mixed = rn ? r * q[i] + (T(1) - r) * ql[i] : q[i];
                    dg += up[i] * mixed;
                    db += up[i];
                    if (rn) dr += up[i] * g * (q[i] - ql[i]);
                    dxi[i] = up[i] * g * r;
                    if (rn) dxl[std::size_t(c) * plane + i] = up[i] * g * (T(1) - r);
                }
                if (gn && gn->requires_grad) gn->ensure_grad()[gidx] += dg;
                if (bn && bn->requires_grad) bn->ensure_grad()[bidx] += db;
                if (rn && rn->requires_grad) {
                    T raw = rn->value[c];
                    if (raw >= T(0) && raw <= T(1)) rn->ensure_grad()[c] += dr;
                }
                if (need_x) {
                    T m1 = 0, m2 = 0;
                    for (std::size_t i = 0; i < plane; ++i) {
                        m1 += dxi[i];
                        m2 += dxi[i] * q[i];
                    }
                    m1 /= T(plane);
                    m2 /= T(plane);
                    const T inv = (*inv_i)[std::size_t(n) * s.c + c];
                    T* gx = self.parents[0]->ensure_grad().plane(n, c);
                    for (std::size_t i = 0; i < plane; ++i) gx[i] += inv * (dxi[i] - m1 - q[i] * m2);
                }
            }
            if (rn && need_x) {
                const std::size_t cnt = std::size_t(s.c) * plane;
                const T* ql = xl->plane(n, 0);
                T m1 = 0, m2 = 0;
                for (std::size_t i = 0; i < cnt; ++i) {
                    m1 += dxl[i];
                    m2 += dxl[i] * ql[i];
                }
                m1 /= T(cnt);
                m2 /= T(cnt);
                const T inv = (*inv_l)[n];
                T* gx = self.parents[0]->ensure_grad().plane(n, 0);
                for (std::size_t i = 0; i < cnt; ++i) gx[i] += inv * (dxl[i] - m1 - ql[i] * m2);
            }
        }
    });
}

template <class T>
Var<T> instance_norm(const Var<T>& x) {
    return blend_norm<T>(x);
}

template <class T>
Var<T> ada_lin(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, const Var<T>& rho) {
    return blend_norm<T>(x, gamma, beta, rho);
}

} // namespace xmodal::ops
