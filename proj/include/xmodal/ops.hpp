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
#include <limits>
#include <optional>
#include <type_traits>

#include <Eigen/Core>

#include "autograd.hpp"

namespace xmodal::ops {

namespace detail {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapMat = Eigen::Map<RowMat<T>>;
template <class T>
using ConstMapMat = Eigen::Map<const RowMat<T>>;

inline void check_same(const Shape& a, const Shape& b, const char* op) {
    require(a == b, ErrorCode::shape_mismatch, std::string(op) + ": " + a.str() + " vs " + b.str());
}

template <class T, class F, class G>
Var<T> unary(const Var<T>& x, F f, G dfdx) {
    Tensor<T> out(x.shape());
    const auto& xv = x.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(xv[i]);
    return make_op<T>(std::move(out), {x}, [dfdx](Node<T>& self) {
        auto& p = *self.parents[0];
        auto& g = p.ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * dfdx(p.value[i], self.value[i]);
    });
}

} // namespace detail

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
    detail::check_same(a.shape(), b.shape(), "add");
    Tensor<T> out(a.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] + b.value()[i];
    return make_op<T>(std::move(out), {a, b}, [](Node<T>& self) {
        for (int k = 0; k < 2; ++k) {
            if (!self.parent_needs_grad(k)) continue;
            auto& g = self.parents[k]->ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
    });
}

template <class T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
    detail::check_same(a.shape(), b.shape(), "sub");
    Tensor<T> out(a.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] - b.value()[i];
    return make_op<T>(std::move(out), {a, b}, [](Node<T>& self) {
        for (int k = 0; k < 2; ++k) {
            if (!self.parent_needs_grad(k)) continue;
            T sign = k == 0 ? T(1) : T(-1);
            auto& g = self.parents[k]->ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += sign * self.grad[i];
        }
    });
}

template <class T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
    detail::check_same(a.shape(), b.shape(), "mul");
    Tensor<T> out(a.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * b.value()[i];
    return make_op<T>(std::move(out), {a, b}, [](Node<T>& self) {
        for (int k = 0; k < 2; ++k) {
            if (!self.parent_needs_grad(k)) continue;
            const auto& other = self.parents[1 - k]->value;
            auto& g = self.parents[k]->ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * other[i];
        }
    });
}

template <class T>
Var<T> scale(const Var<T>& x, T s) {
    return detail::unary<T>(x, [s](T v) { return v * s; }, [s](T, T) { return s; });
}

template <class T>
Var<T> add_scalar(const Var<T>& x, T s) {
    return detail::unary<T>(x, [s](T v) { return v + s; }, [](T, T) { return T(1); });
}

template <class T>
Var<T> relu(const Var<T>& x) {
    return detail::unary<T>(
        x, [](T v) { return v > 0 ? v : T(0); }, [](T v, T) { return v > 0 ? T(1) : T(0); });
}

template <class T>
Var<T> leaky_relu(const Var<T>& x, T slope = T(0.2)) {
    return detail::unary<T>(
        x, [slope](T v) { return v > 0 ? v : slope * v; },
        [slope](T v, T) { return v > 0 ? T(1) : slope; });
}

template <class T>
Var<T> tanh(const Var<T>& x) {
    return detail::unary<T>(
        x, [](T v) { return std::tanh(v); }, [](T, T y) { return T(1) - y * y; });
}

template <class T>
Var<T> sigmoid(const Var<T>& x) {
    return detail::unary<T>(
        x, [](T v) { return T(1) / (T(1) + std::exp(-v)); }, [](T, T y) { return y * (T(1) - y); });
}

template <class T>
Var<T> square(const Var<T>& x) {
    return detail::unary<T>(x, [](T v) { return v * v; }, [](T v, T) { return T(2) * v; });
}

/// log(clamp(x, lo, hi)); zero gradient where the clamp is active.
template <class T>
Var<T> log_clamped(const Var<T>& x, T lo, T hi) {
    return detail::unary<T>(
        x, [lo, hi](T v) { return std::log(std::clamp(v, lo, hi)); },
        [lo, hi](T v, T) { return (v < lo || v > hi) ? T(0) : T(1) / v; });
}

template <class T>
Var<T> sum(const Var<T>& x) {
    T s = 0;
    for (auto v : x.value().vec()) s += v;
    return make_op<T>(Tensor<T>(Shape{}, s), {x}, [](Node<T>& self) {
        auto& g = self.parents[0]->ensure_grad();
        T up = self.grad[0];
        for (auto& v : g.vec()) v += up;
    });
}

template <class T>
Var<T> mean(const Var<T>& x) {
    T s = 0;
    for (auto v : x.value().vec()) s += v;
    T inv = T(1) / T(x.value().size());
    return make_op<T>(Tensor<T>(Shape{}, s * inv), {x}, [inv](Node<T>& self) {
        auto& g = self.parents[0]->ensure_grad();
        T up = self.grad[0] * inv;
        for (auto& v : g.vec()) v += up;
    });
}

/// Mean absolute difference; subgradient 0 where a == b.
template <class T>
Var<T> mean_abs_diff(const Var<T>& a, const Var<T>& b) {
    detail::check_same(a.shape(), b.shape(), "mean_abs_diff");
    T s = 0;
    for (std::size_t i = 0; i < a.value().size(); ++i) s += std::abs(a.value()[i] - b.value()[i]);
    T inv = T(1) / T(a.value().size());
    return make_op<T>(Tensor<T>(Shape{}, s * inv), {a, b}, [inv](Node<T>& self) {
        const auto& av = self.parents[0]->value;
        const auto& bv = self.parents[1]->value;
        T up = self.grad[0] * inv;
        for (int k = 0; k < 2; ++k) {
            if (!self.parent_needs_grad(k)) continue;
            auto& g = self.parents[k]->ensure_grad();
            T sign = k == 0 ? T(1) : T(-1);
            for (std::size_t i = 0; i < g.size(); ++i) {
                T d = av[i] - bv[i];
                T sg = d > 0 ? T(1) : (d < 0 ? T(-1) : T(0));
                g[i] += sign * sg * up;
            }
        }
    });
}

template <class T>
Var<T> reflect_pad(const Var<T>& x, int pad) {
    const Shape s = x.shape();
    require(pad >= 0 && pad < s.h && pad < s.w, ErrorCode::invalid_argument,
            "reflect_pad: pad must be smaller than the spatial extent");
    Shape o{s.n, s.c, s.h + 2 * pad, s.w + 2 * pad};
    auto reflect = [](int i, int n) {
        if (i < 0) return -i;
        if (i >= n) return 2 * n - 2 - i;
        return i;
    };
    std::vector<int> rows(o.h), cols(o.w);
    for (int i = 0; i < o.h; ++i) rows[i] = reflect(i - pad, s.h);
    for (int j = 0; j < o.w; ++j) cols[j] = reflect(j - pad, s.w);
    Tensor<T> out(o);
    for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < s.c; ++c) {
            const T* src = x.value().plane(n, c);
            T* dst = out.plane(n, c);
            for (int i = 0; i < o.h; ++i)
                for (int j = 0; j < o.w; ++j) dst[i * o.w + j] = src[rows[i] * s.w + cols[j]];
        }
    return make_op<T>(std::move(out), {x}, [rows, cols, s, o](Node<T>& self) {
        auto& g = self.parents[0]->ensure_grad();
        for (int n = 0; n < s.n; ++n)
            for (int c = 0; c < s.c; ++c) {
                const T* up = self.grad.plane(n, c);
                T* dst = g.plane(n, c);
                for (int i = 0; i < o.h; ++i)
                    for (int j = 0; j < o.w; ++j) dst[rows[i] * s.w + cols[j]] += up[i * o.w + j];
            }
    });
}

/// Cross-correlation with zero padding. `weight` is (Cout, Cin, k, k); `bias` is (1, Cout, 1, 1).
template <class T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const std::type_identity_t<std::optional<Var<T>>>& bias,
              int stride,
              int pad) {
    const Shape s = x.shape();
    const Shape ws = weight.shape();
    require(ws.c == s.c && ws.h == ws.w, ErrorCode::shape_mismatch,
            "conv2d: weight " + ws.str() + " incompatible with input " + s.str());
    require(stride >= 1 && pad >= 0, ErrorCode::invalid_argument, "conv2d: bad stride/pad");
    const int k = ws.h;
    const int oh = (s.h + 2 * pad - k) / stride + 1;
    const int ow = (s.w + 2 * pad - k) / stride + 1;
    require(oh > 0 && ow > 0, ErrorCode::shape_mismatch, "conv2d: input too small for kernel");
    const int rows = s.c * k * k;
    const int cols = oh * ow;
    const int cout = ws.n;
    if (bias) require(bias->shape() == Shape{1, cout, 1, 1}, ErrorCode::shape_mismatch, "conv2d: bias");

    // Output columns j whose input column j*stride - pad + kj lies inside the image.
    auto valid_cols = [=](int kj) {
        const int off = kj - pad;
        const int j0 = off >= 0 ? 0 : (-off + stride - 1) / stride;
        const int j1 = s.w - 1 - off < 0 ? 0 : std::min(ow, (s.w - 1 - off) / stride + 1);
        return std::pair<int, int>{std::min(j0, j1), j1};
    };

    auto im2col = [=](const T* img, T* col) {
        for (int c = 0; c < s.c; ++c)
            for (int ki = 0; ki < k; ++ki)
                for (int kj = 0; kj < k; ++kj) {
                    T* dst = col + std::size_t((c * k + ki) * k + kj) * cols;
                    const T* src = img + std::size_t(c) * s.plane();
                    const auto [j0, j1] = valid_cols(kj);
                    const int off = kj - pad;
                    for (int i = 0; i < oh; ++i) {
                        T* row = dst + i * ow;
                        const int yi = i * stride - pad + ki;
                        if (yi < 0 || yi >= s.h) {
                            std::fill(row, row + ow, T(0));
                            continue;
                        }
                        std::fill(row, row + j0, T(0));
                        std::fill(row + j1, row + ow, T(0));
                        const T* line = src + yi * s.w + off;
                        if (stride == 1) {
                            std::copy(line + j0, line + j1, row + j0);
                        } else {
                            for (int j = j0; j < j1; ++j) row[j] = line[j * stride];
                        }
                    }
                }
    };

    const bool keep_cols = grad_enabled() && weight.requires_grad();
    auto col_store = std::make_shared<std::vector<T>>();
    if (keep_cols) col_store->resize(std::size_t(s.n) * rows * cols);
    std::vector<T> scratch(keep_cols ? 0 : std::size_t(rows) * cols);

    Tensor<T> out(Shape{s.n, cout, oh, ow});
    detail::ConstMapMat<T> W(weight.value().data(), cout, rows);
    for (int n = 0; n < s.n; ++n) {
        T* col = keep_cols ? col_store->data() + std::size_t(n) * rows * cols : scratch.data();
        im2col(x.value().plane(n, 0), col);
        detail::ConstMapMat<T> C(col, rows, cols);
        detail::MapMat<T> Y(out.plane(n, 0), cout, cols);
        Y.noalias() = W * C;
        if (bias)
            for (int o = 0; o < cout; ++o) Y.row(o).array() += bias->value()[o];
    }

    std::vector<Var<T>> parents{x, weight};
    if (bias) parents.push_back(*bias);
    return make_op<T>(std::move(out), std::move(parents),
                      [=](Node<T>& self) {
                          detail::ConstMapMat<T> W(self.parents[1]->value.data(), cout, rows);
                          std::vector<T> local(self.parent_needs_grad(1) && col_store->empty()
                                                   ? std::size_t(rows) * cols
                                                   : 0);
                          std::vector<T> dcol(self.parent_needs_grad(0) ? std::size_t(rows) * cols : 0);
                          for (int n = 0; n < s.n; ++n) {
                              detail::ConstMapMat<T> dY(self.grad.plane(n, 0), cout, cols);
                              if (self.parent_needs_grad(1)) {
                                  const T* col;
                                  if (!col_store->empty()) {
                                      col = col_store->data() + std::size_t(n) * rows * cols;
                                  } else {
                                      im2col(self.parents[0]->value.plane(n, 0), local.data());
                                      col = local.data();
                                  }
                                  detail::ConstMapMat<T> C(col, rows, cols);
                                  detail::MapMat<T> dW(self.parents[1]->ensure_grad().data(), cout, rows);
                                  dW.noalias() += dY * C.transpose();
                              }
                              if (self.parents.size() > 2 && self.parent_needs_grad(2)) {
                                  auto& gb = self.parents[2]->ensure_grad();
                                  // Plain loop: a vectorised reduction's order would depend on buffer alignment.
                                  for (int o = 0; o < cout; ++o) {
                                      const T* row = self.grad.plane(n, 0) + std::size_t(o) * cols;
                                      T acc = 0;
                                      for (int j = 0; j < cols; ++j) acc += row[j];
                                      gb[o] += acc;
                                  }
                              }
                              if (self.parent_needs_grad(0)) {
                                  detail::MapMat<T> dC(dcol.data(), rows, cols);
                                  dC.noalias() = W.transpose() * dY;
                                  T* gx = self.parents[0]->ensure_grad().plane(n, 0);
                                  for (int c = 0; c < s.c; ++c)
                                      for (int ki = 0; ki < k; ++ki)
                                          for (int kj = 0; kj < k; ++kj) {
                                              const T* src = dcol.data() + std::size_t((c * k + ki) * k + kj) * cols;
                                              T* dst = gx + std::size_t(c) * s.plane();
                                              const auto [j0, j1] = valid_cols(kj);
                                              const int off = kj - pad;
                                              for (int i = 0; i < oh; ++i) {
                                                  const int yi = i * stride - pad + ki;
                                                  if (yi < 0 || yi >= s.h) continue;
                                                  T* line = dst + yi * s.w + off;
                                                  const T* g = src + i * ow;
                                                  if (stride == 1) {
                                                      for (int j = j0; j < j1; ++j) line[j] += g[j];
                                                  } else {
                                                      for (int j = j0; j < j1; ++j) line[j * stride] += g[j];
                                                  }
                                              }
                                          }
                              }
                          }
                      });
}

template <class T>
Var<T> upsample_nearest(const Var<T>& x, int factor) {
    const Shape s = x.shape();
    Shape o{s.n, s.c, s.h * factor, s.w * factor};
    Tensor<T> out(o);
    for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < s.c; ++c) {
            const T* src = x.value().plane(n, c);
            T* dst = out.plane(n, c);
            for (int i = 0; i < o.h; ++i)
                for (int j = 0; j < o.w; ++j) dst[i * o.w + j] = src[(i / factor) * s.w + j / factor];
        }
    return make_op<T>(std::move(out), {x}, [s, o, factor](Node<T>& self) {
        auto& g = self.parents[0]->ensure_grad();
        for (int n = 0; n < s.n; ++n)
            for (int c = 0; c < s.c; ++c) {
                const T* up = self.grad.plane(n, c);
                T* dst = g.plane(n, c);
                for (int i = 0; i < o.h; ++i)
                    for (int j = 0; j < o.w; ++j) dst[(i / factor) * s.w + j / factor] += up[i * o.w + j];
            }
    });
}

/// (N,C,H,W) -> (N,C,1,1) spatial mean.
template <class T>
Var<T> global_avg_pool(const Var<T>& x) {
    const Shape s = x.shape();
    Tensor<T> out(Shape{s.n, s.c, 1, 1});
    const T inv = T(1) / T(s.plane());
    for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < s.c; ++c) {
            const T* p = x.value().plane(n, c);
            T acc = 0;
            for (std::size_t i = 0; i < s.plane(); ++i) acc += p[i];
            out.at(n, c, 0, 0) = acc * inv;
        }
    return make_op<T>(std::move(out), {x}, [s, inv](Node<T>& self) {
        auto& g = self.parents[0]->ensure_grad();
        for (int n = 0; n < s.n; ++n)
            for (int c = 0; c < s.c; ++c) {
                T up = self.grad.at(n, c, 0, 0) * inv;
                T* dst = g.plane(n, c);
                for (std::size_t i = 0; i < s.plane(); ++i) dst[i] += up;
            }
    });
}

/// (N,C,H,W) -> (N,C,1,1) spatial max; gradient routed to the first maximizer.
template <class T>
Var<T> global_max_pool(const Var<T>& x) {
    const Shape s = x.shape();
    Tensor<T> out(Shape{s.n, s.c, 1, 1});
    std::vector<std::size_t> arg(std::size_t(s.n) * s.c);
    for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < s.c; ++c) {
            const T* p = x.value().plane(n, c);
            std::size_t best = 0;
            for (std::size_t i = 1; i < s.plane(); ++i)
                if (p[i] > p[best]) best = i;
            arg[std::size_t(n) * s.c + c] = best;
            out.at(n, c, 0, 0) = p[best];
        }
    return make_op<T>(std::move(out), {x}, [s, arg](Node<T>& self) {
        auto& g = self.parents[0]->ensure_grad();
        for (int n = 0; n < s.n; ++n)
            for (int c = 0; c < s.c; ++c)
                g.plane(n, c)[arg[std::size_t(n) * s.c + c]] += self.grad.at(n, c, 0, 0);
    });
}

/// Fully connected layer on (N,in,1,1) features; `weight` is (out,in,1,1), `bias` (1,out,1,1).
template <class T>
Var<T> linear(const Var<T>& x, const Var<T>& weight,
                const std::type_identity_t<std::optional<Var<T>>>& bias) {
    const Shape s = x.shape();
    const int in = s.c * s.h * s.w;
    const int outc = weight.shape().n;
    require(weight.shape().c == in, ErrorCode::shape_mismatch, "linear: weight/input mismatch");
    Tensor<T> out(Shape{s.n, outc, 1, 1});
    detail::ConstMapMat<T> X(x.value().data(), s.n, in);
    detail::ConstMapMat<T> W(weight.value().data(), outc, in);
    detail::MapMat<T> Y(out.data(), s.n, outc);
    Y.noalias() = X * W.transpose();
    if (bias)
        for (int n = 0; n < s.n; ++n)
            for (int o = 0; o < outc; ++o) Y(n, o) += bias->value()[o];
    std::vector<Var<T>> parents{x, weight};
    if (bias) parents.push_back(*bias);
    return make_op<T>(std::move(out), std::move(parents), [=](Node<T>& self) {
        detail::ConstMapMat<T> dY(self.grad.data(), s.n, outc);
        detail::ConstMapMat<T> X(self.parents[0]->value.data(), s.n, in);
        detail::ConstMapMat<T> W(self.parents[1]->value.data(), outc, in);
        if (self.parent_needs_grad(0)) {
            detail::MapMat<T> dX(self.parents[0]->ensure_grad().data(), s.n, in);
            dX.noalias() += dY * W;
        }
        if (self.parent_needs_grad(1)) {
            detail::MapMat<T> dW(self.parents[1]->ensure_grad().data(), outc, in);
            dW.noalias() += dY.transpose() * X;
        }
        if (self.parents.size() > 2 && self.parent_needs_grad(2)) {
            auto& gb = self.parents[2]->ensure_grad();
            for (int n = 0; n < s.n; ++n)
                for (int o = 0; o < outc; ++o) gb[o] += dY(n, o);
        }
    });
}

template <class T>
Var<T> concat_channels(const Var<T>& a, const Var<T>& b) {
    const Shape sa = a.shape(), sb = b.shape();
    require(sa.n == sb.n && sa.h == sb.h && sa.w == sb.w, ErrorCode::shape_mismatch,
            "concat_channels: " + sa.str() + " vs " + sb.str());
    Shape o{sa.n, sa.c + sb.c, sa.h, sa.w};
    Tensor<T> out(o);
    const std::size_t pa = sa.c * sa.plane(), pb = sb.c * sb.plane();
    for (int n = 0; n < sa.n; ++n) {
        std::copy_n(a.value().plane(n, 0), pa, out.plane(n, 0));
        std::copy_n(b.value().plane(n, 0), pb, out.plane(n, sa.c));
    }
    return make_op<T>(std::move(out), {a, b}, [sa, pa, pb](Node<T>& self) {
        for (int n = 0; n < sa.n; ++n) {
            if (self.parent_needs_grad(0)) {
                T* g = self.parents[0]->ensure_grad().plane(n, 0);
                const T* up = self.grad.plane(n, 0);
                for (std::size_t i = 0; i < pa; ++i) g[i] += up[i];
            }
            if (self.parent_needs_grad(1)) {
                T* g = self.parents[1]->ensure_grad().plane(n, 0);
                const T* up = self.grad.plane(n, sa.c);
                for (std::size_t i = 0; i < pb; ++i) g[i] += up[i];
            }
        }
    });
}

/// Channel-wise weighting: x (N,C,H,W) times w (1,C,1,1).
template <class T>
Var<T> channel_scale(const Var<T>& x, const Var<T>& w) {
    const Shape s = x.shape();
    require(w.shape().size() == std::size_t(s.c), ErrorCode::shape_mismatch,
            "channel_scale: weight count must equal channel count");
    Tensor<T> out(s);
    for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < s.c; ++c) {
            const T* src = x.value().plane(n, c);
            T* dst = out.plane(n, c);
            const T wc = w.value()[c];
            for (std::size_t i = 0; i < s.plane(); ++i) dst[i] = src[i] * wc;
        }
    return make_op<T>(std::move(out), {x, w}, [s](Node<T>& self) {
        const auto& xv = self.parents[0]->value;
        const auto& wv = self.parents[1]->value;
        for (int n = 0; n < s.n; ++n)
            for (int c = 0; c < s.c; ++c) {
                const T* up = self.grad.plane(n, c);
                if (self.parent_needs_grad(0)) {
                    T* g = self.parents[0]->ensure_grad().plane(n, c);
                    for (std::size_t i = 0; i < s.plane(); ++i) g[i] += up[i] * wv[c];
                }
                if (self.parent_needs_grad(1)) {
                    const T* src = xv.plane(n, c);
                    T acc = 0;
                    for (std::size_t i = 0; i < s.plane(); ++i) acc += up[i] * src[i];
                    self.parents[1]->ensure_grad()[c] += acc;
                }
            }
    });
}

/// (N,C,H,W) -> (N,1,H,W) sum over channels.
template <class T>
Var<T> channel_sum(const Var<T>& x) {
    const Shape s = x.shape();
    Tensor<T> out(Shape{s.n, 1, s.h, s.w});
    for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < s.c; ++c) {
            const T* src = x.value().plane(n, c);
            T* dst = out.plane(n, 0);
            for (std::size_t i = 0; i < s.plane(); ++i) dst[i] += src[i];
        }
    return make_op<T>(std::move(out), {x}, [s](Node<T>& self) {
        auto& g = self.parents[0]->ensure_grad();
        for (int n = 0; n < s.n; ++n)
            for (int c = 0; c < s.c; ++c) {
                const T* up = self.grad.plane(n, 0);
                T* dst = g.plane(n, c);
                for (std::size_t i = 0; i < s.plane(); ++i) dst[i] += up[i];
            }
    });
}

} // namespace xmodal::ops
