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
#include <cstddef>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "error.hpp"

namespace xmodal {

/// NCHW extent. Vectors and scalars are stored as degenerate 4D shapes.
struct Shape {
    int n = 1;
    int c = 1;
    int h = 1;
    int w = 1;

    std::size_t size() const { return std::size_t(n) * c * h * w; }
    std::size_t plane() const { return std::size_t(h) * w; }
    bool operator==(const Shape&) const = default;

    std::string str() const {
        std::ostringstream os;
        os << "(" << n << "," << c << "," << h << "," << w << ")";
        return os.str();
    }
};

template <class T>
class Tensor {
public:
    using value_type = T;

    Tensor() = default;
    explicit Tensor(Shape shape, T fill = T(0)) : shape_(shape), data_(shape.size(), fill) {}
    Tensor(Shape shape, std::vector<T> data) : shape_(shape), data_(std::move(data)) {
        require(data_.size() == shape_.size(), ErrorCode::shape_mismatch,
                "tensor data size does not match shape " + shape_.str());
    }

    const Shape& shape() const { return shape_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    std::span<T> span() { return data_; }
    std::span<const T> span() const { return data_; }
    std::vector<T>& vec() { return data_; }
    const std::vector<T>& vec() const { return data_; }

    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    std::size_t index(int n, int c, int h, int w) const {
        return ((std::size_t(n) * shape_.c + c) * shape_.h + h) * shape_.w + w;
    }
    T& at(int n, int c, int h, int w) { return data_[index(n, c, h, w)]; }
    const T& at(int n, int c, int h, int w) const { return data_[index(n, c, h, w)]; }

    T* plane(int n, int c) { return data_.data() + (std::size_t(n) * shape_.c + c) * shape_.plane(); }
    const T* plane(int n, int c) const {
        return data_.data() + (std::size_t(n) * shape_.c + c) * shape_.plane();
    }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

    bool all_finite() const {
        return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
    }

    template <class U>
    Tensor<U> cast() const {
        Tensor<U> out(shape_);
        std::transform(data_.begin(), data_.end(), out.vec().begin(), [](T v) { return U(v); });
        return out;
    }

    Tensor reshaped(Shape s) const {
        require(s.size() == shape_.size(), ErrorCode::shape_mismatch,
                "cannot reshape " + shape_.str() + " to " + s.str());
        return Tensor(s, data_);
    }

    /// Copy of batch items [first, first + count).
    Tensor slice_batch(int first, int count) const {
        Shape s = shape_;
        s.n = count;
        std::size_t stride = std::size_t(shape_.c) * shape_.plane();
        std::vector<T> out(data_.begin() + first * stride, data_.begin() + (first + count) * stride);
        return Tensor(s, std::move(out));
    }

    bool operator==(const Tensor&) const = default;

private:
    Shape shape_{0, 0, 0, 0};
    std::vector<T> data_;
};

template <class T>
Tensor<T> stack_batch(std::span<const Tensor<T>> items) {
    require(!items.empty(), ErrorCode::invalid_argument, "cannot stack an empty batch");
    Shape s = items.front().shape();
    int total = 0;
    for (const auto& t : items) {
        require(t.shape().c == s.c && t.shape().h == s.h && t.shape().w == s.w,
                ErrorCode::shape_mismatch, "batch items differ in shape");
        total += t.shape().n;
    }
    s.n = total;
    Tensor<T> out(s);
    auto it = out.vec().begin();
    for (const auto& t : items) it = std::copy(t.vec().begin(), t.vec().end(), it);
    return out;
}

template <class T>
T max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
    require(a.shape() == b.shape(), ErrorCode::shape_mismatch, "max_abs_diff shapes differ");
    T m = 0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

} // namespace xmodal
