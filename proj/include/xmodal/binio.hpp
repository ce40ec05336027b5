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

#include <zlib.h>

#include <bit>
#include <cstdint>
#include <cstring>
#include <string>
#include <string_view>
#include <vector>

#include "xmodal/error.hpp"
#include "xmodal/tensor.hpp"

namespace xmodal::binio {

static_assert(std::endian::native == std::endian::little, "binary containers assume a little-endian host");

inline std::uint32_t crc32(std::string_view bytes) {
    uLong c = ::crc32(0L, Z_NULL, 0);
    return std::uint32_t(::crc32(c, reinterpret_cast<const Bytef*>(bytes.data()), uInt(bytes.size())));
}

class Writer {
public:
    template <class P>
        requires std::is_trivially_copyable_v<P>
    void pod(P v) {
        const auto* p = reinterpret_cast<const char*>(&v);
        out_.append(p, sizeof(P));
    }
    void u32(std::uint32_t v) { pod(v); }
    void i64(std::int64_t v) { pod(v); }
    void u64(std::uint64_t v) { pod(v); }
    void f64(double v) { pod(v); }
    void str(std::string_view s) {
        u64(s.size());
        out_.append(s.data(), s.size());
    }
    void raw(std::string_view s) { out_.append(s.data(), s.size()); }

    template <class T>
    void tensor(const Tensor<T>& t) {
        const Shape s = t.shape();
        for (int d : {s.n, s.c, s.h, s.w}) pod(std::int32_t(d));
        for (T v : t.vec()) pod(float(v));
    }

    const std::string& bytes() const { return out_; }
    std::string take() { return std::move(out_); }

private:
    std::string out_;
};

class Reader {
public:
    explicit Reader(std::string_view bytes) : in_(bytes) {}

    template <class P>
        requires std::is_trivially_copyable_v<P>
    P pod() {
        need(sizeof(P));
        P v;
        std::memcpy(&v, in_.data() + pos_, sizeof(P));
        pos_ += sizeof(P);
        return v;
    }
    std::uint32_t u32() { return pod<std::uint32_t>(); }
    std::int64_t i64() { return pod<std::int64_t>(); }
    std::uint64_t u64() { return pod<std::uint64_t>(); }
    double f64() { return pod<double>(); }
    std::string str() {
        const auto n = u64();
        need(n);
        std::string s(in_.substr(pos_, n));
        pos_ += n;
        return s;
    }
    std::string_view raw(std::size_t n) {
        need(n);
        auto s = in_.substr(pos_, n);
        pos_ += n;
        return s;
    }

    template <class T>
    Tensor<T> tensor() {
        Shape s;
        s.n = pod<std::int32_t>();
        s.c = pod<std::int32_t>();
        s.h = pod<std::int32_t>();
        s.w = pod<std::int32_t>();
        require(s.n >= 0 && s.c >= 0 && s.h >= 0 && s.w >= 0, ErrorCode::corrupt, "negative tensor extent");
        need(4 * s.size());
        Tensor<T> t(s);
        for (auto& v : t.vec()) v = T(pod<float>());
        return t;
    }

    bool done() const { return pos_ == in_.size(); }

private:
    void need(std::size_t n) const {
        require(n <= in_.size() - pos_, ErrorCode::corrupt, "binary payload ends early");
    }
    std::string_view in_;
    std::size_t pos_ = 0;
};

/// magic(4) | version u32 | payload length u64 | payload | crc32(payload) u32
inline std::string seal(std::string_view magic, std::uint32_t version, std::string_view payload) {
    Writer w;
    w.raw(magic);
    w.u32(version);
    w.u64(payload.size());
    w.raw(payload);
    w.u32(crc32(payload));
    return w.take();
}

/// Verifies the container and returns its payload. Truncation and checksum failures are `corrupt`.
inline std::string unseal(std::string_view bytes, std::string_view magic, std::uint32_t version) {
    require(bytes.size() >= magic.size() && bytes.substr(0, magic.size()) == magic, ErrorCode::bad_magic,
            "container magic mismatch");
    Reader r(bytes.substr(magic.size()));
    std::uint32_t v;
    std::uint64_t n;
    try {
        v = r.u32();
        n = r.u64();
    } catch (const Error&) {
        throw Error(ErrorCode::corrupt, "container header truncated");
    }
    require(v == version, ErrorCode::version_mismatch,
            "container version " + std::to_string(v) + ", expected " + std::to_string(version));
    const std::size_t header = magic.size() + 12;
    require(bytes.size() == header + n + 4, ErrorCode::corrupt, "container length does not match header");
    std::string_view payload = bytes.substr(header, n);
    std::uint32_t stored;
    std::memcpy(&stored, bytes.data() + header + n, 4);
    require(stored == crc32(payload), ErrorCode::corrupt, "container checksum mismatch");
    return std::string(payload);
}

} // namespace xmodal::binio
