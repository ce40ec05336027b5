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

#include <stdexcept>
#include <string>

namespace xmodal {

enum class ErrorCode {
    invalid_argument,
    shape_mismatch,
    non_finite,
    bad_magic,
    truncated,
    version_mismatch,
    corrupt,
    spec_mismatch,
    divergence,
    unpaired_violation,
    io,
    missing_input,
};

inline const char* to_string(ErrorCode code) {
    switch (code) {
    case ErrorCode::invalid_argument: return "invalid_argument";
    case ErrorCode::shape_mismatch: return "shape_mismatch";
    case ErrorCode::non_finite: return "non_finite";
    case ErrorCode::bad_magic: return "bad_magic";
    case ErrorCode::truncated: return "truncated";
    case ErrorCode::version_mismatch: return "version_mismatch";
    case ErrorCode::corrupt: return "corrupt";
    case ErrorCode::spec_mismatch: return "spec_mismatch";
    case ErrorCode::divergence: return "divergence";
    case ErrorCode::unpaired_violation: return "unpaired_violation";
    case ErrorCode::io: return "io";
    case ErrorCode::missing_input: return "missing_input";
    }
    return "unknown";
}

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& what)
        : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

/// Raised when a training loss or parameter turns non-finite; `term()` names the culprit.
class DivergenceError : public Error {
public:
    explicit DivergenceError(std::string term)
        : Error(ErrorCode::divergence, "non-finite value in " + term), term_(std::move(term)) {}

    const std::string& term() const noexcept { return term_; }

private:
    std::string term_;
};

inline void require(bool cond, ErrorCode code, const std::string& what) {
    if (!cond) throw Error(code, what);
}

} // namespace xmodal
