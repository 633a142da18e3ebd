#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace mapn {

enum class ErrorCode {
    usage,
    io,
    parse,
    validation,
    shape,
    numeric,
    sampling,
    precondition,
};

inline std::string_view to_string(ErrorCode code) {
    switch (code) {
    case ErrorCode::usage: return "usage";
    case ErrorCode::io: return "io";
    case ErrorCode::parse: return "parse";
    case ErrorCode::validation: return "validation";
    case ErrorCode::shape: return "shape";
    case ErrorCode::numeric: return "numeric";
    case ErrorCode::sampling: return "sampling";
    case ErrorCode::precondition: return "precondition";
    }
    return "unknown";
}

/// Exception type used across the library. The CLI prints it as
/// `ERROR <code>: <message>`.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(message), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
    throw Error(code, message);
}

inline void require(bool condition, ErrorCode code, const std::string& message) {
    if (!condition) throw Error(code, message);
}

} // namespace mapn
