#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace limeil {

enum class ErrorCode {
    InvalidArgument,
    InvalidArch,
    ShapeMismatch,
    LengthMismatch,
    Io,
    BadMagic,
    UnsupportedEncoding,
    UnsupportedChannels,
    UnsupportedBitDepth,
    UnsupportedSampleRate,
    Truncated,
    DimensionOverflow,
    VersionMismatch,
    ParamCountMismatch,
    Singular,
    NonFinite,
    Divergence,
    Config,
};

std::string_view to_string(ErrorCode code) noexcept;

/// Every failure the library reports carries a machine-readable code so that
/// callers (tests, the CLI) can tell apart e.g. a bad magic from a truncation.
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

}  // namespace limeil
