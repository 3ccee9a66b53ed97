#include <atomic>
#include <fstream>
#include <iterator>
#include <system_error>

#include "limeil/binary_io.hpp"
#include "limeil/error.hpp"
#include "limeil/parallel.hpp"

namespace limeil {

std::string_view to_string(ErrorCode code) noexcept {
    switch (code) {
        case ErrorCode::InvalidArgument: return "invalid_argument";
        case ErrorCode::InvalidArch: return "invalid_arch";
        case ErrorCode::ShapeMismatch: return "shape_mismatch";
        case ErrorCode::LengthMismatch: return "length_mismatch";
        case ErrorCode::Io: return "io";
        case ErrorCode::BadMagic: return "bad_magic";
        case ErrorCode::UnsupportedEncoding: return "unsupported_encoding";
        case ErrorCode::UnsupportedChannels: return "unsupported_channels";
        case ErrorCode::UnsupportedBitDepth: return "unsupported_bit_depth";
        case ErrorCode::UnsupportedSampleRate: return "unsupported_sample_rate";
        case ErrorCode::Truncated: return "truncated";
        case ErrorCode::DimensionOverflow: return "dimension_overflow";
        case ErrorCode::VersionMismatch: return "version_mismatch";
        case ErrorCode::ParamCountMismatch: return "param_count_mismatch";
        case ErrorCode::Singular: return "singular";
        case ErrorCode::NonFinite: return "non_finite";
        case ErrorCode::Divergence: return "divergence";
        case ErrorCode::Config: return "config";
    }
    return "unknown";
}

namespace {
std::atomic<std::size_t> g_workers{0};
}

std::size_t worker_count() noexcept {
    const std::size_t n = g_workers.load(std::memory_order_relaxed);
    if (n) return n;
    const unsigned hw = std::thread::hardware_concurrency();
    return hw ? hw : 1;
}

void set_worker_count(std::size_t n) noexcept { g_workers.store(n, std::memory_order_relaxed); }

std::vector<char> read_file_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    require(static_cast<bool>(in), ErrorCode::Io, "cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_atomic(const std::filesystem::path& path, std::span<const char> data) {
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        require(static_cast<bool>(out), ErrorCode::Io, "cannot write " + tmp.string());
        out.write(data.data(), static_cast<std::streamsize>(data.size()));
        require(static_cast<bool>(out), ErrorCode::Io, "write failed for " + tmp.string());
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    require(!ec, ErrorCode::Io, "cannot rename " + tmp.string() + ": " + ec.message());
}

}  // namespace limeil
