#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "limeil/error.hpp"

namespace limeil {

static_assert(std::endian::native == std::endian::little,
              "on-disk formats are little-endian; big-endian hosts need byte swapping");

/// Append-only little-endian byte buffer.
class ByteWriter {
public:
    void bytes(std::string_view s) { buf_.insert(buf_.end(), s.begin(), s.end()); }

    template <typename T>
    void put(T value) {
        static_assert(std::is_trivially_copyable_v<T>);
        const auto* p = reinterpret_cast<const char*>(&value);
        buf_.insert(buf_.end(), p, p + sizeof(T));
    }

    void u8(std::uint8_t v) { put(v); }
    void u16(std::uint16_t v) { put(v); }
    void u32(std::uint32_t v) { put(v); }
    void u64(std::uint64_t v) { put(v); }
    void f32(float v) { put(v); }
    void f64(double v) { put(v); }

    const std::vector<char>& data() const noexcept { return buf_; }

private:
    std::vector<char> buf_;
};

/// Bounds-checked little-endian reader. Reading past the end raises Truncated.
class ByteReader {
public:
    explicit ByteReader(std::span<const char> data) : data_(data) {}

    std::size_t remaining() const noexcept { return data_.size() - pos_; }

    std::string bytes(std::size_t n, std::string_view what) {
        need(n, what);
        std::string out(data_.data() + pos_, n);
        pos_ += n;
        return out;
    }

    template <typename T>
    T get(std::string_view what) {
        need(sizeof(T), what);
        T value;
        std::memcpy(&value, data_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return value;
    }

    std::uint8_t u8(std::string_view what) { return get<std::uint8_t>(what); }
    std::uint16_t u16(std::string_view what) { return get<std::uint16_t>(what); }
    std::uint32_t u32(std::string_view what) { return get<std::uint32_t>(what); }
    std::uint64_t u64(std::string_view what) { return get<std::uint64_t>(what); }
    float f32(std::string_view what) { return get<float>(what); }
    double f64(std::string_view what) { return get<double>(what); }

private:
    void need(std::size_t n, std::string_view what) const {
        if (remaining() < n)
            fail(ErrorCode::Truncated, "truncated payload while reading " + std::string(what));
    }

    std::span<const char> data_;
    std::size_t pos_ = 0;
};

std::vector<char> read_file_bytes(const std::filesystem::path& path);

/// Writes to a sibling temp file and renames it over `path`.
void write_file_atomic(const std::filesystem::path& path, std::span<const char> data);

}  // namespace limeil
