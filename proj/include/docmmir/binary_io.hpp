#pragma once

// Little-endian encoding helpers shared by the DEMB, DIDX and checkpoint formats.

#include <bit>
#include <cstdint>
#include <cstring>
#include <string>
#include <string_view>

#include "docmmir/error.hpp"

namespace docmmir::io {

class ByteWriter {
public:
    void bytes(std::string_view raw) { buf_.append(raw); }
    void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
    void u16(std::uint16_t v) { put_le(v); }
    void u32(std::uint32_t v) { put_le(v); }
    void u64(std::uint64_t v) { put_le(v); }
    void f32(float v) { put_le(std::bit_cast<std::uint32_t>(v)); }
    void f64(double v) { put_le(std::bit_cast<std::uint64_t>(v)); }

    /// u16 length prefix followed by the raw bytes.
    void short_string(std::string_view s) {
        if (s.size() > 0xFFFF) throw DataError("string longer than 65535 bytes: " + std::string(s.substr(0, 32)));
        u16(static_cast<std::uint16_t>(s.size()));
        bytes(s);
    }

    const std::string& data() const& { return buf_; }
    std::string take() && { return std::move(buf_); }

private:
    template <typename T>
    void put_le(T v) {
        for (std::size_t i = 0; i < sizeof(T); ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
    }

    std::string buf_;
};

class ByteReader {
public:
    explicit ByteReader(std::string_view data) : data_(data) {}

    std::string_view bytes(std::size_t n) {
        need(n);
        auto out = data_.substr(pos_, n);
        pos_ += n;
        return out;
    }
    std::uint8_t u8() { return static_cast<std::uint8_t>(bytes(1)[0]); }
    std::uint16_t u16() { return get_le<std::uint16_t>(); }
    std::uint32_t u32() { return get_le<std::uint32_t>(); }
    std::uint64_t u64() { return get_le<std::uint64_t>(); }
    float f32() { return std::bit_cast<float>(get_le<std::uint32_t>()); }
    double f64() { return std::bit_cast<double>(get_le<std::uint64_t>()); }
    std::string short_string() {
        const auto n = u16();
        return std::string(bytes(n));
    }

    std::size_t remaining() const { return data_.size() - pos_; }
    bool at_end() const { return pos_ == data_.size(); }

private:
    void need(std::size_t n) const {
        if (data_.size() - pos_ < n) throw DataError("truncated payload");
    }

    template <typename T>
    T get_le() {
        auto raw = bytes(sizeof(T));
        T v = 0;
        for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(static_cast<unsigned char>(raw[i])) << (8 * i);
        return v;
    }

    std::string_view data_;
    std::size_t pos_ = 0;
};

/// Reads a whole file. Throws IoError if it cannot be opened.
std::string read_file(const std::string& path);

/// Writes via a temporary sibling and renames, so readers never observe a partial file.
void write_file_atomic(const std::string& path, std::string_view contents);

}  // namespace docmmir::io
