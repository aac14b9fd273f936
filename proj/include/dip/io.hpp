// io.hpp
//
// Little-endian binary encoding helpers shared by the genome, archive and
// checkpoint formats.
#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "errors.hpp"

namespace dip::io {

using Bytes = std::vector<std::uint8_t>;

/// 64-bit FNV-1a.
inline std::uint64_t fnv1a64(std::span<const std::uint8_t> data, std::uint64_t h = 0xcbf29ce484222325ull)
{
    for (auto b : data) {
        h ^= b;
        h *= 0x100000001b3ull;
    }
    return h;
}

class Writer {
public:
    void u8(std::uint8_t v) { buf_.push_back(v); }
    void u32(std::uint32_t v) { put_le(v); }
    void u64(std::uint64_t v) { put_le(v); }
    void i64(std::int64_t v) { put_le(static_cast<std::uint64_t>(v)); }
    void f64(double v) { put_le(std::bit_cast<std::uint64_t>(v)); }
    void raw(std::string_view s) { buf_.insert(buf_.end(), s.begin(), s.end()); }
    void raw(std::span<const std::uint8_t> s) { buf_.insert(buf_.end(), s.begin(), s.end()); }
    void str(std::string_view s)
    {
        u64(s.size());
        raw(s);
    }
    void blob(std::span<const std::uint8_t> s)
    {
        u64(s.size());
        raw(s);
    }
    void f64_array(std::span<const double> v)
    {
        for (double d : v)
            f64(d);
    }

    std::size_t size() const { return buf_.size(); }
    const Bytes& bytes() const { return buf_; }
    Bytes take() { return std::move(buf_); }

private:
    template <class T>
    void put_le(T v)
    {
        for (std::size_t i = 0; i < sizeof(T); ++i)
            buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }

    Bytes buf_;
};

/// Bounds-checked reader; running past the end raises CorruptDataError
/// tagged with `what`.
class Reader {
public:
    Reader(std::span<const std::uint8_t> data, std::string what) : data_(data), what_(std::move(what)) {}

    std::uint8_t u8() { return take(1)[0]; }
    std::uint32_t u32() { return static_cast<std::uint32_t>(get_le(4)); }
    std::uint64_t u64() { return get_le(8); }
    std::int64_t i64() { return static_cast<std::int64_t>(get_le(8)); }
    double f64() { return std::bit_cast<double>(get_le(8)); }
    std::string str()
    {
        const auto n = length();
        auto s = take(n);
        return std::string(s.begin(), s.end());
    }
    Bytes blob()
    {
        const auto n = length();
        auto s = take(n);
        return Bytes(s.begin(), s.end());
    }
    std::vector<double> f64_array(std::size_t n)
    {
        if (n > remaining() / 8)
            fail("truncated array");
        std::vector<double> out(n);
        for (auto& d : out)
            d = f64();
        return out;
    }
    void expect_magic(std::string_view magic)
    {
        auto s = take(magic.size());
        if (std::string_view(reinterpret_cast<const char*>(s.data()), s.size()) != magic)
            fail("bad magic, expected " + std::string(magic));
    }

    std::size_t offset() const { return pos_; }
    std::size_t remaining() const { return data_.size() - pos_; }
    std::span<const std::uint8_t> consumed() const { return data_.first(pos_); }

    [[noreturn]] void fail(const std::string& msg) const { throw CorruptDataError(what_ + ": " + msg); }

private:
    std::size_t length()
    {
        const auto n = u64();
        if (n > remaining())
            fail("truncated stream");
        return static_cast<std::size_t>(n);
    }

    std::span<const std::uint8_t> take(std::size_t n)
    {
        if (n > remaining())
            fail("truncated stream");
        auto s = data_.subspan(pos_, n);
        pos_ += n;
        return s;
    }

    std::uint64_t get_le(std::size_t n)
    {
        auto s = take(n);
        std::uint64_t v = 0;
        for (std::size_t i = 0; i < n; ++i)
            v |= static_cast<std::uint64_t>(s[i]) << (8 * i);
        return v;
    }

    std::span<const std::uint8_t> data_;
    std::string what_;
    std::size_t pos_ = 0;
};

inline Bytes read_file(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw IoError("cannot open " + path.string());
    return Bytes(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> data)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw IoError("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
    if (!out)
        throw IoError("short write to " + path.string());
}

/// Write to a sibling temp file, then rename over the target.
inline void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> data)
{
    auto tmp = path;
    tmp += ".tmp";
    write_file(tmp, data);
    std::filesystem::rename(tmp, path);
}

inline std::string read_text(const std::filesystem::path& path)
{
    auto b = read_file(path);
    return std::string(b.begin(), b.end());
}

} // namespace dip::io
