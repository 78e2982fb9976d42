#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace cavm::io {

using Bytes = std::vector<std::uint8_t>;

/// Writes to a sibling temporary file, then renames over `path`, so readers
/// never observe a partial file.
void write_atomic(const std::filesystem::path& path, const Bytes& bytes);
Bytes read_file(const std::filesystem::path& path);

inline void put_u32(Bytes& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

inline void put_u64(Bytes& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

inline void put_f32(Bytes& out, float v) { put_u32(out, std::bit_cast<std::uint32_t>(v)); }

inline void put_bytes(Bytes& out, std::string_view s) { out.insert(out.end(), s.begin(), s.end()); }

/// Sequential little-endian reader; throws IoError on reads past the end.
class Reader {
public:
    Reader(const Bytes& bytes, std::string context) : bytes_(bytes), context_(std::move(context)) {}

    std::uint32_t u32();
    std::uint64_t u64();
    float f32() { return std::bit_cast<float>(u32()); }
    std::string string(std::size_t n);
    std::size_t remaining() const { return bytes_.size() - pos_; }
    std::size_t position() const { return pos_; }

private:
    void need(std::size_t n) const;

    const Bytes& bytes_;
    std::string context_;
    std::size_t pos_ = 0;
};

/// 64-bit FNV-1a, used for provenance hashes.
std::uint64_t fnv1a(std::string_view data);
std::string hex64(std::uint64_t v);

} // namespace cavm::io
