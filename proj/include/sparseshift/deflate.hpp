#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>

#include <libdeflate.h>

#include "sparseshift/serialize.hpp"

namespace sparseshift {

inline constexpr int kDefaultDeflateLevel = 6;
inline constexpr int kMaxDeflateLevel = 12;

/// Raw DEFLATE stream (no zlib or gzip wrapper). Levels 0 (stored) to 12.
inline Bytes deflate_raw(std::span<const std::uint8_t> data, int level = kDefaultDeflateLevel) {
    if (level < 0 || level > kMaxDeflateLevel) throw Error("deflate level must be in [0, 12]");
    std::unique_ptr<libdeflate_compressor, decltype(&libdeflate_free_compressor)> c(libdeflate_alloc_compressor(level),
                                                                                   &libdeflate_free_compressor);
    if (!c) throw Error("cannot allocate a DEFLATE compressor");
    Bytes out(libdeflate_deflate_compress_bound(c.get(), data.size()));
    const std::size_t n = libdeflate_deflate_compress(c.get(), data.data(), data.size(), out.data(), out.size());
    if (n == 0) throw Error("deflate failed");
    out.resize(n);
    return out;
}

/// Inverse of deflate_raw. `size` is the exact inflated length.
inline Bytes inflate_raw(std::span<const std::uint8_t> data, std::size_t size) {
    thread_local std::unique_ptr<libdeflate_decompressor, decltype(&libdeflate_free_decompressor)> d(
        libdeflate_alloc_decompressor(), &libdeflate_free_decompressor);
    if (!d) throw CorruptPackageError("cannot allocate a DEFLATE decompressor");
    Bytes out(size);
    const auto rc = libdeflate_deflate_decompress(d.get(), data.data(), data.size(), out.data(), out.size(), nullptr);
    if (rc != LIBDEFLATE_SUCCESS) {
        const char* why = rc == LIBDEFLATE_BAD_DATA            ? "invalid stream"
                          : rc == LIBDEFLATE_SHORT_OUTPUT      ? "stream shorter than recorded size"
                          : rc == LIBDEFLATE_INSUFFICIENT_SPACE ? "stream longer than recorded size"
                                                                : "unknown failure";
        throw CorruptPackageError(std::string("inflate failed: ") + why);
    }
    return out;
}

inline std::uint32_t crc32_of(std::span<const std::uint8_t> data) { return libdeflate_crc32(0, data.data(), data.size()); }

} // namespace sparseshift
