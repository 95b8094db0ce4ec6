#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <numeric>
#include <string>
#include <vector>

#include <json.hpp>

#include "sparseshift/deflate.hpp"
#include "sparseshift/profile.hpp"
#include "sparseshift/serialize.hpp"

// Package layout (little-endian):
//   "DNPK" | u16 version | u32 manifest length | manifest JSON | blob 0 | blob 1 | ...
// The manifest lists entries in ascending raw size:
//   {"deflate_level":L,"entries":[{"id","raw_size","compressed_size","crc32","metrics"}...]}
// Each blob is a raw DEFLATE stream of one serialized model; crc32 covers the inflated bytes.

namespace sparseshift {

inline constexpr std::uint16_t kPackageFormatVersion = 1;

struct PackageEntry {
    std::string id;
    std::size_t raw_size = 0;
    std::size_t compressed_size = 0;
    std::uint32_t crc32 = 0;
    nlohmann::json metrics = nlohmann::json::object();
};

struct PortfolioPackage {
    int deflate_level = kDefaultDeflateLevel;
    std::vector<PackageEntry> entries;
    std::vector<Bytes> blobs;

    std::size_t size() const { return entries.size(); }
    std::size_t compressed_bytes() const {
        return std::accumulate(blobs.begin(), blobs.end(), std::size_t{0},
                               [](std::size_t s, const Bytes& b) { return s + b.size(); });
    }
    std::size_t raw_bytes() const {
        return std::accumulate(entries.begin(), entries.end(), std::size_t{0},
                               [](std::size_t s, const PackageEntry& e) { return s + e.raw_size; });
    }
};

struct PackageOptions {
    int level = kDefaultDeflateLevel;
    bool include_latency = false; // measured latency makes the package differ between runs
};

/**
 * Serialize, sort by serialized size and deflate each model. Models whose
 * serialized sizes tie keep only the more accurate one, so sizes are strictly
 * ascending.
 */
inline PortfolioPackage deflate_portfolio(const std::vector<ModelGraph>& models, const std::vector<ProfileRecord>& records,
                                          const PackageOptions& opt = {}) {
    if (models.empty()) throw Error("portfolio is empty");
    if (models.size() != records.size()) throw Error("models and records are not aligned");
    std::vector<Bytes> raw;
    raw.reserve(models.size());
    for (const auto& m : models) raw.push_back(serialize(m));

    std::vector<std::size_t> order(models.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (raw[a].size() != raw[b].size()) return raw[a].size() < raw[b].size();
        return records[a].top1_accuracy > records[b].top1_accuracy;
    });

    PortfolioPackage pkg;
    pkg.deflate_level = opt.level;
    for (std::size_t i : order) {
        if (!pkg.entries.empty() && pkg.entries.back().raw_size == raw[i].size()) continue;
        PackageEntry e;
        e.id = records[i].id;
        e.raw_size = raw[i].size();
        e.crc32 = crc32_of(raw[i]);
        try {
            pkg.blobs.push_back(deflate_raw(raw[i], opt.level));
        } catch (const Error& err) {
            throw Error("entry '" + e.id + "': " + err.what());
        }
        e.compressed_size = pkg.blobs.back().size();
        e.metrics = to_json(records[i]);
        if (!opt.include_latency) e.metrics.erase("latency_ms");
        pkg.entries.push_back(std::move(e));
    }
    return pkg;
}

/// Inflated serialization of entry `i`, checked against its CRC-32.
inline Bytes inflate_entry(const PortfolioPackage& pkg, std::size_t i) {
    if (i >= pkg.size()) throw Error("package entry " + std::to_string(i) + " out of range");
    const PackageEntry& e = pkg.entries[i];
    Bytes raw = inflate_raw(pkg.blobs[i], e.raw_size);
    if (crc32_of(raw) != e.crc32) throw CorruptPackageError("entry '" + e.id + "': checksum mismatch");
    return raw;
}

inline ModelGraph load_entry(const PortfolioPackage& pkg, std::size_t i) { return deserialize(inflate_entry(pkg, i)); }

inline Bytes encode_package(const PortfolioPackage& pkg) {
    nlohmann::json entries = nlohmann::json::array();
    for (const auto& e : pkg.entries) {
        entries.push_back({{"id", e.id},
                           {"raw_size", e.raw_size},
                           {"compressed_size", e.compressed_size},
                           {"crc32", e.crc32},
                           {"metrics", e.metrics}});
    }
    const std::string manifest = nlohmann::json{{"deflate_level", pkg.deflate_level}, {"entries", entries}}.dump();
    io::ByteWriter w;
    w.text("DNPK");
    w.u16(kPackageFormatVersion);
    w.u32(static_cast<std::uint32_t>(manifest.size()));
    w.text(manifest);
    for (const auto& b : pkg.blobs) w.bytes(b);
    return std::move(w).take();
}

inline PortfolioPackage decode_package(std::span<const std::uint8_t> bytes) {
    io::ByteReader r(bytes);
    const auto magic = r.bytes(4);
    if (!std::equal(magic.begin(), magic.end(), "DNPK")) throw FormatError(0, "bad package magic");
    if (const auto v = r.u16(); v != kPackageFormatVersion) {
        throw FormatError(4, "unsupported package version " + std::to_string(v));
    }
    const std::size_t manifest_at = r.offset() + 4;
    const auto text = r.bytes(r.u32());
    PortfolioPackage pkg;
    try {
        const auto j = nlohmann::json::parse(text.begin(), text.end());
        pkg.deflate_level = j.at("deflate_level").get<int>();
        for (const auto& e : j.at("entries")) {
            PackageEntry entry;
            entry.id = e.at("id").get<std::string>();
            entry.raw_size = e.at("raw_size").get<std::size_t>();
            entry.compressed_size = e.at("compressed_size").get<std::size_t>();
            entry.crc32 = e.at("crc32").get<std::uint32_t>();
            entry.metrics = e.value("metrics", nlohmann::json::object());
            pkg.entries.push_back(std::move(entry));
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(manifest_at, std::string("package manifest: ") + e.what());
    }
    if (pkg.entries.empty()) throw FormatError(manifest_at, "package has no entries");
    for (std::size_t i = 1; i < pkg.entries.size(); ++i) {
        if (pkg.entries[i].raw_size <= pkg.entries[i - 1].raw_size) {
            throw FormatError(manifest_at, "entries not strictly ascending by size");
        }
    }
    for (const auto& e : pkg.entries) {
        const auto blob = r.bytes(e.compressed_size);
        pkg.blobs.emplace_back(blob.begin(), blob.end());
    }
    if (r.remaining() != 0) throw FormatError(r.offset(), "trailing bytes after last blob");
    return pkg;
}

inline void save_package(const PortfolioPackage& pkg, const std::filesystem::path& path) {
    io::write_file(path, encode_package(pkg));
}

inline PortfolioPackage load_package(const std::filesystem::path& path) { return decode_package(io::read_file(path)); }

} // namespace sparseshift
