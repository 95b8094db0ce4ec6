#pragma once

// Mask sidecar file ("<model>.mask"), little-endian:
//   "DNMK", u16 version = 1, u16 reserved, u32 tensor count T,
//   then per tensor in node order: u32 node index, u8 rank, 3 reserved bytes,
//   u32 dims[rank], ceil(prod(dims)/8) bytes of keep bits (LSB first).

#include <cstdint>
#include <map>
#include <span>
#include <string_view>
#include <vector>

#include "sparseshift/model.hpp"
#include "sparseshift/serialize.hpp"

namespace sparseshift {

struct MaskTensor {
    Shape shape;
    std::vector<std::uint8_t> keep; // 1 = kept, 0 = masked

    std::size_t kept() const {
        std::size_t n = 0;
        for (auto k : keep) n += k;
        return n;
    }
    bool operator==(const MaskTensor&) const = default;
};

/// Binary keep-mask per prunable weight tensor, keyed by node index.
struct SparsityMask {
    std::map<std::size_t, MaskTensor> tensors;

    static SparsityMask ones(const ModelGraph& model) {
        SparsityMask m;
        for (auto j : prunable_nodes(model)) {
            const Tensor& w = prunable_weight(model, j);
            m.tensors[j] = MaskTensor{w.shape(), std::vector<std::uint8_t>(w.size(), 1)};
        }
        return m;
    }

    std::size_t kept() const {
        std::size_t n = 0;
        for (const auto& [_, t] : tensors) n += t.kept();
        return n;
    }
    std::size_t total() const {
        std::size_t n = 0;
        for (const auto& [_, t] : tensors) n += t.keep.size();
        return n;
    }

    bool matches(const ModelGraph& model) const {
        auto nodes = prunable_nodes(model);
        if (nodes.size() != tensors.size()) return false;
        for (auto j : nodes) {
            auto it = tensors.find(j);
            if (it == tensors.end() || it->second.shape != prunable_weight(model, j).shape()) return false;
        }
        return true;
    }

    void check(const ModelGraph& model) const {
        if (!matches(model)) throw StructureError("mask does not match the model's prunable tensors");
    }

    /// Zeroes every masked weight.
    void apply(ModelGraph& model) const {
        check(model);
        for (const auto& [j, t] : tensors) {
            Tensor& w = prunable_weight(model, j);
            for (std::size_t i = 0; i < w.size(); ++i) {
                if (!t.keep[i]) w[i] = 0.0f;
            }
        }
    }

    /// True when every entry kept here is also kept in `other`.
    bool subset_of(const SparsityMask& other) const {
        if (tensors.size() != other.tensors.size()) return false;
        for (const auto& [j, t] : tensors) {
            auto it = other.tensors.find(j);
            if (it == other.tensors.end() || it->second.keep.size() != t.keep.size()) return false;
            for (std::size_t i = 0; i < t.keep.size(); ++i) {
                if (t.keep[i] && !it->second.keep[i]) return false;
            }
        }
        return true;
    }

    bool operator==(const SparsityMask&) const = default;
};

inline Bytes encode_mask(const SparsityMask& mask) {
    io::ByteWriter w;
    w.text("DNMK");
    w.u16(1);
    w.u16(0);
    w.u32(static_cast<std::uint32_t>(mask.tensors.size()));
    for (const auto& [node, t] : mask.tensors) {
        w.u32(static_cast<std::uint32_t>(node));
        w.u8(static_cast<std::uint8_t>(t.shape.size()));
        w.u8(0);
        w.u16(0);
        for (auto d : t.shape) w.u32(static_cast<std::uint32_t>(d));
        std::vector<std::uint8_t> packed((t.keep.size() + 7) / 8, 0);
        for (std::size_t i = 0; i < t.keep.size(); ++i) {
            if (t.keep[i]) packed[i / 8] |= static_cast<std::uint8_t>(1u << (i % 8));
        }
        w.bytes(packed);
    }
    return std::move(w).take();
}

inline SparsityMask decode_mask(std::span<const std::uint8_t> bytes) {
    io::ByteReader r(bytes);
    auto magic = r.bytes(4);
    if (std::string_view(reinterpret_cast<const char*>(magic.data()), 4) != "DNMK") {
        throw FormatError(0, "bad magic, expected DNMK");
    }
    if (auto v = r.u16(); v != 1) throw FormatError(4, "unsupported mask version " + std::to_string(v));
    r.u16();
    const std::size_t count = r.u32();
    SparsityMask mask;
    for (std::size_t i = 0; i < count; ++i) {
        const std::size_t at = r.offset();
        const std::size_t node = r.u32();
        const std::size_t rank = r.u8();
        r.u8();
        r.u16();
        if (rank < 1 || rank > 4) throw FormatError(at, "mask tensor rank out of range");
        MaskTensor t;
        t.shape.resize(rank);
        for (auto& d : t.shape) d = r.u32();
        const std::size_t n = shape_size(t.shape);
        auto packed = r.bytes((n + 7) / 8);
        t.keep.resize(n);
        for (std::size_t k = 0; k < n; ++k) t.keep[k] = (packed[k / 8] >> (k % 8)) & 1u;
        if (!mask.tensors.emplace(node, std::move(t)).second) throw FormatError(at, "duplicate mask tensor");
    }
    if (r.remaining()) throw FormatError(r.offset(), "trailing bytes after mask");
    return mask;
}

} // namespace sparseshift
