#pragma once

// ".dms" model file. All integers little-endian.
//
//   offset  size  field
//   0       4     magic "DNMS"
//   4       2     version (u16) = 1
//   6       2     reserved, 0
//   8       4     node count N (u32)
//   12      24*N  node table, one record per node:
//                   u8 kind, u8 flags, u16 reserved,
//                   u32 input override, u32 conv predecessor,
//                   u32 p0, u32 p1, u32 p2 (kind-specific hyperparameters)
//   ...           tensor blobs in node order, each:
//                   u8 rank, 3 reserved bytes, u32 dims[rank], f32 data[prod(dims)]
//   ...           u32 manifest length M, then M bytes of UTF-8 JSON
//                 {"input_shape":[...],"metrics":{...},"name":"...","num_classes":K}
//
// Flags: bit0 has bias, bit1 protected, bit2 input override set, bit3 conv predecessor set.
// Hyperparameters: conv (stride, padding, 0); pool (kernel, stride, 0);
// batchnorm (eps as f32 bits, 0, 0); add (other, 0, 0); others zero.
// Tensors per node: conv weight[,bias]; batchnorm gamma, beta, mean, var; linear weight[,bias].

#include <bit>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "sparseshift/error.hpp"
#include "sparseshift/model.hpp"

namespace sparseshift {

using Bytes = std::vector<std::uint8_t>;

inline constexpr std::uint16_t kModelFormatVersion = 1;
inline constexpr std::size_t kModelHeaderSize = 12;
inline constexpr std::size_t kNodeRecordSize = 24;

namespace io {

class ByteWriter {
public:
    void u8(std::uint8_t v) { out_.push_back(v); }
    void u16(std::uint16_t v) {
        for (int i = 0; i < 2; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void u64(std::uint64_t v) {
        for (int i = 0; i < 8; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
    void bytes(std::span<const std::uint8_t> b) { out_.insert(out_.end(), b.begin(), b.end()); }
    void text(std::string_view s) { out_.insert(out_.end(), s.begin(), s.end()); }

    std::size_t size() const { return out_.size(); }
    Bytes take() && { return std::move(out_); }

private:
    Bytes out_;
};

class ByteReader {
public:
    explicit ByteReader(std::span<const std::uint8_t> data) : data_(data) {}

    std::uint8_t u8() { return need(1), data_[pos_++]; }
    std::uint16_t u16() {
        need(2);
        std::uint16_t v = static_cast<std::uint16_t>(data_[pos_] | (data_[pos_ + 1] << 8));
        pos_ += 2;
        return v;
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(data_[pos_ + i]) << (8 * i);
        pos_ += 4;
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(data_[pos_ + i]) << (8 * i);
        pos_ += 8;
        return v;
    }
    float f32() { return std::bit_cast<float>(u32()); }
    std::span<const std::uint8_t> bytes(std::size_t n) {
        need(n);
        auto s = data_.subspan(pos_, n);
        pos_ += n;
        return s;
    }

    std::size_t offset() const { return pos_; }
    std::size_t remaining() const { return data_.size() - pos_; }

private:
    void need(std::size_t n) const {
        if (data_.size() - pos_ < n) {
            throw FormatError(pos_, "truncated: need " + std::to_string(n) + " bytes, have " +
                                        std::to_string(data_.size() - pos_));
        }
    }

    std::span<const std::uint8_t> data_;
    std::size_t pos_ = 0;
};

inline Bytes read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open " + path.string());
    return Bytes(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("short write to " + path.string());
}

inline void write_tensor(ByteWriter& w, const Tensor& t) {
    w.u8(static_cast<std::uint8_t>(t.rank()));
    w.u8(0);
    w.u16(0);
    for (auto d : t.shape()) w.u32(static_cast<std::uint32_t>(d));
    for (float v : t.values()) w.f32(v);
}

inline Tensor read_tensor(ByteReader& r) {
    const std::size_t at = r.offset();
    const std::size_t rank = r.u8();
    r.u8();
    r.u16();
    if (rank < 1 || rank > 4) throw FormatError(at, "tensor rank " + std::to_string(rank) + " out of range");
    Shape shape(rank);
    std::size_t count = 1;
    for (auto& d : shape) {
        d = r.u32();
        if (d == 0) throw FormatError(r.offset() - 4, "zero tensor dimension");
        count *= d;
    }
    if (count > r.remaining() / 4) throw FormatError(r.offset(), "tensor data exceeds blob length");
    std::vector<float> data(count);
    for (auto& v : data) v = r.f32();
    return Tensor(std::move(shape), std::move(data));
}

} // namespace io

inline nlohmann::json meta_to_json(const ModelMeta& meta) {
    return nlohmann::json{{"name", meta.name},
                          {"input_shape", meta.input_shape},
                          {"num_classes", meta.num_classes},
                          {"metrics", meta.metrics}};
}

inline Bytes serialize(const ModelGraph& model) {
    io::ByteWriter w;
    w.text("DNMS");
    w.u16(kModelFormatVersion);
    w.u16(0);
    w.u32(static_cast<std::uint32_t>(model.size()));

    for (std::size_t j = 0; j < model.size(); ++j) {
        const Node& node = model.nodes[j];
        std::uint8_t flags = 0;
        std::uint32_t p[3] = {0, 0, 0};
        std::visit(
            [&](const auto& layer) {
                using T = std::decay_t<decltype(layer)>;
                if constexpr (std::is_same_v<T, Conv2d>) {
                    if (layer.bias) flags |= 1;
                    p[0] = layer.stride;
                    p[1] = layer.padding;
                } else if constexpr (std::is_same_v<T, Linear>) {
                    if (layer.bias) flags |= 1;
                } else if constexpr (std::is_same_v<T, BatchNorm2d>) {
                    p[0] = std::bit_cast<std::uint32_t>(layer.eps);
                } else if constexpr (std::is_same_v<T, MaxPool2d> || std::is_same_v<T, AvgPool2d>) {
                    p[0] = layer.kernel;
                    p[1] = layer.stride;
                } else if constexpr (std::is_same_v<T, Add>) {
                    p[0] = static_cast<std::uint32_t>(layer.other);
                }
            },
            node.layer);
        if (model.is_protected(j)) flags |= 2;
        if (node.input) flags |= 4;
        const auto& pred = j < model.conv_chain.size() ? model.conv_chain[j] : std::nullopt;
        if (pred) flags |= 8;
        w.u8(static_cast<std::uint8_t>(kind_of(node.layer)));
        w.u8(flags);
        w.u16(0);
        w.u32(node.input ? static_cast<std::uint32_t>(*node.input) : 0);
        w.u32(pred ? static_cast<std::uint32_t>(*pred) : 0);
        for (auto v : p) w.u32(v);
    }

    for (const Node& node : model.nodes) {
        if (const auto* c = std::get_if<Conv2d>(&node.layer)) {
            io::write_tensor(w, c->weight);
            if (c->bias) io::write_tensor(w, *c->bias);
        } else if (const auto* b = std::get_if<BatchNorm2d>(&node.layer)) {
            io::write_tensor(w, b->gamma);
            io::write_tensor(w, b->beta);
            io::write_tensor(w, b->running_mean);
            io::write_tensor(w, b->running_var);
        } else if (const auto* l = std::get_if<Linear>(&node.layer)) {
            io::write_tensor(w, l->weight);
            if (l->bias) io::write_tensor(w, *l->bias);
        }
    }

    const std::string manifest = meta_to_json(model.meta).dump();
    w.u32(static_cast<std::uint32_t>(manifest.size()));
    w.text(manifest);
    return std::move(w).take();
}

inline ModelGraph deserialize(std::span<const std::uint8_t> bytes) {
    io::ByteReader r(bytes);
    auto magic = r.bytes(4);
    if (std::string_view(reinterpret_cast<const char*>(magic.data()), 4) != "DNMS") {
        throw FormatError(0, "bad magic, expected DNMS");
    }
    const auto version = r.u16();
    if (version != kModelFormatVersion) throw FormatError(4, "unsupported version " + std::to_string(version));
    r.u16();
    const std::size_t count_at = r.offset();
    const std::size_t count = r.u32();
    if (count == 0) throw FormatError(count_at, "model has no nodes");
    if (count > r.remaining() / kNodeRecordSize) throw FormatError(count_at, "node table exceeds blob length");

    struct Record {
        std::size_t at;
        LayerKind kind;
        std::uint8_t flags;
        std::uint32_t input, pred, p[3];
    };
    std::vector<Record> table(count);
    for (auto& rec : table) {
        rec.at = r.offset();
        const auto kind = r.u8();
        if (kind > static_cast<std::uint8_t>(LayerKind::Add)) throw FormatError(rec.at, "unknown layer kind " + std::to_string(kind));
        rec.kind = static_cast<LayerKind>(kind);
        rec.flags = r.u8();
        r.u16();
        rec.input = r.u32();
        rec.pred = r.u32();
        for (auto& v : rec.p) v = r.u32();
    }

    ModelGraph model;
    model.conv_chain.assign(count, std::nullopt);
    for (std::size_t j = 0; j < count; ++j) {
        const Record& rec = table[j];
        const bool has_bias = rec.flags & 1;
        Layer layer;
        switch (rec.kind) {
        case LayerKind::Conv2d: {
            Conv2d c;
            c.weight = io::read_tensor(r);
            if (has_bias) c.bias = io::read_tensor(r);
            c.stride = rec.p[0];
            c.padding = rec.p[1];
            layer = std::move(c);
            break;
        }
        case LayerKind::BatchNorm2d: {
            BatchNorm2d b;
            b.gamma = io::read_tensor(r);
            b.beta = io::read_tensor(r);
            b.running_mean = io::read_tensor(r);
            b.running_var = io::read_tensor(r);
            b.eps = std::bit_cast<float>(rec.p[0]);
            layer = std::move(b);
            break;
        }
        case LayerKind::Linear: {
            Linear l;
            l.weight = io::read_tensor(r);
            if (has_bias) l.bias = io::read_tensor(r);
            layer = std::move(l);
            break;
        }
        case LayerKind::ReLU: layer = ReLU{}; break;
        case LayerKind::MaxPool2d: layer = MaxPool2d{rec.p[0], rec.p[1]}; break;
        case LayerKind::AvgPool2d: layer = AvgPool2d{rec.p[0], rec.p[1]}; break;
        case LayerKind::Flatten: layer = Flatten{}; break;
        case LayerKind::Add: layer = Add{rec.p[0]}; break;
        }
        Node node{std::move(layer), std::nullopt};
        if (rec.flags & 4) node.input = rec.input;
        if (rec.flags & 8) model.conv_chain[j] = rec.pred;
        if (rec.flags & 2) model.protected_nodes.insert(j);
        model.nodes.push_back(std::move(node));
    }

    const std::size_t manifest_at = r.offset();
    const std::size_t len = r.u32();
    auto text = r.bytes(len);
    if (r.remaining() != 0) throw FormatError(r.offset(), std::to_string(r.remaining()) + " trailing bytes");
    try {
        auto j = nlohmann::json::parse(text.begin(), text.end());
        model.meta.name = j.at("name").get<std::string>();
        model.meta.input_shape = j.at("input_shape").get<Shape>();
        model.meta.num_classes = j.at("num_classes").get<std::size_t>();
        model.meta.metrics = j.value("metrics", std::map<std::string, double>{});
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(manifest_at, std::string("bad manifest: ") + e.what());
    }

    try {
        validate(model);
        infer_shapes(model);
    } catch (const Error& e) {
        throw FormatError(kModelHeaderSize, std::string("inconsistent model: ") + e.what());
    }
    return model;
}

inline void save_model(const ModelGraph& model, const std::filesystem::path& path) {
    io::write_file(path, serialize(model));
}

inline ModelGraph load_model(const std::filesystem::path& path) { return deserialize(io::read_file(path)); }

} // namespace sparseshift
