#pragma once

// Exchange format for weights produced by other frameworks: a JSON manifest
// listing layers, with every tensor stored as a raw little-endian f32 file
// next to it.
//
//   {
//     "name": "vgg", "input_shape": [3, 32, 32], "num_classes": 10,
//     "protected": [4],                              // optional
//     "layers": [
//       {"kind": "conv2d", "stride": 1, "padding": 1,
//        "weight": {"file": "n0_weight.f32", "shape": [64, 3, 3, 3]},
//        "bias":   {"file": "n0_bias.f32",   "shape": [64]}},
//       {"kind": "batchnorm2d", "eps": 1e-5, "gamma": {...}, "beta": {...},
//        "running_mean": {...}, "running_var": {...}},
//       {"kind": "relu"}, {"kind": "maxpool2d", "kernel": 2, "stride": 2},
//       {"kind": "add", "other": 3}, {"kind": "flatten"},
//       {"kind": "linear", "weight": {...}, "bias": {...}, "input": 7}
//     ]
//   }
//
// "input" on any layer overrides its default (previous node) source.

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>

#include <json.hpp>

#include "sparseshift/model.hpp"
#include "sparseshift/serialize.hpp"

namespace sparseshift {

namespace detail {

inline Tensor read_raw_tensor(const std::filesystem::path& dir, const nlohmann::json& spec) {
    const auto shape = spec.at("shape").get<Shape>();
    const auto path = dir / spec.at("file").get<std::string>();
    const Bytes raw = io::read_file(path);
    const std::size_t expected = shape_size(shape) * 4;
    if (raw.size() != expected) {
        throw FormatError(raw.size(), path.string() + ": expected " + std::to_string(expected) + " bytes for shape " +
                                          shape_string(shape));
    }
    io::ByteReader r(raw);
    std::vector<float> data(shape_size(shape));
    for (auto& v : data) v = r.f32();
    return Tensor(shape, std::move(data));
}

inline nlohmann::json write_raw_tensor(const std::filesystem::path& dir, const std::string& file, const Tensor& t) {
    io::ByteWriter w;
    for (float v : t.values()) w.f32(v);
    io::write_file(dir / file, std::move(w).take());
    return {{"file", file}, {"shape", t.shape()}};
}

} // namespace detail

/// Reads a manifest + raw-tensor directory. Topology is derived from the layer list.
inline ModelGraph import_model(const std::filesystem::path& manifest_path) {
    std::ifstream in(manifest_path);
    if (!in) throw Error("cannot open " + manifest_path.string());
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(0, manifest_path.string() + ": " + e.what());
    }
    const auto dir = manifest_path.parent_path();

    try {
        ModelBuilder b(j.value("name", std::string{"imported"}), j.at("input_shape").get<Shape>(),
                       j.at("num_classes").get<std::size_t>());
        for (const auto& l : j.at("layers")) {
            const auto kind = l.at("kind").get<std::string>();
            std::optional<std::size_t> input;
            if (l.contains("input")) input = l["input"].get<std::size_t>();
            auto opt_tensor = [&](const char* key) -> std::optional<Tensor> {
                if (!l.contains(key) || l[key].is_null()) return std::nullopt;
                return detail::read_raw_tensor(dir, l[key]);
            };
            if (kind == "conv2d") {
                b.add(Conv2d{detail::read_raw_tensor(dir, l.at("weight")), opt_tensor("bias"),
                             l.value("stride", 1u), l.value("padding", 0u)},
                      input);
            } else if (kind == "batchnorm2d") {
                b.add(BatchNorm2d{detail::read_raw_tensor(dir, l.at("gamma")), detail::read_raw_tensor(dir, l.at("beta")),
                                  detail::read_raw_tensor(dir, l.at("running_mean")),
                                  detail::read_raw_tensor(dir, l.at("running_var")), l.value("eps", 1e-5f)},
                      input);
            } else if (kind == "linear") {
                b.add(Linear{detail::read_raw_tensor(dir, l.at("weight")), opt_tensor("bias")}, input);
            } else if (kind == "relu") {
                b.add(ReLU{}, input);
            } else if (kind == "maxpool2d") {
                b.add(MaxPool2d{l.value("kernel", 2u), l.value("stride", 2u)}, input);
            } else if (kind == "avgpool2d") {
                b.add(AvgPool2d{l.value("kernel", 2u), l.value("stride", 2u)}, input);
            } else if (kind == "flatten") {
                b.add(Flatten{}, input);
            } else if (kind == "add") {
                b.add(Add{l.at("other").get<std::size_t>()}, input);
            } else {
                throw FormatError(0, "unknown layer kind '" + kind + "'");
            }
        }
        for (auto p : j.value("protected", std::vector<std::size_t>{})) b.protect(p);
        return b.build();
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(0, manifest_path.string() + ": " + e.what());
    }
}

/// Writes `model` as a manifest plus one raw f32 file per tensor into `dir`.
inline void export_model(const ModelGraph& model, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    nlohmann::json layers = nlohmann::json::array();
    for (std::size_t i = 0; i < model.size(); ++i) {
        const Node& node = model.nodes[i];
        nlohmann::json l{{"kind", kind_name(kind_of(node.layer))}};
        const std::string p = "n" + std::to_string(i) + "_";
        std::visit(
            [&](const auto& layer) {
                using T = std::decay_t<decltype(layer)>;
                if constexpr (std::is_same_v<T, Conv2d>) {
                    l["stride"] = layer.stride;
                    l["padding"] = layer.padding;
                    l["weight"] = detail::write_raw_tensor(dir, p + "weight.f32", layer.weight);
                    if (layer.bias) l["bias"] = detail::write_raw_tensor(dir, p + "bias.f32", *layer.bias);
                } else if constexpr (std::is_same_v<T, BatchNorm2d>) {
                    l["eps"] = layer.eps;
                    l["gamma"] = detail::write_raw_tensor(dir, p + "gamma.f32", layer.gamma);
                    l["beta"] = detail::write_raw_tensor(dir, p + "beta.f32", layer.beta);
                    l["running_mean"] = detail::write_raw_tensor(dir, p + "mean.f32", layer.running_mean);
                    l["running_var"] = detail::write_raw_tensor(dir, p + "var.f32", layer.running_var);
                } else if constexpr (std::is_same_v<T, Linear>) {
                    l["weight"] = detail::write_raw_tensor(dir, p + "weight.f32", layer.weight);
                    if (layer.bias) l["bias"] = detail::write_raw_tensor(dir, p + "bias.f32", *layer.bias);
                } else if constexpr (std::is_same_v<T, MaxPool2d> || std::is_same_v<T, AvgPool2d>) {
                    l["kernel"] = layer.kernel;
                    l["stride"] = layer.stride;
                } else if constexpr (std::is_same_v<T, Add>) {
                    l["other"] = layer.other;
                }
            },
            node.layer);
        if (node.input) l["input"] = *node.input;
        layers.push_back(std::move(l));
    }
    nlohmann::json j{{"name", model.meta.name},
                     {"input_shape", model.meta.input_shape},
                     {"num_classes", model.meta.num_classes},
                     {"protected", model.protected_nodes},
                     {"layers", std::move(layers)}};
    std::ofstream(dir / "model.json") << j.dump(2) << "\n";
}

} // namespace sparseshift
