#pragma once

// Labelled image data.
//
// Raw-tensor directory layout (all little-endian):
//   dataset.json          {"sample_shape":[C,H,W], "num_classes":K, "train_count":N, "test_count":M}
//   train_images.f32      N*C*H*W reals
//   train_labels.u32      N labels
//   test_images.f32, test_labels.u32

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "sparseshift/serialize.hpp"
#include "sparseshift/tensor.hpp"

namespace sparseshift {

struct Split {
    Tensor images; // [N, sample shape...]
    std::vector<std::uint32_t> labels;
    std::optional<Tensor> targets; // [N, outputs], regression data only

    std::size_t size() const { return images.rank() == 0 ? 0 : images.dim(0); }
};

struct Dataset {
    Split train;
    Split test;
    std::size_t num_classes = 0;

    Shape sample_shape() const {
        const Shape& s = train.images.shape();
        return Shape(s.begin() + 1, s.end());
    }
};

/// Rows `idx` of a split as a new batch.
inline Split gather(const Split& split, std::span<const std::size_t> idx) {
    const std::size_t per = split.images.slice_size();
    Shape shape = split.images.shape();
    shape[0] = idx.size();
    Split out;
    out.images = Tensor(shape);
    out.labels.resize(idx.size());
    std::optional<Shape> tshape;
    if (split.targets) {
        tshape = split.targets->shape();
        (*tshape)[0] = idx.size();
        out.targets = Tensor(*tshape);
    }
    for (std::size_t i = 0; i < idx.size(); ++i) {
        std::copy_n(split.images.data() + idx[i] * per, per, out.images.data() + i * per);
        out.labels[i] = split.labels[idx[i]];
        if (split.targets) {
            const std::size_t tp = split.targets->slice_size();
            std::copy_n(split.targets->data() + idx[i] * tp, tp, out.targets->data() + i * tp);
        }
    }
    return out;
}

/**
 * Synthetic texture classes: each image is a Gaussian blob at a random
 * position whose interior carries an oriented sinusoidal grating. The class
 * fixes the grating's orientation (4 choices) and period (2 choices); phase,
 * blob position, blob width, contrast and pixel noise are random.
 */
struct SyntheticConfig {
    std::size_t train_count = 512;
    std::size_t test_count = 256;
    std::size_t num_classes = 8;
    std::size_t image_size = 32;
    float noise = 0.2f;
    std::uint64_t seed = 1;
};

inline double texture_period(std::size_t cls) { return cls < 4 ? 3.0 : 6.0; }
inline double texture_angle(std::size_t cls) { return static_cast<double>(cls % 4) * std::numbers::pi / 4.0; }

inline Split render_textures(std::size_t count, const SyntheticConfig& cfg, std::mt19937_64& rng) {
    const std::size_t s = cfg.image_size;
    Split split;
    if (count == 0) return split;
    split.images = Tensor({count, 1, s, s});
    split.labels.resize(count);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::normal_distribution<double> noise(0.0, cfg.noise);
    for (std::size_t i = 0; i < count; ++i) {
        const auto cls = static_cast<std::size_t>(i % cfg.num_classes);
        split.labels[i] = static_cast<std::uint32_t>(cls);
        const double angle = texture_angle(cls), freq = 2.0 * std::numbers::pi / texture_period(cls);
        const double phase = unit(rng) * 2.0 * std::numbers::pi;
        const double cx = s * (0.3 + 0.4 * unit(rng)), cy = s * (0.3 + 0.4 * unit(rng));
        const double sigma = s * (0.18 + 0.1 * unit(rng));
        const double contrast = 0.8 + 0.4 * unit(rng);
        float* img = split.images.data() + i * s * s;
        for (std::size_t y = 0; y < s; ++y) {
            for (std::size_t x = 0; x < s; ++x) {
                const double dx = x - cx, dy = y - cy;
                const double env = std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
                const double wave = std::cos(freq * (x * std::cos(angle) + y * std::sin(angle)) + phase);
                img[y * s + x] = static_cast<float>(contrast * env * wave + noise(rng));
            }
        }
    }
    // Interleave classes, then shuffle so batches are mixed.
    std::vector<std::size_t> order(count);
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t i = count; i > 1; --i) std::swap(order[i - 1], order[rng() % i]);
    return gather(split, order);
}

/// Disjoint splits: train and test are drawn from independent generator streams.
inline Dataset make_synthetic(const SyntheticConfig& cfg) {
    if (cfg.num_classes == 0 || cfg.num_classes > 8) throw Error("synthetic dataset supports 1-8 classes");
    Dataset d;
    d.num_classes = cfg.num_classes;
    std::mt19937_64 train_rng(cfg.seed * 2 + 1), test_rng(cfg.seed * 2 + 2);
    d.train = render_textures(cfg.train_count, cfg, train_rng);
    d.test = render_textures(cfg.test_count, cfg, test_rng);
    return d;
}

namespace detail {

inline void write_split(const Split& s, const std::filesystem::path& images, const std::filesystem::path& labels) {
    io::ByteWriter wi;
    for (float v : s.images.values()) wi.f32(v);
    io::write_file(images, std::move(wi).take());
    io::ByteWriter wl;
    for (auto l : s.labels) wl.u32(l);
    io::write_file(labels, std::move(wl).take());
}

inline Split read_split(const Shape& sample, std::size_t count, std::size_t classes,
                        const std::filesystem::path& images, const std::filesystem::path& labels) {
    Shape shape{count};
    shape.insert(shape.end(), sample.begin(), sample.end());
    const Bytes img = io::read_file(images);
    if (img.size() != shape_size(shape) * 4) {
        throw FormatError(img.size(), images.string() + ": expected " + std::to_string(shape_size(shape) * 4) + " bytes");
    }
    const Bytes lab = io::read_file(labels);
    if (lab.size() != count * 4) throw FormatError(lab.size(), labels.string() + ": expected " + std::to_string(count * 4) + " bytes");
    Split s;
    std::vector<float> data(shape_size(shape));
    io::ByteReader ri(img);
    for (auto& v : data) v = ri.f32();
    s.images = Tensor(shape, std::move(data));
    io::ByteReader rl(lab);
    s.labels.resize(count);
    for (auto& l : s.labels) {
        l = rl.u32();
        if (l >= classes) throw FormatError(rl.offset() - 4, labels.string() + ": label out of range");
    }
    return s;
}

} // namespace detail

inline void save_dataset(const Dataset& d, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    nlohmann::json j{{"sample_shape", d.sample_shape()},
                     {"num_classes", d.num_classes},
                     {"train_count", d.train.size()},
                     {"test_count", d.test.size()}};
    std::ofstream(dir / "dataset.json") << j.dump(2) << "\n";
    detail::write_split(d.train, dir / "train_images.f32", dir / "train_labels.u32");
    detail::write_split(d.test, dir / "test_images.f32", dir / "test_labels.u32");
}

inline Dataset load_dataset(const std::filesystem::path& dir) {
    std::ifstream in(dir / "dataset.json");
    if (!in) throw Error("cannot open " + (dir / "dataset.json").string());
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(0, std::string("dataset.json: ") + e.what());
    }
    Dataset d;
    try {
        const auto sample = j.at("sample_shape").get<Shape>();
        d.num_classes = j.at("num_classes").get<std::size_t>();
        d.train = detail::read_split(sample, j.at("train_count").get<std::size_t>(), d.num_classes,
                                     dir / "train_images.f32", dir / "train_labels.u32");
        d.test = detail::read_split(sample, j.at("test_count").get<std::size_t>(), d.num_classes,
                                    dir / "test_images.f32", dir / "test_labels.u32");
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(0, std::string("dataset.json: ") + e.what());
    }
    return d;
}

} // namespace sparseshift
