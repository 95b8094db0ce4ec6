#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "sparseshift/model.hpp"

namespace sparseshift {

/// Kaiming-normal (fan-in, ReLU gain) initialised tensor.
inline Tensor kaiming_normal(Shape shape, std::size_t fan_in, std::mt19937_64& rng) {
    Tensor t(std::move(shape));
    std::normal_distribution<float> dist(0.0f, std::sqrt(2.0f / static_cast<float>(fan_in)));
    for (float& v : t.values()) v = dist(rng);
    return t;
}

inline BatchNorm2d identity_batchnorm(std::size_t channels, float eps = 1e-5f) {
    return BatchNorm2d{Tensor({channels}, 1.0f), Tensor({channels}, 0.0f), Tensor({channels}, 0.0f),
                       Tensor({channels}, 1.0f), eps};
}

/**
 * VGG-style stack. `layout` entries > 0 are 3x3 conv widths (padding 1),
 * 0 is a 2x2 max pool. The head is an optional average pool, a flatten and a
 * single linear classifier.
 */
struct VggConfig {
    std::string name = "vgg";
    Shape input_shape{3, 32, 32};
    std::size_t num_classes = 10;
    std::vector<int> layout;
    bool batch_norm = true;
    bool conv_bias = false;
    std::uint32_t head_avgpool = 0; // kernel of the pre-flatten average pool, 0 for none
    std::uint64_t seed = 0;
};

inline ModelGraph make_vgg(const VggConfig& cfg) {
    std::mt19937_64 rng(cfg.seed);
    ModelBuilder b(cfg.name, cfg.input_shape, cfg.num_classes);
    std::size_t ch = cfg.input_shape.at(0), h = cfg.input_shape.at(1), w = cfg.input_shape.at(2);
    for (int entry : cfg.layout) {
        if (entry == 0) {
            b.maxpool(2, 2);
            h /= 2;
            w /= 2;
            continue;
        }
        const auto out = static_cast<std::size_t>(entry);
        std::optional<Tensor> bias;
        if (cfg.conv_bias) bias = Tensor({out}, 0.0f);
        b.conv(kaiming_normal({out, ch, 3, 3}, ch * 9, rng), std::move(bias), 1, 1);
        if (cfg.batch_norm) b.add(identity_batchnorm(out));
        b.relu();
        ch = out;
    }
    if (cfg.head_avgpool) {
        b.avgpool(cfg.head_avgpool, cfg.head_avgpool);
        h /= cfg.head_avgpool;
        w /= cfg.head_avgpool;
    }
    b.flatten();
    const std::size_t features = ch * h * w;
    b.linear(kaiming_normal({cfg.num_classes, features}, features, rng), Tensor({cfg.num_classes}, 0.0f));
    return b.build();
}

/// The single-linear-layer VGG-16 used by lottery-ticket codebases, sized for 32x32 inputs.
inline VggConfig vgg16_config() {
    VggConfig c;
    c.name = "vgg16";
    c.layout = {64, 64, 0, 128, 128, 0, 256, 256, 256, 0, 512, 512, 512, 0, 512, 512, 512};
    c.head_avgpool = 2;
    return c;
}

/// Small VGG-style network trained on the bundled synthetic dataset.
/// `width` multiplies every channel count.
inline VggConfig toy_vgg_config(std::size_t width = 1) {
    VggConfig c;
    c.name = width == 1 ? "toy-vgg" : "toy-vgg-w" + std::to_string(width);
    c.input_shape = {1, 32, 32};
    c.num_classes = 8;
    const int w = static_cast<int>(width);
    c.layout = {16 * w, 0, 0, 32 * w, 0, 64 * w, 64 * w, 0};
    return c;
}

/// Scaled VGG with eight convs; `width` multiplies every channel count.
inline VggConfig wide_vgg_config(std::size_t width, std::uint64_t seed = 0) {
    VggConfig c;
    c.name = "vgg8-w" + std::to_string(width);
    c.input_shape = {3, 32, 32};
    c.num_classes = 10;
    const int w = static_cast<int>(width);
    c.layout = {w, w, 0, 2 * w, 2 * w, 0, 4 * w, 4 * w, 0, 8 * w, 8 * w, 0};
    c.seed = seed;
    return c;
}

/**
 * Residual toy network: stem conv, `blocks` basic blocks (conv-bn-relu-conv-bn
 * + identity add + relu), then one downsampling block with a strided 1x1
 * projection shortcut, pooling and a linear head.
 */
struct ResNetConfig {
    std::string name = "toy-resnet";
    Shape input_shape{3, 16, 16};
    std::size_t num_classes = 10;
    std::size_t width = 8;
    std::size_t blocks = 2;
    std::uint64_t seed = 0;
};

inline ModelGraph make_toy_resnet(const ResNetConfig& cfg) {
    std::mt19937_64 rng(cfg.seed);
    ModelBuilder b(cfg.name, cfg.input_shape, cfg.num_classes);
    const std::size_t in = cfg.input_shape.at(0), w = cfg.width;
    b.conv(kaiming_normal({w, in, 3, 3}, in * 9, rng), std::nullopt, 1, 1);
    b.add(identity_batchnorm(w));
    b.relu();
    for (std::size_t i = 0; i < cfg.blocks; ++i) {
        const std::size_t block_in = b.next_index() - 1;
        b.conv(kaiming_normal({w, w, 3, 3}, w * 9, rng), std::nullopt, 1, 1);
        b.add(identity_batchnorm(w));
        b.relu();
        b.conv(kaiming_normal({w, w, 3, 3}, w * 9, rng), std::nullopt, 1, 1);
        b.add(identity_batchnorm(w));
        b.residual_add(block_in);
        b.relu();
    }
    // Downsampling block: main path stride 2, projection shortcut 1x1 stride 2.
    const std::size_t block_in = b.next_index() - 1;
    const std::size_t w2 = 2 * w;
    b.conv(kaiming_normal({w2, w, 3, 3}, w * 9, rng), std::nullopt, 2, 1);
    b.add(identity_batchnorm(w2));
    b.relu();
    b.conv(kaiming_normal({w2, w2, 3, 3}, w2 * 9, rng), std::nullopt, 1, 1);
    b.add(identity_batchnorm(w2));
    const std::size_t main_out = b.next_index() - 1;
    b.add(Conv2d{kaiming_normal({w2, w, 1, 1}, w, rng), std::nullopt, 2, 0}, block_in);
    b.add(identity_batchnorm(w2));
    b.add(Add{main_out});
    b.relu();
    const std::size_t spatial = cfg.input_shape.at(1) / 2;
    b.avgpool(static_cast<std::uint32_t>(spatial), static_cast<std::uint32_t>(spatial));
    b.flatten();
    b.linear(kaiming_normal({cfg.num_classes, w2}, w2, rng), Tensor({cfg.num_classes}, 0.0f));
    return b.build();
}

} // namespace sparseshift
