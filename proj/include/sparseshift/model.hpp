#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <type_traits>
#include <utility>
#include <variant>
#include <vector>

#include "sparseshift/error.hpp"
#include "sparseshift/tensor.hpp"

namespace sparseshift {

// ---------------------------------------------------------------------------
// Layers
// ---------------------------------------------------------------------------

struct Conv2d {
    Tensor weight; // [out_ch, in_ch, kh, kw]
    std::optional<Tensor> bias; // [out_ch]
    std::uint32_t stride = 1;
    std::uint32_t padding = 0;

    std::size_t out_channels() const { return weight.dim(0); }
    std::size_t in_channels() const { return weight.dim(1); }
    std::size_t kernel_h() const { return weight.dim(2); }
    std::size_t kernel_w() const { return weight.dim(3); }

    bool operator==(const Conv2d&) const = default;
};

struct BatchNorm2d {
    Tensor gamma;
    Tensor beta;
    Tensor running_mean;
    Tensor running_var;
    float eps = 1e-5f;

    std::size_t channels() const { return gamma.size(); }

    bool operator==(const BatchNorm2d&) const = default;
};

struct Linear {
    Tensor weight; // [out, in]
    std::optional<Tensor> bias; // [out]

    std::size_t out_features() const { return weight.dim(0); }
    std::size_t in_features() const { return weight.dim(1); }

    bool operator==(const Linear&) const = default;
};

struct ReLU {
    bool operator==(const ReLU&) const = default;
};

struct MaxPool2d {
    std::uint32_t kernel = 2;
    std::uint32_t stride = 2;
    bool operator==(const MaxPool2d&) const = default;
};

struct AvgPool2d {
    std::uint32_t kernel = 2;
    std::uint32_t stride = 2;
    bool operator==(const AvgPool2d&) const = default;
};

struct Flatten {
    bool operator==(const Flatten&) const = default;
};

/// Element-wise sum of the previous node's output and the output of node `other`.
struct Add {
    std::size_t other = 0;
    bool operator==(const Add&) const = default;
};

using Layer = std::variant<Conv2d, BatchNorm2d, Linear, ReLU, MaxPool2d, AvgPool2d, Flatten, Add>;

/// Tags match the variant order and are part of the on-disk format.
enum class LayerKind : std::uint8_t {
    Conv2d = 0,
    BatchNorm2d = 1,
    Linear = 2,
    ReLU = 3,
    MaxPool2d = 4,
    AvgPool2d = 5,
    Flatten = 6,
    Add = 7,
};

inline LayerKind kind_of(const Layer& layer) { return static_cast<LayerKind>(layer.index()); }

inline const char* kind_name(LayerKind kind) {
    switch (kind) {
    case LayerKind::Conv2d: return "conv2d";
    case LayerKind::BatchNorm2d: return "batchnorm2d";
    case LayerKind::Linear: return "linear";
    case LayerKind::ReLU: return "relu";
    case LayerKind::MaxPool2d: return "maxpool2d";
    case LayerKind::AvgPool2d: return "avgpool2d";
    case LayerKind::Flatten: return "flatten";
    case LayerKind::Add: return "add";
    }
    return "unknown";
}

// ---------------------------------------------------------------------------
// Graph
// ---------------------------------------------------------------------------

/// One layer plus its primary input. `input` unset means the previous node
/// (or the model input for node 0).
struct Node {
    Layer layer;
    std::optional<std::size_t> input;

    bool operator==(const Node&) const = default;
};

struct ModelMeta {
    std::string name;
    Shape input_shape; // without batch dimension: {C, H, W} or {features}
    std::size_t num_classes = 0;
    std::map<std::string, double> metrics;

    bool operator==(const ModelMeta&) const = default;
};

/**
 * Ordered layer list with conv-chain dependency edges and protection marks.
 *
 * `conv_chain[i]` is set only for conv nodes that have a predecessor conv
 * feeding them; `protected_nodes` holds conv nodes that are never pruned on
 * their output side.
 */
struct ModelGraph {
    std::vector<Node> nodes;
    std::vector<std::optional<std::size_t>> conv_chain;
    std::set<std::size_t> protected_nodes;
    ModelMeta meta;

    bool operator==(const ModelGraph&) const = default;

    std::size_t size() const { return nodes.size(); }
    const Layer& layer(std::size_t i) const { return nodes.at(i).layer; }
    Layer& layer(std::size_t i) { return nodes.at(i).layer; }
    LayerKind kind(std::size_t i) const { return kind_of(layer(i)); }
    bool is_conv(std::size_t i) const { return kind(i) == LayerKind::Conv2d; }
    bool is_protected(std::size_t i) const { return protected_nodes.contains(i); }

    /// Node feeding `i`, or nullopt for the model input.
    std::optional<std::size_t> primary_input(std::size_t i) const {
        if (nodes.at(i).input) return nodes[i].input;
        if (i == 0) return std::nullopt;
        return i - 1;
    }

    std::vector<std::size_t> conv_nodes() const {
        std::vector<std::size_t> out;
        for (std::size_t i = 0; i < nodes.size(); ++i) {
            if (is_conv(i)) out.push_back(i);
        }
        return out;
    }

    std::size_t conv_depth() const { return conv_nodes().size(); }

    template <typename T>
    const T& get(std::size_t i) const {
        const T* p = std::get_if<T>(&nodes.at(i).layer);
        if (!p) throw StructureError("node " + std::to_string(i) + " is " + kind_name(kind(i)));
        return *p;
    }
    template <typename T>
    T& get(std::size_t i) {
        T* p = std::get_if<T>(&nodes.at(i).layer);
        if (!p) throw StructureError("node " + std::to_string(i) + " is " + kind_name(kind(i)));
        return *p;
    }
};

/// Every node reading the output of each node.
inline std::vector<std::vector<std::size_t>> consumer_lists(const ModelGraph& model) {
    std::vector<std::vector<std::size_t>> out(model.size());
    for (std::size_t j = 0; j < model.size(); ++j) {
        if (auto p = model.primary_input(j)) out.at(*p).push_back(j);
        if (const auto* add = std::get_if<Add>(&model.nodes[j].layer)) out.at(add->other).push_back(j);
    }
    return out;
}

/// A layer that reads a conv's channels, reached through channel-preserving layers.
struct ChannelConsumer {
    std::size_t node = 0;
    bool is_linear = false;
    std::vector<std::size_t> via; // transparent nodes between the conv and this consumer
    std::optional<std::size_t> flatten; // set for linear consumers
};

/// Where the channels produced by one conv end up.
struct ConvOutputUse {
    std::vector<ChannelConsumer> consumers;
    std::vector<std::size_t> batchnorms; // BN nodes on the path, indexed by the same channels
    bool reaches_add = false;
    bool reaches_output = false;
    bool unsupported = false; // e.g. a linear layer reading 4-D activations
};

inline ConvOutputUse trace_conv_output(const ModelGraph& model, std::size_t conv,
                                       const std::vector<std::vector<std::size_t>>& consumers) {
    ConvOutputUse use;
    struct Frame {
        std::size_t node;
        std::vector<std::size_t> via;
        std::optional<std::size_t> flatten;
    };
    std::vector<Frame> stack{{conv, {}, std::nullopt}};
    std::set<std::size_t> seen;
    while (!stack.empty()) {
        Frame f = std::move(stack.back());
        stack.pop_back();
        if (consumers[f.node].empty() && f.node + 1 == model.size()) use.reaches_output = true;
        for (std::size_t j : consumers[f.node]) {
            switch (model.kind(j)) {
            case LayerKind::Conv2d:
                if (f.flatten) use.unsupported = true;
                else use.consumers.push_back({j, false, f.via, std::nullopt});
                break;
            case LayerKind::Linear:
                if (!f.flatten) use.unsupported = true;
                else use.consumers.push_back({j, true, f.via, f.flatten});
                break;
            case LayerKind::Add:
                use.reaches_add = true;
                break;
            case LayerKind::BatchNorm2d:
            case LayerKind::ReLU:
            case LayerKind::MaxPool2d:
            case LayerKind::AvgPool2d:
            case LayerKind::Flatten: {
                if (!seen.insert(j).second) break;
                if (model.kind(j) == LayerKind::BatchNorm2d) use.batchnorms.push_back(j);
                Frame next{j, f.via, f.flatten};
                next.via.push_back(j);
                if (model.kind(j) == LayerKind::Flatten) {
                    if (f.flatten) use.unsupported = true;
                    next.flatten = j;
                }
                stack.push_back(std::move(next));
                break;
            }
            }
        }
    }
    return use;
}

inline ConvOutputUse trace_conv_output(const ModelGraph& model, std::size_t conv) {
    return trace_conv_output(model, conv, consumer_lists(model));
}

/**
 * Fills `conv_chain` and `protected_nodes` from the graph structure.
 *
 * A conv is protected when its output reaches a residual Add (this covers
 * projection/downsampling shortcuts), the model output, or a consumer whose
 * input features cannot be filtered by channel. Protection marks already
 * present are kept.
 */
inline void derive_topology(ModelGraph& model) {
    model.conv_chain.assign(model.size(), std::nullopt);
    const auto consumers = consumer_lists(model);
    for (std::size_t j = 0; j < model.size(); ++j) {
        if (!model.is_conv(j)) continue;
        auto p = model.primary_input(j);
        while (p && !model.is_conv(*p)) p = model.primary_input(*p);
        model.conv_chain[j] = p;

        const auto use = trace_conv_output(model, j, consumers);
        if (use.reaches_add || use.reaches_output || use.unsupported) model.protected_nodes.insert(j);
    }
}

inline void validate(const ModelGraph& model) {
    if (model.nodes.empty()) throw StructureError("model has no nodes");
    if (model.conv_chain.size() != model.size()) {
        throw StructureError("conv_chain has " + std::to_string(model.conv_chain.size()) +
                             " entries for " + std::to_string(model.size()) + " nodes");
    }
    for (std::size_t j = 0; j < model.size(); ++j) {
        const Node& node = model.nodes[j];
        if (node.input && *node.input >= j) {
            throw StructureError("node " + std::to_string(j) + " reads from later node " +
                                 std::to_string(*node.input));
        }
        if (const auto* add = std::get_if<Add>(&node.layer)) {
            if (add->other >= j) {
                throw StructureError("add node " + std::to_string(j) + " refers to node " +
                                     std::to_string(add->other) + " which is not earlier");
            }
            if (j == 0) throw StructureError("add cannot be the first node");
        }
        if (const auto* conv = std::get_if<Conv2d>(&node.layer)) {
            if (conv->weight.rank() != 4) throw StructureError("conv weight must be 4-D at node " + std::to_string(j));
            if (conv->bias && (conv->bias->rank() != 1 || conv->bias->size() != conv->out_channels())) {
                throw StructureError("conv bias length does not match out channels at node " + std::to_string(j));
            }
            if (conv->stride == 0) throw StructureError("conv stride must be positive at node " + std::to_string(j));
        }
        if (const auto* bn = std::get_if<BatchNorm2d>(&node.layer)) {
            const auto c = bn->gamma.size();
            if (c == 0 || bn->beta.size() != c || bn->running_mean.size() != c || bn->running_var.size() != c) {
                throw StructureError("batchnorm parameter lengths differ at node " + std::to_string(j));
            }
            for (float v : bn->running_var.values()) {
                if (!(v >= 0.0f)) throw StructureError("batchnorm running_var < 0 at node " + std::to_string(j));
            }
            if (!(bn->eps >= 0.0f)) throw StructureError("batchnorm eps < 0 at node " + std::to_string(j));
        }
        if (const auto* lin = std::get_if<Linear>(&node.layer)) {
            if (lin->weight.rank() != 2) throw StructureError("linear weight must be 2-D at node " + std::to_string(j));
            if (lin->bias && lin->bias->size() != lin->out_features()) {
                throw StructureError("linear bias length does not match out features at node " + std::to_string(j));
            }
        }
        if (const auto* pool = std::get_if<MaxPool2d>(&node.layer); pool && (pool->kernel == 0 || pool->stride == 0)) {
            throw StructureError("pool kernel and stride must be positive at node " + std::to_string(j));
        }
        if (const auto* pool = std::get_if<AvgPool2d>(&node.layer); pool && (pool->kernel == 0 || pool->stride == 0)) {
            throw StructureError("pool kernel and stride must be positive at node " + std::to_string(j));
        }
        if (const auto& pred = model.conv_chain[j]) {
            if (!model.is_conv(j) || *pred >= j || !model.is_conv(*pred)) {
                throw StructureError("conv_chain entry of node " + std::to_string(j) + " is invalid");
            }
        }
    }
    for (std::size_t p : model.protected_nodes) {
        if (p >= model.size() || !model.is_conv(p)) {
            throw StructureError("protected node " + std::to_string(p) + " is not a conv");
        }
    }
}

// ---------------------------------------------------------------------------
// Shapes and counts
// ---------------------------------------------------------------------------

inline std::size_t conv_output_extent(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t pad) {
    if (in + 2 * pad < kernel) return 0;
    return (in + 2 * pad - kernel) / stride + 1;
}

/// Per-node output shape (no batch dimension). Throws ShapeError naming the first bad node.
inline std::vector<Shape> infer_shapes(const ModelGraph& model) {
    std::vector<Shape> out(model.size());
    for (std::size_t j = 0; j < model.size(); ++j) {
        auto p = model.primary_input(j);
        const Shape& in = p ? out.at(*p) : model.meta.input_shape;
        auto need_rank = [&](std::size_t r) {
            if (in.size() != r) {
                throw ShapeError(j, std::string(kind_name(model.kind(j))) + " expects rank " + std::to_string(r) +
                                        " input, got " + shape_string(in));
            }
        };
        std::visit(
            [&](const auto& layer) {
                using T = std::decay_t<decltype(layer)>;
                if constexpr (std::is_same_v<T, Conv2d>) {
                    need_rank(3);
                    if (in[0] != layer.in_channels()) {
                        throw ShapeError(j, "conv expects " + std::to_string(layer.in_channels()) +
                                                " input channels, got " + std::to_string(in[0]));
                    }
                    auto oh = conv_output_extent(in[1], layer.kernel_h(), layer.stride, layer.padding);
                    auto ow = conv_output_extent(in[2], layer.kernel_w(), layer.stride, layer.padding);
                    if (!oh || !ow) throw ShapeError(j, "conv kernel larger than padded input");
                    out[j] = {layer.out_channels(), oh, ow};
                } else if constexpr (std::is_same_v<T, BatchNorm2d>) {
                    need_rank(3);
                    if (in[0] != layer.channels()) throw ShapeError(j, "batchnorm channel mismatch");
                    out[j] = in;
                } else if constexpr (std::is_same_v<T, Linear>) {
                    need_rank(1);
                    if (in[0] != layer.in_features()) {
                        throw ShapeError(j, "linear expects " + std::to_string(layer.in_features()) +
                                                " features, got " + std::to_string(in[0]));
                    }
                    out[j] = {layer.out_features()};
                } else if constexpr (std::is_same_v<T, MaxPool2d> || std::is_same_v<T, AvgPool2d>) {
                    need_rank(3);
                    auto oh = conv_output_extent(in[1], layer.kernel, layer.stride, 0);
                    auto ow = conv_output_extent(in[2], layer.kernel, layer.stride, 0);
                    if (!oh || !ow) throw ShapeError(j, "pool window larger than input");
                    out[j] = {in[0], oh, ow};
                } else if constexpr (std::is_same_v<T, Flatten>) {
                    out[j] = {shape_size(in)};
                } else if constexpr (std::is_same_v<T, Add>) {
                    if (out.at(layer.other) != in) {
                        throw ShapeError(j, "add operands differ: " + shape_string(in) + " vs " +
                                                shape_string(out[layer.other]));
                    }
                    out[j] = in;
                } else {
                    out[j] = in;
                }
            },
            model.nodes[j].layer);
    }
    return out;
}

namespace detail {
template <typename F>
void for_each_parameter(const ModelGraph& model, F&& f) {
    for (const Node& node : model.nodes) {
        if (const auto* c = std::get_if<Conv2d>(&node.layer)) {
            f(c->weight);
            if (c->bias) f(*c->bias);
        } else if (const auto* l = std::get_if<Linear>(&node.layer)) {
            f(l->weight);
            if (l->bias) f(*l->bias);
        } else if (const auto* b = std::get_if<BatchNorm2d>(&node.layer)) {
            f(b->gamma);
            f(b->beta);
        }
    }
}
} // namespace detail

/// Weight and bias entries, including batch-norm affine parameters (running statistics excluded).
inline std::size_t param_count(const ModelGraph& model) {
    std::size_t n = 0;
    detail::for_each_parameter(model, [&](const Tensor& t) { n += t.size(); });
    return n;
}

inline std::size_t nonzero_count(const ModelGraph& model) {
    std::size_t n = 0;
    detail::for_each_parameter(model, [&](const Tensor& t) { n += t.count_nonzero(); });
    return n;
}

/// Node indices whose weight tensor is subject to magnitude masking (conv and linear).
inline std::vector<std::size_t> prunable_nodes(const ModelGraph& model) {
    std::vector<std::size_t> out;
    for (std::size_t j = 0; j < model.size(); ++j) {
        auto k = model.kind(j);
        if (k == LayerKind::Conv2d || k == LayerKind::Linear) out.push_back(j);
    }
    return out;
}

inline Tensor& prunable_weight(ModelGraph& model, std::size_t node) {
    if (auto* c = std::get_if<Conv2d>(&model.nodes.at(node).layer)) return c->weight;
    return model.get<Linear>(node).weight;
}
inline const Tensor& prunable_weight(const ModelGraph& model, std::size_t node) {
    if (const auto* c = std::get_if<Conv2d>(&model.nodes.at(node).layer)) return c->weight;
    return model.get<Linear>(node).weight;
}

inline std::size_t prunable_param_count(const ModelGraph& model) {
    std::size_t n = 0;
    for (auto j : prunable_nodes(model)) n += prunable_weight(model, j).size();
    return n;
}

inline std::size_t prunable_nonzero_count(const ModelGraph& model) {
    std::size_t n = 0;
    for (auto j : prunable_nodes(model)) n += prunable_weight(model, j).count_nonzero();
    return n;
}

/// Dense parameter count over nonzero count.
inline double compression_ratio(std::size_t dense_params, std::size_t nonzero) {
    return nonzero == 0 ? 0.0 : static_cast<double>(dense_params) / static_cast<double>(nonzero);
}

/// Multiply-accumulates for one sample.
inline std::size_t mac_count(const ModelGraph& model) {
    const auto shapes = infer_shapes(model);
    std::size_t macs = 0;
    for (std::size_t j = 0; j < model.size(); ++j) {
        if (const auto* c = std::get_if<Conv2d>(&model.nodes[j].layer)) {
            macs += c->weight.size() * shapes[j][1] * shapes[j][2];
        } else if (const auto* l = std::get_if<Linear>(&model.nodes[j].layer)) {
            macs += l->weight.size();
        }
    }
    return macs;
}

// ---------------------------------------------------------------------------
// Builder
// ---------------------------------------------------------------------------

/// Appends layers in order; build() derives topology and validates.
class ModelBuilder {
public:
    ModelBuilder(std::string name, Shape input_shape, std::size_t num_classes) {
        model_.meta.name = std::move(name);
        model_.meta.input_shape = std::move(input_shape);
        model_.meta.num_classes = num_classes;
    }

    ModelBuilder& conv(Tensor weight, std::optional<Tensor> bias = std::nullopt, std::uint32_t stride = 1,
                       std::uint32_t padding = 0) {
        return add(Conv2d{std::move(weight), std::move(bias), stride, padding});
    }
    ModelBuilder& batchnorm(Tensor gamma, Tensor beta, Tensor mean, Tensor var, float eps = 1e-5f) {
        return add(BatchNorm2d{std::move(gamma), std::move(beta), std::move(mean), std::move(var), eps});
    }
    ModelBuilder& linear(Tensor weight, std::optional<Tensor> bias = std::nullopt) {
        return add(Linear{std::move(weight), std::move(bias)});
    }
    ModelBuilder& relu() { return add(ReLU{}); }
    ModelBuilder& maxpool(std::uint32_t kernel = 2, std::uint32_t stride = 2) { return add(MaxPool2d{kernel, stride}); }
    ModelBuilder& avgpool(std::uint32_t kernel = 2, std::uint32_t stride = 2) { return add(AvgPool2d{kernel, stride}); }
    ModelBuilder& flatten() { return add(Flatten{}); }
    ModelBuilder& residual_add(std::size_t other) { return add(Add{other}); }

    /// Appends `layer` reading from `input` instead of the previous node.
    ModelBuilder& add(Layer layer, std::optional<std::size_t> input = std::nullopt) {
        model_.nodes.push_back(Node{std::move(layer), input});
        return *this;
    }

    /// Index the next appended node will get.
    std::size_t next_index() const { return model_.nodes.size(); }

    ModelBuilder& protect(std::size_t node) {
        model_.protected_nodes.insert(node);
        return *this;
    }

    ModelGraph build() const {
        ModelGraph m = model_;
        derive_topology(m);
        validate(m);
        infer_shapes(m);
        return m;
    }

private:
    ModelGraph model_;
};

} // namespace sparseshift
