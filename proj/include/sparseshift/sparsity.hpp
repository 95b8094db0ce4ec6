#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "sparseshift/model.hpp"

namespace sparseshift {

struct LayerSparsity {
    std::size_t node = 0;
    std::size_t out_channels = 0;
    std::vector<std::size_t> zero_out_channels; // ascending
    bool prunable = true; // false for protected convs

    bool operator==(const LayerSparsity&) const = default;
};

/// Zero output channels of every conv, in node order.
struct SparsityReport {
    std::vector<LayerSparsity> layers;

    const LayerSparsity* find(std::size_t node) const {
        for (const auto& l : layers) {
            if (l.node == node) return &l;
        }
        return nullptr;
    }

    /// Zero channels on layers that may be pruned.
    std::size_t prunable_zero_channels() const {
        std::size_t n = 0;
        for (const auto& l : layers) {
            if (l.prunable) n += l.zero_out_channels.size();
        }
        return n;
    }

    bool empty() const { return prunable_zero_channels() == 0; }
    bool operator==(const SparsityReport&) const = default;
};

inline bool all_zero(std::span<const float> v) {
    return std::all_of(v.begin(), v.end(), [](float x) { return x == 0.0f; });
}

inline SparsityReport analyse_sparsity(const ModelGraph& model) {
    SparsityReport r;
    for (std::size_t j : model.conv_nodes()) {
        const Conv2d& c = model.get<Conv2d>(j);
        LayerSparsity l{j, c.out_channels(), {}, !model.is_protected(j)};
        for (std::size_t o = 0; o < c.out_channels(); ++o) {
            if (all_zero(c.weight.slice(o))) l.zero_out_channels.push_back(o);
        }
        r.layers.push_back(std::move(l));
    }
    return r;
}

/// Verdict for one zero channel: what constant it emits and whether dropping it is exact.
struct ChannelSafety {
    std::size_t node = 0;
    std::size_t channel = 0;
    double activation = 0.0; // constant value reaching the first consumer
    double bound = 0.0; // max |change| of any consumer output when the channel is removed
    bool safe = true;
};

/**
 * A zero channel emits its bias everywhere. That constant is carried through
 * batch norm, ReLU and pooling to each consuming conv or linear layer. Removal
 * is exact when the constant arriving there is 0, or when the consumer's
 * weights reading that channel are all 0.
 */
inline std::vector<ChannelSafety> assess_safety(const ModelGraph& model, const SparsityReport& report) {
    std::vector<ChannelSafety> out;
    const auto consumers = consumer_lists(model);
    const auto shapes = infer_shapes(model);
    for (const auto& layer : report.layers) {
        if (!layer.prunable || layer.zero_out_channels.empty()) continue;
        const Conv2d& conv = model.get<Conv2d>(layer.node);
        const ConvOutputUse use = trace_conv_output(model, layer.node, consumers);
        for (std::size_t ch : layer.zero_out_channels) {
            ChannelSafety s{layer.node, ch, 0.0, 0.0, true};
            const double emitted = conv.bias ? static_cast<double>((*conv.bias)[ch]) : 0.0;
            bool first = true;
            for (const auto& consumer : use.consumers) {
                double v = emitted;
                for (std::size_t t : consumer.via) {
                    if (const auto* bn = std::get_if<BatchNorm2d>(&model.nodes[t].layer)) {
                        v = (v - bn->running_mean[ch]) / std::sqrt(static_cast<double>(bn->running_var[ch]) + bn->eps) *
                                bn->gamma[ch] +
                            bn->beta[ch];
                    } else if (model.kind(t) == LayerKind::ReLU) {
                        v = std::max(v, 0.0);
                    }
                }
                if (first) {
                    s.activation = v;
                    first = false;
                }
                if (v == 0.0) continue;
                double worst = 0.0;
                bool reads_channel = false;
                if (consumer.is_linear) {
                    const Linear& lin = model.get<Linear>(consumer.node);
                    const Shape& fin = shapes.at(*model.primary_input(*consumer.flatten));
                    const std::size_t block = fin.at(1) * fin.at(2);
                    for (std::size_t o = 0; o < lin.out_features(); ++o) {
                        double sum = 0.0;
                        for (std::size_t k = ch * block; k < (ch + 1) * block; ++k) sum += std::fabs(lin.weight[o * lin.in_features() + k]);
                        worst = std::max(worst, sum);
                    }
                } else {
                    const Conv2d& next = model.get<Conv2d>(consumer.node);
                    const std::size_t kk = next.kernel_h() * next.kernel_w();
                    for (std::size_t o = 0; o < next.out_channels(); ++o) {
                        const float* w = next.weight.data() + (o * next.in_channels() + ch) * kk;
                        double sum = 0.0;
                        for (std::size_t k = 0; k < kk; ++k) sum += std::fabs(w[k]);
                        worst = std::max(worst, sum);
                    }
                }
                reads_channel = worst > 0.0;
                if (reads_channel) {
                    s.safe = false;
                    s.bound = std::max(s.bound, std::fabs(v) * worst);
                }
            }
            out.push_back(s);
        }
    }
    return out;
}

} // namespace sparseshift
