#pragma once

#include <optional>
#include <vector>

#include "sparseshift/model.hpp"
#include "sparseshift/sparsity.hpp"

namespace sparseshift {

struct LayerPlan {
    std::size_t node = 0;
    std::optional<std::size_t> predecessor; // conv_chain predecessor
    std::vector<std::size_t> c_in; // input channels to drop
    std::vector<std::size_t> c_out; // output channels to drop
    std::size_t in_before = 0, out_before = 0;
    std::size_t in_after = 0, out_after = 0;
    bool is_protected = false;
    std::vector<std::size_t> batchnorms; // BN nodes indexed by this conv's output channels

    bool operator==(const LayerPlan&) const = default;
};

/// Input-feature filter for a linear layer reading a pruned conv through Flatten.
struct LinearFilter {
    std::size_t node = 0;
    std::size_t source_conv = 0;
    std::size_t block = 0; // flattened features per channel (H * W at the flatten)
    std::vector<std::size_t> channels; // source channels removed
    std::size_t in_before = 0, in_after = 0;

    bool operator==(const LinearFilter&) const = default;
};

struct PrunePlan {
    std::vector<LayerPlan> layers; // one per conv, node order
    std::vector<LinearFilter> linears;

    std::size_t channels_removed() const {
        std::size_t n = 0;
        for (const auto& l : layers) n += l.c_out.size();
        return n;
    }
    bool empty() const { return channels_removed() == 0; }
    const LayerPlan* find(std::size_t node) const {
        for (const auto& l : layers) {
            if (l.node == node) return &l;
        }
        return nullptr;
    }
    bool operator==(const PrunePlan&) const = default;
};

/**
 * Prune planning: each conv drops its own zero output channels (none when
 * protected) and the input channels its conv-chain predecessor drops. The
 * first conv of a chain has no predecessor and so drops no inputs.
 */
inline PrunePlan plan_prune(const SparsityReport& report, const ModelGraph& model) {
    const auto convs = model.conv_nodes();
    if (report.layers.size() != convs.size()) throw StructureError("sparsity report does not match model");
    const auto consumers = consumer_lists(model);
    const auto shapes = infer_shapes(model);

    PrunePlan plan;
    for (std::size_t i = 0; i < convs.size(); ++i) {
        const std::size_t j = convs[i];
        const LayerSparsity& rep = report.layers[i];
        const Conv2d& conv = model.get<Conv2d>(j);
        if (rep.node != j || rep.out_channels != conv.out_channels()) {
            throw StructureError("sparsity report entry for node " + std::to_string(rep.node) + " does not match model");
        }
        LayerPlan lp;
        lp.node = j;
        lp.predecessor = model.conv_chain[j];
        lp.is_protected = model.is_protected(j);
        lp.in_before = conv.in_channels();
        lp.out_before = conv.out_channels();
        if (!lp.is_protected) {
            if (rep.zero_out_channels.size() >= conv.out_channels()) throw CollapseError(j);
            lp.c_out = rep.zero_out_channels;
        }
        if (lp.predecessor) {
            const LayerPlan* pred = plan.find(*lp.predecessor);
            if (!pred) throw StructureError("conv chain predecessor of node " + std::to_string(j) + " is not planned");
            lp.c_in = pred->c_out;
        }
        lp.in_after = lp.in_before - lp.c_in.size();
        lp.out_after = lp.out_before - lp.c_out.size();

        const ConvOutputUse use = trace_conv_output(model, j, consumers);
        lp.batchnorms = use.batchnorms;
        if (!lp.c_out.empty()) {
            for (const auto& c : use.consumers) {
                if (!c.is_linear) continue;
                const Shape& fin = shapes.at(*model.primary_input(*c.flatten));
                const Linear& lin = model.get<Linear>(c.node);
                LinearFilter f{c.node, j, fin.at(1) * fin.at(2), lp.c_out, lin.in_features(), 0};
                f.in_after = f.in_before - f.block * f.channels.size();
                plan.linears.push_back(std::move(f));
            }
        }
        plan.layers.push_back(std::move(lp));
    }
    return plan;
}

} // namespace sparseshift
