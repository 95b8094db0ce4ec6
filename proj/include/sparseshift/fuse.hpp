#pragma once

#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <vector>

#include "sparseshift/model.hpp"

namespace sparseshift {

namespace detail {

/**
 * Drops every node keyed in `redirect`. A reference to a dropped node is sent to
 * its redirect target, which must be an earlier node. Returns the
 * old-to-new index map (nullopt for dropped nodes).
 */
inline std::vector<std::optional<std::size_t>> remove_nodes(ModelGraph& model,
                                                            const std::map<std::size_t, std::size_t>& redirect) {
    const std::size_t n = model.size();
    std::vector<std::optional<std::size_t>> remap(n);
    std::size_t next = 0;
    for (std::size_t j = 0; j < n; ++j) {
        if (!redirect.contains(j)) remap[j] = next++;
    }
    auto resolve = [&](std::size_t old) {
        while (!remap[old]) old = redirect.at(old);
        return *remap[old];
    };

    ModelGraph out;
    out.meta = model.meta;
    for (std::size_t j = 0; j < n; ++j) {
        if (!remap[j]) continue;
        const auto p = model.primary_input(j);
        Node node = std::move(model.nodes[j]);
        const std::size_t at = *remap[j];
        if (p) {
            const std::size_t src = resolve(*p);
            node.input = src + 1 == at ? std::nullopt : std::optional<std::size_t>(src);
        } else {
            node.input.reset();
        }
        if (auto* add = std::get_if<Add>(&node.layer)) add->other = resolve(add->other);
        out.nodes.push_back(std::move(node));
    }
    for (std::size_t p : model.protected_nodes) {
        if (remap[p]) out.protected_nodes.insert(*remap[p]);
    }
    derive_topology(out);
    validate(out);
    infer_shapes(out);
    model = std::move(out);
    return remap;
}

} // namespace detail

struct FuseResult {
    ModelGraph model;
    std::vector<std::optional<std::size_t>> remap; // input node index -> fused node index
    std::size_t fused = 0; // batch-norm layers folded
    std::ptrdiff_t param_delta = 0; // param_count(input) - param_count(fused)
};

/**
 * Folds every BatchNorm2d into the conv feeding it:
 *   W'[o] = W[o] * s_o,  b'_o = (b_o - mu_o) * s_o + beta_o,  s_o = gamma_o / sqrt(var_o + eps)
 * Arithmetic is done in double and rounded once. The conv must feed only the
 * batch norm, otherwise other readers would see the folded values.
 */
inline FuseResult fuse_conv_bn_mapped(const ModelGraph& model) {
    FuseResult r{model, {}, 0, 0};
    const auto consumers = consumer_lists(model);
    std::map<std::size_t, std::size_t> redirect;
    for (std::size_t j = 0; j < model.size(); ++j) {
        if (model.kind(j) != LayerKind::BatchNorm2d) continue;
        const auto& bn = model.get<BatchNorm2d>(j);
        auto p = model.primary_input(j);
        if (!p || !model.is_conv(*p)) throw StructureError("batchnorm at node " + std::to_string(j) + " does not follow a conv");
        if (consumers[*p].size() != 1) {
            throw StructureError("conv at node " + std::to_string(*p) + " feeds more than its batchnorm");
        }
        Conv2d& conv = r.model.get<Conv2d>(*p);
        const std::size_t out = conv.out_channels();
        if (bn.channels() != out) {
            throw StructureError("batchnorm at node " + std::to_string(j) + " has " + std::to_string(bn.channels()) +
                                 " channels, conv has " + std::to_string(out));
        }
        if (!conv.bias) r.param_delta -= static_cast<std::ptrdiff_t>(out);
        r.param_delta += static_cast<std::ptrdiff_t>(2 * out);
        Tensor bias({out}, 0.0f);
        const std::size_t slice = conv.weight.slice_size();
        for (std::size_t o = 0; o < out; ++o) {
            const double denom = static_cast<double>(bn.running_var[o]) + static_cast<double>(bn.eps);
            if (!(denom > 0.0)) throw StructureError("batchnorm at node " + std::to_string(j) + " has zero variance and eps");
            const double s = static_cast<double>(bn.gamma[o]) / std::sqrt(denom);
            float* w = conv.weight.data() + o * slice;
            for (std::size_t i = 0; i < slice; ++i) w[i] = static_cast<float>(static_cast<double>(w[i]) * s);
            const double b = conv.bias ? static_cast<double>((*conv.bias)[o]) : 0.0;
            bias[o] = static_cast<float>((b - bn.running_mean[o]) * s + bn.beta[o]);
        }
        conv.bias = std::move(bias);
        redirect[j] = *p;
        ++r.fused;
    }
    r.remap = detail::remove_nodes(r.model, redirect);
    return r;
}

inline ModelGraph fuse_conv_bn(const ModelGraph& model) { return fuse_conv_bn_mapped(model).model; }

} // namespace sparseshift
