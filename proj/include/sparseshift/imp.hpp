#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "sparseshift/mask.hpp"
#include "sparseshift/train.hpp"

namespace sparseshift {

enum class RankScope { Global, PerLayer };

struct RankResult {
    SparsityMask mask;
    std::vector<std::size_t> collapsed_nodes; // prunable tensors left with no kept weight
};

/**
 * Magnitude ranking over the weights `current` still keeps. The top
 * round(R * keep_fraction) survive; ties go to the lower flat index, where flat
 * indices run over prunable tensors in node order. Entries already masked stay
 * masked.
 */
inline RankResult rank_and_mask(const ModelGraph& model, const SparsityMask& current, double keep_fraction,
                                RankScope scope = RankScope::Global) {
    if (!(keep_fraction > 0.0 && keep_fraction < 1.0)) throw Error("keep fraction must be in (0, 1)");
    current.check(model);

    struct Entry {
        float magnitude;
        std::size_t node;
        std::size_t index;
    };
    auto select = [&](std::vector<Entry>& entries, SparsityMask& out) {
        const auto keep = static_cast<std::size_t>(std::llround(static_cast<double>(entries.size()) * keep_fraction));
        // entries are generated in flat order, so a stable sort keeps the index tie-break
        std::stable_sort(entries.begin(), entries.end(),
                         [](const Entry& a, const Entry& b) { return a.magnitude > b.magnitude; });
        for (std::size_t i = keep; i < entries.size(); ++i) out.tensors[entries[i].node].keep[entries[i].index] = 0;
    };

    RankResult result{current, {}};
    std::vector<Entry> entries;
    for (const auto& [node, t] : current.tensors) {
        const Tensor& w = prunable_weight(model, node);
        for (std::size_t i = 0; i < t.keep.size(); ++i) {
            if (t.keep[i]) entries.push_back({std::fabs(w[i]), node, i});
        }
        if (scope == RankScope::PerLayer) {
            select(entries, result.mask);
            entries.clear();
        }
    }
    if (scope == RankScope::Global) select(entries, result.mask);

    for (const auto& [node, t] : result.mask.tensors) {
        if (t.kept() == 0) result.collapsed_nodes.push_back(node);
    }
    return result;
}

struct ImpVariant {
    std::size_t iteration = 0; // compression ratio 2^iteration
    ModelGraph model;
    SparsityMask mask;
    double test_accuracy = 0.0;
    std::vector<EpochLog> log;
    std::vector<std::size_t> collapsed_nodes;

    double compression_ratio() const { return std::ldexp(1.0, static_cast<int>(iteration)); }
};

/**
 * Dense training followed by n rounds of: halve the kept weights by magnitude,
 * rewind the whole model to the epoch-k checkpoint, retrain epochs k..end under
 * the new mask. Returns n + 1 variants, dense first.
 */
inline std::vector<ImpVariant> imp_portfolio(const ModelGraph& arch, const Dataset& data, const TrainConfig& cfg,
                                             const std::function<void(const ImpVariant&)>& on_variant = {}) {
    cfg.validate();
    const RankScope scope = cfg.per_layer_ranking ? RankScope::PerLayer : RankScope::Global;
    auto accuracy = [&](const ModelGraph& m) { return data.test.size() ? evaluate_accuracy(m, data.test) : 0.0; };

    std::vector<ImpVariant> variants;
    TrainResult dense = train(arch, data, cfg, SparsityMask::ones(arch));
    const Checkpoint* rewind = dense.checkpoint_at(cfg.rewind_epoch);
    if (!rewind) throw Error("rewind checkpoint missing");
    const ModelGraph rewind_weights = rewind->weights;

    variants.push_back({0, std::move(dense.model), SparsityMask::ones(arch), 0.0, std::move(dense.log), {}});
    variants.back().test_accuracy = accuracy(variants.back().model);
    if (on_variant) on_variant(variants.back());

    for (std::size_t i = 1; i <= cfg.portfolio_depth; ++i) {
        const ImpVariant& prev = variants.back();
        RankResult ranked = rank_and_mask(prev.model, prev.mask, 0.5, scope);
        TrainResult r = train(rewind_weights, data, cfg, ranked.mask, cfg.rewind_epoch);
        ImpVariant v{i, std::move(r.model), std::move(ranked.mask), 0.0, std::move(r.log), std::move(ranked.collapsed_nodes)};
        v.test_accuracy = accuracy(v.model);
        variants.push_back(std::move(v));
        if (on_variant) on_variant(variants.back());
    }
    return variants;
}

} // namespace sparseshift
