#pragma once

#include <algorithm>
#include <chrono>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "sparseshift/execute.hpp"
#include "sparseshift/fuse.hpp"
#include "sparseshift/plan.hpp"
#include "sparseshift/sparsity.hpp"

namespace sparseshift {

struct PruneOptions {
    bool strict = false; // drop only channels whose removal is exact
    bool parallel = true;
};

/// Removals for one conv, summed over rounds. Node indices refer to the fused model.
struct LayerRemoval {
    std::size_t node = 0;
    std::optional<std::size_t> source_node; // index in the unfused input model
    std::size_t in_before = 0, out_before = 0, in_after = 0, out_after = 0;
    std::size_t out_removed = 0, in_removed = 0;
    std::size_t params_removed = 0; // weight and bias entries dropped from this conv
};

/// A zero channel seen in some round; node and channel index the model of that round.
struct AuditedChannel {
    ChannelSafety verdict;
    bool removed = false;
    std::size_t round = 0;
};

struct PruneAudit {
    std::vector<LayerRemoval> layers;
    std::vector<AuditedChannel> channels;
    std::size_t rounds = 0;
    std::size_t channels_removed = 0;
    std::size_t unsafe_removed = 0;
    std::size_t unsafe_kept = 0; // left in place by strict mode
    double max_unsafe_bound = 0.0;
    std::ptrdiff_t fusion_param_delta = 0;
    std::size_t structural_params_removed = 0; // conv and linear entries dropped by pruning
    std::size_t params_before = 0, params_after = 0;
    double fuse_ms = 0, analyse_ms = 0, plan_ms = 0, execute_ms = 0, total_ms = 0;

    /// Fusion delta plus structural removals; equals params_before - params_after.
    std::ptrdiff_t removed_params() const {
        return fusion_param_delta + static_cast<std::ptrdiff_t>(structural_params_removed);
    }

    nlohmann::json to_json() const {
        nlohmann::json layers_j = nlohmann::json::array();
        for (const auto& l : layers) {
            layers_j.push_back({{"node", l.node},
                                {"source_node", l.source_node ? nlohmann::json(*l.source_node) : nlohmann::json()},
                                {"in_channels", {l.in_before, l.in_after}},
                                {"out_channels", {l.out_before, l.out_after}},
                                {"out_removed", l.out_removed},
                                {"in_removed", l.in_removed},
                                {"params_removed", l.params_removed}});
        }
        nlohmann::json chans = nlohmann::json::array();
        for (const auto& c : channels) {
            chans.push_back({{"round", c.round}, {"node", c.verdict.node}, {"channel", c.verdict.channel},
                             {"activation", c.verdict.activation}, {"bound", c.verdict.bound},
                             {"safe", c.verdict.safe}, {"removed", c.removed}});
        }
        return {{"rounds", rounds},
                {"channels_removed", channels_removed},
                {"unsafe_removed", unsafe_removed},
                {"unsafe_kept", unsafe_kept},
                {"max_unsafe_bound", max_unsafe_bound},
                {"params_before", params_before},
                {"params_after", params_after},
                {"fusion_param_delta", fusion_param_delta},
                {"structural_params_removed", structural_params_removed},
                {"removed_params", removed_params()},
                {"timings_ms",
                 {{"fuse", fuse_ms}, {"analyse", analyse_ms}, {"plan", plan_ms}, {"execute", execute_ms}, {"total", total_ms}}},
                {"layers", layers_j},
                {"channels", chans}};
    }
};

struct PruneResult {
    ModelGraph model;
    PruneAudit audit;
};

namespace detail {

inline double ms_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
}

/// Entries a plan removes, computed from the plan alone.
inline std::size_t planned_removals(const ModelGraph& model, const PrunePlan& plan, std::vector<std::size_t>& per_layer) {
    std::size_t total = 0;
    per_layer.assign(plan.layers.size(), 0);
    for (std::size_t i = 0; i < plan.layers.size(); ++i) {
        const LayerPlan& lp = plan.layers[i];
        const Conv2d& c = model.get<Conv2d>(lp.node);
        const std::size_t kk = c.kernel_h() * c.kernel_w();
        std::size_t n = (lp.out_before * lp.in_before - lp.out_after * lp.in_after) * kk;
        if (c.bias) n += lp.c_out.size();
        n += 2 * lp.c_out.size() * lp.batchnorms.size();
        per_layer[i] = n;
        total += n;
    }
    for (const auto& f : plan.linears) total += (f.in_before - f.in_after) * model.get<Linear>(f.node).out_features();
    return total;
}

} // namespace detail

/**
 * fuse -> analyse -> plan -> execute. Removing input slices can leave further
 * channels all-zero, so analyse/plan/execute repeat until a round removes
 * nothing; the result then has no prunable zero channel left (strict mode
 * excepted for unsafe ones).
 */
inline PruneResult prune(const ModelGraph& sparse, const PruneOptions& opt = {}) {
    using clock = std::chrono::steady_clock;
    const auto t_start = clock::now();
    PruneAudit audit;
    audit.params_before = param_count(sparse);

    auto t0 = clock::now();
    FuseResult fused = fuse_conv_bn_mapped(sparse);
    audit.fuse_ms = detail::ms_since(t0);
    audit.fusion_param_delta = fused.param_delta;

    ModelGraph model = std::move(fused.model);
    std::map<std::size_t, std::size_t> source;
    for (std::size_t j = 0; j < fused.remap.size(); ++j) {
        if (fused.remap[j]) source[*fused.remap[j]] = j;
    }
    std::map<std::size_t, LayerRemoval> removals;
    for (std::size_t j : model.conv_nodes()) {
        const Conv2d& c = model.get<Conv2d>(j);
        LayerRemoval r;
        r.node = j;
        if (auto it = source.find(j); it != source.end()) r.source_node = it->second;
        r.in_before = r.in_after = c.in_channels();
        r.out_before = r.out_after = c.out_channels();
        removals[j] = r;
    }

    for (;;) {
        t0 = clock::now();
        SparsityReport report = analyse_sparsity(model);
        const std::vector<ChannelSafety> safety = assess_safety(model, report);
        if (opt.strict) {
            std::set<std::pair<std::size_t, std::size_t>> unsafe;
            for (const auto& v : safety) {
                if (!v.safe) unsafe.insert({v.node, v.channel});
            }
            for (auto& layer : report.layers) {
                std::erase_if(layer.zero_out_channels, [&](std::size_t ch) { return unsafe.contains({layer.node, ch}); });
            }
        }
        audit.analyse_ms += detail::ms_since(t0);

        t0 = clock::now();
        PrunePlan plan = plan_prune(report, model);
        audit.plan_ms += detail::ms_since(t0);
        if (plan.empty()) {
            for (const auto& v : safety) audit.channels.push_back({v, false, audit.rounds});
            audit.unsafe_kept = safety.size();
            break;
        }
        ++audit.rounds;

        std::vector<std::size_t> per_layer;
        audit.structural_params_removed += detail::planned_removals(model, plan, per_layer);
        for (std::size_t i = 0; i < plan.layers.size(); ++i) {
            const LayerPlan& lp = plan.layers[i];
            LayerRemoval& r = removals.at(lp.node);
            r.in_after = lp.in_after;
            r.out_after = lp.out_after;
            r.out_removed += lp.c_out.size();
            r.in_removed += lp.c_in.size();
            r.params_removed += per_layer[i];
        }
        for (const auto& v : safety) {
            const LayerPlan* lp = plan.find(v.node);
            const bool removed = std::find(lp->c_out.begin(), lp->c_out.end(), v.channel) != lp->c_out.end();
            if (removed && !v.safe) {
                ++audit.unsafe_removed;
                audit.max_unsafe_bound = std::max(audit.max_unsafe_bound, v.bound);
            }
            audit.channels.push_back({v, removed, audit.rounds});
        }
        audit.channels_removed += plan.channels_removed();

        t0 = clock::now();
        model = execute_prune(model, plan, opt.parallel);
        audit.execute_ms += detail::ms_since(t0);
    }
    for (auto& [_, r] : removals) audit.layers.push_back(r);
    audit.params_after = param_count(model);
    audit.total_ms = detail::ms_since(t_start);
    return {std::move(model), std::move(audit)};
}

} // namespace sparseshift
