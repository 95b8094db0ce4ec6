#pragma once

#include <algorithm>
#include <functional>
#include <future>
#include <numeric>
#include <vector>

#include "sparseshift/model.hpp"
#include "sparseshift/plan.hpp"

namespace sparseshift {

namespace detail {

/// Indices in [0, n) not listed in `drop` (ascending, duplicates rejected).
inline std::vector<std::size_t> survivors(std::size_t n, const std::vector<std::size_t>& drop) {
    std::vector<std::uint8_t> gone(n, 0);
    for (auto c : drop) {
        if (c >= n || gone[c]) throw StructureError("plan channel " + std::to_string(c) + " is out of range or repeated");
        gone[c] = 1;
    }
    std::vector<std::size_t> keep;
    keep.reserve(n - drop.size());
    for (std::size_t i = 0; i < n; ++i) {
        if (!gone[i]) keep.push_back(i);
    }
    return keep;
}

inline Tensor gather_channels(const Tensor& t, const std::vector<std::size_t>& keep) {
    Tensor out({keep.size()});
    for (std::size_t i = 0; i < keep.size(); ++i) out[i] = t[keep[i]];
    return out;
}

/// Rebuilds one conv with the surviving [out, in] channels, keeping their relative order.
inline Conv2d rebuild_conv(const Conv2d& c, const LayerPlan& lp) {
    const auto keep_out = survivors(c.out_channels(), lp.c_out);
    const auto keep_in = survivors(c.in_channels(), lp.c_in);
    const std::size_t kk = c.kernel_h() * c.kernel_w();
    Tensor w({keep_out.size(), keep_in.size(), c.kernel_h(), c.kernel_w()});
    float* dst = w.data();
    for (std::size_t o : keep_out) {
        for (std::size_t i : keep_in) {
            const float* src = c.weight.data() + (o * c.in_channels() + i) * kk;
            dst = std::copy_n(src, kk, dst);
        }
    }
    Conv2d out{std::move(w), std::nullopt, c.stride, c.padding};
    if (c.bias) out.bias = gather_channels(*c.bias, keep_out);
    return out;
}

inline BatchNorm2d filter_batchnorm(const BatchNorm2d& bn, const std::vector<std::size_t>& keep) {
    return BatchNorm2d{gather_channels(bn.gamma, keep), gather_channels(bn.beta, keep),
                       gather_channels(bn.running_mean, keep), gather_channels(bn.running_var, keep), bn.eps};
}

inline Linear filter_linear(const Linear& lin, const LinearFilter& f) {
    const std::size_t in = lin.in_features();
    if (in % f.block != 0) throw StructureError("linear at node " + std::to_string(f.node) + " does not match its flatten");
    const auto keep_ch = survivors(in / f.block, f.channels);
    Tensor w({lin.out_features(), keep_ch.size() * f.block});
    float* dst = w.data();
    for (std::size_t o = 0; o < lin.out_features(); ++o) {
        for (std::size_t c : keep_ch) dst = std::copy_n(lin.weight.data() + o * in + c * f.block, f.block, dst);
    }
    return Linear{std::move(w), lin.bias};
}

inline void check_plan(const ModelGraph& model, const PrunePlan& plan) {
    const auto convs = model.conv_nodes();
    if (plan.layers.size() != convs.size()) throw StructureError("plan does not match model: conv count differs");
    for (std::size_t i = 0; i < convs.size(); ++i) {
        const LayerPlan& lp = plan.layers[i];
        if (lp.node != convs[i]) throw StructureError("plan does not match model at node " + std::to_string(lp.node));
        const Conv2d& c = model.get<Conv2d>(lp.node);
        if (c.in_channels() != lp.in_before || c.out_channels() != lp.out_before) {
            throw StructureError("plan does not match model: channel counts of node " + std::to_string(lp.node));
        }
        if (lp.c_out.size() >= lp.out_before && lp.out_before) throw CollapseError(lp.node);
        for (auto b : lp.batchnorms) {
            if (model.kind(b) != LayerKind::BatchNorm2d) throw StructureError("plan batchnorm entry is not a batchnorm");
        }
    }
    for (const auto& f : plan.linears) {
        if (f.node >= model.size() || model.kind(f.node) != LayerKind::Linear ||
            model.get<Linear>(f.node).in_features() != f.in_before) {
            throw StructureError("plan linear filter does not match node " + std::to_string(f.node));
        }
    }
}

inline void finish(ModelGraph& m) {
    validate(m);
    try {
        infer_shapes(m);
    } catch (const ShapeError& e) {
        throw StructureError(std::string("pruned model is inconsistent: ") + e.what());
    }
}

} // namespace detail

/**
 * Batch pruning: every planned conv is rebuilt once. Rebuilds run concurrently
 * when `parallel` is set; results land in plan order, so the output does not
 * depend on completion order.
 */
inline ModelGraph execute_prune(const ModelGraph& model, const PrunePlan& plan, bool parallel = true) {
    detail::check_plan(model, plan);
    std::vector<Conv2d> rebuilt(plan.layers.size());
    if (parallel && plan.layers.size() > 1) {
        std::vector<std::future<Conv2d>> jobs;
        jobs.reserve(plan.layers.size());
        for (const auto& lp : plan.layers) {
            jobs.push_back(std::async(std::launch::async,
                                      [&model, &lp] { return detail::rebuild_conv(model.get<Conv2d>(lp.node), lp); }));
        }
        for (std::size_t i = 0; i < jobs.size(); ++i) rebuilt[i] = jobs[i].get();
    } else {
        for (std::size_t i = 0; i < plan.layers.size(); ++i) {
            rebuilt[i] = detail::rebuild_conv(model.get<Conv2d>(plan.layers[i].node), plan.layers[i]);
        }
    }

    ModelGraph out = model;
    for (std::size_t i = 0; i < plan.layers.size(); ++i) {
        const LayerPlan& lp = plan.layers[i];
        out.nodes[lp.node].layer = std::move(rebuilt[i]);
        if (lp.c_out.empty()) continue;
        const auto keep = detail::survivors(lp.out_before, lp.c_out);
        for (auto b : lp.batchnorms) out.nodes[b].layer = detail::filter_batchnorm(model.get<BatchNorm2d>(b), keep);
    }
    for (const auto& f : plan.linears) out.nodes[f.node].layer = detail::filter_linear(model.get<Linear>(f.node), f);
    detail::finish(out);
    return out;
}

namespace detail {

/// Removes slice `index` along `axis` of a tensor.
inline Tensor drop_slice(const Tensor& t, std::size_t axis, std::size_t index) {
    Shape shape = t.shape();
    const std::size_t outer = std::accumulate(shape.begin(), shape.begin() + static_cast<std::ptrdiff_t>(axis),
                                              std::size_t{1}, std::multiplies<>());
    const std::size_t inner = std::accumulate(shape.begin() + static_cast<std::ptrdiff_t>(axis) + 1, shape.end(),
                                              std::size_t{1}, std::multiplies<>());
    const std::size_t n = shape[axis];
    if (index >= n) throw StructureError("channel index out of range");
    shape[axis] = n - 1;
    std::vector<float> v;
    v.reserve(t.size() - outer * inner);
    for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t i = 0; i < n; ++i) {
            if (i == index) continue;
            const float* src = t.data() + (o * n + i) * inner;
            v.insert(v.end(), src, src + inner);
        }
    return Tensor(std::move(shape), std::move(v));
}

} // namespace detail

/**
 * Reference route for the same plan: layers are handled one at a time in node
 * order and channels are removed one by one, highest index first.
 */
inline ModelGraph execute_prune_sequential(const ModelGraph& model, const PrunePlan& plan) {
    detail::check_plan(model, plan);
    ModelGraph out = model;
    for (const auto& lp : plan.layers) {
        Conv2d& c = out.get<Conv2d>(lp.node);
        std::vector<std::size_t> outs = lp.c_out, ins = lp.c_in;
        std::sort(outs.rbegin(), outs.rend());
        std::sort(ins.rbegin(), ins.rend());
        for (std::size_t ch : outs) {
            c.weight = detail::drop_slice(c.weight, 0, ch);
            if (c.bias) c.bias = detail::drop_slice(*c.bias, 0, ch);
            for (auto b : lp.batchnorms) {
                auto& bn = out.get<BatchNorm2d>(b);
                bn.gamma = detail::drop_slice(bn.gamma, 0, ch);
                bn.beta = detail::drop_slice(bn.beta, 0, ch);
                bn.running_mean = detail::drop_slice(bn.running_mean, 0, ch);
                bn.running_var = detail::drop_slice(bn.running_var, 0, ch);
            }
        }
        for (std::size_t ch : ins) c.weight = detail::drop_slice(c.weight, 1, ch);
        for (const auto& f : plan.linears) {
            if (f.source_conv != lp.node) continue;
            Linear& lin = out.get<Linear>(f.node);
            std::vector<std::size_t> chans = f.channels;
            std::sort(chans.rbegin(), chans.rend());
            for (std::size_t ch : chans) {
                Tensor w = lin.weight.reshaped({lin.out_features(), lin.in_features() / f.block, f.block});
                w = detail::drop_slice(w, 1, ch);
                lin.weight = w.reshaped({w.dim(0), w.dim(1) * w.dim(2)});
            }
        }
    }
    detail::finish(out);
    return out;
}

} // namespace sparseshift
