#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "sparseshift/dataset.hpp"
#include "sparseshift/forward.hpp"
#include "sparseshift/serialize.hpp"

namespace sparseshift {

struct LatencyStats {
    double mean = 0.0, p50 = 0.0, p95 = 0.0;
};

struct ProfileRecord {
    std::string id;
    double compression_ratio = 1.0;
    double top1_accuracy = 0.0;
    LatencyStats latency_ms;
    std::size_t param_count = 0;
    std::size_t nonzero_count = 0;
    std::size_t serialized_size_bytes = 0;
    std::size_t peak_memory_bytes = 0;
    std::size_t macs = 0;
};

struct ProfileOptions {
    std::size_t reps = 20;
    std::size_t warmup = 2;
    std::size_t batch = 1;
    ConvAlgo algo = ConvAlgo::Direct;
    std::size_t eval_batch = 64;
};

/// Nearest-rank percentile of an ascending sample.
inline double percentile(const std::vector<double>& sorted, double q) {
    if (sorted.empty()) return 0.0;
    const auto rank = static_cast<std::size_t>(std::ceil(q * static_cast<double>(sorted.size())));
    return sorted[std::clamp<std::size_t>(rank, 1, sorted.size()) - 1];
}

inline LatencyStats summarise(std::vector<double> samples) {
    std::sort(samples.begin(), samples.end());
    LatencyStats s;
    s.mean = std::accumulate(samples.begin(), samples.end(), 0.0) / static_cast<double>(samples.size());
    s.p50 = percentile(samples, 0.50);
    s.p95 = percentile(samples, 0.95);
    return s;
}

/// Parameter bytes plus the largest input+output activation footprint of any node at batch size `batch`.
inline std::size_t peak_memory_bytes(const ModelGraph& model, std::size_t batch = 1) {
    const auto shapes = infer_shapes(model);
    std::size_t peak = 0;
    for (std::size_t j = 0; j < model.size(); ++j) {
        auto p = model.primary_input(j);
        std::size_t live = shape_size(p ? shapes[*p] : model.meta.input_shape) + shape_size(shapes[j]);
        if (const auto* add = std::get_if<Add>(&model.nodes[j].layer)) live += shape_size(shapes[add->other]);
        peak = std::max(peak, live);
    }
    return (param_count(model) + peak * batch) * sizeof(float);
}

inline double accuracy(const ModelGraph& model, const Split& split, std::size_t batch = 64,
                       ConvAlgo algo = ConvAlgo::Direct) {
    if (split.size() == 0) throw Error("test set is empty");
    std::size_t correct = 0;
    std::vector<std::size_t> idx;
    for (std::size_t start = 0; start < split.size(); start += batch) {
        idx.resize(std::min(batch, split.size() - start));
        std::iota(idx.begin(), idx.end(), start);
        const Split b = gather(split, idx);
        const auto pred = argmax_rows(forward(model, b.images, algo));
        for (std::size_t i = 0; i < idx.size(); ++i) correct += pred[i] == b.labels[i];
    }
    return static_cast<double>(correct) / static_cast<double>(split.size());
}

/// Wall-clock of `reps` forwards of one fixed batch after `warmup` discarded runs.
inline LatencyStats measure_latency(const ModelGraph& model, const Tensor& batch, std::size_t reps, std::size_t warmup,
                                    ConvAlgo algo = ConvAlgo::Direct) {
    if (reps < 3) throw Error("latency needs at least 3 repetitions");
    for (std::size_t i = 0; i < warmup; ++i) (void)forward(model, batch, algo);
    std::vector<double> samples;
    samples.reserve(reps);
    for (std::size_t i = 0; i < reps; ++i) {
        const auto t0 = std::chrono::steady_clock::now();
        Tensor out = forward(model, batch, algo);
        samples.push_back(std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
        if (out.empty()) throw Error("forward produced no output");
    }
    return summarise(std::move(samples));
}

/**
 * Latency of several models on the same batch, repetitions taken round-robin
 * so slow phases of a shared machine land on every model alike.
 */
inline std::vector<LatencyStats> measure_latencies(const std::vector<const ModelGraph*>& models, const Tensor& batch,
                                                   std::size_t reps, std::size_t warmup,
                                                   ConvAlgo algo = ConvAlgo::Direct) {
    if (reps < 3) throw Error("latency needs at least 3 repetitions");
    for (std::size_t i = 0; i < warmup; ++i)
        for (const ModelGraph* m : models) (void)forward(*m, batch, algo);
    std::vector<std::vector<double>> samples(models.size());
    for (std::size_t i = 0; i < reps; ++i) {
        for (std::size_t k = 0; k < models.size(); ++k) {
            const auto t0 = std::chrono::steady_clock::now();
            Tensor out = forward(*models[k], batch, algo);
            samples[k].push_back(
                std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
            if (out.empty()) throw Error("forward produced no output");
        }
    }
    std::vector<LatencyStats> stats;
    for (auto& s : samples) stats.push_back(summarise(std::move(s)));
    return stats;
}

namespace detail {

inline Tensor latency_batch(const Split& test, std::size_t batch) {
    std::vector<std::size_t> first(std::min(batch, test.size()));
    std::iota(first.begin(), first.end(), std::size_t{0});
    return gather(test, first).images;
}

/// Every field except latency.
inline ProfileRecord static_profile(const ModelGraph& model, const Split& test, const ProfileOptions& opt,
                                    std::string id, double ratio) {
    if (opt.reps < 3) throw Error("profile needs reps >= 3");
    if (test.size() == 0) throw Error("test set is empty");
    ProfileRecord r;
    r.id = id.empty() ? model.meta.name : std::move(id);
    r.compression_ratio = ratio;
    r.top1_accuracy = accuracy(model, test, opt.eval_batch, opt.algo);
    r.param_count = param_count(model);
    r.nonzero_count = nonzero_count(model);
    r.serialized_size_bytes = serialize(model).size();
    r.peak_memory_bytes = peak_memory_bytes(model, opt.batch);
    r.macs = mac_count(model);
    return r;
}

} // namespace detail

inline ProfileRecord profile(const ModelGraph& model, const Split& test, const ProfileOptions& opt = {},
                             std::string id = {}, double ratio = 1.0) {
    ProfileRecord r = detail::static_profile(model, test, opt, std::move(id), ratio);
    r.latency_ms = measure_latency(model, detail::latency_batch(test, opt.batch), opt.reps, opt.warmup, opt.algo);
    return r;
}

/// Profiles a set of models with interleaved latency runs; ids and ratios are parallel to `models`.
inline std::vector<ProfileRecord> profile_portfolio(const std::vector<const ModelGraph*>& models, const Split& test,
                                                    const ProfileOptions& opt, const std::vector<std::string>& ids,
                                                    const std::vector<double>& ratios) {
    if (ids.size() != models.size() || ratios.size() != models.size()) {
        throw Error("profile_portfolio: ids and ratios must match the model count");
    }
    std::vector<ProfileRecord> out;
    for (std::size_t k = 0; k < models.size(); ++k) out.push_back(detail::static_profile(*models[k], test, opt, ids[k], ratios[k]));
    if (models.empty()) return out;
    const auto stats = measure_latencies(models, detail::latency_batch(test, opt.batch), opt.reps, opt.warmup, opt.algo);
    for (std::size_t k = 0; k < models.size(); ++k) out[k].latency_ms = stats[k];
    return out;
}

inline nlohmann::json to_json(const ProfileRecord& r) {
    return {{"id", r.id},
            {"compression_ratio", r.compression_ratio},
            {"top1_accuracy", r.top1_accuracy},
            {"latency_ms", {{"mean", r.latency_ms.mean}, {"p50", r.latency_ms.p50}, {"p95", r.latency_ms.p95}}},
            {"param_count", r.param_count},
            {"nonzero_count", r.nonzero_count},
            {"serialized_size_bytes", r.serialized_size_bytes},
            {"peak_memory_bytes", r.peak_memory_bytes},
            {"macs", r.macs}};
}

inline ProfileRecord record_from_json(const nlohmann::json& j) {
    ProfileRecord r;
    try {
        r.id = j.at("id").get<std::string>();
        r.compression_ratio = j.at("compression_ratio").get<double>();
        r.top1_accuracy = j.at("top1_accuracy").get<double>();
        r.latency_ms = {j.at("latency_ms").at("mean").get<double>(), j.at("latency_ms").at("p50").get<double>(),
                        j.at("latency_ms").at("p95").get<double>()};
        r.param_count = j.at("param_count").get<std::size_t>();
        r.nonzero_count = j.value("nonzero_count", r.param_count);
        r.serialized_size_bytes = j.at("serialized_size_bytes").get<std::size_t>();
        r.peak_memory_bytes = j.at("peak_memory_bytes").get<std::size_t>();
        r.macs = j.value("macs", std::size_t{0});
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(0, std::string("profile record: ") + e.what());
    }
    return r;
}

inline std::string records_csv(const std::vector<ProfileRecord>& records) {
    std::ostringstream out;
    out << "id,compression_ratio,top1_accuracy,latency_mean_ms,latency_p50_ms,latency_p95_ms,param_count,"
           "nonzero_count,serialized_size_bytes,peak_memory_bytes,macs\n";
    out.precision(10);
    for (const auto& r : records) {
        out << r.id << ',' << r.compression_ratio << ',' << r.top1_accuracy << ',' << r.latency_ms.mean << ','
            << r.latency_ms.p50 << ',' << r.latency_ms.p95 << ',' << r.param_count << ',' << r.nonzero_count << ','
            << r.serialized_size_bytes << ',' << r.peak_memory_bytes << ',' << r.macs << '\n';
    }
    return out.str();
}

} // namespace sparseshift
