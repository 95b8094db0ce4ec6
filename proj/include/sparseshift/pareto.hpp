#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "sparseshift/profile.hpp"

namespace sparseshift {

enum class LatencyAxis {
    Measured, // mean wall-clock latency
    Macs, // multiply-accumulate count, for runs that must be reproducible
};

/// The three objectives: size and latency are minimised, accuracy maximised.
struct Objectives {
    double size = 0.0;
    double latency = 0.0;
    double accuracy = 0.0;
};

inline Objectives objectives(const ProfileRecord& r, LatencyAxis axis = LatencyAxis::Measured) {
    return {static_cast<double>(r.serialized_size_bytes),
            axis == LatencyAxis::Measured ? r.latency_ms.mean : static_cast<double>(r.macs), r.top1_accuracy};
}

/// True when `a` is no worse than `b` on every objective and strictly better on one.
inline bool dominates(const Objectives& a, const Objectives& b) {
    const bool no_worse = a.size <= b.size && a.latency <= b.latency && a.accuracy >= b.accuracy;
    const bool better = a.size < b.size || a.latency < b.latency || a.accuracy > b.accuracy;
    return no_worse && better;
}

inline bool within(double a, double b, double delta) {
    return std::fabs(a - b) <= delta * std::max(std::fabs(a), std::fabs(b));
}

struct ParetoResult {
    std::vector<std::size_t> optimal; // indices into the input, ascending model size
    double search_efficiency = 0.0;
};

/**
 * Non-dominated subset. Optimal records whose three objectives all lie within
 * `delta` (relative) of an already kept, smaller record are then dropped.
 */
inline ParetoResult pareto_filter(const std::vector<ProfileRecord>& records, double delta = 0.01,
                                  LatencyAxis axis = LatencyAxis::Measured) {
    if (records.empty()) throw Error("pareto filter needs at least one record");
    if (delta < 0.0) throw Error("duplicate tolerance must be >= 0");
    std::vector<Objectives> obj;
    for (const auto& r : records) obj.push_back(objectives(r, axis));

    std::vector<std::size_t> front;
    for (std::size_t i = 0; i < obj.size(); ++i) {
        bool dominated = false;
        for (std::size_t k = 0; k < obj.size() && !dominated; ++k) dominated = k != i && dominates(obj[k], obj[i]);
        if (!dominated) front.push_back(i);
    }
    std::stable_sort(front.begin(), front.end(), [&](std::size_t a, std::size_t b) { return obj[a].size < obj[b].size; });

    ParetoResult r;
    for (std::size_t i : front) {
        const bool duplicate = std::any_of(r.optimal.begin(), r.optimal.end(), [&](std::size_t k) {
            return within(obj[i].size, obj[k].size, delta) && within(obj[i].latency, obj[k].latency, delta) &&
                   within(obj[i].accuracy, obj[k].accuracy, delta);
        });
        if (!duplicate) r.optimal.push_back(i);
    }
    r.search_efficiency = static_cast<double>(r.optimal.size()) / static_cast<double>(records.size());
    return r;
}

} // namespace sparseshift
