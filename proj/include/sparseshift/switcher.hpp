#pragma once

#include <chrono>
#include <cmath>
#include <deque>
#include <limits>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include "sparseshift/forward.hpp"
#include "sparseshift/package.hpp"

namespace sparseshift {

struct SwitchPolicy {
    double fast_half_life = 5.0; // in samples
    double slow_half_life = 20.0;
    double up_threshold = 1.15; // fast/slow above this: load is falling, move to a larger model
    double down_threshold = 0.87; // below this: load is rising, move to a smaller model
    double min_dwell_ms = 2000.0;
    std::size_t window = 64;

    void validate() const {
        if (!(fast_half_life > 0.0) || !(slow_half_life > 0.0)) throw Error("EMA half-lives must be > 0");
        if (!(down_threshold < up_threshold)) throw Error("down threshold must be below up threshold");
        if (!(min_dwell_ms >= 0.0)) throw Error("min dwell must be >= 0");
        if (window == 0) throw Error("QPS window must hold at least one sample");
    }
};

enum class Decision { Stay, SwitchUp, SwitchDown };

inline const char* to_string(Decision d) {
    switch (d) {
    case Decision::SwitchUp: return "switch_up";
    case Decision::SwitchDown: return "switch_down";
    default: return "stay";
    }
}

struct QpsSample {
    double timestamp_ms = 0.0;
    double qps = 0.0;
};

/// EMA weight for one new sample given a half-life in samples.
inline double ema_alpha(double half_life) { return 1.0 - std::exp2(-1.0 / half_life); }

struct SwitchState {
    SwitchPolicy policy;
    std::size_t models = 1;
    std::size_t active_index = 0;
    std::deque<QpsSample> qps_window;
    double ema_fast = 0.0, ema_slow = 0.0;
    double last_switch_ms = -std::numeric_limits<double>::infinity();
    std::size_t switches = 0;
    double overhead_ms = 0.0; // cumulative

    /// Median model in ascending size order.
    static SwitchState initial(std::size_t m, const SwitchPolicy& policy = {}) {
        if (m == 0) throw Error("portfolio is empty");
        policy.validate();
        SwitchState s;
        s.policy = policy;
        s.models = m;
        s.active_index = m / 2;
        return s;
    }

    double trend() const { return ema_slow > 0.0 ? ema_fast / ema_slow : 1.0; }
};

/**
 * Feed one QPS sample to the trend detector and apply the policy. A switch
 * moves active_index by one and restarts both EMAs at the current sample.
 */
inline Decision decide(SwitchState& s, const QpsSample& sample) {
    if (!std::isfinite(sample.qps) || sample.qps < 0.0) throw Error("QPS must be finite and >= 0");
    if (!s.qps_window.empty() && sample.timestamp_ms < s.qps_window.back().timestamp_ms) {
        throw Error("QPS timestamps must be non-decreasing");
    }
    if (s.qps_window.empty()) {
        s.ema_fast = s.ema_slow = sample.qps;
    } else {
        s.ema_fast += ema_alpha(s.policy.fast_half_life) * (sample.qps - s.ema_fast);
        s.ema_slow += ema_alpha(s.policy.slow_half_life) * (sample.qps - s.ema_slow);
    }
    s.qps_window.push_back(sample);
    if (s.qps_window.size() > s.policy.window) s.qps_window.pop_front();

    if (sample.timestamp_ms - s.last_switch_ms < s.policy.min_dwell_ms) return Decision::Stay;
    const double r = s.trend();
    Decision d = Decision::Stay;
    if (r > s.policy.up_threshold && s.active_index + 1 < s.models) {
        d = Decision::SwitchUp;
        ++s.active_index;
    } else if (r < s.policy.down_threshold && s.active_index > 0) {
        d = Decision::SwitchDown;
        --s.active_index;
    }
    if (d != Decision::Stay) {
        s.ema_fast = s.ema_slow = sample.qps;
        s.last_switch_ms = sample.timestamp_ms;
        ++s.switches;
    }
    return d;
}

struct SwitchEvent {
    double timestamp_ms = 0.0;
    std::size_t from = 0, to = 0;
    double overhead_ms = 0.0; // inflate + deserialize + handover
};

/**
 * Holds the whole package deflated and exactly one inflated model. Inference
 * may run on any thread; observe() calls are serialized. A switch builds the
 * new model fully before publishing it, so callers of active() see either the
 * old or the new model.
 */
class PortfolioRuntime {
public:
    explicit PortfolioRuntime(PortfolioPackage pkg, const SwitchPolicy& policy = {})
        : pkg_(std::move(pkg)), state_(SwitchState::initial(pkg_.size(), policy)) {
        for (std::size_t i = 0; i < pkg_.size(); ++i) {
            if (i != state_.active_index) (void)inflate_entry(pkg_, i);
        }
        active_ = std::make_shared<const ModelGraph>(load_entry(pkg_, state_.active_index));
    }

    Decision observe(const QpsSample& sample) {
        std::lock_guard observe_lock(observe_mu_);
        const std::size_t from = state_.active_index;
        const Decision d = decide(state_, sample);
        if (d == Decision::Stay) return d;
        const auto t0 = std::chrono::steady_clock::now();
        auto next = std::make_shared<const ModelGraph>(load_entry(pkg_, state_.active_index));
        {
            std::lock_guard lock(active_mu_);
            active_.swap(next);
        }
        next.reset(); // the old model drops back to compressed-only residency
        const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
        state_.overhead_ms += ms;
        events_.push_back({sample.timestamp_ms, from, state_.active_index, ms});
        return d;
    }

    std::shared_ptr<const ModelGraph> active() const {
        std::lock_guard lock(active_mu_);
        return active_;
    }

    Tensor infer(const Tensor& batch, ConvAlgo algo = ConvAlgo::Direct) const { return forward(*active(), batch, algo); }

    const PortfolioPackage& package() const { return pkg_; }
    const SwitchState& state() const { return state_; }
    const std::vector<SwitchEvent>& events() const { return events_; }
    std::size_t active_index() const { return state_.active_index; }

private:
    PortfolioPackage pkg_;
    SwitchState state_;
    std::vector<SwitchEvent> events_;
    std::shared_ptr<const ModelGraph> active_;
    mutable std::mutex active_mu_;
    std::mutex observe_mu_;
};

} // namespace sparseshift
