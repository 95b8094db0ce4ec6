#pragma once

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "sparseshift/switcher.hpp"

namespace sparseshift {

using QpsTrace = std::vector<QpsSample>;

namespace detail {

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

inline bool parse_double(std::string_view s, double& out) {
    s = trim(s);
    if (s.empty()) return false;
    const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
    return ec == std::errc{} && p == s.data() + s.size();
}

} // namespace detail

/// CSV of "timestamp_ms,qps" rows, with an optional header line.
inline QpsTrace parse_trace(std::string_view text) {
    QpsTrace trace;
    std::size_t line_no = 0;
    while (!text.empty()) {
        const auto nl = text.find('\n');
        const std::string_view line = detail::trim(text.substr(0, nl));
        text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
        ++line_no;
        if (line.empty()) continue;
        if (line_no == 1 && line == "timestamp_ms,qps") continue;
        const auto comma = line.find(',');
        if (comma == std::string_view::npos) throw ParseError(line_no, "expected 'timestamp_ms,qps'");
        QpsSample s;
        if (!detail::parse_double(line.substr(0, comma), s.timestamp_ms)) throw ParseError(line_no, "bad timestamp");
        if (!detail::parse_double(line.substr(comma + 1), s.qps)) throw ParseError(line_no, "bad qps");
        if (!std::isfinite(s.timestamp_ms) || !std::isfinite(s.qps) || s.qps < 0.0) {
            throw ParseError(line_no, "values must be finite and qps >= 0");
        }
        if (!trace.empty() && s.timestamp_ms < trace.back().timestamp_ms) {
            throw ParseError(line_no, "timestamp goes backwards");
        }
        trace.push_back(s);
    }
    if (trace.empty()) throw ParseError(std::max<std::size_t>(line_no, 1), "trace has no samples");
    return trace;
}

inline QpsTrace load_trace(const std::filesystem::path& path) {
    const Bytes b = io::read_file(path);
    return parse_trace(std::string_view(reinterpret_cast<const char*>(b.data()), b.size()));
}

inline std::string trace_csv(const QpsTrace& trace) {
    std::ostringstream out;
    out.precision(12);
    out << "timestamp_ms,qps\n";
    for (const auto& s : trace) out << s.timestamp_ms << ',' << s.qps << '\n';
    return out.str();
}

/// `levels` plateaus of `plateau_ms` each, alternating low/high starting low; levels - 1 edges.
inline QpsTrace square_wave_trace(double low, double high, double plateau_ms, std::size_t levels, double step_ms) {
    if (!(step_ms > 0.0) || !(plateau_ms > 0.0) || levels == 0) throw Error("bad square wave parameters");
    QpsTrace t;
    const auto steps = static_cast<std::size_t>(std::llround(plateau_ms * static_cast<double>(levels) / step_ms));
    for (std::size_t i = 0; i < steps; ++i) {
        const double ts = static_cast<double>(i) * step_ms;
        const auto level = static_cast<std::size_t>(ts / plateau_ms);
        t.push_back({ts, level % 2 == 0 ? low : high});
    }
    return t;
}

struct TimelinePoint {
    double timestamp_ms = 0.0;
    double qps = 0.0;
    std::size_t active_index = 0;
    Decision decision = Decision::Stay;
};

struct SimulationReport {
    std::vector<std::string> ids;
    std::size_t initial_index = 0;
    std::vector<TimelinePoint> timeline;
    std::vector<SwitchEvent> switches;
    std::size_t compressed_bytes = 0;
    std::size_t uncompressed_bytes = 0; // every entry inflated at once
    std::size_t peak_steady_bytes = 0; // deflated blobs + one inflated model
    std::size_t peak_resident_bytes = 0; // also counts both models during a handover
    double mean_overhead_ms = 0.0, max_overhead_ms = 0.0;

    nlohmann::json to_json() const {
        nlohmann::json sw = nlohmann::json::array();
        for (const auto& e : switches) {
            sw.push_back({{"timestamp_ms", e.timestamp_ms}, {"from", e.from}, {"to", e.to}, {"overhead_ms", e.overhead_ms}});
        }
        return {{"models", ids},
                {"samples", timeline.size()},
                {"switch_count", switches.size()},
                {"switches", sw},
                {"mean_decision_overhead_ms", mean_overhead_ms},
                {"max_decision_overhead_ms", max_overhead_ms},
                {"compressed_bytes", compressed_bytes},
                {"uncompressed_bytes", uncompressed_bytes},
                {"peak_steady_bytes", peak_steady_bytes},
                {"peak_resident_bytes", peak_resident_bytes},
                {"initial_index", initial_index},
                {"final_index", timeline.empty() ? initial_index : timeline.back().active_index}};
    }

    std::string timeline_csv() const {
        std::ostringstream out;
        out.precision(12);
        out << "timestamp_ms,qps,active_index,decision\n";
        for (const auto& p : timeline) {
            out << p.timestamp_ms << ',' << p.qps << ',' << p.active_index << ',' << to_string(p.decision) << '\n';
        }
        return out.str();
    }
};

/// Replay a trace through a live runtime; every switch really inflates its target.
inline SimulationReport simulate(const PortfolioPackage& pkg, const QpsTrace& trace, const SwitchPolicy& policy = {}) {
    if (trace.empty()) throw Error("trace is empty");
    PortfolioRuntime rt(pkg, policy);
    SimulationReport rep;
    for (const auto& e : pkg.entries) rep.ids.push_back(e.id);
    rep.compressed_bytes = pkg.compressed_bytes();
    rep.uncompressed_bytes = pkg.raw_bytes();
    rep.initial_index = rt.active_index();
    const auto raw = [&](std::size_t i) { return pkg.entries[i].raw_size; };
    rep.peak_steady_bytes = rep.peak_resident_bytes = rep.compressed_bytes + raw(rt.active_index());
    for (const auto& s : trace) {
        const std::size_t from = rt.active_index();
        const Decision d = rt.observe(s);
        const std::size_t to = rt.active_index();
        rep.timeline.push_back({s.timestamp_ms, s.qps, to, d});
        if (d == Decision::Stay) continue;
        rep.peak_resident_bytes = std::max(rep.peak_resident_bytes, rep.compressed_bytes + raw(from) + raw(to));
        rep.peak_steady_bytes = std::max(rep.peak_steady_bytes, rep.compressed_bytes + raw(to));
    }
    rep.switches = rt.events();
    for (const auto& e : rep.switches) {
        rep.mean_overhead_ms += e.overhead_ms;
        rep.max_overhead_ms = std::max(rep.max_overhead_ms, e.overhead_ms);
    }
    if (!rep.switches.empty()) rep.mean_overhead_ms /= static_cast<double>(rep.switches.size());
    return rep;
}

struct LoadTiming {
    std::string id;
    double inflate_ms = 0.0; // in-memory blob -> runnable model
    double cold_disk_ms = 0.0; // uncached file -> runnable model
};

namespace detail {

inline double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    return v[v.size() / 2];
}

/// Read a file after asking the kernel to drop its cached pages.
inline Bytes read_uncached(const std::filesystem::path& path) {
    const int fd = ::open(path.c_str(), O_RDONLY);
    if (fd < 0) throw Error("cannot open " + path.string());
    ::posix_fadvise(fd, 0, 0, POSIX_FADV_DONTNEED);
    Bytes out(std::filesystem::file_size(path));
    std::size_t got = 0;
    while (got < out.size()) {
        const ssize_t n = ::read(fd, out.data() + got, out.size() - got);
        if (n <= 0) {
            ::close(fd);
            throw Error("short read from " + path.string());
        }
        got += static_cast<std::size_t>(n);
    }
    ::close(fd);
    return out;
}

inline void write_synced(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
    io::write_file(path, bytes);
    const int fd = ::open(path.c_str(), O_RDONLY);
    if (fd < 0) throw Error("cannot open " + path.string());
    ::fsync(fd);
    ::posix_fadvise(fd, 0, 0, POSIX_FADV_DONTNEED);
    ::close(fd);
}

} // namespace detail

/**
 * Median over `reps` of both ways to obtain each entry as a runnable model:
 * inflating its resident blob, or reading its serialization from a file in
 * `dir` with the page cache dropped before every read.
 */
inline std::vector<LoadTiming> compare_load_paths(const PortfolioPackage& pkg, const std::filesystem::path& dir,
                                                  std::size_t reps = 5) {
    using clock = std::chrono::steady_clock;
    auto ms = [](clock::time_point t0) { return std::chrono::duration<double, std::milli>(clock::now() - t0).count(); };
    if (reps == 0) throw Error("reps must be >= 1");
    std::filesystem::create_directories(dir);
    std::vector<LoadTiming> out;
    for (std::size_t i = 0; i < pkg.size(); ++i) {
        const auto path = dir / ("entry" + std::to_string(i) + ".dms");
        detail::write_synced(path, inflate_entry(pkg, i));
        std::vector<double> inflate, disk;
        for (std::size_t r = 0; r < reps; ++r) {
            auto t0 = clock::now();
            ModelGraph a = load_entry(pkg, i);
            inflate.push_back(ms(t0));
            {
                const int fd = ::open(path.c_str(), O_RDONLY);
                if (fd >= 0) {
                    ::posix_fadvise(fd, 0, 0, POSIX_FADV_DONTNEED);
                    ::close(fd);
                }
            }
            t0 = clock::now();
            ModelGraph b = deserialize(detail::read_uncached(path));
            disk.push_back(ms(t0));
            if (a.size() != b.size()) throw Error("load paths disagree for entry " + std::to_string(i));
        }
        std::filesystem::remove(path);
        out.push_back({pkg.entries[i].id, detail::median(inflate), detail::median(disk)});
    }
    return out;
}

} // namespace sparseshift
