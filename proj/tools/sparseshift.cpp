// Command-line driver for the train -> prune -> profile -> package -> simulate pipeline.
//
// Exit codes: 0 ok, 1 other failure, 2 usage or missing input, 3 malformed input,
// 4 layer collapse, 5 training divergence. Failures print one JSON object to stderr.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "sparseshift/sparseshift.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace sparseshift;

namespace {

/// A required input is absent or unusable; maps to the usage exit code.
class InputError : public Error {
public:
    using Error::Error;
};

enum Exit { kOk = 0, kOther = 1, kUsage = 2, kFormat = 3, kCollapse = 4, kDivergence = 5 };

int report(int code, const char* kind, const std::string& message) {
    std::cerr << json{{"error", {{"code", code}, {"kind", kind}, {"message", message}}}}.dump() << std::endl;
    return code;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + path.string());
    out << text;
}

json read_json(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open " + path.string());
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw FormatError(0, path.string() + ": " + e.what());
    }
}

void require_exists(const fs::path& p) {
    if (!fs::exists(p)) throw InputError("missing input " + p.string());
}

/// Every .dms file under the given paths, directories expanded in name order.
std::vector<fs::path> model_files(const std::vector<std::string>& inputs) {
    std::vector<fs::path> out;
    for (const auto& in : inputs) {
        require_exists(in);
        if (!fs::is_directory(in)) {
            out.emplace_back(in);
            continue;
        }
        std::vector<fs::path> found;
        for (const auto& e : fs::directory_iterator(in)) {
            if (e.path().extension() == ".dms") found.push_back(e.path());
        }
        std::sort(found.begin(), found.end());
        out.insert(out.end(), found.begin(), found.end());
    }
    if (out.empty()) throw InputError("no .dms models found");
    return out;
}

std::string record_id(const fs::path& p) { return p.parent_path().filename().string() + "/" + p.stem().string(); }

struct Options {
    std::uint64_t seed = 0;
    std::string out;

    // train
    std::string arch = "toy-vgg";
    std::size_t width = 1;
    std::string data;
    std::size_t train_size = 512, test_size = 256;
    TrainConfig train;

    // prune
    std::vector<std::string> inputs;
    bool strict = false;

    // profile
    std::size_t reps = 20, warmup = 2;
    double delta = 0.01;
    std::string latency_axis = "macs";

    // package
    std::string profile_path;
    bool package_all = false;
    int deflate_level = kDefaultDeflateLevel;
    bool keep_latency = false;

    // simulate
    std::string package_path, trace_path;
    SwitchPolicy policy;
    std::size_t load_reps = 5;

    // plot-data
    std::vector<std::string> profiles;

    // trace
    double low = 100.0, high = 300.0, plateau_ms = 5000.0, step_ms = 100.0;
    std::size_t levels = 9;
};

VggConfig arch_config(const std::string& name, std::size_t width, const Dataset& data, std::uint64_t seed) {
    VggConfig c;
    if (name == "toy-vgg") c = toy_vgg_config(width);
    else if (name == "vgg16" && width == 1) c = vgg16_config();
    else if (name == "vgg16") throw InputError("--width applies to toy-vgg only");
    else throw InputError("unknown architecture '" + name + "' (toy-vgg, vgg16)");
    c.input_shape = data.sample_shape();
    c.num_classes = data.num_classes;
    c.seed = seed;
    return c;
}

Dataset synthetic(const Options& o) {
    SyntheticConfig sc;
    sc.train_count = o.train_size;
    sc.test_count = o.test_size;
    sc.seed = o.seed + 1;
    return make_synthetic(sc);
}

int cmd_dataset(const Options& o) {
    save_dataset(synthetic(o), o.out);
    std::cout << "wrote " << o.train_size << " train / " << o.test_size << " test samples to " << o.out << "\n";
    return kOk;
}

int cmd_train(const Options& o) {
    TrainConfig cfg = o.train;
    cfg.seed = o.seed;
    cfg.validate();
    Dataset data;
    if (!o.data.empty()) {
        require_exists(fs::path(o.data) / "dataset.json");
        data = load_dataset(o.data);
    } else {
        data = synthetic(o);
    }
    const ModelGraph arch = make_vgg(arch_config(o.arch, o.width, data, o.seed));

    const auto variants = imp_portfolio(arch, data, cfg, [](const ImpVariant& v) {
        std::cout << "variant_" << v.iteration << ": ratio " << v.compression_ratio() << ", accuracy " << v.test_accuracy
                  << std::endl;
    });

    const fs::path out(o.out);
    fs::create_directories(out / "sparse");
    if (o.data.empty()) save_dataset(data, out / "dataset");
    json entries = json::array();
    for (const auto& v : variants) {
        ModelGraph m = v.model;
        m.meta.name = "variant_" + std::to_string(v.iteration);
        m.meta.metrics["compression_ratio"] = v.compression_ratio();
        m.meta.metrics["test_accuracy"] = v.test_accuracy;
        save_model(m, out / "sparse" / (m.meta.name + ".dms"));
        io::write_file(out / "sparse" / (m.meta.name + ".mask"), encode_mask(v.mask));
        json log = json::array();
        for (const auto& e : v.log) log.push_back({{"epoch", e.epoch}, {"loss", e.loss}, {"test_accuracy", e.test_accuracy}});
        entries.push_back({{"iteration", v.iteration},
                           {"compression_ratio", v.compression_ratio()},
                           {"nonzero", nonzero_count(m)},
                           {"prunable_nonzero", v.mask.kept()},
                           {"test_accuracy", v.test_accuracy},
                           {"collapsed_nodes", v.collapsed_nodes},
                           {"log", log}});
    }
    json summary{{"arch", o.arch},
                 {"width", o.width},
                 {"seed", o.seed},
                 {"epochs", cfg.epochs},
                 {"batch_size", cfg.batch_size},
                 {"learning_rate", cfg.learning_rate},
                 {"portfolio_depth", cfg.portfolio_depth},
                 {"rewind_epoch", cfg.rewind_epoch},
                 {"variants", entries}};
    write_text(out / "train.json", summary.dump(2) + "\n");
    return kOk;
}

int cmd_prune(const Options& o) {
    const auto files = model_files(o.inputs);
    std::vector<ModelGraph> models;
    for (const auto& f : files) models.push_back(load_model(f));
    std::vector<PruneResult> results;
    for (const auto& m : models) results.push_back(prune(m, {o.strict, true}));

    const fs::path out(o.out);
    fs::create_directories(out / "pruned");
    json audits = json::array();
    for (std::size_t i = 0; i < files.size(); ++i) {
        PruneResult& r = results[i];
        r.model.meta.name = models[i].meta.name;
        save_model(r.model, out / "pruned" / files[i].filename());
        json a = r.audit.to_json();
        a["model"] = files[i].filename().string();
        audits.push_back(std::move(a));
        if (r.audit.channels_removed == 0) {
            std::cerr << "warning: " << files[i].filename().string() << ": 0 channels removed\n";
        }
        std::cout << files[i].filename().string() << ": " << r.audit.params_before << " -> " << r.audit.params_after
                  << " params, " << r.audit.channels_removed << " channels removed in " << r.audit.total_ms << " ms\n";
    }
    // the audit timings vary between runs; everything else is deterministic
    write_text(out / "prune_audit.json", audits.dump(2) + "\n");
    return kOk;
}

LatencyAxis parse_axis(const std::string& s) {
    if (s == "macs") return LatencyAxis::Macs;
    if (s == "measured") return LatencyAxis::Measured;
    throw InputError("latency axis must be 'macs' or 'measured'");
}

int cmd_profile(const Options& o) {
    const LatencyAxis axis = parse_axis(o.latency_axis);
    const auto files = model_files(o.inputs);
    require_exists(fs::path(o.data) / "dataset.json");
    const Dataset data = load_dataset(o.data);
    std::vector<ModelGraph> models;
    for (const auto& f : files) models.push_back(load_model(f));

    ProfileOptions po;
    po.reps = o.reps;
    po.warmup = o.warmup;
    std::vector<const ModelGraph*> ptrs;
    std::vector<std::string> ids;
    std::vector<double> ratios;
    for (std::size_t i = 0; i < models.size(); ++i) {
        const auto& m = models[i];
        const auto it = m.meta.metrics.find("compression_ratio");
        ptrs.push_back(&m);
        ids.push_back(record_id(files[i]));
        ratios.push_back(it == m.meta.metrics.end() ? 1.0 : it->second);
    }
    const std::vector<ProfileRecord> records = profile_portfolio(ptrs, data.test, po, ids, ratios);
    const ParetoResult front = pareto_filter(records, o.delta, axis);

    json recs = json::array();
    for (std::size_t i = 0; i < records.size(); ++i) {
        json r = to_json(records[i]);
        r["path"] = fs::absolute(files[i]).lexically_normal().string();
        recs.push_back(std::move(r));
    }
    json optimal = json::array();
    for (std::size_t i : front.optimal) optimal.push_back(records[i].id);
    const json doc{{"records", recs},
                   {"pareto",
                    {{"latency_axis", o.latency_axis},
                     {"delta", o.delta},
                     {"optimal", optimal},
                     {"search_efficiency", front.search_efficiency}}}};
    const fs::path out(o.out);
    fs::create_directories(out);
    write_text(out / "profile.json", doc.dump(2) + "\n");
    write_text(out / "records.csv", records_csv(records));
    std::cout << records.size() << " variants profiled, " << front.optimal.size() << " Pareto-optimal ("
              << front.search_efficiency * 100.0 << "% search efficiency)\n";
    return kOk;
}

int cmd_package(const Options& o) {
    const json doc = read_json(o.profile_path);
    std::vector<ModelGraph> models;
    std::vector<ProfileRecord> records;
    try {
        std::vector<std::string> wanted;
        if (o.package_all) {
            for (const auto& r : doc.at("records")) wanted.push_back(r.at("id").get<std::string>());
        } else {
            wanted = doc.at("pareto").at("optimal").get<std::vector<std::string>>();
        }
        for (const auto& r : doc.at("records")) {
            const auto id = r.at("id").get<std::string>();
            if (std::find(wanted.begin(), wanted.end(), id) == wanted.end()) continue;
            const fs::path path = r.at("path").get<std::string>();
            require_exists(path);
            models.push_back(load_model(path));
            records.push_back(record_from_json(r));
        }
    } catch (const json::exception& e) {
        throw FormatError(0, o.profile_path + ": " + e.what());
    }
    const PortfolioPackage pkg = deflate_portfolio(models, records, {o.deflate_level, o.keep_latency});
    const fs::path out(o.out);
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    save_package(pkg, out);
    std::cout << pkg.size() << " models packaged: " << pkg.raw_bytes() << " -> " << pkg.compressed_bytes() << " bytes\n";
    for (const auto& e : pkg.entries) {
        std::cout << "  " << e.id << ": " << e.raw_size << " -> " << e.compressed_size << "\n";
    }
    return kOk;
}

int cmd_simulate(const Options& o) {
    require_exists(o.package_path);
    require_exists(o.trace_path);
    o.policy.validate();
    const PortfolioPackage pkg = load_package(o.package_path);
    const QpsTrace trace = load_trace(o.trace_path);
    const SimulationReport rep = simulate(pkg, trace, o.policy);

    const fs::path out(o.out);
    fs::create_directories(out);
    json doc = rep.to_json();
    json loads = json::array();
    for (const auto& l : compare_load_paths(pkg, out / ".load-probe", o.load_reps)) {
        loads.push_back({{"id", l.id}, {"inflate_ms", l.inflate_ms}, {"cold_disk_ms", l.cold_disk_ms}});
    }
    fs::remove_all(out / ".load-probe");
    doc["load_paths"] = loads;
    write_text(out / "simulation.json", doc.dump(2) + "\n");
    write_text(out / "timeline.csv", rep.timeline_csv());
    std::cout << rep.switches.size() << " switches, mean decision overhead " << rep.mean_overhead_ms
              << " ms, peak resident " << rep.peak_resident_bytes << " of " << rep.uncompressed_bytes
              << " uncompressed bytes\n";
    return kOk;
}

int cmd_plot_data(const Options& o) {
    std::vector<std::pair<std::string, ProfileRecord>> rows;
    for (const auto& p : o.profiles) {
        const json doc = read_json(p);
        try {
            for (const auto& r : doc.at("records")) rows.emplace_back(fs::path(p).parent_path().filename().string(), record_from_json(r));
        } catch (const json::exception& e) {
            throw FormatError(0, p + ": " + e.what());
        }
    }
    if (rows.empty()) throw InputError("no profile records");
    // baseline: the least compressed record of the first profile, i.e. the dense model
    const ProfileRecord* base = &rows.front().second;
    for (const auto& [src, r] : rows) {
        if (src == rows.front().first && r.compression_ratio < base->compression_ratio) base = &r;
    }
    std::ostringstream csv;
    csv.precision(10);
    csv << "source,id,compression_ratio,top1_accuracy,latency_mean_ms,latency_p95_ms,serialized_size_bytes,"
           "speedup,spatial_compression\n";
    for (const auto& [src, r] : rows) {
        csv << src << ',' << r.id << ',' << r.compression_ratio << ',' << r.top1_accuracy << ',' << r.latency_ms.mean
            << ',' << r.latency_ms.p95 << ',' << r.serialized_size_bytes << ','
            << base->latency_ms.mean / r.latency_ms.mean << ','
            << static_cast<double>(base->serialized_size_bytes) / static_cast<double>(r.serialized_size_bytes) << '\n';
    }
    const fs::path out(o.out);
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    write_text(out, csv.str());
    std::cout << rows.size() << " rows, baseline " << base->id << "\n";
    return kOk;
}

int cmd_trace(const Options& o) {
    const fs::path out(o.out);
    const QpsTrace t = square_wave_trace(o.low, o.high, o.plateau_ms, o.levels, o.step_ms);
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    write_text(out, trace_csv(t));
    std::cout << t.size() << " samples, " << o.levels - 1 << " edges\n";
    return kOk;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Train, prune, package and switch between sparse CNN variants"};
    app.require_subcommand(1);
    app.fallthrough();
    app.set_config("--config", "", "INI/TOML file of option defaults; command-line flags win");
    Options o;
    app.add_option("--seed", o.seed, "Random seed")->capture_default_str();

    auto* dataset = app.add_subcommand("dataset", "Write the synthetic texture dataset");
    dataset->add_option("--out", o.out, "Output directory")->required();
    dataset->add_option("--train-size", o.train_size)->capture_default_str();
    dataset->add_option("--test-size", o.test_size)->capture_default_str();

    auto* train = app.add_subcommand("train", "Dense training plus n rounds of IMP with rewinding");
    train->add_option("--out", o.out, "Output directory")->required();
    train->add_option("--arch", o.arch, "toy-vgg | vgg16")->capture_default_str();
    train->add_option("--width", o.width, "Channel multiplier for toy-vgg")->check(CLI::Range(1, 64))->capture_default_str();
    train->add_option("--data", o.data, "Dataset directory (default: synthesize one)");
    train->add_option("--train-size", o.train_size, "Synthetic training samples")->capture_default_str();
    train->add_option("--test-size", o.test_size, "Synthetic test samples")->capture_default_str();
    train->add_option("--portfolio-depth,-n", o.train.portfolio_depth, "IMP iterations")->capture_default_str();
    train->add_option("--epochs", o.train.epochs)->capture_default_str();
    train->add_option("--rewind-epoch", o.train.rewind_epoch)->capture_default_str();
    train->add_option("--batch-size", o.train.batch_size)->capture_default_str();
    train->add_option("--lr", o.train.learning_rate)->capture_default_str();
    train->add_option("--milestones", o.train.milestone_steps, "Epochs at which the learning rate is scaled by gamma");
    train->add_option("--gamma", o.train.gamma)->capture_default_str();
    train->add_option("--momentum", o.train.momentum)->capture_default_str();
    train->add_option("--weight-decay", o.train.weight_decay)->capture_default_str();
    train->add_flag("--per-layer", o.train.per_layer_ranking, "Rank magnitudes per layer instead of globally");

    auto* prune_cmd = app.add_subcommand("prune", "Structurally remove zero channels");
    prune_cmd->add_option("--in", o.inputs, "Model files or directories")->required();
    prune_cmd->add_option("--out", o.out, "Output directory")->required();
    prune_cmd->add_flag("--strict-prune", o.strict, "Keep zero channels whose removal would change outputs");

    auto* profile_cmd = app.add_subcommand("profile", "Measure variants and select the Pareto-optimal ones");
    profile_cmd->add_option("--models", o.inputs, "Model files or directories")->required();
    profile_cmd->add_option("--data", o.data, "Dataset directory")->required();
    profile_cmd->add_option("--out", o.out, "Output directory")->required();
    profile_cmd->add_option("--reps", o.reps)->capture_default_str();
    profile_cmd->add_option("--warmup", o.warmup)->capture_default_str();
    profile_cmd->add_option("--delta", o.delta, "Relative tolerance for near-duplicate variants")->capture_default_str();
    profile_cmd->add_option("--latency-axis", o.latency_axis, "macs | measured")->capture_default_str();

    auto* package = app.add_subcommand("package", "Deflate the selected variants into one package");
    package->add_option("--profile", o.profile_path, "profile.json from the profile command")->required();
    package->add_option("--out", o.out, "Package file")->required();
    package->add_option("--deflate-level", o.deflate_level)->check(CLI::Range(0, kMaxDeflateLevel))->capture_default_str();
    package->add_flag("--all", o.package_all, "Package every profiled variant, not just the Pareto set");
    package->add_flag("--keep-latency", o.keep_latency, "Store measured latency in the manifest");

    auto* sim = app.add_subcommand("simulate", "Replay a QPS trace against a package");
    sim->add_option("--package", o.package_path)->required();
    sim->add_option("--trace", o.trace_path, "CSV of timestamp_ms,qps")->required();
    sim->add_option("--out", o.out, "Output directory")->required();
    sim->add_option("--fast-half-life", o.policy.fast_half_life)->capture_default_str();
    sim->add_option("--slow-half-life", o.policy.slow_half_life)->capture_default_str();
    sim->add_option("--up-threshold", o.policy.up_threshold)->capture_default_str();
    sim->add_option("--down-threshold", o.policy.down_threshold)->capture_default_str();
    sim->add_option("--min-dwell-ms", o.policy.min_dwell_ms)->capture_default_str();
    sim->add_option("--load-reps", o.load_reps, "Repetitions for the inflate vs cold-disk comparison")->capture_default_str();

    auto* plot = app.add_subcommand("plot-data", "CSV of compression ratio against accuracy, speedup and size");
    plot->add_option("--profile", o.profiles, "profile.json files; the first holds the dense baseline")->required();
    plot->add_option("--out", o.out, "CSV file")->required();

    auto* trace = app.add_subcommand("trace", "Write a square-wave QPS trace");
    trace->add_option("--out", o.out, "CSV file")->required();
    trace->add_option("--low", o.low)->capture_default_str();
    trace->add_option("--high", o.high)->capture_default_str();
    trace->add_option("--plateau-ms", o.plateau_ms)->capture_default_str();
    trace->add_option("--levels", o.levels)->capture_default_str();
    trace->add_option("--step-ms", o.step_ms)->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        return report(kUsage, "usage", e.what());
    }

    try {
        if (*dataset) return cmd_dataset(o);
        if (*train) return cmd_train(o);
        if (*prune_cmd) return cmd_prune(o);
        if (*profile_cmd) return cmd_profile(o);
        if (*package) return cmd_package(o);
        if (*sim) return cmd_simulate(o);
        if (*plot) return cmd_plot_data(o);
        if (*trace) return cmd_trace(o);
    } catch (const InputError& e) {
        return report(kUsage, "missing_input", e.what());
    } catch (const CollapseError& e) {
        return report(kCollapse, "collapse", e.what());
    } catch (const DivergenceError& e) {
        return report(kDivergence, "divergence", e.what());
    } catch (const FormatError& e) {
        return report(kFormat, "format", e.what());
    } catch (const ParseError& e) {
        return report(kFormat, "format", e.what());
    } catch (const CorruptPackageError& e) {
        return report(kFormat, "corrupt_package", e.what());
    } catch (const std::exception& e) {
        return report(kOther, "error", e.what());
    }
    return kOther;
}
