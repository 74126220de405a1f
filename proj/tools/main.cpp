// Experiment runner: edge-augmentation sweeps, asynchronous vs batch
// comparisons, dynamic-field runs and online occupancy mapping, driven by
// an INI config (or a previously emitted manifest) with per-run artifacts
// (manifest.json, metrics.csv, summary.json) written before/after compute.

#include <CLI11.hpp>
#include <json.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>

#include "gbpmap/sim/experiment.hpp"

namespace fs = std::filesystem;
using namespace gbpmap;

namespace {

struct CommonArgs {
    std::string config_path;
    std::string out_dir = "out";
    long seed = -1;
    std::string seeds_range;
    std::string scheduler;
};

void add_common(CLI::App* cmd, CommonArgs* args) {
    cmd->add_option("--config", args->config_path, "config file (INI) or manifest.json");
    cmd->add_option("--out", args->out_dir, "output directory");
    cmd->add_option("--seed", args->seed, "single seed (overrides config)");
    cmd->add_option("--seeds", args->seeds_range, "seed range N..M (overrides config)");
    cmd->add_option("--scheduler", args->scheduler, "seq | par");
}

std::vector<std::uint64_t> resolve_seeds(const CommonArgs& args, const Config& cfg) {
    if (args.seed >= 0) return {static_cast<std::uint64_t>(args.seed)};
    if (!args.seeds_range.empty()) {
        const auto dots = args.seeds_range.find("..");
        if (dots == std::string::npos) {
            throw ConfigError("--seeds expects N..M, got '" + args.seeds_range + "'");
        }
        const long lo = std::stol(args.seeds_range.substr(0, dots));
        const long hi = std::stol(args.seeds_range.substr(dots + 2));
        if (hi < lo) throw ConfigError("--seeds range is empty");
        std::vector<std::uint64_t> seeds;
        for (long s = lo; s <= hi; ++s) seeds.push_back(static_cast<std::uint64_t>(s));
        return seeds;
    }
    std::vector<std::uint64_t> seeds;
    for (int i = 0; i < cfg.run.seeds; ++i) seeds.push_back(cfg.run.seed + i);
    return seeds;
}

// Command-specific defaults, applied before the user's config file so every
// value remains overridable (and recorded in the manifest).
void apply_command_defaults(const std::string& cmd, Config& cfg) {
    if (cmd == "edges") {
        cfg.run.seeds = 10;
        cfg.robots.inducing_grid = 4;
        cfg.kernel.lengthscale = 0.5;
        cfg.field.lengthscale = 0.5;
        cfg.edges.obs_per_robot = 150;
        cfg.edges.max_extra = 12;
    } else if (cmd == "async") {
        cfg.run.seeds = 10;
        cfg.run.steps = 1200;
        cfg.run.eval_period = 400;
        cfg.robots.inducing_grid = 4;
        cfg.kernel.lengthscale = 0.5;
        cfg.field.lengthscale = 0.5;
        cfg.robots.scope_cap_factor = 9.0;
    } else if (cmd == "dynamic") {
        cfg.run.seeds = 4;
        cfg.run.steps = 600;
        cfg.run.eval_period = 50;
        cfg.grid.rows = 3;
        cfg.grid.cols = 3;
        cfg.kernel.family = "product";
        cfg.kernel.lengthscale = 0.5;
        cfg.kernel.time_lengthscale = 150.0;
        cfg.field.time_slices = 12;
        cfg.field.dt = 50.0;
        cfg.field.lengthscale = 0.5;
        cfg.robots.online_selection = true;
        cfg.robots.inducing_grid = 1;
        cfg.robots.max_inducing = 200;
        cfg.comm.boundary_strategy = "line";
        cfg.comm.boundary_count = 3;
        cfg.hyper.enabled = true;
        cfg.eval.burn_in = 100;
        cfg.eval.grid_resolution = 60;
    } else if (cmd == "occupancy") {
        cfg.run.seeds = 1;
        cfg.run.steps = 700;
        cfg.comm.d_comm = 1.8;
        cfg.comm.share_posteriors = true;
        cfg.comm.boundary_strategy = "mirror";
        cfg.comm.boundary_count = 4;
        cfg.comm.boundary_band_frac = 0.25;
        cfg.robots.max_inducing = 220;
        cfg.robots.gbp_iters_per_step = 1;
        cfg.eval.mode = "closest";
    }
}

struct RunContext {
    fs::path out;
    RunManifest manifest;
    MetricsSink sink;
};

RunContext prepare(const std::string& cmd, const CommonArgs& args, Config* cfg) {
    if (!args.config_path.empty()) {
        *cfg = Config::from_file(args.config_path);
    }
    if (!args.scheduler.empty()) cfg->run.scheduler = args.scheduler;
    cfg->validate();

    RunContext ctx;
    ctx.out = args.out_dir;
    fs::create_directories(ctx.out);
    ctx.manifest.subcommand = cmd;
    ctx.manifest.seeds = resolve_seeds(args, *cfg);
    ctx.manifest.resolved_config = cfg->to_ini();
    ctx.manifest.config_hash = cfg->content_hash();
    ctx.manifest.out_dir = ctx.out.string();
    std::ofstream mf(ctx.out / "manifest.json");
    mf << ctx.manifest.to_json() << "\n";
    return ctx;
}

struct Stats {
    double mean = 0.0;
    double se = 0.0;
    int n = 0;
};

Stats stats_of(const std::vector<double>& xs) {
    Stats s;
    s.n = static_cast<int>(xs.size());
    if (xs.empty()) return s;
    for (double x : xs) s.mean += x;
    s.mean /= s.n;
    if (s.n > 1) {
        double var = 0.0;
        for (double x : xs) var += (x - s.mean) * (x - s.mean);
        var /= (s.n - 1);
        s.se = std::sqrt(var / s.n);
    }
    return s;
}

// Per-mode values of one metric, keyed by mode, one entry per seed at the
// given step filter (negative: last step per seed).
std::map<std::string, std::vector<double>> collect(const MetricsSink& sink,
                                                   const std::string& metric, long step_filter) {
    std::map<std::string, std::map<std::uint64_t, std::pair<long, double>>> latest;
    for (const auto& r : sink.rows()) {
        if (r.metric != metric) continue;
        if (step_filter >= 0 && r.step != step_filter) continue;
        auto& slot = latest[r.mode][r.seed];
        if (step_filter >= 0 || r.step >= slot.first) slot = {r.step, r.value};
    }
    std::map<std::string, std::vector<double>> out;
    for (const auto& [mode, by_seed] : latest) {
        for (const auto& [seed, sv] : by_seed) out[mode].push_back(sv.second);
    }
    return out;
}

void finalize(const RunContext& ctx, const nlohmann::json& extra, bool partial,
              const std::string& error) {
    std::ofstream csv(ctx.out / "metrics.csv");
    ctx.sink.write_csv(csv);
    nlohmann::json j = extra;
    j["partial"] = partial;
    if (!error.empty()) j["error"] = error;
    j["config_hash"] = ctx.manifest.config_hash;
    std::ofstream js(ctx.out / "summary.json");
    js << j.dump(2) << "\n";
}

int cmd_edges(const CommonArgs& args) {
    Config cfg;
    apply_command_defaults("edges", cfg);
    RunContext ctx = prepare("edges", args, &cfg);
    try {
        for (std::uint64_t seed : ctx.manifest.seeds) {
            run_edges_experiment(cfg, seed, ctx.sink);
        }
    } catch (const std::exception& e) {
        finalize(ctx, {}, true, e.what());
        throw;
    }

    const auto by_mode = collect(ctx.sink, "mse", 0);
    nlohmann::json table = nlohmann::json::array();
    for (int k = 0; k <= cfg.edges.max_extra; ++k) {
        const auto it = by_mode.find("tsgp+" + std::to_string(k));
        if (it == by_mode.end()) continue;
        const Stats s = stats_of(it->second);
        table.push_back({{"extra_edges", k}, {"mean_mse", s.mean}, {"se", s.se}});
    }
    nlohmann::json summary;
    summary["fig3_table"] = table;
    for (const std::string mode : {"none", "dense"}) {
        const auto it = by_mode.find(mode);
        if (it != by_mode.end()) {
            const Stats s = stats_of(it->second);
            summary[mode] = {{"mean_mse", s.mean}, {"se", s.se}};
        }
    }
    finalize(ctx, summary, false, "");
    return 0;
}

int cmd_async(const CommonArgs& args) {
    Config cfg;
    apply_command_defaults("async", cfg);
    RunContext ctx = prepare("async", args, &cfg);
    try {
        for (std::uint64_t seed : ctx.manifest.seeds) {
            const FieldGrid field = make_field(cfg, seed);
            FieldExperimentOptions opts;
            opts.batch_baselines = true;
            opts.heldout_metric = true;
            opts.mode_tag = "distributed";
            opts.comm_enabled = cfg.comm.enabled;
            opts.comm_interval = cfg.comm.interval;
            opts.d_comm = cfg.comm.enabled ? cfg.comm.d_comm : 0.0;
            run_field_experiment(cfg, seed, field, opts, ctx.sink);
        }
    } catch (const std::exception& e) {
        finalize(ctx, {}, true, e.what());
        throw;
    }
    nlohmann::json summary;
    for (const auto& [mode, vals] : collect(ctx.sink, "mse", -1)) {
        const Stats s = stats_of(vals);
        summary["final_mse"][mode] = {{"mean", s.mean}, {"se", s.se}, {"seeds", s.n}};
    }
    finalize(ctx, summary, false, "");
    return 0;
}

int cmd_dynamic(const CommonArgs& args) {
    Config cfg;
    apply_command_defaults("dynamic", cfg);
    RunContext ctx = prepare("dynamic", args, &cfg);

    std::vector<int> intervals;
    {
        std::string s = cfg.dynamic.intervals;
        std::size_t pos = 0;
        while (pos < s.size()) {
            const auto comma = s.find(',', pos);
            const std::string tok = s.substr(pos, comma == std::string::npos ? comma
                                                                             : comma - pos);
            if (!tok.empty()) intervals.push_back(std::stoi(tok));
            if (comma == std::string::npos) break;
            pos = comma + 1;
        }
        if (intervals.empty()) intervals.push_back(1);
    }

    try {
        for (std::uint64_t seed : ctx.manifest.seeds) {
            const FieldGrid field = make_field(cfg, seed);
            for (int interval : intervals) {
                FieldExperimentOptions opts;
                opts.mode_tag = "comm_i" + std::to_string(interval);
                opts.comm_enabled = true;
                opts.comm_interval = interval;
                opts.d_comm = cfg.comm.d_comm;
                run_field_experiment(cfg, seed, field, opts, ctx.sink);
            }
            if (cfg.dynamic.include_nocomm) {
                FieldExperimentOptions opts;
                opts.mode_tag = "nocomm";
                opts.comm_enabled = false;
                opts.d_comm = 0.0;
                run_field_experiment(cfg, seed, field, opts, ctx.sink);
            }
        }
    } catch (const std::exception& e) {
        finalize(ctx, {}, true, e.what());
        throw;
    }

    // Average the per-step MSE beyond burn-in, per seed, then across seeds.
    std::map<std::string, std::map<std::uint64_t, std::pair<double, int>>> acc;
    for (const auto& r : ctx.sink.rows()) {
        if (r.metric != "mse" || r.step < cfg.eval.burn_in) continue;
        auto& slot = acc[r.mode][r.seed];
        slot.first += r.value;
        slot.second += 1;
    }
    nlohmann::json summary;
    for (const auto& [mode, by_seed] : acc) {
        std::vector<double> vals;
        for (const auto& [seed, sv] : by_seed) vals.push_back(sv.first / sv.second);
        const Stats s = stats_of(vals);
        summary["post_burnin_mse"][mode] = {{"mean", s.mean}, {"se", s.se}, {"seeds", s.n}};
    }
    finalize(ctx, summary, false, "");
    return 0;
}

int cmd_occupancy(const CommonArgs& args) {
    Config cfg;
    apply_command_defaults("occupancy", cfg);
    RunContext ctx = prepare("occupancy", args, &cfg);
    try {
        fs::create_directories(ctx.out / "maps");
        for (std::uint64_t seed : ctx.manifest.seeds) {
            OccupancyArtifacts artifacts;
            artifacts.emit_raster = [&](long step, const Eigen::MatrixXd& img) {
                char name[64];
                std::snprintf(name, sizeof(name), "maps/map_seed%llu_step%06ld.pgm",
                              static_cast<unsigned long long>(seed), step);
                write_pgm((ctx.out / name).string(), img, 0.0, 1.0);
            };
            run_occupancy_experiment(cfg, seed, ctx.sink, artifacts);
        }
    } catch (const std::exception& e) {
        finalize(ctx, {}, true, e.what());
        throw;
    }
    nlohmann::json summary;
    for (const std::string metric : {"accuracy", "bce"}) {
        for (const auto& [mode, vals] : collect(ctx.sink, metric, -1)) {
            const Stats s = stats_of(vals);
            summary["final"][metric][mode] = {{"mean", s.mean}, {"se", s.se}};
        }
    }
    finalize(ctx, summary, false, "");
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"distributed sparse GP mapping experiments"};
    app.require_subcommand(1);

    CommonArgs args;
    CLI::App* edges = app.add_subcommand("edges", "batch edge-augmentation sweep");
    CLI::App* async_cmd = app.add_subcommand("async", "online distributed vs batch baselines");
    CLI::App* dynamic = app.add_subcommand("dynamic", "space-time field with comm sweeps");
    CLI::App* occupancy = app.add_subcommand("occupancy", "single-pass occupancy mapping");
    for (CLI::App* c : {edges, async_cmd, dynamic, occupancy}) add_common(c, &args);

    CLI11_PARSE(app, argc, argv);

    try {
        if (edges->parsed()) return cmd_edges(args);
        if (async_cmd->parsed()) return cmd_async(args);
        if (dynamic->parsed()) return cmd_dynamic(args);
        if (occupancy->parsed()) return cmd_occupancy(args);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const SingularPrecision& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return 3;
    } catch (const DivergenceDetected& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
