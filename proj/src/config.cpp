#include "gbpmap/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

#include <json.hpp>

namespace gbpmap {

namespace {

struct Entry {
    std::string key;  // "section.key"
    std::function<std::string(const Config&)> get;
    std::function<void(Config&, const std::string&)> set;
};

std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

double parse_double(const std::string& key, const std::string& s) {
    try {
        std::size_t pos = 0;
        const double v = std::stod(s, &pos);
        if (pos != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': expected a number, got '" + s + "'");
    }
}

long parse_long(const std::string& key, const std::string& s) {
    try {
        std::size_t pos = 0;
        const long v = std::stol(s, &pos);
        if (pos != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': expected an integer, got '" + s + "'");
    }
}

bool parse_bool(const std::string& key, const std::string& s) {
    if (s == "true" || s == "1" || s == "yes") return true;
    if (s == "false" || s == "0" || s == "no") return false;
    throw ConfigError("config key '" + key + "': expected a boolean, got '" + s + "'");
}

std::vector<Entry> schema() {
    std::vector<Entry> entries;
#define FIELD_DOUBLE(key, expr)                                                        \
    entries.push_back({key, [](const Config& c) { return fmt_double(c.expr); },       \
                       [](Config& c, const std::string& s) { c.expr = parse_double(key, s); }})
#define FIELD_LONG(key, expr)                                                          \
    entries.push_back({key, [](const Config& c) { return std::to_string(c.expr); },   \
                       [](Config& c, const std::string& s) { c.expr = parse_long(key, s); }})
#define FIELD_INT(key, expr)                                                           \
    entries.push_back(                                                                 \
        {key, [](const Config& c) { return std::to_string(c.expr); },                 \
         [](Config& c, const std::string& s) { c.expr = static_cast<int>(parse_long(key, s)); }})
#define FIELD_U64(key, expr)                                                           \
    entries.push_back({key, [](const Config& c) { return std::to_string(c.expr); },   \
                       [](Config& c, const std::string& s) {                          \
                           c.expr = static_cast<std::uint64_t>(parse_long(key, s));   \
                       }})
#define FIELD_BOOL(key, expr)                                                          \
    entries.push_back({key,                                                            \
                       [](const Config& c) { return c.expr ? std::string("true")      \
                                                           : std::string("false"); }, \
                       [](Config& c, const std::string& s) { c.expr = parse_bool(key, s); }})
#define FIELD_STRING(key, expr)                                                        \
    entries.push_back({key, [](const Config& c) { return c.expr; },                   \
                       [](Config& c, const std::string& s) { c.expr = s; }})

    FIELD_U64("run.seed", run.seed);
    FIELD_INT("run.seeds", run.seeds);
    FIELD_LONG("run.steps", run.steps);
    FIELD_STRING("run.scheduler", run.scheduler);
    FIELD_LONG("run.eval_period", run.eval_period);

    FIELD_INT("grid.rows", grid.rows);
    FIELD_INT("grid.cols", grid.cols);
    FIELD_DOUBLE("grid.x0", grid.x0);
    FIELD_DOUBLE("grid.x1", grid.x1);
    FIELD_DOUBLE("grid.y0", grid.y0);
    FIELD_DOUBLE("grid.y1", grid.y1);

    FIELD_DOUBLE("robots.speed", robots.speed);
    FIELD_DOUBLE("robots.waypoint_tol", robots.waypoint_tol);
    FIELD_INT("robots.buffer_capacity", robots.buffer_capacity);
    FIELD_INT("robots.inducing_grid", robots.inducing_grid);
    FIELD_INT("robots.max_inducing", robots.max_inducing);
    FIELD_INT("robots.select_period", robots.select_period);
    FIELD_BOOL("robots.online_selection", robots.online_selection);
    FIELD_INT("robots.gbp_iters_per_step", robots.gbp_iters_per_step);
    FIELD_DOUBLE("robots.damping", robots.damping);
    FIELD_DOUBLE("robots.scope_cap_factor", robots.scope_cap_factor);

    FIELD_DOUBLE("comm.d_comm", comm.d_comm);
    FIELD_INT("comm.interval", comm.interval);
    FIELD_BOOL("comm.enabled", comm.enabled);
    FIELD_STRING("comm.boundary_strategy", comm.boundary_strategy);
    FIELD_INT("comm.boundary_count", comm.boundary_count);
    FIELD_DOUBLE("comm.boundary_inset_frac", comm.boundary_inset_frac);
    FIELD_DOUBLE("comm.boundary_band_frac", comm.boundary_band_frac);
    FIELD_BOOL("comm.share_posteriors", comm.share_posteriors);

    FIELD_STRING("kernel.family", kernel.family);
    FIELD_DOUBLE("kernel.variance", kernel.variance);
    FIELD_DOUBLE("kernel.lengthscale", kernel.lengthscale);
    FIELD_DOUBLE("kernel.time_variance", kernel.time_variance);
    FIELD_DOUBLE("kernel.time_lengthscale", kernel.time_lengthscale);

    FIELD_DOUBLE("noise.sigma", noise.sigma);

    FIELD_BOOL("hyper.enabled", hyper.enabled);
    FIELD_INT("hyper.period", hyper.period);
    FIELD_DOUBLE("hyper.step_size", hyper.step_size);
    FIELD_DOUBLE("hyper.max_step_norm", hyper.max_step_norm);

    FIELD_INT("field.resolution", field.resolution);
    FIELD_INT("field.time_slices", field.time_slices);
    FIELD_DOUBLE("field.t0", field.t0);
    FIELD_DOUBLE("field.dt", field.dt);
    FIELD_DOUBLE("field.variance", field.variance);
    FIELD_DOUBLE("field.lengthscale", field.lengthscale);
    FIELD_DOUBLE("field.time_lengthscale", field.time_lengthscale);
    FIELD_STRING("field.file", field.file);

    FIELD_INT("eval.grid_resolution", eval.grid_resolution);
    FIELD_DOUBLE("eval.exclusion_radius", eval.exclusion_radius);
    FIELD_LONG("eval.burn_in", eval.burn_in);
    FIELD_STRING("eval.mode", eval.mode);

    FIELD_INT("heldout.count", heldout.count);
    FIELD_DOUBLE("heldout.size", heldout.size);

    FIELD_INT("edges.max_extra", edges.max_extra);
    FIELD_LONG("edges.obs_per_robot", edges.obs_per_robot);

    FIELD_LONG("async.batch_period", async_.batch_period);

    FIELD_STRING("dynamic.intervals", dynamic.intervals);
    FIELD_BOOL("dynamic.include_nocomm", dynamic.include_nocomm);

    FIELD_STRING("occupancy.world_file", occupancy.world_file);
    FIELD_STRING("occupancy.trajectory_file", occupancy.trajectory_file);
    FIELD_INT("occupancy.n_beams", occupancy.n_beams);
    FIELD_DOUBLE("occupancy.fov", occupancy.fov);
    FIELD_DOUBLE("occupancy.max_range", occupancy.max_range);
    FIELD_DOUBLE("occupancy.free_sample_spacing", occupancy.free_sample_spacing);
    FIELD_INT("occupancy.select_per_scan", occupancy.select_per_scan);
    FIELD_DOUBLE("occupancy.wall_offset", occupancy.wall_offset);
    FIELD_DOUBLE("occupancy.kernel_lengthscale", occupancy.kernel_lengthscale);
    FIELD_DOUBLE("occupancy.trajectory_speed", occupancy.trajectory_speed);
    FIELD_INT("occupancy.eval_wall_samples", occupancy.eval_wall_samples);
    FIELD_INT("occupancy.eval_free_resolution", occupancy.eval_free_resolution);
    FIELD_DOUBLE("occupancy.eval_free_margin", occupancy.eval_free_margin);
    FIELD_INT("occupancy.map_raster_resolution", occupancy.map_raster_resolution);

    FIELD_DOUBLE("numerics.jitter", numerics.jitter);
    FIELD_DOUBLE("numerics.tol", numerics.tol);
    FIELD_INT("numerics.max_gbp_iters", numerics.max_gbp_iters);
    FIELD_DOUBLE("numerics.divergence_trace", numerics.divergence_trace);

#undef FIELD_DOUBLE
#undef FIELD_LONG
#undef FIELD_INT
#undef FIELD_U64
#undef FIELD_BOOL
#undef FIELD_STRING
    return entries;
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

}  // namespace

Config Config::from_ini(const std::string& text) {
    Config cfg;
    const auto entries = schema();
    std::map<std::string, const Entry*> by_key;
    for (const auto& e : entries) by_key[e.key] = &e;

    std::istringstream is(text);
    std::string line, section;
    int line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#' || t[0] == ';') continue;
        if (t.front() == '[') {
            if (t.back() != ']') {
                throw ConfigError("line " + std::to_string(line_no) + ": malformed section");
            }
            section = trim(t.substr(1, t.size() - 2));
            continue;
        }
        const auto eq = t.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("line " + std::to_string(line_no) + ": expected 'key = value'");
        }
        const std::string key = section + "." + trim(t.substr(0, eq));
        const std::string value = trim(t.substr(eq + 1));
        const auto it = by_key.find(key);
        if (it == by_key.end()) throw ConfigError("unknown config key '" + key + "'");
        it->second->set(cfg, value);
    }
    cfg.validate();
    return cfg;
}

Config Config::from_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config file: " + path);
    std::stringstream ss;
    ss << is.rdbuf();
    if (looks_like_manifest(path)) {
        const RunManifest m = RunManifest::from_json_file(path);
        return from_ini(m.resolved_config);
    }
    return from_ini(ss.str());
}

std::string Config::to_ini() const {
    const auto entries = schema();
    std::string out;
    std::string section;
    for (const auto& e : entries) {
        const auto dot = e.key.find('.');
        const std::string sec = e.key.substr(0, dot);
        if (sec != section) {
            if (!out.empty()) out += "\n";
            out += "[" + sec + "]\n";
            section = sec;
        }
        out += e.key.substr(dot + 1) + " = " + e.get(*this) + "\n";
    }
    return out;
}

std::string Config::content_hash() const {
    const std::string text = to_ini();
    std::uint64_t h = 14695981039346656037ull;
    for (unsigned char c : text) {
        h ^= c;
        h *= 1099511628211ull;
    }
    char buf[20];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

void Config::validate() const {
    auto require = [](bool ok, const std::string& what) {
        if (!ok) throw ConfigError("config: " + what);
    };
    require(run.seeds >= 1, "run.seeds must be >= 1");
    require(run.steps >= 0, "run.steps must be >= 0");
    require(run.scheduler == "seq" || run.scheduler == "par",
            "run.scheduler must be seq or par");
    require(run.eval_period >= 1, "run.eval_period must be >= 1");
    require(grid.rows >= 1 && grid.cols >= 1, "grid.rows/cols must be >= 1");
    require(grid.x1 > grid.x0 && grid.y1 > grid.y0, "grid extents must be increasing");
    require(robots.speed > 0, "robots.speed must be positive");
    require(robots.buffer_capacity >= 1, "robots.buffer_capacity must be >= 1");
    require(robots.inducing_grid >= 1, "robots.inducing_grid must be >= 1");
    require(robots.max_inducing >= 1, "robots.max_inducing must be >= 1");
    require(robots.select_period >= 1, "robots.select_period must be >= 1");
    require(robots.damping >= 0 && robots.damping < 1, "robots.damping must be in [0,1)");
    require(comm.d_comm >= 0, "comm.d_comm must be >= 0");
    require(comm.interval >= 1, "comm.interval must be >= 1");
    require(comm.boundary_strategy == "none" || comm.boundary_strategy == "line" ||
                comm.boundary_strategy == "mirror",
            "comm.boundary_strategy must be none, line or mirror");
    require(kernel.family == "matern12" || kernel.family == "squared_exponential" ||
                kernel.family == "product",
            "kernel.family must be matern12, squared_exponential or product");
    require(kernel.variance > 0 && kernel.lengthscale > 0, "kernel parameters must be positive");
    require(noise.sigma > 0, "noise.sigma must be positive");
    require(field.resolution >= 2 && field.resolution <= 80,
            "field.resolution must be in [2, 80]");
    require(field.time_slices >= 0, "field.time_slices must be >= 0");
    require(eval.grid_resolution >= 2, "eval.grid_resolution must be >= 2");
    require(eval.mode == "closest" || eval.mode == "region",
            "eval.mode must be closest or region");
    require(heldout.count >= 0, "heldout.count must be >= 0");
    require(heldout.size > 0, "heldout.size must be positive");
    require(numerics.jitter >= 0, "numerics.jitter must be >= 0");
    require(numerics.tol > 0, "numerics.tol must be positive");
}

std::string RunManifest::to_json() const {
    nlohmann::json j;
    j["subcommand"] = subcommand;
    j["seeds"] = seeds;
    j["config_hash"] = config_hash;
    j["resolved_config"] = resolved_config;
    j["out_dir"] = out_dir;
    j["outputs"] = {{"metrics", "metrics.csv"}, {"summary", "summary.json"}};
    return j.dump(2);
}

RunManifest RunManifest::from_json_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open manifest: " + path);
    nlohmann::json j;
    try {
        is >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("manifest parse failure: " + std::string(e.what()));
    }
    RunManifest m;
    m.subcommand = j.value("subcommand", "");
    m.seeds = j.value("seeds", std::vector<std::uint64_t>{});
    m.config_hash = j.value("config_hash", "");
    m.resolved_config = j.value("resolved_config", "");
    m.out_dir = j.value("out_dir", "");
    return m;
}

bool looks_like_manifest(const std::string& path) {
    std::ifstream is(path);
    if (!is) return false;
    char c;
    while (is.get(c)) {
        if (c == ' ' || c == '\n' || c == '\t' || c == '\r') continue;
        return c == '{';
    }
    return false;
}

}  // namespace gbpmap
