#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "gbpmap/errors.hpp"

namespace gbpmap {

/// Experiment configuration: one key per documented default, parsed from
/// INI-style "key = value" sections. Unknown keys are errors; the resolved
/// form (all defaults materialized) round-trips through to_ini().
struct Config {
    struct Run {
        std::uint64_t seed = 0;
        int seeds = 1;        // number of seeds, starting at `seed`
        long steps = 1200;
        std::string scheduler = "seq";  // seq | par
        long eval_period = 100;
    } run;

    struct Grid {
        int rows = 4;
        int cols = 4;
        double x0 = -1.0, x1 = 1.0, y0 = -1.0, y1 = 1.0;
    } grid;

    struct Robots {
        double speed = 0.015;
        double waypoint_tol = 0.02;
        int buffer_capacity = 5;
        int inducing_grid = 5;      // per-block regular grid (n x n)
        int max_inducing = 200;
        int select_period = 2;      // add one inducing point every k steps
        bool online_selection = false;
        int gbp_iters_per_step = 1;
        double damping = 0.4;
        double scope_cap_factor = 3.0;
    } robots;

    struct Comm {
        double d_comm = 0.15;
        int interval = 1;
        bool enabled = true;
        std::string boundary_strategy = "none";  // none | line | mirror
        int boundary_count = 5;
        double boundary_inset_frac = 0.01;
        double boundary_band_frac = 0.10;
        bool share_posteriors = false;
    } comm;

    struct KernelCfg {
        std::string family = "matern12";  // matern12 | squared_exponential | product
        double variance = 1.0;
        double lengthscale = 0.4;
        double time_variance = 1.0;       // product: second factor over time
        double time_lengthscale = 30.0;
    } kernel;

    struct Noise {
        double sigma = 0.1;
    } noise;

    struct Hyper {
        bool enabled = false;
        int period = 10;
        double step_size = 1e-2;
        double max_step_norm = 0.5;
    } hyper;

    struct Field {
        int resolution = 40;
        int time_slices = 0;   // 0 = static field
        double t0 = 0.0;
        double dt = 50.0;      // steps per slice (time axis in step units)
        double variance = 1.0;
        double lengthscale = 0.4;
        double time_lengthscale = 150.0;
        std::string file;      // optional gridded-field file
    } field;

    struct Eval {
        int grid_resolution = 100;
        double exclusion_radius = 0.06;
        long burn_in = 0;
        std::string mode = "region";  // closest | region
    } eval;

    struct Heldout {
        int count = 6;
        double size = 0.3;
    } heldout;

    struct Edges {
        int max_extra = 12;
        long obs_per_robot = 150;
    } edges;

    struct Async {
        long batch_period = 400;
    } async_;

    struct Dynamic {
        std::string intervals = "1,10";  // comm intervals to sweep
        bool include_nocomm = true;
    } dynamic;

    struct Occupancy {
        std::string world_file = "data/office_world.txt";
        std::string trajectory_file = "data/office_trajectories.txt";
        int n_beams = 24;
        double fov = 6.283185307179586;
        double max_range = 2.5;
        double free_sample_spacing = 0.11;
        int select_per_scan = 2;
        double wall_offset = 0.12;   // candidate perturbation toward the robot
        double kernel_lengthscale = 0.35;
        double trajectory_speed = 0.08;
        int eval_wall_samples = 600;
        int eval_free_resolution = 55;
        double eval_free_margin = 0.12;
        int map_raster_resolution = 128;
    } occupancy;

    struct Numerics {
        double jitter = 1e-8;
        double tol = 1e-8;
        int max_gbp_iters = 2000;
        double divergence_trace = 1e12;
    } numerics;

    /// Parses INI text; keys are "section.key". Unknown keys or sections,
    /// or malformed values, raise ConfigError naming the key.
    static Config from_ini(const std::string& text);
    static Config from_file(const std::string& path);

    /// Fully resolved INI text (every key present, defaults materialized).
    std::string to_ini() const;

    /// FNV-1a hash of the resolved text, hex-encoded.
    std::string content_hash() const;

    void validate() const;
};

/// Run manifest: resolved config + seed list + output layout, emitted as
/// JSON before any computation so a run can be reproduced exactly.
struct RunManifest {
    std::string subcommand;
    std::vector<std::uint64_t> seeds;
    std::string config_hash;
    std::string resolved_config;
    std::string out_dir;

    std::string to_json() const;
    static RunManifest from_json_file(const std::string& path);
};

/// True when the file looks like a manifest (JSON object) rather than INI.
bool looks_like_manifest(const std::string& path);

}  // namespace gbpmap
