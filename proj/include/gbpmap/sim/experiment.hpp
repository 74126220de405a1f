#pragma once

#include <functional>
#include <ostream>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "gbpmap/batch.hpp"
#include "gbpmap/config.hpp"
#include "gbpmap/eval.hpp"
#include "gbpmap/sim/field.hpp"
#include "gbpmap/sim/trajectory.hpp"
#include "gbpmap/sim/world.hpp"

namespace gbpmap {

struct MetricsRow {
    long step = 0;
    std::string mode;
    std::string metric;
    double value = 0.0;
    long n_points = 0;
    std::uint64_t seed = 0;
};

/// Collects metric rows and serializes them as the documented CSV
/// (step, mode, metric, value, n_points, seed) with %.17g doubles so
/// identical runs produce byte-identical files.
class MetricsSink {
public:
    void add(long step, std::string mode, std::string metric, double value, long n_points,
             std::uint64_t seed);
    const std::vector<MetricsRow>& rows() const { return rows_; }
    void write_csv(std::ostream& os) const;

private:
    std::vector<MetricsRow> rows_;
};

/// Independent RNG substream of the master seed: subsystems draw from
/// their own streams so toggling one never perturbs another.
std::mt19937_64 substream(std::uint64_t master, std::string_view tag, std::uint64_t index);

/// Disjoint axis-aligned held-out squares, rejection-sampled inside the
/// extents.
std::vector<Rect> sample_heldout_regions(const Rect& extents, int count, double size,
                                         std::mt19937_64& rng);

/// Shared experiment scaffolding for the online field runs.
struct FieldExperimentOptions {
    bool batch_baselines = false;   // fit centralized baselines periodically
    bool heldout_metric = false;    // score only inside held-out regions
    std::string mode_tag = "distributed";
    bool comm_enabled = true;
    int comm_interval = 1;
    double d_comm = 0.15;
};

/// Online multi-robot run over a scalar field (static or dynamic):
/// move, observe, fuse, select inducing points, gate connectivity,
/// connect/exchange/decouple, tune hyperparameters, evaluate.
void run_field_experiment(const Config& cfg, std::uint64_t seed, const FieldGrid& field,
                          const FieldExperimentOptions& options, MetricsSink& sink);

/// Builds the ground-truth field for a config (sampled or loaded).
FieldGrid make_field(const Config& cfg, std::uint64_t seed);

/// Kernel over the model inputs implied by the config (product kernel for
/// dynamic fields).
Kernel make_model_kernel(const Config& cfg);

/// Batch edge-augmentation run for one seed: collects per-cell data with
/// the standard trajectories, then fits no-edge / tree+k / dense models
/// and reports each model's MSE.
void run_edges_experiment(const Config& cfg, std::uint64_t seed, MetricsSink& sink);

struct OccupancyArtifacts {
    /// Called at evaluation steps with (step, global probability raster).
    std::function<void(long, const Eigen::MatrixXd&)> emit_raster;
};

/// Single-pass online occupancy mapping over the shipped world:
/// LIDAR scans fused as linearized binary factors, wall-biased inducing
/// candidates, posterior sharing, distributed and global evaluation.
void run_occupancy_experiment(const Config& cfg, std::uint64_t seed, MetricsSink& sink,
                              const OccupancyArtifacts& artifacts = {});

}  // namespace gbpmap
