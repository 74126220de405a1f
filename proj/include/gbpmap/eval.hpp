#pragma once

#include <string>
#include <vector>

#include "gbpmap/robot.hpp"

namespace gbpmap {

/// Query points with ground truth and a validity mask (land mask, held-out
/// membership or any other exclusion baked in by the builder).
struct TestGrid {
    Eigen::MatrixXd points;  // n x spatial-dim
    Eigen::VectorXd truth;
    std::vector<bool> valid;

    int size() const { return static_cast<int>(points.rows()); }
};

TestGrid make_test_grid(double x0, double x1, double y0, double y1, int resolution);

/// argmin squared distance; ties broken by the lowest id.
int assign_closest_robot(const Eigen::Vector2d& xstar, const std::vector<Eigen::Vector2d>& poses);

/// Containing region's robot; boundary points go to the lower id. Throws
/// OutOfExtent when no region contains the point.
int assign_region(const Eigen::Vector2d& xstar, const std::vector<Rect>& regions);

struct MseResult {
    double value = 0.0;
    long n_points = 0;
};

/// MSE over mask-valid points at least `exclusion_radius` away from every
/// training location. Throws EmptyTestSet when nothing survives.
MseResult mse(const Eigen::VectorXd& predictions, const TestGrid& grid,
              double exclusion_radius, const Eigen::MatrixXd& training_locations);

struct OccupancyMetrics {
    double bce = 0.0;
    double accuracy = 0.0;
    long n_points = 0;
};

/// Mean binary cross-entropy (probabilities clipped at 1e-7) and accuracy
/// at threshold 0.5 over mask-valid points.
OccupancyMetrics occupancy_metrics(const Eigen::VectorXd& probabilities, const TestGrid& grid);

enum class AssignMode { kClosest, kRegion };

/// Per-point predictions from each test point's assigned robot (posterior
/// mean of the robot's local model). Time queries append `extra_coords`.
Eigen::VectorXd predict_distributed(const std::vector<RobotAgent>& robots, const TestGrid& grid,
                                    AssignMode mode, const Eigen::VectorXd& extra_coords);

/// Global-map predictions per robot: every query is answered by the cached
/// block (own or relayed posterior) whose inducing centroid is nearest.
/// Missing caches fall back to the robot's own block. Returns one
/// prediction vector per robot.
std::vector<Eigen::VectorXd> predict_global(const std::vector<RobotAgent>& robots,
                                            const TestGrid& grid,
                                            const Eigen::VectorXd& extra_coords);

double sigmoid_of(double f);

/// 8-bit binary PGM (P5), row-major, top row first; values scaled linearly
/// from [lo, hi] to 0..255.
void write_pgm(const std::string& path, const Eigen::MatrixXd& values, double lo, double hi);

}  // namespace gbpmap
