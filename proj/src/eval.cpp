#include "gbpmap/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

namespace gbpmap {

namespace {

Eigen::VectorXd query_point(const TestGrid& grid, int i, const Eigen::VectorXd& extra) {
    Eigen::VectorXd x(grid.points.cols() + extra.size());
    x.head(grid.points.cols()) = grid.points.row(i).transpose();
    x.tail(extra.size()) = extra;
    return x;
}

}  // namespace

TestGrid make_test_grid(double x0, double x1, double y0, double y1, int resolution) {
    TestGrid grid;
    grid.points.resize(resolution * resolution, 2);
    grid.truth = Eigen::VectorXd::Zero(resolution * resolution);
    grid.valid.assign(static_cast<size_t>(resolution) * resolution, true);
    int k = 0;
    for (int iy = 0; iy < resolution; ++iy) {
        for (int ix = 0; ix < resolution; ++ix) {
            grid.points(k, 0) = x0 + (ix + 0.5) * (x1 - x0) / resolution;
            grid.points(k, 1) = y0 + (iy + 0.5) * (y1 - y0) / resolution;
            ++k;
        }
    }
    return grid;
}

int assign_closest_robot(const Eigen::Vector2d& xstar,
                         const std::vector<Eigen::Vector2d>& poses) {
    if (poses.empty()) throw DimensionMismatch("assign_closest_robot: no robots");
    int best = 0;
    double best_d = (poses[0] - xstar).squaredNorm();
    for (std::size_t i = 1; i < poses.size(); ++i) {
        const double d = (poses[i] - xstar).squaredNorm();
        if (d < best_d) {  // strict: ties keep the lower id
            best_d = d;
            best = static_cast<int>(i);
        }
    }
    return best;
}

int assign_region(const Eigen::Vector2d& xstar, const std::vector<Rect>& regions) {
    for (std::size_t i = 0; i < regions.size(); ++i) {
        if (regions[i].contains(xstar)) return static_cast<int>(i);
    }
    throw OutOfExtent("point outside every region");
}

MseResult mse(const Eigen::VectorXd& predictions, const TestGrid& grid,
              double exclusion_radius, const Eigen::MatrixXd& training_locations) {
    if (predictions.size() != grid.size()) {
        throw DimensionMismatch("mse: predictions vs grid size");
    }
    const double r2 = exclusion_radius * exclusion_radius;
    MseResult out;
    double sum = 0.0;
    for (int i = 0; i < grid.size(); ++i) {
        if (!grid.valid[static_cast<size_t>(i)]) continue;
        bool excluded = false;
        for (Eigen::Index t = 0; t < training_locations.rows() && !excluded; ++t) {
            const double d2 =
                (training_locations.row(t).head(2) - grid.points.row(i).head(2)).squaredNorm();
            if (d2 < r2) excluded = true;
        }
        if (excluded) continue;
        const double err = predictions(i) - grid.truth(i);
        sum += err * err;
        ++out.n_points;
    }
    if (out.n_points == 0) throw EmptyTestSet("every test point was excluded");
    out.value = sum / static_cast<double>(out.n_points);
    return out;
}

OccupancyMetrics occupancy_metrics(const Eigen::VectorXd& probabilities, const TestGrid& grid) {
    if (probabilities.size() != grid.size()) {
        throw DimensionMismatch("occupancy_metrics: probabilities vs grid size");
    }
    OccupancyMetrics out;
    double bce = 0.0;
    long correct = 0;
    for (int i = 0; i < grid.size(); ++i) {
        if (!grid.valid[static_cast<size_t>(i)]) continue;
        const double p = std::clamp(probabilities(i), 1e-7, 1.0 - 1e-7);
        const double y = grid.truth(i);
        bce -= y * std::log(p) + (1.0 - y) * std::log(1.0 - p);
        if ((p >= 0.5) == (y >= 0.5)) ++correct;
        ++out.n_points;
    }
    if (out.n_points > 0) {
        out.bce = bce / static_cast<double>(out.n_points);
        out.accuracy = static_cast<double>(correct) / static_cast<double>(out.n_points);
    }
    return out;
}

Eigen::VectorXd predict_distributed(const std::vector<RobotAgent>& robots, const TestGrid& grid,
                                    AssignMode mode, const Eigen::VectorXd& extra_coords) {
    std::vector<Eigen::Vector2d> poses;
    std::vector<Rect> regions;
    for (const auto& r : robots) {
        poses.push_back(r.pose());
        regions.push_back(r.region());
    }
    std::vector<FitcPredictor> predictors;
    predictors.reserve(robots.size());
    for (const auto& r : robots) {
        predictors.emplace_back(r.model().block().z, r.model().kernel(),
                                r.model().belief_moments(), r.config().jitter);
    }
    Eigen::VectorXd out(grid.size());
    for (int i = 0; i < grid.size(); ++i) {
        const Eigen::Vector2d p = grid.points.row(i).head(2).transpose();
        const int rid = mode == AssignMode::kClosest ? assign_closest_robot(p, poses)
                                                     : assign_region(p, regions);
        out(i) = predictors[static_cast<size_t>(rid)].predict(query_point(grid, i, extra_coords)).mu(0);
    }
    return out;
}

std::vector<Eigen::VectorXd> predict_global(const std::vector<RobotAgent>& robots,
                                            const TestGrid& grid,
                                            const Eigen::VectorXd& extra_coords) {
    std::vector<Eigen::VectorXd> out;
    for (const auto& robot : robots) {
        std::vector<FitcPredictor> predictors;
        predictors.emplace_back(robot.model().block().z, robot.model().kernel(),
                                robot.model().belief_moments(), robot.config().jitter);
        for (const auto& [rid, snap] : robot.posterior_cache()) {
            Kernel k = robot.model().kernel();
            if (snap.theta.size() == k.n_params() + 1) {
                k.set_params(snap.theta.head(k.n_params()));
            }
            predictors.emplace_back(snap.z, k, snap.belief, robot.config().jitter);
        }
        Eigen::VectorXd preds(grid.size());
        for (int i = 0; i < grid.size(); ++i) {
            const Eigen::VectorXd x = query_point(grid, i, extra_coords);
            std::size_t best = 0;
            double best_d = std::numeric_limits<double>::infinity();
            for (std::size_t b = 0; b < predictors.size(); ++b) {
                const Eigen::VectorXd& c = predictors[b].centroid();
                const double d = (c.head(2) - x.head(2)).squaredNorm();
                if (d < best_d) {
                    best_d = d;
                    best = b;
                }
            }
            preds(i) = predictors[best].predict(x).mu(0);
        }
        out.push_back(std::move(preds));
    }
    return out;
}

double sigmoid_of(double f) { return 1.0 / (1.0 + std::exp(-f)); }

void write_pgm(const std::string& path, const Eigen::MatrixXd& values, double lo, double hi) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw ConfigError("cannot write PGM: " + path);
    os << "P5\n" << values.cols() << " " << values.rows() << "\n255\n";
    const double span = hi > lo ? hi - lo : 1.0;
    for (Eigen::Index r = 0; r < values.rows(); ++r) {
        for (Eigen::Index c = 0; c < values.cols(); ++c) {
            const double v = std::clamp((values(r, c) - lo) / span, 0.0, 1.0);
            os.put(static_cast<char>(std::lround(v * 255.0)));
        }
    }
}

}  // namespace gbpmap
