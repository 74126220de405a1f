#pragma once

#include <random>
#include <vector>

#include "gbpmap/robot.hpp"

namespace gbpmap {

/// Random-waypoint motion: head to the waypoint at constant speed;
/// once within tolerance, resample uniformly in the region.
struct TrajectoryState {
    Eigen::Vector2d pose = Eigen::Vector2d::Zero();
    Eigen::Vector2d waypoint = Eigen::Vector2d::Zero();
    double speed = 0.015;
    double tolerance = 0.02;
};

Eigen::Vector2d sample_waypoint(const Rect& region, std::mt19937_64& rng);

/// Moves min(speed, distance) toward the waypoint; resamples the waypoint
/// when the new pose is within tolerance of it.
void step_trajectory(TrajectoryState& state, const Rect& region, std::mt19937_64& rng);

/// Fixed waypoint list followed at constant speed, holding at the last
/// waypoint (single-pass trajectories).
struct WaypointFollower {
    std::vector<Eigen::Vector2d> waypoints;
    Eigen::Vector2d pose = Eigen::Vector2d::Zero();
    double heading = 0.0;
    std::size_t next = 0;
    double speed = 0.05;
    double tolerance = 1e-6;

    bool finished() const { return next >= waypoints.size(); }
    void step();
};

/// Pairs within d_comm, reported only on steps divisible by the interval.
std::vector<std::pair<int, int>> connectivity(const std::vector<Eigen::Vector2d>& poses,
                                              double d_comm, long step, int interval);

}  // namespace gbpmap
