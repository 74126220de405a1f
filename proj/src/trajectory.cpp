#include "gbpmap/sim/trajectory.hpp"

#include <cmath>

namespace gbpmap {

Eigen::Vector2d sample_waypoint(const Rect& region, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> ux(region.lo.x(), region.hi.x());
    std::uniform_real_distribution<double> uy(region.lo.y(), region.hi.y());
    const double x = ux(rng);
    const double y = uy(rng);
    return {x, y};
}

void step_trajectory(TrajectoryState& state, const Rect& region, std::mt19937_64& rng) {
    const Eigen::Vector2d delta = state.waypoint - state.pose;
    const double dist = delta.norm();
    if (dist > 1e-12) {
        state.pose += delta * (std::min(state.speed, dist) / dist);
    }
    if ((state.waypoint - state.pose).norm() < state.tolerance) {
        state.waypoint = sample_waypoint(region, rng);
    }
}

void WaypointFollower::step() {
    if (finished()) return;
    const Eigen::Vector2d target = waypoints[next];
    const Eigen::Vector2d delta = target - pose;
    const double dist = delta.norm();
    if (dist > 1e-12) {
        heading = std::atan2(delta.y(), delta.x());
        pose += delta * (std::min(speed, dist) / dist);
    }
    if ((target - pose).norm() < std::max(tolerance, 1e-9)) {
        ++next;
    }
}

std::vector<std::pair<int, int>> connectivity(const std::vector<Eigen::Vector2d>& poses,
                                              double d_comm, long step, int interval) {
    if (interval < 1) throw ConfigError("connectivity interval must be >= 1");
    std::vector<std::pair<int, int>> pairs;
    if (step % interval != 0) return pairs;
    for (std::size_t i = 0; i < poses.size(); ++i) {
        for (std::size_t j = i + 1; j < poses.size(); ++j) {
            if ((poses[i] - poses[j]).norm() <= d_comm) {
                pairs.push_back({static_cast<int>(i), static_cast<int>(j)});
            }
        }
    }
    return pairs;
}

}  // namespace gbpmap
