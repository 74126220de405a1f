#pragma once

#include <string>
#include <vector>

#include "gbpmap/robot.hpp"

namespace gbpmap {

struct WallSegment {
    Eigen::Vector2d a;
    Eigen::Vector2d b;
};

/// 2D occupancy world: wall segments within rectangular extents.
struct OccupancyWorld {
    std::vector<WallSegment> walls;
    Rect extents;
};

/// One wall segment per line: "x1 y1 x2 y2". Extents are the bounding box
/// padded by 5%.
OccupancyWorld load_world(const std::string& path);

struct LidarParams {
    int n_beams = 20;
    double fov = 2.0 * 3.14159265358979323846;
    double max_range = 3.0;
    double free_sample_spacing = 0.12;
};

/// Nearest ray-segment intersection within max_range; returns the hit
/// distance or a negative value when nothing is hit.
double ray_cast(const OccupancyWorld& world, const Eigen::Vector2d& origin, double angle,
                double max_range);

/// One sweep: per beam an occupied observation (y=1) at the nearest hit,
/// plus free observations (y=0) spaced along the beam before the hit (or
/// to max_range when nothing is hit). `heading` centers the field of view.
std::vector<Observation> lidar_scan(const OccupancyWorld& world, const Eigen::Vector2d& pose,
                                    double heading, const LidarParams& params, long timestamp);

/// Per robot one waypoint per line "x y"; robots separated by blank lines.
std::vector<std::vector<Eigen::Vector2d>> load_trajectories(const std::string& path);

}  // namespace gbpmap
