#include "gbpmap/sim/world.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

namespace gbpmap {

OccupancyWorld load_world(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ParseError("cannot open world file: " + path, 0);
    OccupancyWorld world;
    std::string line;
    std::size_t offset = 0;
    double lo_x = std::numeric_limits<double>::infinity(), lo_y = lo_x;
    double hi_x = -lo_x, hi_y = -lo_x;
    while (std::getline(is, line)) {
        const std::size_t line_offset = offset;
        offset += line.size() + 1;
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ss(line);
        WallSegment seg;
        if (!(ss >> seg.a.x() >> seg.a.y() >> seg.b.x() >> seg.b.y())) {
            throw ParseError("world file: expected 'x1 y1 x2 y2'", line_offset);
        }
        lo_x = std::min({lo_x, seg.a.x(), seg.b.x()});
        lo_y = std::min({lo_y, seg.a.y(), seg.b.y()});
        hi_x = std::max({hi_x, seg.a.x(), seg.b.x()});
        hi_y = std::max({hi_y, seg.a.y(), seg.b.y()});
        world.walls.push_back(seg);
    }
    if (world.walls.empty()) throw ParseError("world file has no wall segments", 0);
    const double pad_x = 0.05 * (hi_x - lo_x);
    const double pad_y = 0.05 * (hi_y - lo_y);
    world.extents = Rect{{lo_x - pad_x, lo_y - pad_y}, {hi_x + pad_x, hi_y + pad_y}};
    return world;
}

double ray_cast(const OccupancyWorld& world, const Eigen::Vector2d& origin, double angle,
                double max_range) {
    const Eigen::Vector2d dir(std::cos(angle), std::sin(angle));
    double best = -1.0;
    for (const WallSegment& seg : world.walls) {
        // Solve origin + t dir = a + s (b - a), t >= 0, s in [0, 1].
        const Eigen::Vector2d e = seg.b - seg.a;
        const double denom = dir.x() * (-e.y()) - dir.y() * (-e.x());
        if (std::abs(denom) < 1e-14) continue;  // parallel
        const Eigen::Vector2d rhs = seg.a - origin;
        const double t = (rhs.x() * (-e.y()) - rhs.y() * (-e.x())) / denom;
        const double s = (dir.x() * rhs.y() - dir.y() * rhs.x()) / denom;
        if (t >= 0.0 && t <= max_range && s >= 0.0 && s <= 1.0) {
            if (best < 0.0 || t < best) best = t;
        }
    }
    return best;
}

std::vector<Observation> lidar_scan(const OccupancyWorld& world, const Eigen::Vector2d& pose,
                                    double heading, const LidarParams& params, long timestamp) {
    std::vector<Observation> out;
    for (int b = 0; b < params.n_beams; ++b) {
        const double angle =
            heading - 0.5 * params.fov + (b + 0.5) * params.fov / params.n_beams;
        const Eigen::Vector2d dir(std::cos(angle), std::sin(angle));
        const double hit = ray_cast(world, pose, angle, params.max_range);
        const double free_end = hit >= 0.0 ? hit : params.max_range;
        for (double d = params.free_sample_spacing; d < free_end;
             d += params.free_sample_spacing) {
            out.push_back({pose + d * dir, 0.0, timestamp});
        }
        if (hit >= 0.0) {
            out.push_back({pose + hit * dir, 1.0, timestamp});
        }
    }
    return out;
}

std::vector<std::vector<Eigen::Vector2d>> load_trajectories(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ParseError("cannot open trajectory file: " + path, 0);
    std::vector<std::vector<Eigen::Vector2d>> robots;
    std::vector<Eigen::Vector2d> current;
    std::string line;
    std::size_t offset = 0;
    while (std::getline(is, line)) {
        const std::size_t line_offset = offset;
        offset += line.size() + 1;
        if (line.empty()) {
            if (!current.empty()) robots.push_back(std::move(current));
            current.clear();
            continue;
        }
        if (line[0] == '#') continue;
        std::istringstream ss(line);
        Eigen::Vector2d p;
        if (!(ss >> p.x() >> p.y())) {
            throw ParseError("trajectory file: expected 'x y'", line_offset);
        }
        current.push_back(p);
    }
    if (!current.empty()) robots.push_back(std::move(current));
    if (robots.empty()) throw ParseError("trajectory file has no waypoints", 0);
    return robots;
}

}  // namespace gbpmap
