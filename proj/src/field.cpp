#include "gbpmap/sim/field.hpp"

#include <bit>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>

#include "gbpmap/gaussian.hpp"

namespace gbpmap {

FieldGrid::FieldGrid(double x0, double x1, double y0, double y1, int nx, int ny, int nt,
                     double t0, double dt)
    : x0_(x0), x1_(x1), y0_(y0), y1_(y1), nx_(nx), ny_(ny), nt_(nt), t0_(t0), dt_(dt) {
    if (!(x1 > x0) || !(y1 > y0)) throw ExtentMismatch("field extents must be increasing");
    if (nx < 2 || ny < 2 || nt < 1) throw ExtentMismatch("field grid too small");
    if (nt > 1 && !(dt > 0)) throw ExtentMismatch("dynamic field needs dt > 0");
    values_.assign(static_cast<std::size_t>(nx) * ny * nt, 0.0);
}

std::size_t FieldGrid::index(int ix, int iy, int it) const {
    return (static_cast<std::size_t>(it) * ny_ + iy) * nx_ + ix;
}

double& FieldGrid::at(int ix, int iy, int it) { return values_[index(ix, iy, it)]; }
double FieldGrid::at(int ix, int iy, int it) const { return values_[index(ix, iy, it)]; }

int FieldGrid::slice_index(double t) const {
    if (nt_ <= 1) return 0;
    if (t < t0_ - 1e-12 || t > t0_ + nt_ * dt_ + 1e-12) {
        throw OutOfExtent("time " + std::to_string(t) + " outside the field's time axis");
    }
    const int i = static_cast<int>(std::floor((t - t0_) / dt_));
    return std::min(std::max(i, 0), nt_ - 1);
}

double FieldGrid::query(double x, double y, double t) const {
    if (x < x0_ - 1e-12 || x > x1_ + 1e-12 || y < y0_ - 1e-12 || y > y1_ + 1e-12) {
        throw OutOfExtent("query (" + std::to_string(x) + ", " + std::to_string(y) +
                          ") outside field extents");
    }
    const int it = slice_index(t);
    const double fx = (x - x0_) / (x1_ - x0_) * (nx_ - 1);
    const double fy = (y - y0_) / (y1_ - y0_) * (ny_ - 1);
    const int ix = std::min(static_cast<int>(fx), nx_ - 2);
    const int iy = std::min(static_cast<int>(fy), ny_ - 2);
    const double ax = fx - ix;
    const double ay = fy - iy;
    return (1 - ax) * (1 - ay) * at(ix, iy, it) + ax * (1 - ay) * at(ix + 1, iy, it) +
           (1 - ax) * ay * at(ix, iy + 1, it) + ax * ay * at(ix + 1, iy + 1, it);
}

bool FieldGrid::valid(double x, double y, double t) const {
    if (x < x0_ || x > x1_ || y < y0_ || y > y1_) return false;
    if (nt_ > 1 && (t < t0_ || t > t0_ + nt_ * dt_)) return false;
    return std::isfinite(query(x, y, t));
}

namespace {

Eigen::MatrixXd grid_nodes(double x0, double x1, double y0, double y1, int nx, int ny) {
    Eigen::MatrixXd pts(nx * ny, 2);
    int k = 0;
    for (int iy = 0; iy < ny; ++iy) {
        for (int ix = 0; ix < nx; ++ix) {
            pts(k, 0) = x0 + ix * (x1 - x0) / (nx - 1);
            pts(k, 1) = y0 + iy * (y1 - y0) / (ny - 1);
            ++k;
        }
    }
    return pts;
}

}  // namespace

FieldGrid sample_gp_field(double x0, double x1, double y0, double y1, int resolution,
                          const Kernel& kernel, std::uint64_t seed) {
    if (resolution > 80) throw ConfigError("sample_gp_field: resolution capped at 80");
    FieldGrid field(x0, x1, y0, y1, resolution, resolution, 1, 0.0, 1.0);
    const Eigen::MatrixXd pts = grid_nodes(x0, x1, y0, y1, resolution, resolution);

    if (kernel.variance() == 0.0) return field;  // zero-variance prior: flat field
    const Eigen::MatrixXd l = robust_cholesky(kernel.gram(pts, pts));
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss;
    Eigen::VectorXd xi(pts.rows());
    for (Eigen::Index i = 0; i < xi.size(); ++i) xi(i) = gauss(rng);
    const Eigen::VectorXd v = l * xi;
    int k = 0;
    for (int iy = 0; iy < resolution; ++iy)
        for (int ix = 0; ix < resolution; ++ix) field.at(ix, iy) = v(k++);
    return field;
}

FieldGrid sample_dynamic_field(double x0, double x1, double y0, double y1, int resolution,
                               int time_slices, double t0, double dt,
                               const Kernel& space_kernel, const Kernel& time_kernel,
                               std::uint64_t seed) {
    if (resolution > 80) throw ConfigError("sample_dynamic_field: resolution capped at 80");
    FieldGrid field(x0, x1, y0, y1, resolution, resolution, time_slices, t0, dt);
    const Eigen::MatrixXd pts = grid_nodes(x0, x1, y0, y1, resolution, resolution);
    Eigen::MatrixXd times(time_slices, 1);
    for (int i = 0; i < time_slices; ++i) times(i, 0) = t0 + i * dt;

    if (space_kernel.variance() == 0.0 || time_kernel.variance() == 0.0) return field;
    const Eigen::MatrixXd ls = robust_cholesky(space_kernel.gram(pts, pts));
    const Eigen::MatrixXd lt = robust_cholesky(time_kernel.gram(times, times));

    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss;
    Eigen::MatrixXd xi(pts.rows(), time_slices);
    for (Eigen::Index i = 0; i < xi.rows(); ++i)
        for (Eigen::Index j = 0; j < xi.cols(); ++j) xi(i, j) = gauss(rng);
    const Eigen::MatrixXd f = ls * xi * lt.transpose();

    for (int it = 0; it < time_slices; ++it) {
        int k = 0;
        for (int iy = 0; iy < resolution; ++iy)
            for (int ix = 0; ix < resolution; ++ix) field.at(ix, iy, it) = f(k++, it);
    }
    return field;
}

namespace {

constexpr char kMagic[4] = {'G', 'F', 'L', 'D'};

void write_u32(std::uint32_t v, std::ofstream& os) {
    char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<char>(v >> (8 * i));
    os.write(b, 4);
}

void write_f64(double v, std::ofstream& os) {
    const std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
    char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<char>(bits >> (8 * i));
    os.write(b, 8);
}

struct FileReader {
    std::ifstream is;
    std::size_t pos = 0;

    std::uint32_t u32() {
        char b[4];
        if (!is.read(b, 4)) throw ParseError("gridded field file truncated", pos);
        pos += 4;
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i)
            v |= static_cast<std::uint32_t>(static_cast<unsigned char>(b[i])) << (8 * i);
        return v;
    }
    double f64() {
        char b[8];
        if (!is.read(b, 8)) throw ParseError("gridded field file truncated", pos);
        pos += 8;
        std::uint64_t bits = 0;
        for (int i = 0; i < 8; ++i)
            bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(b[i])) << (8 * i);
        return std::bit_cast<double>(bits);
    }
};

}  // namespace

void save_gridded_field(const FieldGrid& field, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw ConfigError("cannot write gridded field file: " + path);
    os.write(kMagic, 4);
    write_u32(1, os);
    write_u32(static_cast<std::uint32_t>(field.nx()), os);
    write_u32(static_cast<std::uint32_t>(field.ny()), os);
    write_u32(static_cast<std::uint32_t>(field.nt()), os);
    write_f64(field.x0(), os);
    write_f64(field.x1(), os);
    write_f64(field.y0(), os);
    write_f64(field.y1(), os);
    write_f64(field.t0(), os);
    write_f64(field.dt(), os);
    for (int it = 0; it < field.nt(); ++it)
        for (int iy = 0; iy < field.ny(); ++iy)
            for (int ix = 0; ix < field.nx(); ++ix) write_f64(field.at(ix, iy, it), os);
}

FieldGrid load_gridded_field(const std::string& path) {
    FileReader r;
    r.is.open(path, std::ios::binary);
    if (!r.is) throw ParseError("cannot open gridded field file: " + path, 0);

    char magic[4];
    if (!r.is.read(magic, 4)) throw ParseError("gridded field file truncated", 0);
    r.pos += 4;
    if (std::memcmp(magic, kMagic, 4) != 0) {
        throw ParseError("bad magic in gridded field file", 0);
    }
    const std::uint32_t version = r.u32();
    if (version != 1) throw ParseError("unsupported gridded field version", 4);

    const std::uint32_t nx = r.u32();
    const std::uint32_t ny = r.u32();
    const std::uint32_t nt = r.u32();
    const double x0 = r.f64(), x1 = r.f64(), y0 = r.f64(), y1 = r.f64();
    const double t0 = r.f64(), dt = r.f64();
    if (nx < 2 || ny < 2 || nt < 1 || nx > 100000 || ny > 100000) {
        throw ParseError("implausible gridded field dims", 8);
    }
    if (!(x1 > x0) || !(y1 > y0) || (nt > 1 && !(dt > 0))) {
        throw ExtentMismatch("gridded field extents are not increasing");
    }

    FieldGrid field(x0, x1, y0, y1, static_cast<int>(nx), static_cast<int>(ny),
                    static_cast<int>(nt), t0, dt);
    const std::size_t expect = static_cast<std::size_t>(nx) * ny * nt;
    // Read the body up front to report expected vs. actual length.
    r.is.seekg(0, std::ios::end);
    const std::size_t file_size = static_cast<std::size_t>(r.is.tellg());
    const std::size_t body_start = r.pos;
    if (file_size - body_start != expect * 8) {
        throw ParseError("gridded field body: expected " + std::to_string(expect * 8) +
                             " bytes, found " + std::to_string(file_size - body_start),
                         body_start);
    }
    r.is.seekg(static_cast<std::streamoff>(body_start));
    for (std::uint32_t it = 0; it < nt; ++it)
        for (std::uint32_t iy = 0; iy < ny; ++iy)
            for (std::uint32_t ix = 0; ix < nx; ++ix)
                field.at(static_cast<int>(ix), static_cast<int>(iy), static_cast<int>(it)) =
                    r.f64();
    return field;
}

}  // namespace gbpmap
