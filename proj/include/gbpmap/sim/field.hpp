#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gbpmap/kernel.hpp"

namespace gbpmap {

/// Gridded ground-truth scalar field, static or time-indexed. Grid nodes
/// span the extents inclusively; queries interpolate bilinearly in space
/// and hold the nearest-below slice constant in time. NaN cells are masked
/// (invalid) and excluded from evaluation.
class FieldGrid {
public:
    FieldGrid() = default;
    FieldGrid(double x0, double x1, double y0, double y1, int nx, int ny, int nt, double t0,
              double dt);

    double x0() const { return x0_; }
    double x1() const { return x1_; }
    double y0() const { return y0_; }
    double y1() const { return y1_; }
    int nx() const { return nx_; }
    int ny() const { return ny_; }
    int nt() const { return nt_; }
    double t0() const { return t0_; }
    double dt() const { return dt_; }
    bool dynamic() const { return nt_ > 1; }

    double& at(int ix, int iy, int it = 0);
    double at(int ix, int iy, int it = 0) const;

    /// Bilinear interpolation; t snaps to the containing slice. Throws
    /// OutOfExtent outside the extents (or time axis).
    double query(double x, double y, double t = 0.0) const;
    bool valid(double x, double y, double t = 0.0) const;

    int slice_index(double t) const;

private:
    double x0_ = 0, x1_ = 1, y0_ = 0, y1_ = 1;
    int nx_ = 0, ny_ = 0, nt_ = 1;
    double t0_ = 0, dt_ = 1;
    std::vector<double> values_;  // t-major, then y, then x

    std::size_t index(int ix, int iy, int it) const;
};

/// Samples a static field from a GP on the grid nodes: values = L xi with
/// L the Cholesky factor of gram + jitter. Deterministic per seed.
/// Resolution is capped at 80 per axis (dense sampling feasibility).
FieldGrid sample_gp_field(double x0, double x1, double y0, double y1, int resolution,
                          const Kernel& kernel, std::uint64_t seed);

/// Space-time field from a product kernel, sampled with the Kronecker
/// identity F = L_space Xi L_time^T so the dense space-time gram is never
/// formed. Slice i sits at t0 + i dt.
FieldGrid sample_dynamic_field(double x0, double x1, double y0, double y1, int resolution,
                               int time_slices, double t0, double dt,
                               const Kernel& space_kernel, const Kernel& time_kernel,
                               std::uint64_t seed);

/// Binary gridded-field file format (see docs/field_format.md):
/// magic "GFLD", u32 version, u32 nx/ny/nt, f64 x0,x1,y0,y1,t0,dt,
/// then nt*ny*nx float64 little-endian, t-major then row-major; NaN marks
/// masked cells. Throws ParseError (with byte offset) or ExtentMismatch.
FieldGrid load_gridded_field(const std::string& path);
void save_gridded_field(const FieldGrid& field, const std::string& path);

}  // namespace gbpmap
