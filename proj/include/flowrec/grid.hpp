#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "flowrec/common.hpp"

namespace flowrec {

struct GridDims {
    int nx = 0, ny = 0, nz = 0;

    bool operator==(const GridDims& o) const { return nx == o.nx && ny == o.ny && nz == o.nz; }
    bool operator!=(const GridDims& o) const { return !(*this == o); }
    std::int64_t cells() const {
        return static_cast<std::int64_t>(nx) * ny * nz;
    }
    bool valid() const { return nx > 0 && ny > 0 && nz > 0; }
    int operator[](int axis) const { return axis == 0 ? nx : (axis == 1 ? ny : nz); }
};

/// Dense cell-centered scalar field. `origin` is the world position of the
/// center of cell (0,0,0); memory order is x-fastest, then y, then z.
class ScalarGrid {
  public:
    GridDims dims;
    Vec3 origin;
    double cell_size = 1.0;
    std::vector<double> data;

    ScalarGrid() = default;
    ScalarGrid(GridDims d, Vec3 org, double h, double fill = 0.0)
        : dims(d), origin(org), cell_size(h), data(static_cast<size_t>(d.cells()), fill) {
        if (!d.valid()) throw InvalidInput("ScalarGrid: dims must be positive");
    }

    std::size_t index(int i, int j, int k) const {
        return static_cast<std::size_t>(i) +
               static_cast<std::size_t>(dims.nx) *
                   (static_cast<std::size_t>(j) + static_cast<std::size_t>(dims.ny) * k);
    }
    double& at(int i, int j, int k) { return data[index(i, j, k)]; }
    double at(int i, int j, int k) const { return data[index(i, j, k)]; }

    Vec3 cell_center(int i, int j, int k) const {
        return origin + Vec3(i, j, k) * cell_size;
    }
    /// World-space box covered by the field (cells extend half a cell
    /// beyond the outermost centers).
    Vec3 box_min() const { return origin - Vec3(0.5, 0.5, 0.5) * cell_size; }
    Vec3 box_max() const {
        return origin + Vec3(dims.nx - 0.5, dims.ny - 0.5, dims.nz - 0.5) * cell_size;
    }
    /// World position -> continuous cell coordinates.
    Vec3 world_to_cell(const Vec3& p) const { return (p - origin) / cell_size; }

    void fill(double v) { data.assign(data.size(), v); }
    bool same_layout(const ScalarGrid& o) const {
        return dims == o.dims;
    }
    bool all_finite() const;
};

/// Dense cell-centered 3-vector field; per-cell channels are interleaved:
/// value index = c + 3*(x + nx*(y + ny*z)). Units are world displacement per
/// frame (the time step is one frame throughout).
class VectorGrid {
  public:
    GridDims dims;
    Vec3 origin;
    double cell_size = 1.0;
    std::vector<double> data;

    VectorGrid() = default;
    VectorGrid(GridDims d, Vec3 org, double h, Vec3 fill = Vec3())
        : dims(d), origin(org), cell_size(h), data(static_cast<size_t>(3 * d.cells())) {
        if (!d.valid()) throw InvalidInput("VectorGrid: dims must be positive");
        for (std::int64_t c = 0; c < d.cells(); ++c) {
            data[3 * c + 0] = fill.x;
            data[3 * c + 1] = fill.y;
            data[3 * c + 2] = fill.z;
        }
    }

    std::size_t index(int i, int j, int k, int comp) const {
        return static_cast<std::size_t>(comp) +
               3 * (static_cast<std::size_t>(i) +
                    static_cast<std::size_t>(dims.nx) *
                        (static_cast<std::size_t>(j) + static_cast<std::size_t>(dims.ny) * k));
    }
    double& at(int i, int j, int k, int comp) { return data[index(i, j, k, comp)]; }
    double at(int i, int j, int k, int comp) const { return data[index(i, j, k, comp)]; }
    Vec3 vec_at(int i, int j, int k) const {
        const std::size_t b = index(i, j, k, 0);
        return {data[b], data[b + 1], data[b + 2]};
    }
    void set_vec(int i, int j, int k, const Vec3& v) {
        const std::size_t b = index(i, j, k, 0);
        data[b] = v.x;
        data[b + 1] = v.y;
        data[b + 2] = v.z;
    }

    Vec3 cell_center(int i, int j, int k) const {
        return origin + Vec3(i, j, k) * cell_size;
    }
    Vec3 box_min() const { return origin - Vec3(0.5, 0.5, 0.5) * cell_size; }
    Vec3 box_max() const {
        return origin + Vec3(dims.nx - 0.5, dims.ny - 0.5, dims.nz - 0.5) * cell_size;
    }
    Vec3 world_to_cell(const Vec3& p) const { return (p - origin) / cell_size; }

    void fill(const Vec3& v) {
        for (std::int64_t c = 0; c < dims.cells(); ++c) {
            data[3 * c + 0] = v.x;
            data[3 * c + 1] = v.y;
            data[3 * c + 2] = v.z;
        }
    }
    bool same_layout(const VectorGrid& o) const { return dims == o.dims; }
    bool all_finite() const;
};

/// Base cell and interpolation fractions for a trilinear lookup at continuous
/// cell coordinates, after clamping to the valid interpolation range.
struct TriLookup {
    int i0, j0, k0;
    double fx, fy, fz;
};

TriLookup locate_clamped(const GridDims& dims, double gx, double gy, double gz);

/// Trilinear sample at a world position; out-of-range coordinates clamp to
/// the boundary cells.
double sample_trilinear(const ScalarGrid& g, const Vec3& world_pos);
Vec3 sample_trilinear(const VectorGrid& g, const Vec3& world_pos);

/// Same, at continuous cell coordinates.
double sample_cell(const ScalarGrid& g, double gx, double gy, double gz);
Vec3 sample_cell(const VectorGrid& g, double gx, double gy, double gz);

/// Resamples to new dims, preserving physical extents (cell size rescales).
/// Downsampled axes are box-prefiltered; upsampled axes use linear
/// interpolation of cell centers.
ScalarGrid resample(const ScalarGrid& g, GridDims new_dims);
VectorGrid resample(const VectorGrid& g, GridDims new_dims);

/// Central-difference divergence, one-sided at boundaries, in 1/frame units.
ScalarGrid divergence(const VectorGrid& vel);

/// Central-difference gradient, one-sided at boundaries.
VectorGrid spatial_gradient(const ScalarGrid& s);

// --- GTVF volume files ------------------------------------------------------
// magic "GTVF", little-endian u32 {version=1, channels, nx, ny, nz},
// 3*f32 origin, f32 cell_size, then channels*nx*ny*nz f32 values with
// index = c + channels*(x + nx*(y + ny*z)).

void save_gtvf(const std::string& path, const ScalarGrid& g);
void save_gtvf(const std::string& path, const VectorGrid& g);
ScalarGrid load_gtvf_scalar(const std::string& path);
VectorGrid load_gtvf_vector(const std::string& path);

}  // namespace flowrec
