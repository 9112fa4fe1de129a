#include "flowrec/grid.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>

#include "flowrec/parallel.hpp"

namespace flowrec {

bool ScalarGrid::all_finite() const {
    for (double v : data)
        if (!std::isfinite(v)) return false;
    return true;
}

bool VectorGrid::all_finite() const {
    for (double v : data)
        if (!std::isfinite(v)) return false;
    return true;
}

TriLookup locate_clamped(const GridDims& dims, double gx, double gy, double gz) {
    TriLookup t;
    auto axis = [](double g, int n, int& i0, double& f) {
        g = clamp(g, 0.0, static_cast<double>(n - 1));
        if (n == 1) {
            i0 = 0;
            f = 0.0;
            return;
        }
        i0 = static_cast<int>(std::floor(g));
        if (i0 > n - 2) i0 = n - 2;
        f = g - i0;
    };
    axis(gx, dims.nx, t.i0, t.fx);
    axis(gy, dims.ny, t.j0, t.fy);
    axis(gz, dims.nz, t.k0, t.fz);
    return t;
}

namespace {

inline int step_x(const GridDims& d) { return d.nx > 1 ? 1 : 0; }
inline int step_y(const GridDims& d) { return d.ny > 1 ? 1 : 0; }
inline int step_z(const GridDims& d) { return d.nz > 1 ? 1 : 0; }

}  // namespace

double sample_cell(const ScalarGrid& g, double gx, double gy, double gz) {
    const TriLookup t = locate_clamped(g.dims, gx, gy, gz);
    const int sx = step_x(g.dims), sy = step_y(g.dims), sz = step_z(g.dims);
    const double c000 = g.at(t.i0, t.j0, t.k0);
    const double c100 = g.at(t.i0 + sx, t.j0, t.k0);
    const double c010 = g.at(t.i0, t.j0 + sy, t.k0);
    const double c110 = g.at(t.i0 + sx, t.j0 + sy, t.k0);
    const double c001 = g.at(t.i0, t.j0, t.k0 + sz);
    const double c101 = g.at(t.i0 + sx, t.j0, t.k0 + sz);
    const double c011 = g.at(t.i0, t.j0 + sy, t.k0 + sz);
    const double c111 = g.at(t.i0 + sx, t.j0 + sy, t.k0 + sz);
    const double x00 = c000 + t.fx * (c100 - c000);
    const double x10 = c010 + t.fx * (c110 - c010);
    const double x01 = c001 + t.fx * (c101 - c001);
    const double x11 = c011 + t.fx * (c111 - c011);
    const double y0 = x00 + t.fy * (x10 - x00);
    const double y1 = x01 + t.fy * (x11 - x01);
    return y0 + t.fz * (y1 - y0);
}

Vec3 sample_cell(const VectorGrid& g, double gx, double gy, double gz) {
    const TriLookup t = locate_clamped(g.dims, gx, gy, gz);
    const int sx = step_x(g.dims), sy = step_y(g.dims), sz = step_z(g.dims);
    Vec3 out;
    for (int c = 0; c < 3; ++c) {
        const double c000 = g.at(t.i0, t.j0, t.k0, c);
        const double c100 = g.at(t.i0 + sx, t.j0, t.k0, c);
        const double c010 = g.at(t.i0, t.j0 + sy, t.k0, c);
        const double c110 = g.at(t.i0 + sx, t.j0 + sy, t.k0, c);
        const double c001 = g.at(t.i0, t.j0, t.k0 + sz, c);
        const double c101 = g.at(t.i0 + sx, t.j0, t.k0 + sz, c);
        const double c011 = g.at(t.i0, t.j0 + sy, t.k0 + sz, c);
        const double c111 = g.at(t.i0 + sx, t.j0 + sy, t.k0 + sz, c);
        const double x00 = c000 + t.fx * (c100 - c000);
        const double x10 = c010 + t.fx * (c110 - c010);
        const double x01 = c001 + t.fx * (c101 - c001);
        const double x11 = c011 + t.fx * (c111 - c011);
        const double y0 = x00 + t.fy * (x10 - x00);
        const double y1 = x01 + t.fy * (x11 - x01);
        const double v = y0 + t.fz * (y1 - y0);
        if (c == 0)
            out.x = v;
        else if (c == 1)
            out.y = v;
        else
            out.z = v;
    }
    return out;
}

double sample_trilinear(const ScalarGrid& g, const Vec3& p) {
    const Vec3 c = g.world_to_cell(p);
    return sample_cell(g, c.x, c.y, c.z);
}

Vec3 sample_trilinear(const VectorGrid& g, const Vec3& p) {
    const Vec3 c = g.world_to_cell(p);
    return sample_cell(g, c.x, c.y, c.z);
}

namespace {

// One-axis resample of a strided sequence, preserving the physical extent.
// Upsampling: linear interpolation at the new cell centers (clamped).
// Downsampling: exact box average over each destination cell's footprint.
void resample_line(const double* src, int n_src, std::ptrdiff_t stride_src, double* dst,
                   int n_dst, std::ptrdiff_t stride_dst) {
    if (n_dst == n_src) {
        for (int i = 0; i < n_dst; ++i) dst[i * stride_dst] = src[i * stride_src];
        return;
    }
    const double r = static_cast<double>(n_src) / n_dst;
    if (n_dst > n_src) {
        for (int i = 0; i < n_dst; ++i) {
            double g = (i + 0.5) * r - 0.5;
            g = clamp(g, 0.0, static_cast<double>(n_src - 1));
            int i0 = static_cast<int>(std::floor(g));
            if (i0 > n_src - 2) i0 = n_src - 2;
            if (n_src == 1) {
                dst[i * stride_dst] = src[0];
                continue;
            }
            const double f = g - i0;
            dst[i * stride_dst] =
                src[i0 * stride_src] + f * (src[(i0 + 1) * stride_src] - src[i0 * stride_src]);
        }
    } else {
        for (int i = 0; i < n_dst; ++i) {
            const double a = i * r;
            const double b = (i + 1) * r;
            const int ia = static_cast<int>(std::floor(a));
            const int ib = std::min(n_src - 1, static_cast<int>(std::ceil(b)) - 1);
            double sum = 0.0;
            for (int s = ia; s <= ib; ++s) {
                const double lo = std::max(a, static_cast<double>(s));
                const double hi = std::min(b, static_cast<double>(s + 1));
                if (hi > lo) sum += (hi - lo) * src[s * stride_src];
            }
            dst[i * stride_dst] = sum / r;
        }
    }
}

// Resamples one axis of a channel-interleaved volume.
void resample_axis(std::vector<double>& data, GridDims& dims, int channels, int axis, int new_n) {
    const int old_n = dims[axis];
    if (new_n == old_n) return;
    GridDims nd = dims;
    if (axis == 0)
        nd.nx = new_n;
    else if (axis == 1)
        nd.ny = new_n;
    else
        nd.nz = new_n;
    std::vector<double> out(static_cast<size_t>(nd.cells()) * channels);

    // Iterate over all lines perpendicular to `axis`.
    const int nu = (axis == 0) ? dims.ny : dims.nx;
    const int nv = (axis == 2) ? dims.ny : dims.nz;
    auto line_base = [&](const GridDims& d, int u, int v) -> std::size_t {
        // returns flat cell index of the first cell of the line
        if (axis == 0) return static_cast<std::size_t>(d.nx) * (u + static_cast<std::size_t>(d.ny) * v);
        if (axis == 1)
            return static_cast<std::size_t>(u) + static_cast<std::size_t>(d.nx) * (0 + static_cast<std::size_t>(d.ny) * v);
        return static_cast<std::size_t>(u) + static_cast<std::size_t>(d.nx) * v;
    };
    auto line_stride = [&](const GridDims& d) -> std::ptrdiff_t {
        if (axis == 0) return 1;
        if (axis == 1) return d.nx;
        return static_cast<std::ptrdiff_t>(d.nx) * d.ny;
    };
    const std::ptrdiff_t ss = line_stride(dims) * channels;
    const std::ptrdiff_t sd = line_stride(nd) * channels;
    for (int v = 0; v < nv; ++v) {
        for (int u = 0; u < nu; ++u) {
            for (int c = 0; c < channels; ++c) {
                const double* sp = data.data() + line_base(dims, u, v) * channels + c;
                double* dp = out.data() + line_base(nd, u, v) * channels + c;
                resample_line(sp, old_n, ss, dp, new_n, sd);
            }
        }
    }
    data.swap(out);
    dims = nd;
}

void resample_volume(std::vector<double>& data, GridDims& dims, int channels, GridDims new_dims) {
    resample_axis(data, dims, channels, 0, new_dims.nx);
    resample_axis(data, dims, channels, 1, new_dims.ny);
    resample_axis(data, dims, channels, 2, new_dims.nz);
}

}  // namespace

namespace {

// New origin so each axis keeps its physical extent. The stored cell size is
// taken from the x axis; callers keep the per-axis ratios uniform.
Vec3 resampled_origin(const Vec3& box_min, double h_old, const GridDims& od, const GridDims& nd) {
    const Vec3 h_new(h_old * od.nx / nd.nx, h_old * od.ny / nd.ny, h_old * od.nz / nd.nz);
    return {box_min.x + 0.5 * h_new.x, box_min.y + 0.5 * h_new.y, box_min.z + 0.5 * h_new.z};
}

}  // namespace

ScalarGrid resample(const ScalarGrid& g, GridDims new_dims) {
    if (!new_dims.valid()) throw InvalidInput("resample: dims must be positive");
    if (new_dims == g.dims) return g;
    ScalarGrid out;
    out.dims = g.dims;
    out.data = g.data;
    resample_volume(out.data, out.dims, 1, new_dims);
    out.origin = resampled_origin(g.box_min(), g.cell_size, g.dims, new_dims);
    out.cell_size = g.cell_size * g.dims.nx / new_dims.nx;
    return out;
}

VectorGrid resample(const VectorGrid& g, GridDims new_dims) {
    if (!new_dims.valid()) throw InvalidInput("resample: dims must be positive");
    if (new_dims == g.dims) return g;
    VectorGrid out;
    out.dims = g.dims;
    out.data = g.data;
    resample_volume(out.data, out.dims, 3, new_dims);
    out.origin = resampled_origin(g.box_min(), g.cell_size, g.dims, new_dims);
    out.cell_size = g.cell_size * g.dims.nx / new_dims.nx;
    return out;
}

ScalarGrid divergence(const VectorGrid& vel) {
    ScalarGrid out(vel.dims, vel.origin, vel.cell_size);
    const double h = vel.cell_size;
    const GridDims d = vel.dims;
    parallel_chunks(d.nz, [&](std::int64_t kb, std::int64_t ke) {
        for (int k = static_cast<int>(kb); k < ke; ++k)
            for (int j = 0; j < d.ny; ++j)
                for (int i = 0; i < d.nx; ++i) {
                    double div = 0.0;
                    if (d.nx > 1) {
                        if (i == 0)
                            div += (vel.at(1, j, k, 0) - vel.at(0, j, k, 0)) / h;
                        else if (i == d.nx - 1)
                            div += (vel.at(i, j, k, 0) - vel.at(i - 1, j, k, 0)) / h;
                        else
                            div += (vel.at(i + 1, j, k, 0) - vel.at(i - 1, j, k, 0)) / (2 * h);
                    }
                    if (d.ny > 1) {
                        if (j == 0)
                            div += (vel.at(i, 1, k, 1) - vel.at(i, 0, k, 1)) / h;
                        else if (j == d.ny - 1)
                            div += (vel.at(i, j, k, 1) - vel.at(i, j - 1, k, 1)) / h;
                        else
                            div += (vel.at(i, j + 1, k, 1) - vel.at(i, j - 1, k, 1)) / (2 * h);
                    }
                    if (d.nz > 1) {
                        if (k == 0)
                            div += (vel.at(i, j, 1, 2) - vel.at(i, j, 0, 2)) / h;
                        else if (k == d.nz - 1)
                            div += (vel.at(i, j, k, 2) - vel.at(i, j, k - 1, 2)) / h;
                        else
                            div += (vel.at(i, j, k + 1, 2) - vel.at(i, j, k - 1, 2)) / (2 * h);
                    }
                    out.at(i, j, k) = div;
                }
    });
    return out;
}

VectorGrid spatial_gradient(const ScalarGrid& s) {
    VectorGrid out(s.dims, s.origin, s.cell_size);
    const double h = s.cell_size;
    const GridDims d = s.dims;
    parallel_chunks(d.nz, [&](std::int64_t kb, std::int64_t ke) {
        for (int k = static_cast<int>(kb); k < ke; ++k)
            for (int j = 0; j < d.ny; ++j)
                for (int i = 0; i < d.nx; ++i) {
                    Vec3 grad;
                    if (d.nx > 1) {
                        if (i == 0)
                            grad.x = (s.at(1, j, k) - s.at(0, j, k)) / h;
                        else if (i == d.nx - 1)
                            grad.x = (s.at(i, j, k) - s.at(i - 1, j, k)) / h;
                        else
                            grad.x = (s.at(i + 1, j, k) - s.at(i - 1, j, k)) / (2 * h);
                    }
                    if (d.ny > 1) {
                        if (j == 0)
                            grad.y = (s.at(i, 1, k) - s.at(i, 0, k)) / h;
                        else if (j == d.ny - 1)
                            grad.y = (s.at(i, j, k) - s.at(i, j - 1, k)) / h;
                        else
                            grad.y = (s.at(i, j + 1, k) - s.at(i, j - 1, k)) / (2 * h);
                    }
                    if (d.nz > 1) {
                        if (k == 0)
                            grad.z = (s.at(i, j, 1) - s.at(i, j, 0)) / h;
                        else if (k == d.nz - 1)
                            grad.z = (s.at(i, j, k) - s.at(i, j, k - 1)) / h;
                        else
                            grad.z = (s.at(i, j, k + 1) - s.at(i, j, k - 1)) / (2 * h);
                    }
                    out.set_vec(i, j, k, grad);
                }
    });
    return out;
}

// --- GTVF -------------------------------------------------------------------

namespace {

void write_u32(std::ofstream& f, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xFF),
                          static_cast<unsigned char>((v >> 8) & 0xFF),
                          static_cast<unsigned char>((v >> 16) & 0xFF),
                          static_cast<unsigned char>((v >> 24) & 0xFF)};
    f.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t read_u32(std::ifstream& f) {
    unsigned char b[4];
    f.read(reinterpret_cast<char*>(b), 4);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

void write_f32(std::ofstream& f, float v) {
    std::uint32_t u;
    std::memcpy(&u, &v, 4);
    write_u32(f, u);
}

float read_f32(std::ifstream& f) {
    const std::uint32_t u = read_u32(f);
    float v;
    std::memcpy(&v, &u, 4);
    return v;
}

void save_gtvf_impl(const std::string& path, int channels, const GridDims& dims,
                    const Vec3& origin, double cell_size, const std::vector<double>& data) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for writing: " + path);
    f.write("GTVF", 4);
    write_u32(f, 1);
    write_u32(f, static_cast<std::uint32_t>(channels));
    write_u32(f, static_cast<std::uint32_t>(dims.nx));
    write_u32(f, static_cast<std::uint32_t>(dims.ny));
    write_u32(f, static_cast<std::uint32_t>(dims.nz));
    write_f32(f, static_cast<float>(origin.x));
    write_f32(f, static_cast<float>(origin.y));
    write_f32(f, static_cast<float>(origin.z));
    write_f32(f, static_cast<float>(cell_size));
    std::vector<float> buf(data.size());
    for (size_t i = 0; i < data.size(); ++i) buf[i] = static_cast<float>(data[i]);
    // Values are already stored as c + channels*(x + nx*(y + ny*z)).
    f.write(reinterpret_cast<const char*>(buf.data()),
            static_cast<std::streamsize>(buf.size() * sizeof(float)));
    if (!f) throw IoError("write failed: " + path);
}

void load_gtvf_impl(const std::string& path, int expect_channels, GridDims& dims, Vec3& origin,
                    double& cell_size, std::vector<double>& data) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open: " + path);
    char magic[4];
    f.read(magic, 4);
    if (!f || std::memcmp(magic, "GTVF", 4) != 0) throw IoError("not a GTVF file: " + path);
    const std::uint32_t version = read_u32(f);
    if (version != 1) throw IoError("unsupported GTVF version in " + path);
    const std::uint32_t channels = read_u32(f);
    if (static_cast<int>(channels) != expect_channels)
        throw IoError("GTVF channel mismatch in " + path);
    dims.nx = static_cast<int>(read_u32(f));
    dims.ny = static_cast<int>(read_u32(f));
    dims.nz = static_cast<int>(read_u32(f));
    if (!dims.valid()) throw IoError("bad dims in " + path);
    origin.x = read_f32(f);
    origin.y = read_f32(f);
    origin.z = read_f32(f);
    cell_size = read_f32(f);
    const std::size_t count = static_cast<std::size_t>(dims.cells()) * channels;
    std::vector<float> buf(count);
    f.read(reinterpret_cast<char*>(buf.data()),
           static_cast<std::streamsize>(count * sizeof(float)));
    if (!f) throw IoError("truncated GTVF file: " + path);
    data.resize(count);
    for (size_t i = 0; i < count; ++i) data[i] = buf[i];
}

}  // namespace

void save_gtvf(const std::string& path, const ScalarGrid& g) {
    save_gtvf_impl(path, 1, g.dims, g.origin, g.cell_size, g.data);
}

void save_gtvf(const std::string& path, const VectorGrid& g) {
    save_gtvf_impl(path, 3, g.dims, g.origin, g.cell_size, g.data);
}

ScalarGrid load_gtvf_scalar(const std::string& path) {
    ScalarGrid g;
    load_gtvf_impl(path, 1, g.dims, g.origin, g.cell_size, g.data);
    return g;
}

VectorGrid load_gtvf_vector(const std::string& path) {
    VectorGrid g;
    load_gtvf_impl(path, 3, g.dims, g.origin, g.cell_size, g.data);
    return g;
}

}  // namespace flowrec
