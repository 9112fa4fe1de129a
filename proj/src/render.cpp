#include "flowrec/render.hpp"

#include <algorithm>
#include <cmath>

#include "flowrec/parallel.hpp"

namespace flowrec {

namespace {

void check_nonnegative(const ScalarGrid& rho) {
    for (double v : rho.data)
        if (v < 0.0) throw InvalidInput("render: negative density");
}

// Ray / axis-aligned box intersection (slab method); returns false when the
// intersection with [t_lo, t_hi] is empty.
bool ray_box(const Vec3& o, const Vec3& d, const Vec3& bmin, const Vec3& bmax, double t_lo,
             double t_hi, double& t0, double& t1) {
    t0 = t_lo;
    t1 = t_hi;
    for (int a = 0; a < 3; ++a) {
        const double da = a == 0 ? d.x : (a == 1 ? d.y : d.z);
        const double oa = a == 0 ? o.x : (a == 1 ? o.y : o.z);
        const double lo = a == 0 ? bmin.x : (a == 1 ? bmin.y : bmin.z);
        const double hi = a == 0 ? bmax.x : (a == 1 ? bmax.y : bmax.z);
        if (std::abs(da) < 1e-300) {
            if (oa < lo || oa > hi) return false;
            continue;
        }
        double ta = (lo - oa) / da;
        double tb = (hi - oa) / da;
        if (ta > tb) std::swap(ta, tb);
        t0 = std::max(t0, ta);
        t1 = std::min(t1, tb);
        if (t0 >= t1) return false;
    }
    return t0 < t1;
}

inline bool inside_box(const Vec3& p, const Vec3& bmin, const Vec3& bmax) {
    return p.x >= bmin.x && p.x <= bmax.x && p.y >= bmin.y && p.y <= bmax.y && p.z >= bmin.z &&
           p.z <= bmax.z;
}

// Density outside the physical box is vacuum; inside, clamped trilinear.
inline double sample_box(const ScalarGrid& g, const Vec3& p, const Vec3& bmin, const Vec3& bmax) {
    if (!inside_box(p, bmin, bmax)) return 0.0;
    return sample_trilinear(g, p);
}

// Accumulates g into the 8 interpolants of a clamped trilinear lookup and
// records the interpolation weights for normalization.
inline void scatter_trilinear(const ScalarGrid& ref, const Vec3& world_pos, double g,
                              std::vector<double>& grad, std::vector<double>& weight) {
    const Vec3 cc = ref.world_to_cell(world_pos);
    const TriLookup t = locate_clamped(ref.dims, cc.x, cc.y, cc.z);
    const int sx = ref.dims.nx > 1 ? 1 : 0;
    const int sy = ref.dims.ny > 1 ? 1 : 0;
    const int sz = ref.dims.nz > 1 ? 1 : 0;
    const double wx[2] = {1.0 - t.fx, t.fx};
    const double wy[2] = {1.0 - t.fy, t.fy};
    const double wz[2] = {1.0 - t.fz, t.fz};
    for (int dz = 0; dz < 2; ++dz)
        for (int dy = 0; dy < 2; ++dy)
            for (int dx = 0; dx < 2; ++dx) {
                const std::size_t idx =
                    ref.index(t.i0 + dx * sx, t.j0 + dy * sy, t.k0 + dz * sz);
                const double w = wx[dx] * wy[dy] * wz[dz];
                grad[idx] += w * g;
                weight[idx] += w;
            }
}

struct ShadowQuery {
    double transmittance;
    double falloff;
    double dist;
    Vec3 dir;     // unit, light -> cell
    double s0, s1;  // marched segment, measured from the light
};

ShadowQuery shadow_toward(const ScalarGrid& rho, const Vec3& light_pos, const Vec3& cell_pos,
                          double step_world, const Vec3& bmin, const Vec3& bmax) {
    ShadowQuery q;
    const Vec3 rel = cell_pos - light_pos;
    q.dist = rel.norm();
    q.falloff = 1.0 / (1.0 + q.dist);
    if (q.dist < 1e-12) {
        q.transmittance = 1.0;
        q.dir = Vec3(1, 0, 0);
        q.s0 = q.s1 = 0.0;
        return q;
    }
    q.dir = rel / q.dist;
    double t0, t1;
    if (!ray_box(light_pos, q.dir, bmin, bmax, 0.0, q.dist, t0, t1)) {
        q.transmittance = 1.0;
        q.s0 = q.s1 = 0.0;
        return q;
    }
    q.s0 = t0;
    q.s1 = t1;
    double depth = 0.0;
    for (double s = t0 + 0.5 * step_world; s < t1; s += step_world)
        depth += sample_box(rho, light_pos + q.dir * s, bmin, bmax) * step_world;
    q.transmittance = std::exp(-depth);
    return q;
}

}  // namespace

ScalarGrid light_grid(const ScalarGrid& rho, const LightConfig& lights,
                      const RenderSettings& settings) {
    settings.validate();
    lights.validate();
    check_nonnegative(rho);
    ScalarGrid out(rho.dims, rho.origin, rho.cell_size);
    const Vec3 bmin = rho.box_min(), bmax = rho.box_max();
    const double step = settings.shadow_step_size * rho.cell_size;
    const GridDims d = rho.dims;
    parallel_chunks(d.nz, [&](std::int64_t kb, std::int64_t ke) {
        for (int k = static_cast<int>(kb); k < ke; ++k)
            for (int j = 0; j < d.ny; ++j)
                for (int i = 0; i < d.nx; ++i) {
                    const double dens = rho.at(i, j, k);
                    double L = lights.ambient * dens;
                    if (dens != 0.0) {
                        const Vec3 x = rho.cell_center(i, j, k);
                        for (const PointLight& p : lights.points) {
                            const ShadowQuery q =
                                shadow_toward(rho, p.position, x, step, bmin, bmax);
                            L += p.intensity * dens * q.falloff * q.transmittance;
                        }
                    }
                    out.at(i, j, k) = L;
                }
    });
    return out;
}

RenderResult raymarch(const ScalarGrid& rho, const ScalarGrid& light, const Camera& cam,
                      const RenderSettings& settings) {
    settings.validate();
    check_nonnegative(rho);
    if (rho.dims != light.dims) throw InvalidInput("raymarch: rho/light dims mismatch");
    const CameraBasis basis = camera_basis(cam);
    RenderResult res{Image(cam.width, cam.height, 1), Image(cam.width, cam.height, 1, 1.0)};
    const Vec3 bmin = rho.box_min(), bmax = rho.box_max();
    const double step = settings.step_size * rho.cell_size;
    parallel_chunks(cam.height, [&](std::int64_t yb, std::int64_t ye) {
        for (int y = static_cast<int>(yb); y < ye; ++y)
            for (int x = 0; x < cam.width; ++x) {
                const Ray ray = pixel_ray(cam, basis, x, y);
                double t0, t1;
                if (!ray_box(ray.origin, ray.dir, bmin, bmax, cam.near, cam.far, t0, t1))
                    continue;
                double radiance = 0.0, T = 1.0;
                for (double t = t0 + 0.5 * step; t < t1; t += step) {
                    const Vec3 p = ray.origin + ray.dir * t;
                    const double L = sample_box(light, p, bmin, bmax);
                    const double dens = sample_box(rho, p, bmin, bmax);
                    radiance += T * L * step;
                    T *= std::exp(-dens * step);
                }
                res.radiance.at(x, y) = radiance;
                res.transparency.at(x, y) = T;
            }
    });
    return res;
}

Image composite(const Image& radiance, const Image& transparency, const Background& bg) {
    if (radiance.width != transparency.width || radiance.height != transparency.height)
        throw InvalidInput("composite: radiance/transparency shapes differ");
    if (bg.image.width > 0 &&
        (bg.image.width != radiance.width || bg.image.height != radiance.height))
        throw InvalidInput("composite: background image shape mismatch");
    const int ch = std::max(radiance.channels, bg.channels());
    Image out(radiance.width, radiance.height, ch);
    for (int y = 0; y < radiance.height; ++y)
        for (int x = 0; x < radiance.width; ++x) {
            const double T = transparency.at(x, y);
            for (int c = 0; c < ch; ++c) {
                const double r = radiance.at(x, y, radiance.channels == 3 ? c : 0);
                out.at(x, y, c) = r + T * bg.value(x, y, c);
            }
        }
    return out;
}

Image render_view(const ScalarGrid& rho, const LightConfig& lights, const Camera& cam,
                  const RenderSettings& settings, const Background& bg) {
    const ScalarGrid L = light_grid(rho, lights, settings);
    const RenderResult rr = raymarch(rho, L, cam, settings);
    return composite(rr.radiance, rr.transparency, bg);
}

namespace {

// Per-chunk scatter buffers, merged in chunk order so results do not depend
// on scheduling.
struct ScatterBuffers {
    std::vector<double> grad_rho, weight_rho, grad_light;
};

void raymarch_vjp_into(const ScalarGrid& rho, const ScalarGrid& light, const Camera& cam,
                       const RenderSettings& settings, const Background& bg,
                       const Image& grad_image, std::vector<double>& grad_rho,
                       std::vector<double>& weight_rho, std::vector<double>& grad_light) {
    const CameraBasis basis = camera_basis(cam);
    if (grad_image.width != cam.width || grad_image.height != cam.height)
        throw InvalidInput("render_vjp: grad image size != camera resolution");
    const Vec3 bmin = rho.box_min(), bmax = rho.box_max();
    const double step = settings.step_size * rho.cell_size;
    const int gch = grad_image.channels;

    const std::int64_t n_pixels = static_cast<std::int64_t>(cam.width) * cam.height;
    const int workers = std::max(1, thread_count());
    const std::int64_t chunk = (n_pixels + workers - 1) / workers;
    const int n_chunks = static_cast<int>((n_pixels + chunk - 1) / chunk);
    std::vector<ScatterBuffers> bufs(static_cast<size_t>(n_chunks));

    parallel_chunks(n_chunks, [&](std::int64_t cb, std::int64_t ce) {
        for (int ci = static_cast<int>(cb); ci < ce; ++ci) {
            ScatterBuffers& sb = bufs[static_cast<size_t>(ci)];
            sb.grad_rho.assign(rho.data.size(), 0.0);
            sb.weight_rho.assign(rho.data.size(), 0.0);
            sb.grad_light.assign(rho.data.size(), 0.0);
            const std::int64_t pb = ci * chunk;
            const std::int64_t pe = std::min(n_pixels, pb + chunk);
            std::vector<Vec3> pos;
            std::vector<double> dens, emit;
            for (std::int64_t pi = pb; pi < pe; ++pi) {
                const int x = static_cast<int>(pi % cam.width);
                const int y = static_cast<int>(pi / cam.width);
                // upstream gradients w.r.t. this pixel's radiance and transparency
                double g_r = 0.0, g_t = 0.0;
                for (int c = 0; c < gch; ++c) {
                    const double g = grad_image.at(x, y, c);
                    g_r += g;
                    g_t += g * bg.value(x, y, c);
                }
                if (g_r == 0.0 && g_t == 0.0) continue;
                const Ray ray = pixel_ray(cam, basis, x, y);
                double t0, t1;
                if (!ray_box(ray.origin, ray.dir, bmin, bmax, cam.near, cam.far, t0, t1))
                    continue;
                pos.clear();
                dens.clear();
                emit.clear();
                double T = 1.0;
                for (double t = t0 + 0.5 * step; t < t1; t += step) {
                    const Vec3 p = ray.origin + ray.dir * t;
                    pos.push_back(p);
                    dens.push_back(sample_box(rho, p, bmin, bmax));
                    emit.push_back(sample_box(light, p, bmin, bmax));
                }
                const int K = static_cast<int>(pos.size());
                if (K == 0) continue;
                std::vector<double> T_before(static_cast<size_t>(K));
                for (int k = 0; k < K; ++k) {
                    T_before[static_cast<size_t>(k)] = T;
                    T *= std::exp(-dens[static_cast<size_t>(k)] * step);
                }
                const double T_final = T;
                // suffix emission S_j = sum_{k>j} T_k L_k step
                double suffix = 0.0;
                for (int k = K - 1; k >= 0; --k) {
                    const double in_b = inside_box(pos[static_cast<size_t>(k)], bmin, bmax) ? 1.0 : 0.0;
                    if (in_b != 0.0) {
                        // emission gradient -> light grid
                        const double gl = g_r * T_before[static_cast<size_t>(k)] * step;
                        if (gl != 0.0) {
                            // plain trilinear scatter; weights tracked on the
                            // density side only
                            const Vec3 cc = rho.world_to_cell(pos[static_cast<size_t>(k)]);
                            const TriLookup tl = locate_clamped(rho.dims, cc.x, cc.y, cc.z);
                            const int sx = rho.dims.nx > 1 ? 1 : 0;
                            const int sy = rho.dims.ny > 1 ? 1 : 0;
                            const int sz = rho.dims.nz > 1 ? 1 : 0;
                            const double wx[2] = {1.0 - tl.fx, tl.fx};
                            const double wy[2] = {1.0 - tl.fy, tl.fy};
                            const double wz[2] = {1.0 - tl.fz, tl.fz};
                            for (int dz = 0; dz < 2; ++dz)
                                for (int dy = 0; dy < 2; ++dy)
                                    for (int dx = 0; dx < 2; ++dx)
                                        sb.grad_light[rho.index(tl.i0 + dx * sx, tl.j0 + dy * sy,
                                                                tl.k0 + dz * sz)] +=
                                            wx[dx] * wy[dy] * wz[dz] * gl;
                        }
                        // absorption gradient -> density grid
                        const double gd = -step * (g_r * suffix + g_t * T_final);
                        if (gd != 0.0)
                            scatter_trilinear(rho, pos[static_cast<size_t>(k)], gd, sb.grad_rho,
                                              sb.weight_rho);
                    }
                    suffix += T_before[static_cast<size_t>(k)] * emit[static_cast<size_t>(k)] * step;
                }
            }
        }
    });
    for (const ScatterBuffers& sb : bufs) {
        if (sb.grad_rho.empty()) continue;
        for (std::size_t i = 0; i < grad_rho.size(); ++i) {
            grad_rho[i] += sb.grad_rho[i];
            weight_rho[i] += sb.weight_rho[i];
            grad_light[i] += sb.grad_light[i];
        }
    }
}

// VJP of light_grid: chains the per-cell light gradient back to the density,
// both through the local emission terms and the shadow transmittance.
void light_grid_vjp_into(const ScalarGrid& rho, const LightConfig& lights,
                         const RenderSettings& settings, const std::vector<double>& grad_light,
                         std::vector<double>& grad_rho, std::vector<double>& weight_rho) {
    const Vec3 bmin = rho.box_min(), bmax = rho.box_max();
    const double step = settings.shadow_step_size * rho.cell_size;
    const GridDims d = rho.dims;

    const int workers = std::max(1, thread_count());
    const std::int64_t chunk = (d.nz + workers - 1) / workers;
    const int n_chunks = static_cast<int>((d.nz + chunk - 1) / chunk);
    std::vector<ScatterBuffers> bufs(static_cast<size_t>(n_chunks));

    parallel_chunks(n_chunks, [&](std::int64_t cb, std::int64_t ce) {
        for (int ci = static_cast<int>(cb); ci < ce; ++ci) {
            ScatterBuffers& sb = bufs[static_cast<size_t>(ci)];
            sb.grad_rho.assign(rho.data.size(), 0.0);
            sb.weight_rho.assign(rho.data.size(), 0.0);
            const int kb = static_cast<int>(ci * chunk);
            const int ke = static_cast<int>(std::min<std::int64_t>(d.nz, kb + chunk));
            for (int k = kb; k < ke; ++k)
                for (int j = 0; j < d.ny; ++j)
                    for (int i = 0; i < d.nx; ++i) {
                        const std::size_t idx = rho.index(i, j, k);
                        const double gL = grad_light[idx];
                        if (gL == 0.0) continue;
                        const double dens = rho.data[idx];
                        double direct = lights.ambient;
                        const Vec3 x = rho.cell_center(i, j, k);
                        for (const PointLight& p : lights.points) {
                            const ShadowQuery q =
                                shadow_toward(rho, p.position, x, step, bmin, bmax);
                            direct += p.intensity * q.falloff * q.transmittance;
                            // shadow path: d T / d depth = -T
                            const double coef =
                                -gL * p.intensity * dens * q.falloff * q.transmittance * step;
                            if (coef != 0.0 && q.s1 > q.s0) {
                                for (double s = q.s0 + 0.5 * step; s < q.s1; s += step) {
                                    const Vec3 sp = p.position + q.dir * s;
                                    if (inside_box(sp, bmin, bmax))
                                        scatter_trilinear(rho, sp, coef, sb.grad_rho,
                                                          sb.weight_rho);
                                }
                            }
                        }
                        sb.grad_rho[idx] += gL * direct;
                        sb.weight_rho[idx] += 1.0;
                    }
        }
    });
    for (const ScatterBuffers& sb : bufs) {
        if (sb.grad_rho.empty()) continue;
        for (std::size_t i = 0; i < grad_rho.size(); ++i) {
            grad_rho[i] += sb.grad_rho[i];
            weight_rho[i] += sb.weight_rho[i];
        }
    }
}

}  // namespace

ScalarGrid render_vjp_multi(const ScalarGrid& rho, const LightConfig& lights,
                            const std::vector<Camera>& cams, const RenderSettings& settings,
                            const Background& bg, const std::vector<Image>& grad_images) {
    settings.validate();
    check_nonnegative(rho);
    if (cams.size() != grad_images.size())
        throw InvalidInput("render_vjp: camera/grad count mismatch");
    const ScalarGrid light = light_grid(rho, lights, settings);
    std::vector<double> grad_rho(rho.data.size(), 0.0);
    std::vector<double> weight_rho(rho.data.size(), 0.0);
    std::vector<double> grad_light_acc(rho.data.size(), 0.0);
    for (size_t c = 0; c < cams.size(); ++c)
        raymarch_vjp_into(rho, light, cams[c], settings, bg, grad_images[c], grad_rho, weight_rho,
                          grad_light_acc);
    light_grid_vjp_into(rho, lights, settings, grad_light_acc, grad_rho, weight_rho);

    ScalarGrid out(rho.dims, rho.origin, rho.cell_size);
    if (!settings.normalized_scatter) {
        out.data = grad_rho;
        return out;
    }
    // Divide by accumulated interpolation weights, then rescale so the total
    // over cells (the derivative along an all-ones perturbation) is kept.
    double raw_sum = 0.0, norm_sum = 0.0;
    for (std::size_t i = 0; i < grad_rho.size(); ++i) {
        if (weight_rho[i] > 0.0) {
            out.data[i] = grad_rho[i] / weight_rho[i];
            raw_sum += grad_rho[i];
            norm_sum += out.data[i];
        }
    }
    double scale = 1.0;
    if (std::abs(norm_sum) > 1e-300) scale = raw_sum / norm_sum;
    if (!std::isfinite(scale) || scale <= 0.0) scale = 1.0;
    for (double& v : out.data) v *= scale;
    return out;
}

ScalarGrid render_vjp(const ScalarGrid& rho, const LightConfig& lights, const Camera& cam,
                      const RenderSettings& settings, const Background& bg,
                      const Image& grad_image) {
    return render_vjp_multi(rho, lights, {cam}, settings, bg, {grad_image});
}

}  // namespace flowrec
