#include "flowrec/losses.hpp"

#include <cmath>

namespace flowrec {

double Fade::at(double frac) const {
    frac = clamp(frac, 0.0, 1.0);
    switch (kind) {
        case FadeKind::Constant:
            return start;
        case FadeKind::Linear:
            return start + (end - start) * frac;
        case FadeKind::Exponential: {
            if (start <= 0.0 || end <= 0.0) return start + (end - start) * frac;
            return start * std::pow(end / start, frac);
        }
    }
    return start;
}

void LossWeights::validate() const {
    auto nn = [](double v, const char* what) {
        if (v < 0.0) throw InvalidInput(std::string("loss weight must be >= 0: ") + what);
    };
    nn(w_target, "w_target");
    nn(w_warp_dens.start, "w_warp_dens");
    nn(w_warp_dens.end, "w_warp_dens");
    nn(w_warp_dens_vel, "w_warp_dens_vel");
    nn(w_warp_vel.start, "w_warp_vel");
    nn(w_warp_vel.end, "w_warp_vel");
    nn(w_div.start, "w_div");
    nn(w_div.end, "w_div");
    nn(w_disc, "w_disc");
    nn(lambda_rho_a, "lambda_rho_a");
    nn(lambda_u_a, "lambda_u_a");
    if (beta_ema < 0.0 || beta_ema > 1.0) throw InvalidInput("beta_ema must be in [0,1]");
}

double LossWeights::volume_scale(const GridDims& dims) {
    return (128.0 * 128.0 * 128.0) / static_cast<double>(dims.cells());
}

double LossWeights::image_scale(int width, int height) {
    return (128.0 * 128.0) / (static_cast<double>(width) * height);
}

TargetLossResult target_loss(const ScalarGrid& rho, const LightConfig& lights,
                             const std::vector<Camera>& cams, const std::vector<Image>& targets,
                             const RenderSettings& settings, const Background& bg) {
    if (cams.size() != targets.size())
        throw InvalidInput("target_loss: camera/target count mismatch");
    if (cams.empty()) throw InvalidInput("target_loss: need at least one view");
    const ScalarGrid light = light_grid(rho, lights, settings);
    const double inv_c = 1.0 / static_cast<double>(cams.size());
    double loss = 0.0;
    std::vector<Image> grad_images;
    grad_images.reserve(cams.size());
    for (size_t c = 0; c < cams.size(); ++c) {
        const RenderResult rr = raymarch(rho, light, cams[c], settings);
        const Image out = composite(rr.radiance, rr.transparency, bg);
        if (!out.same_shape(targets[c]))
            throw InvalidInput("target_loss: target shape mismatch");
        Image g(out.width, out.height, out.channels);
        for (std::size_t i = 0; i < out.data.size(); ++i) {
            const double r = out.data[i] - targets[c].data[i];
            loss += r * r;
            g.data[i] = 2.0 * r * inv_c;
        }
        grad_images.push_back(std::move(g));
    }
    TargetLossResult res;
    res.loss = loss * inv_c;
    res.grad_rho = render_vjp_multi(rho, lights, cams, settings, bg, grad_images);
    return res;
}

namespace {

double accumulate_term(const ScalarGrid& advected, const ScalarGrid& target,
                       ScalarGrid& residual2) {
    double loss = 0.0;
    for (std::size_t i = 0; i < advected.data.size(); ++i) {
        const double r = advected.data[i] - target.data[i];
        loss += r * r;
        residual2.data[i] = 2.0 * r;
    }
    return loss;
}

}  // namespace

WarpLossResult warp_loss(const ScalarGrid* s_prev, const ScalarGrid& s_cur,
                         const ScalarGrid* s_next, const VectorGrid* u_prev,
                         const VectorGrid* u_cur, AdvectionScheme scheme) {
    WarpLossResult res;
    res.g_cur = ScalarGrid(s_cur.dims, s_cur.origin, s_cur.cell_size);
    if (s_prev) {
        if (!u_prev) throw InvalidInput("warp_loss: s_prev without u_prev");
        if (s_prev->dims != s_cur.dims || u_prev->dims != s_cur.dims)
            throw InvalidInput("warp_loss: shape mismatch (prev)");
        const ScalarGrid adv = advect(*s_prev, *u_prev, scheme);
        ScalarGrid r2(s_cur.dims, s_cur.origin, s_cur.cell_size);
        res.loss += accumulate_term(adv, s_cur, r2);
        res.g_prev = advect_vjp_s(*s_prev, *u_prev, r2, scheme);
        res.g_u_prev = advect_vjp_u(*s_prev, *u_prev, r2, scheme);
        for (std::size_t i = 0; i < r2.data.size(); ++i) res.g_cur.data[i] -= r2.data[i];
    }
    if (s_next) {
        if (!u_cur) throw InvalidInput("warp_loss: s_next without u_cur");
        if (s_next->dims != s_cur.dims || u_cur->dims != s_cur.dims)
            throw InvalidInput("warp_loss: shape mismatch (next)");
        const ScalarGrid adv = advect(s_cur, *u_cur, scheme);
        ScalarGrid r2(s_cur.dims, s_cur.origin, s_cur.cell_size);
        res.loss += accumulate_term(adv, *s_next, r2);
        const ScalarGrid g = advect_vjp_s(s_cur, *u_cur, r2, scheme);
        for (std::size_t i = 0; i < g.data.size(); ++i) res.g_cur.data[i] += g.data[i];
        res.g_u_cur = advect_vjp_u(s_cur, *u_cur, r2, scheme);
        res.g_next = ScalarGrid(s_cur.dims, s_cur.origin, s_cur.cell_size);
        for (std::size_t i = 0; i < r2.data.size(); ++i) res.g_next.data[i] = -r2.data[i];
    }
    return res;
}

WarpLossVecResult warp_loss_vector(const VectorGrid* u_prev, const VectorGrid& u_cur,
                                   const VectorGrid* u_next, AdvectionScheme scheme) {
    WarpLossVecResult res;
    res.g_cur = VectorGrid(u_cur.dims, u_cur.origin, u_cur.cell_size);
    ScalarGrid comp(u_cur.dims, u_cur.origin, u_cur.cell_size);
    const std::int64_t n = u_cur.dims.cells();
    if (u_prev) {
        if (u_prev->dims != u_cur.dims) throw InvalidInput("warp_loss_vector: shape mismatch");
        const VectorGrid adv = advect_vector(*u_prev, *u_prev, scheme);
        for (std::size_t i = 0; i < adv.data.size(); ++i) {
            const double r = adv.data[i] - u_cur.data[i];
            res.loss += r * r;
            res.g_cur.data[i] -= 2.0 * r;
        }
    }
    if (u_next) {
        if (u_next->dims != u_cur.dims) throw InvalidInput("warp_loss_vector: shape mismatch");
        // advected-field slot gradient only; the advecting velocity is frozen
        for (int c = 0; c < 3; ++c) {
            for (std::int64_t idx = 0; idx < n; ++idx) comp.data[idx] = u_cur.data[3 * idx + c];
            const ScalarGrid adv = advect(comp, u_cur, scheme);
            ScalarGrid r2(u_cur.dims, u_cur.origin, u_cur.cell_size);
            for (std::int64_t idx = 0; idx < n; ++idx) {
                const double r = adv.data[idx] - u_next->data[3 * idx + c];
                res.loss += r * r;
                r2.data[idx] = 2.0 * r;
            }
            const ScalarGrid g = advect_vjp_s(comp, u_cur, r2, scheme);
            for (std::int64_t idx = 0; idx < n; ++idx) res.g_cur.data[3 * idx + c] += g.data[idx];
        }
    }
    return res;
}

DivLossResult div_loss(const VectorGrid& u) {
    DivLossResult res;
    res.grad_u = VectorGrid(u.dims, u.origin, u.cell_size);
    const ScalarGrid d = divergence(u);
    for (double v : d.data) res.loss += v * v;
    // adjoint of the stencil, scattered sequentially
    const GridDims dm = u.dims;
    const double h = u.cell_size;
    for (int k = 0; k < dm.nz; ++k)
        for (int j = 0; j < dm.ny; ++j)
            for (int i = 0; i < dm.nx; ++i) {
                const double g = 2.0 * d.at(i, j, k);
                if (g == 0.0) continue;
                if (dm.nx > 1) {
                    if (i == 0) {
                        res.grad_u.at(1, j, k, 0) += g / h;
                        res.grad_u.at(0, j, k, 0) -= g / h;
                    } else if (i == dm.nx - 1) {
                        res.grad_u.at(i, j, k, 0) += g / h;
                        res.grad_u.at(i - 1, j, k, 0) -= g / h;
                    } else {
                        res.grad_u.at(i + 1, j, k, 0) += g / (2 * h);
                        res.grad_u.at(i - 1, j, k, 0) -= g / (2 * h);
                    }
                }
                if (dm.ny > 1) {
                    if (j == 0) {
                        res.grad_u.at(i, 1, k, 1) += g / h;
                        res.grad_u.at(i, 0, k, 1) -= g / h;
                    } else if (j == dm.ny - 1) {
                        res.grad_u.at(i, j, k, 1) += g / h;
                        res.grad_u.at(i, j - 1, k, 1) -= g / h;
                    } else {
                        res.grad_u.at(i, j + 1, k, 1) += g / (2 * h);
                        res.grad_u.at(i, j - 1, k, 1) -= g / (2 * h);
                    }
                }
                if (dm.nz > 1) {
                    if (k == 0) {
                        res.grad_u.at(i, j, 1, 2) += g / h;
                        res.grad_u.at(i, j, 0, 2) -= g / h;
                    } else if (k == dm.nz - 1) {
                        res.grad_u.at(i, j, k, 2) += g / h;
                        res.grad_u.at(i, j, k - 1, 2) -= g / h;
                    } else {
                        res.grad_u.at(i, j, k + 1, 2) += g / (2 * h);
                        res.grad_u.at(i, j, k - 1, 2) -= g / (2 * h);
                    }
                }
            }
    return res;
}

}  // namespace flowrec
