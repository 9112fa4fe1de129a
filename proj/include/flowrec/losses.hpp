#pragma once

#include <vector>

#include "flowrec/advect.hpp"
#include "flowrec/grid.hpp"
#include "flowrec/render.hpp"

namespace flowrec {

enum class FadeKind { Constant, Linear, Exponential };

/// Scheduled weight: interpolates start -> end over the main pass.
struct Fade {
    double start = 0.0;
    double end = 0.0;
    FadeKind kind = FadeKind::Constant;

    double at(double frac) const;  // frac in [0,1]
};

/// Loss balance. All losses are sums over cells/pixels; the tabulated values
/// are calibrated for sums at the reference resolution (128^3 volume, 128^2
/// images) and rescaled at other resolutions so gradient magnitudes stay
/// comparable.
struct LossWeights {
    double w_target = 1.74e-5;
    Fade w_warp_dens{2.7e-10, 5.4e-10, FadeKind::Linear};  // density objective
    double w_warp_dens_vel = 4.1e-10;                      // velocity objective
    Fade w_warp_vel{4e-11, 8e-11, FadeKind::Linear};
    Fade w_div{8.6e-10, 1.7e-8, FadeKind::Exponential};
    double w_disc = 1.5e-5;
    double lambda_rho_a = 1.0;  // global-transport gradient scale for rho^0
    double lambda_u_a = 1.0;    // global-transport gradient scale for u
    double beta_ema = 0.9;

    void validate() const;

    static double volume_scale(const GridDims& dims);
    static double image_scale(int width, int height);
};

// --- target loss -------------------------------------------------------------

struct TargetLossResult {
    double loss = 0.0;
    ScalarGrid grad_rho;
};

/// (1/|C|) sum_c |I_c - composite(render(rho,c))|^2 over pixels; the gradient
/// runs through the full rendering chain.
TargetLossResult target_loss(const ScalarGrid& rho, const LightConfig& lights,
                             const std::vector<Camera>& cams, const std::vector<Image>& targets,
                             const RenderSettings& settings, const Background& bg);

// --- warp loss ---------------------------------------------------------------

struct WarpLossResult {
    double loss = 0.0;
    ScalarGrid g_prev, g_cur, g_next;
    VectorGrid g_u_prev, g_u_cur;
};

/// |A(s_prev,u_prev) - s_cur|^2 + |A(s_cur,u_cur) - s_next|^2 with gradients
/// w.r.t. all five inputs. Pass nullptr for a missing neighbor (first/last
/// frame); the corresponding term is dropped.
WarpLossResult warp_loss(const ScalarGrid* s_prev, const ScalarGrid& s_cur,
                         const ScalarGrid* s_next, const VectorGrid* u_prev,
                         const VectorGrid* u_cur, AdvectionScheme scheme);

struct WarpLossVecResult {
    double loss = 0.0;
    VectorGrid g_cur;  // gradient w.r.t. the advected-field occurrences of u^t
};

/// Self-advection coherence term for velocities. Gradients flow through the
/// advected-field slots only; the advecting-velocity slot is frozen
/// (no backprop through velocity self-advection).
WarpLossVecResult warp_loss_vector(const VectorGrid* u_prev, const VectorGrid& u_cur,
                                   const VectorGrid* u_next, AdvectionScheme scheme);

// --- divergence loss -----------------------------------------------------------

struct DivLossResult {
    double loss = 0.0;
    VectorGrid grad_u;
};

/// sum over cells of (div u)^2; the gradient is the adjoint of the
/// central-difference stencil.
DivLossResult div_loss(const VectorGrid& u);

}  // namespace flowrec
