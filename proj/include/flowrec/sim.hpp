#pragma once

#include <string>
#include <vector>

#include "flowrec/grid.hpp"
#include "flowrec/render.hpp"
#include "flowrec/scene.hpp"

namespace flowrec {

/// Buoyant-plume test scenario on a unit-cube domain: operator-split step
/// (MacCormack self-advection, buoyancy, Jacobi pressure projection, density
/// advection, perturbed disk inflow).
struct PlumeScenario {
    GridDims dims{32, 32, 32};
    int frames = 20;
    Vec3 inflow_center{0.0, -0.42, 0.0};  // world units, domain [-0.5, 0.5]^3
    double inflow_radius = 0.12;
    double inflow_rate = 0.9;      // density added per frame inside the disk
    double buoyancy = 0.0022;      // upward acceleration per unit density per frame
    double noise_amp = 0.55;       // relative inflow perturbation
    int jacobi_iters = 200;
    std::uint64_t seed = 7;

    void validate() const {
        if (!dims.valid()) throw InvalidInput("scenario: dims must be positive");
        if (frames < 2) throw InvalidInput("scenario: need at least two frames");
    }

    /// x extent is 1 world unit; the box is centered on the world origin.
    double cell_size() const { return 1.0 / dims.nx; }
    Vec3 domain_origin() const {
        const double h = cell_size();
        return {-0.5 * dims.nx * h + 0.5 * h, -0.5 * dims.ny * h + 0.5 * h,
                -0.5 * dims.nz * h + 0.5 * h};
    }
};

/// Removes the gradient part of u with a damped Jacobi solve of the composed
/// divergence/gradient operator; returns the pressure used.
ScalarGrid pressure_project(VectorGrid& u, int iterations);

struct SimState {
    ScalarGrid rho;
    VectorGrid u;
};

SimState initial_state(const PlumeScenario& scenario);

/// One solver step; `frame` seeds the per-frame inflow perturbation.
void plume_step(SimState& state, const PlumeScenario& scenario, int frame);

/// Writes per-frame ground truth (GTVF), rendered targets per camera (PFM),
/// camera files, lights and the manifest.
SceneBundle generate_scene(const PlumeScenario& scenario, const std::vector<Camera>& cams,
                           const LightConfig& lights, const RenderSettings& settings,
                           const Background& bg, const std::string& out_dir);

}  // namespace flowrec
