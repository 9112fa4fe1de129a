#include "flowrec/sim.hpp"

#include <cmath>
#include <filesystem>

#include "flowrec/advect.hpp"
#include "flowrec/parallel.hpp"
#include "flowrec/rng.hpp"

namespace fs = std::filesystem;

namespace flowrec {

ScalarGrid pressure_project(VectorGrid& u, int iterations) {
    const ScalarGrid div = divergence(u);
    ScalarGrid p(u.dims, u.origin, u.cell_size);
    const double h = u.cell_size;
    // interior diagonal of div(grad(.)) with central differences: 3/(2 h^2)
    const double diag = 1.5 / (h * h);
    const double omega = 0.8;
    for (int it = 0; it < iterations; ++it) {
        const ScalarGrid lap = divergence(spatial_gradient(p));
        for (std::size_t i = 0; i < p.data.size(); ++i)
            p.data[i] += omega * (div.data[i] - lap.data[i]) / diag;
    }
    const VectorGrid grad_p = spatial_gradient(p);
    for (std::size_t i = 0; i < u.data.size(); ++i) u.data[i] -= grad_p.data[i];
    return p;
}

SimState initial_state(const PlumeScenario& scenario) {
    scenario.validate();
    SimState s;
    s.rho = ScalarGrid(scenario.dims, scenario.domain_origin(), scenario.cell_size());
    s.u = VectorGrid(scenario.dims, scenario.domain_origin(), scenario.cell_size());
    return s;
}

namespace {

// smooth per-frame perturbation of the inflow disk, low frequency in space
double inflow_noise(const PlumeScenario& scenario, int frame, const Vec3& p) {
    Rng rng(Rng(scenario.seed).fork(1000 + static_cast<std::uint64_t>(frame)));
    const double a1 = rng.uniform(0.0, 2.0 * kPi);
    const double a2 = rng.uniform(0.0, 2.0 * kPi);
    const double b1 = rng.uniform(0.5, 1.5);
    const double b2 = rng.uniform(0.5, 1.5);
    return std::sin(2.0 * kPi * b1 * p.x + a1) * std::cos(2.0 * kPi * b2 * p.z + a2);
}

}  // namespace

void plume_step(SimState& state, const PlumeScenario& scenario, int frame) {
    if (state.rho.dims != scenario.dims || state.u.dims != scenario.dims)
        throw InvalidInput("plume_step: state dims mismatch");

    // self-advect velocity, then buoyancy
    state.u = advect_vector(state.u, state.u, AdvectionScheme::MacCormackClamped);
    const std::int64_t n = scenario.dims.cells();
    for (std::int64_t c = 0; c < n; ++c)
        state.u.data[3 * c + 1] += scenario.buoyancy * state.rho.data[c];

    pressure_project(state.u, scenario.jacobi_iters);

    // transport density, then add the perturbed source
    state.rho = advect(state.rho, state.u, AdvectionScheme::MacCormackClamped);
    const GridDims d = scenario.dims;
    for (int k = 0; k < d.nz; ++k)
        for (int j = 0; j < d.ny; ++j)
            for (int i = 0; i < d.nx; ++i) {
                const Vec3 p = state.rho.cell_center(i, j, k);
                const double dx = p.x - scenario.inflow_center.x;
                const double dz = p.z - scenario.inflow_center.z;
                const double dy = p.y - scenario.inflow_center.y;
                const double r = std::sqrt(dx * dx + dz * dz);
                if (r <= scenario.inflow_radius && std::abs(dy) <= 2.5 * scenario.cell_size()) {
                    const double shape = 1.0 - r / scenario.inflow_radius;
                    const double noise =
                        1.0 + scenario.noise_amp * inflow_noise(scenario, frame, p);
                    state.rho.at(i, j, k) += scenario.inflow_rate * shape * std::max(0.0, noise);
                }
            }
    for (double& v : state.rho.data) v = std::max(0.0, v);
}

SceneBundle generate_scene(const PlumeScenario& scenario, const std::vector<Camera>& cams,
                           const LightConfig& lights, const RenderSettings& settings,
                           const Background& bg, const std::string& out_dir) {
    scenario.validate();
    if (cams.empty()) throw InvalidInput("generate_scene: need at least one camera");
    fs::create_directories(out_dir);
    fs::create_directories(fs::path(out_dir) / "targets");
    fs::create_directories(fs::path(out_dir) / "volumes");

    SceneBundle bundle;
    bundle.dir = out_dir;
    bundle.frames = scenario.frames;
    bundle.views = static_cast<int>(cams.size());
    bundle.dims = scenario.dims;
    bundle.origin = scenario.domain_origin();
    bundle.cell_size = scenario.cell_size();
    bundle.seed = scenario.seed;
    bundle.lights = lights;
    bundle.background = bg;
    bundle.cameras = cams;
    bundle.target_files.resize(static_cast<size_t>(scenario.frames));

    SimState state = initial_state(scenario);
    char name[64];
    for (int t = 0; t < scenario.frames; ++t) {
        if (t > 0) plume_step(state, scenario, t);

        std::snprintf(name, sizeof(name), "volumes/density_%04d.gtvf", t);
        save_gtvf((fs::path(out_dir) / name).string(), state.rho);
        bundle.density_files.emplace_back(name);
        std::snprintf(name, sizeof(name), "volumes/velocity_%04d.gtvf", t);
        save_gtvf((fs::path(out_dir) / name).string(), state.u);
        bundle.velocity_files.emplace_back(name);

        const ScalarGrid light = light_grid(state.rho, lights, settings);
        for (int v = 0; v < bundle.views; ++v) {
            const RenderResult rr = raymarch(state.rho, light, cams[static_cast<size_t>(v)], settings);
            const Image img = composite(rr.radiance, rr.transparency, bg);
            std::snprintf(name, sizeof(name), "targets/frame_%04d_cam_%d.pfm", t, v);
            save_pfm((fs::path(out_dir) / name).string(), img);
            bundle.target_files[static_cast<size_t>(t)].emplace_back(name);
        }
    }
    bundle.save_manifest();
    return bundle;
}

}  // namespace flowrec
