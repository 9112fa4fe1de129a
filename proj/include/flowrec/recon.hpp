#pragma once

#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "flowrec/adam.hpp"
#include "flowrec/config.hpp"
#include "flowrec/discriminator.hpp"
#include "flowrec/hull.hpp"
#include "flowrec/scene.hpp"

namespace flowrec {

enum class Variant { Single, Forward, Coupled, CoupledMs, GlobTrans, Full };

Variant parse_variant(const std::string& name);
std::string variant_name(Variant v);

/// The optimization unknowns plus the constraint grids they live under.
struct ReconState {
    ScalarGrid rho0;
    std::vector<ScalarGrid> rho;     // per-frame densities (rebuilt in global mode)
    std::vector<ScalarGrid> inflow;  // per-frame inflow grids (masked)
    std::vector<VectorGrid> u;
    int frames = 0;
};

/// Binary mask over the lowest rows of the union hull (plus a one-cell
/// dilation), marking the inflow degrees of freedom.
ScalarGrid place_inflow(const std::vector<ScalarGrid>& hulls, int overlap_cells);

/// Frame sequence implied by the unknowns: rho[0] = hull0*rho0,
/// rho[t] = hull_t * A(rho[t-1] + inflow[t-1], u[t-1]).
std::vector<ScalarGrid> rebuild_sequence(const ScalarGrid& rho0,
                                         const std::vector<ScalarGrid>& inflow,
                                         const std::vector<VectorGrid>& u,
                                         const std::vector<ScalarGrid>& hulls,
                                         AdvectionScheme scheme);

/// On-disk checkpoint:
///   state/rho0.gtvf, state/frame_%04d.rho.gtvf, state/frame_%04d.u.gtvf,
///   state/inflow_%04d.gtvf, state/frame_%04d.hull.gtvf, state/meta
struct Checkpoint {
    ReconState state;
    std::vector<ScalarGrid> hulls;
    ScalarGrid inflow_mask;
    LightConfig lights;
    Background background;
    std::string variant;
    std::uint64_t seed = 0;
    int iteration = 0;
    int scale_index = 0;
    std::map<std::string, std::string> extra_meta;

    void save(const std::string& dir) const;
    static Checkpoint load(const std::string& dir);
};

/// Runs the reconstruction pipelines over a scene bundle, writing loss curves
/// and the checkpoint into out_dir.
class Reconstructor {
  public:
    Reconstructor(const SceneBundle& scene, const ReconConfig& cfg, std::string out_dir);

    void run(Variant variant);

    const ReconState& state() const { return st_; }
    const std::vector<ScalarGrid>& base_hulls() const { return base_hulls_; }
    const ScalarGrid& inflow_mask() const { return base_inflow_mask_; }

  private:
    struct ScaleCtx {
        int level_nx = 0;
        GridDims dims;
        Vec3 origin;
        double cell_size = 1.0;
        std::vector<ScalarGrid> hulls;
        ScalarGrid inflow_mask;
        std::vector<Camera> cams;
        std::vector<std::vector<Image>> targets;  // [frame][view]
    };

    GridDims dims_for_level(int level_nx) const;
    ScaleCtx make_scale(int level_nx) const;

    void build_hulls();
    void load_targets();
    void init_disc();

    void single_pass();
    void pre_pass();
    void coupled_pass(bool multi_scale, bool use_disc);
    void global_pass(bool use_disc);

    // one tomography step on a density grid: w_target L_target (+extra_grad),
    // Adam, clip, hull mask; returns the target loss
    double dens_target_step(ScalarGrid& rho, AdamState& adam, const ScaleCtx& ctx, int frame,
                            double lr, double w_target, const ScalarGrid* extra_grad);

    std::vector<Image> render_random_fakes(const std::vector<ScalarGrid>& seq, const ScaleCtx& ctx,
                                           int count, std::vector<Camera>& cams_out,
                                           std::vector<int>& frames_out);
    Camera random_disc_camera(int res);
    ScalarGrid disc_density_grad(const ScalarGrid& rho, const ScaleCtx& ctx,
                                 double* loss_out = nullptr);
    void disc_update(const std::vector<ScalarGrid>& seq, const ScaleCtx& ctx);

    void csv_row(const std::string& pass, int iteration, double target, double warp_dens,
                 double warp_vel, double div, double disc, double total);
    void check_finite(double v, const std::string& term) const;

    void save_checkpoint(Variant variant, int iteration, int scale_index);

    SceneBundle scene_;
    ReconConfig cfg_;
    std::string out_dir_;
    std::vector<ScalarGrid> base_hulls_;
    ScalarGrid base_inflow_mask_;
    std::vector<std::vector<Image>> base_targets_;
    ReconState st_;
    Rng rng_;
    std::ofstream loss_csv_;

    DiscriminatorNet disc_;
    DiscAdamState disc_opt_;
    HistoryBuffer history_;
    std::vector<Image> disc_refs_;
    bool disc_ready_ = false;
};

}  // namespace flowrec
