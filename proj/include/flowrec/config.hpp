#pragma once

#include <string>
#include <vector>

#include "flowrec/discriminator.hpp"
#include "flowrec/losses.hpp"
#include "flowrec/render.hpp"

namespace flowrec {

/// Iteration counts and multi-scale structure. The reference() values are the
/// full-scale settings; built-in defaults are calibrated for desk-size scenes
/// (32^3, ~20 frames).
struct Schedule {
    int pre_first_dens_iters = 250;
    int pre_dens_iters = 60;
    int pre_first_vel_iters = 480;
    int pre_vel_ms_interval = 120;
    int pre_vel_ms_count = 4;
    int pre_later_vel_iters = 60;
    int main_iters = 600;
    int main_ms_interval = 50;
    int main_ms_count = 8;
    double growth = 1.2;

    Fade eta_rho_first{0.6, 0.6, FadeKind::Constant};
    Fade eta_rho_pre{0.6, 0.2, FadeKind::Linear};
    Fade eta_rho_main{0.3, 0.3, FadeKind::Constant};
    Fade eta_u_first{0.008, 0.008, FadeKind::Constant};
    Fade eta_u_pre{0.004, 0.004, FadeKind::Constant};
    Fade eta_u_main{0.004, 0.0032, FadeKind::Exponential};

    static Schedule reference();  // full-scale settings
    void validate() const;
};

/// Strictly increasing resolution ladder ending at `base`, generated by the
/// 1.2x growth rule (coarse entries clamped to 4 cells and deduplicated).
std::vector<int> resolution_ladder(int base, int levels, double growth = 1.2);

struct DiscSettings {
    int input_res = 32;  // also the minimum; smaller render scales clamp up
    int history_capacity = 64;
    double lr = 2e-4;
    double weight_l2 = 2e-3;
    int real_batch = 8;
    int fake_batch = 4;
    int history_batch = 4;
    AugmentParams aug;
    std::string refs_dir;  // reference images; empty = use the scene targets
};

struct ReconConfig {
    LossWeights weights;
    Schedule schedule;
    RenderSettings render;
    DiscSettings disc;
    AdvectionScheme scheme = AdvectionScheme::MacCormackClamped;
    double init_density = 0.1;
    double init_velocity_cells = 0.5;  // random init amplitude, in cells/frame
    double hull_eps = 0.04;
    double hull_blur_px = 1.0;
    double hull_blur_vol = 0.5;
    int inflow_overlap = 4;
    std::uint64_t seed = 1;

    /// Rescales the tabulated loss weights from the reference resolution to
    /// the working scene so gradient magnitudes stay comparable.
    void rescale_weights(const GridDims& volume, int target_w, int target_h);
};

/// Applies `section.key = value`; throws InvalidInput for unknown keys.
void apply_config_entry(ReconConfig& cfg, const std::string& section, const std::string& key,
                        const std::string& value);

/// INI-style file: [weights] / [schedule] / [render] / [disc] sections with
/// key=value lines. Later files/flags override earlier values.
void load_config_file(ReconConfig& cfg, const std::string& path);

/// "section.key=value" override (command-line form).
void apply_config_override(ReconConfig& cfg, const std::string& assignment);

}  // namespace flowrec
