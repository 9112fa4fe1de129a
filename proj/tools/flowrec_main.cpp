#include <CLI11.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "flowrec/config.hpp"
#include "flowrec/metrics.hpp"
#include "flowrec/parallel.hpp"
#include "flowrec/recon.hpp"
#include "flowrec/sim.hpp"

namespace fs = std::filesystem;
using namespace flowrec;

namespace {

struct CommonOpts {
    int threads = 0;
};

void add_threads(CLI::App* cmd, CommonOpts& opts) {
    cmd->add_option("--threads", opts.threads, "Worker thread cap (default: all cores)");
}

void apply_threads(const CommonOpts& opts) {
    if (opts.threads > 0) set_thread_count(opts.threads);
}

Camera holdout_camera(const SceneBundle& scene, double azimuth_deg, int res_w, int res_h) {
    const Camera& ref = scene.cameras.at(0);
    ScalarGrid probe(scene.dims, scene.origin, scene.cell_size);
    const Vec3 center = probe.origin +
                        Vec3(scene.dims.nx - 1, scene.dims.ny - 1, scene.dims.nz - 1) *
                            (0.5 * scene.cell_size);
    const Vec3 rel = ref.position - center;
    const double radius = std::sqrt(rel.x * rel.x + rel.z * rel.z);
    Camera cam = ref;
    cam.position = center + Vec3(radius * std::sin(deg_to_rad(azimuth_deg)), rel.y,
                                 radius * std::cos(deg_to_rad(azimuth_deg)));
    cam.look_at = center;
    cam.up = Vec3(0, 1, 0);
    cam.width = res_w;
    cam.height = res_h;
    return cam;
}

double mean_of(const std::vector<double>& v) {
    if (v.empty()) return 0.0;
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

/// volumetric SSIM: mean 2D SSIM over z slices (skipping slices thinner than
/// the 11x11 window)
double volume_ssim(const ScalarGrid& a, const ScalarGrid& b) {
    if (a.dims != b.dims) throw InvalidInput("volume ssim: shape mismatch");
    if (a.dims.nx < 11 || a.dims.ny < 11) throw InvalidInput("volume ssim: grid too small");
    double total = 0.0;
    int count = 0;
    for (int k = 0; k < a.dims.nz; ++k) {
        Image sa(a.dims.nx, a.dims.ny, 1), sb(a.dims.nx, a.dims.ny, 1);
        for (int j = 0; j < a.dims.ny; ++j)
            for (int i = 0; i < a.dims.nx; ++i) {
                sa.at(i, j) = a.at(i, j, k);
                sb.at(i, j) = b.at(i, j, k);
            }
        total += ssim(sa, sb);
        ++count;
    }
    return total / std::max(1, count);
}

int cmd_synth(int res, int frames, int views, double arc, std::uint64_t seed,
              const std::string& out, int target_res, double radius, double elevation,
              double fov, double buoyancy, double inflow_rate, double noise_amp,
              const std::vector<double>& bg_color) {
    PlumeScenario scenario;
    scenario.dims = {res, res, res};
    scenario.frames = frames;
    scenario.seed = seed;
    if (buoyancy > 0.0) scenario.buoyancy = buoyancy;
    if (inflow_rate > 0.0) scenario.inflow_rate = inflow_rate;
    if (noise_amp >= 0.0) scenario.noise_amp = noise_amp;

    const std::vector<Camera> cams = arc_cameras(Vec3(0, 0, 0), radius, elevation, arc, views,
                                                 fov, target_res, target_res, 0.5, 6.0);
    LightConfig lights;
    lights.ambient = 0.64;
    lights.points.push_back({Vec3(0.25, 1.9, 0.4), 0.85});
    RenderSettings settings;
    Background bg;
    bg.color = bg_color;
    generate_scene(scenario, cams, lights, settings, bg, out);
    std::cout << "scene bundle written to " << out << "\n";
    return 0;
}

int cmd_reconstruct(const std::string& scene_dir, const std::string& out,
                    const std::string& variant, const std::string& config_file,
                    const std::vector<std::string>& overrides, const std::string& refs,
                    std::int64_t seed_flag) {
    const SceneBundle scene = SceneBundle::load(scene_dir);
    ReconConfig cfg;
    if (!config_file.empty()) load_config_file(cfg, config_file);
    for (const std::string& ov : overrides) apply_config_override(cfg, ov);
    if (!refs.empty()) cfg.disc.refs_dir = refs;
    if (seed_flag >= 0) cfg.seed = static_cast<std::uint64_t>(seed_flag);
    // weight tables are calibrated for the reference scale; adapt them to
    // this scene
    const Image probe = scene.load_target(0, 0);
    cfg.rescale_weights(scene.dims, probe.width, probe.height);

    Reconstructor recon(scene, cfg, out);
    recon.run(parse_variant(variant));
    std::cout << "checkpoint written to " << out << "\n";
    return 0;
}

int cmd_render(const std::string& checkpoint_dir, const std::vector<std::string>& camera_files,
               int frame, const std::string& out, const std::string& ppm,
               const std::string& lights_file, const std::vector<double>& bg_color) {
    const Checkpoint cp = Checkpoint::load(checkpoint_dir);
    if (frame < 0 || frame >= cp.state.frames)
        throw InvalidInput("--frame out of range (have " + std::to_string(cp.state.frames) +
                           " frames)");
    LightConfig lights = cp.lights;
    if (!lights_file.empty()) lights = load_lights(lights_file);
    Background bg = cp.background;
    if (!bg_color.empty()) {
        bg = Background();
        bg.color = bg_color;
    }
    RenderSettings settings;
    const ScalarGrid& rho = cp.state.rho.at(static_cast<size_t>(frame));
    int index = 0;
    for (const std::string& cam_file : camera_files) {
        const Camera cam = load_camera(cam_file);
        const Image img = render_view(rho, lights, cam, settings, bg);
        std::string path = out;
        if (camera_files.size() > 1) {
            const auto dot = path.rfind('.');
            path = path.substr(0, dot) + "_" + std::to_string(index) + path.substr(dot);
        }
        save_pfm(path, img);
        if (!ppm.empty()) {
            std::string ppath = ppm;
            if (camera_files.size() > 1) {
                const auto dot = ppath.rfind('.');
                ppath = ppath.substr(0, dot) + "_" + std::to_string(index) + ppath.substr(dot);
            }
            save_ppm(ppath, img);
        }
        ++index;
    }
    std::cout << "rendered " << camera_files.size() << " view(s) of frame " << frame << "\n";
    return 0;
}

int cmd_eval(const std::string& checkpoint_dir, const std::string& scene_dir,
             const std::string& out_csv, int holdout, std::uint64_t holdout_seed) {
    const Checkpoint cp = Checkpoint::load(checkpoint_dir);
    const SceneBundle scene = SceneBundle::load(scene_dir);
    const int F = cp.state.frames;
    if (scene.frames < F) throw InvalidInput("eval: scene has fewer frames than the checkpoint");
    RenderSettings settings;

    std::ofstream csv(out_csv);
    if (!csv) throw IoError("cannot open for writing: " + out_csv);
    csv << "frame,metric,value\n";
    csv.precision(12);

    const bool global_variant = cp.variant == "glob-trans" || cp.variant == "full";
    std::vector<ScalarGrid> seq;
    if (global_variant) {
        seq = rebuild_sequence(cp.state.rho0, cp.state.inflow, cp.state.u, cp.hulls,
                               AdvectionScheme::MacCormackClamped);
    } else {
        seq = cp.state.rho;
    }

    auto emit = [&](int frame, const std::string& metric, double value) {
        if (frame < 0)
            csv << "mean," << metric << "," << value << "\n";
        else
            csv << frame << "," << metric << "," << value << "\n";
    };

    // transport accuracy
    const std::vector<double> terr = transport_error(
        seq, cp.state.u, cp.hulls, &cp.state.inflow, AdvectionScheme::MacCormackClamped);
    for (std::size_t t = 0; t < terr.size(); ++t)
        emit(static_cast<int>(t + 1), "transport_rmse", terr[t]);
    emit(-1, "transport_rmse", mean_of(terr));

    // image fidelity on the training views
    std::vector<double> train_psnr, train_ssim;
    for (int t = 0; t < F; ++t) {
        const ScalarGrid light = light_grid(seq[static_cast<size_t>(t)], cp.lights, settings);
        for (int v = 0; v < scene.views; ++v) {
            const Image target = scene.load_target(t, v);
            Camera cam = scene.cameras[static_cast<size_t>(v)];
            cam.width = target.width;
            cam.height = target.height;
            const RenderResult rr = raymarch(seq[static_cast<size_t>(t)], light, cam, settings);
            const Image img = composite(rr.radiance, rr.transparency, cp.background);
            train_psnr.push_back(psnr(img, target));
            train_ssim.push_back(ssim(img, target));
        }
        emit(t, "train_view_psnr", train_psnr.back());
    }
    emit(-1, "train_view_psnr", mean_of(train_psnr));
    emit(-1, "train_view_ssim", mean_of(train_ssim));

    // volumetric and held-out metrics need ground truth
    if (scene.has_ground_truth()) {
        std::vector<double> rho_rmse, rho_ssim, u_rmse;
        for (int t = 0; t < F; ++t) {
            const ScalarGrid gt = scene.load_density(t);
            ScalarGrid mask = cp.hulls[static_cast<size_t>(t)];
            rho_rmse.push_back(rmse(seq[static_cast<size_t>(t)], gt, &mask));
            rho_ssim.push_back(volume_ssim(seq[static_cast<size_t>(t)], gt));
            const VectorGrid gtu = scene.load_velocity(t);
            u_rmse.push_back(rmse(cp.state.u[static_cast<size_t>(t)], gtu, &mask));
            emit(t, "rho_hull_rmse", rho_rmse.back());
        }
        emit(-1, "rho_hull_rmse", mean_of(rho_rmse));
        emit(-1, "rho_hull_ssim", mean_of(rho_ssim));
        emit(-1, "u_hull_rmse", mean_of(u_rmse));

        // held-out views: reproducible random azimuths
        Rng hrng(holdout_seed);
        std::vector<double> ho_psnr, ho_ssim;
        const Image probe = scene.load_target(0, 0);
        for (int h = 0; h < holdout; ++h) {
            const double az = hrng.uniform(0.0, 360.0);
            const Camera cam = holdout_camera(scene, az, probe.width, probe.height);
            for (int t = 0; t < F; t += std::max(1, F / 5)) {
                const ScalarGrid gt = scene.load_density(t);
                const Image ref = render_view(gt, cp.lights, cam, settings, cp.background);
                const Image img =
                    render_view(seq[static_cast<size_t>(t)], cp.lights, cam, settings,
                                cp.background);
                ho_psnr.push_back(psnr(img, ref));
                ho_ssim.push_back(ssim(img, ref));
            }
        }
        emit(-1, "holdout_psnr", mean_of(ho_psnr));
        emit(-1, "holdout_ssim", mean_of(ho_ssim));

        // warp test: advect the true initial state with the reconstructed
        // velocities, then with the true velocities as the floor
        std::vector<VectorGrid> recon_u(cp.state.u.begin(), cp.state.u.end() - 1);
        std::vector<VectorGrid> gt_u;
        for (int t = 0; t + 1 < F; ++t) gt_u.push_back(scene.load_velocity(t));
        const ScalarGrid init = scene.load_density(0);
        const ScalarGrid gt_final = scene.load_density(F - 1);
        ScalarGrid mask = cp.hulls[static_cast<size_t>(F - 1)];
        const ScalarGrid warped =
            warp_test(init, recon_u, AdvectionScheme::MacCormackClamped);
        const ScalarGrid warped_gt = warp_test(init, gt_u, AdvectionScheme::MacCormackClamped);
        emit(-1, "warp_test_rmse", rmse(warped, gt_final, &mask));
        emit(-1, "warp_test_rmse_gtvel", rmse(warped_gt, gt_final, &mask));
    }
    std::cout << "report written to " << out_csv << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"volumetric smoke transport reconstruction toolkit"};
    app.require_subcommand(1);

    // synth
    auto* synth = app.add_subcommand("synth", "generate a synthetic plume scene bundle");
    int res = 32, frames = 20, views = 5, target_res = 64;
    double arc = 120.0, radius = 2.5, elevation = 12.0, fov = 40.0;
    double buoyancy = -1.0, inflow_rate = -1.0, noise_amp = -1.0;
    std::uint64_t seed = 7;
    std::string synth_out;
    std::vector<double> synth_bg;
    CommonOpts synth_common;
    synth->add_option("--res", res, "cubic grid resolution");
    synth->add_option("--frames", frames, "frame count");
    synth->add_option("--views", views, "number of cameras on the arc");
    synth->add_option("--arc", arc, "camera arc in degrees");
    synth->add_option("--seed", seed, "scenario seed");
    synth->add_option("--target-res", target_res, "target image resolution");
    synth->add_option("--radius", radius, "camera distance");
    synth->add_option("--elevation", elevation, "camera elevation in degrees");
    synth->add_option("--fov", fov, "vertical field of view");
    synth->add_option("--buoyancy", buoyancy, "buoyancy coefficient");
    synth->add_option("--inflow-rate", inflow_rate, "inflow density per frame");
    synth->add_option("--noise", noise_amp, "inflow perturbation amplitude");
    synth->add_option("--bg", synth_bg, "constant background color (1 or 3 values)");
    synth->add_option("--out", synth_out, "output bundle directory")->required();
    add_threads(synth, synth_common);

    // reconstruct
    auto* rec = app.add_subcommand("reconstruct", "run a reconstruction pipeline");
    std::string rec_scene, rec_out, rec_variant = "glob-trans", rec_config, rec_refs;
    std::vector<std::string> rec_sets;
    std::int64_t rec_seed = -1;
    CommonOpts rec_common;
    rec->add_option("--scene", rec_scene, "scene bundle directory")->required();
    rec->add_option("--out", rec_out, "checkpoint output directory")->required();
    rec->add_option("--variant", rec_variant,
                    "single|forward|coupled|coupled-ms|glob-trans|full");
    rec->add_option("--config", rec_config, "INI config file");
    rec->add_option("--set", rec_sets, "override: section.key=value (repeatable)");
    rec->add_option("--refs", rec_refs, "reference image directory for the critic");
    rec->add_option("--seed", rec_seed, "run seed");
    add_threads(rec, rec_common);

    // render
    auto* ren = app.add_subcommand("render", "render checkpoint frames from any camera");
    std::string ren_ckpt, ren_out = "render.pfm", ren_ppm, ren_lights;
    std::vector<std::string> ren_cams;
    std::vector<double> ren_bg;
    int ren_frame = 0;
    CommonOpts ren_common;
    ren->add_option("--checkpoint", ren_ckpt, "checkpoint directory")->required();
    ren->add_option("--camera", ren_cams, "camera calibration file(s)")->required();
    ren->add_option("--frame", ren_frame, "frame index");
    ren->add_option("--out", ren_out, "output PFM path");
    ren->add_option("--ppm", ren_ppm, "optional 8-bit preview path");
    ren->add_option("--lights", ren_lights, "light file override");
    ren->add_option("--bg", ren_bg, "background color override");
    add_threads(ren, ren_common);

    // eval
    auto* ev = app.add_subcommand("eval", "evaluate a checkpoint against a scene bundle");
    std::string ev_ckpt, ev_scene, ev_out = "report.csv";
    int ev_holdout = 8;
    std::uint64_t ev_seed = 17;
    CommonOpts ev_common;
    ev->add_option("--checkpoint", ev_ckpt, "checkpoint directory")->required();
    ev->add_option("--scene", ev_scene, "scene bundle directory")->required();
    ev->add_option("--out", ev_out, "report CSV path");
    ev->add_option("--holdout", ev_holdout, "number of held-out views");
    ev->add_option("--holdout-seed", ev_seed, "seed for held-out view sampling");
    add_threads(ev, ev_common);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (*synth) {
            apply_threads(synth_common);
            return cmd_synth(res, frames, views, arc, seed, synth_out, target_res, radius,
                             elevation, fov, buoyancy, inflow_rate, noise_amp, synth_bg);
        }
        if (*rec) {
            apply_threads(rec_common);
            return cmd_reconstruct(rec_scene, rec_out, rec_variant, rec_config, rec_sets,
                                   rec_refs, rec_seed);
        }
        if (*ren) {
            apply_threads(ren_common);
            return cmd_render(ren_ckpt, ren_cams, ren_frame, ren_out, ren_ppm, ren_lights,
                              ren_bg);
        }
        if (*ev) {
            apply_threads(ev_common);
            return cmd_eval(ev_ckpt, ev_scene, ev_out, ev_holdout, ev_seed);
        }
    } catch (const InvalidInput& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const IoError& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return 2;
    } catch (const NumericalError& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
