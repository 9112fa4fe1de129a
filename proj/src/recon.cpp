#include "flowrec/recon.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <sstream>

#include "flowrec/losses.hpp"
#include "flowrec/metrics.hpp"

namespace fs = std::filesystem;

namespace flowrec {

Variant parse_variant(const std::string& name) {
    if (name == "single") return Variant::Single;
    if (name == "forward") return Variant::Forward;
    if (name == "coupled") return Variant::Coupled;
    if (name == "coupled-ms") return Variant::CoupledMs;
    if (name == "glob-trans") return Variant::GlobTrans;
    if (name == "full") return Variant::Full;
    throw InvalidInput("unknown variant: " + name);
}

std::string variant_name(Variant v) {
    switch (v) {
        case Variant::Single: return "single";
        case Variant::Forward: return "forward";
        case Variant::Coupled: return "coupled";
        case Variant::CoupledMs: return "coupled-ms";
        case Variant::GlobTrans: return "glob-trans";
        case Variant::Full: return "full";
    }
    return "?";
}

ScalarGrid place_inflow(const std::vector<ScalarGrid>& hulls, int overlap_cells) {
    if (hulls.empty()) throw InvalidInput("place_inflow: no hulls");
    const GridDims d = hulls[0].dims;
    ScalarGrid uni = hulls[0];
    for (const ScalarGrid& h : hulls)
        for (std::size_t i = 0; i < uni.data.size(); ++i)
            uni.data[i] = std::max(uni.data[i], h.data[i]);

    int ymin = -1;
    for (int j = 0; j < d.ny && ymin < 0; ++j)
        for (int k = 0; k < d.nz && ymin < 0; ++k)
            for (int i = 0; i < d.nx; ++i)
                if (uni.at(i, j, k) > 0.5) {
                    ymin = j;
                    break;
                }
    if (ymin < 0) throw InvalidInput("place_inflow: hull is empty");

    ScalarGrid mask(d, hulls[0].origin, hulls[0].cell_size);
    const int ymax = std::min(d.ny - 1, ymin + overlap_cells);
    for (int k = 0; k < d.nz; ++k)
        for (int j = ymin; j <= ymax; ++j)
            for (int i = 0; i < d.nx; ++i) {
                // one-cell dilation of the union hull within the slab
                bool near = false;
                for (int dk = -1; dk <= 1 && !near; ++dk)
                    for (int dj = -1; dj <= 1 && !near; ++dj)
                        for (int di = -1; di <= 1 && !near; ++di) {
                            const int ii = i + di, jj = j + dj, kk = k + dk;
                            if (ii < 0 || jj < 0 || kk < 0 || ii >= d.nx || jj >= d.ny ||
                                kk >= d.nz)
                                continue;
                            if (uni.at(ii, jj, kk) > 0.5) near = true;
                        }
                if (near) mask.at(i, j, k) = 1.0;
            }
    return mask;
}

std::vector<ScalarGrid> rebuild_sequence(const ScalarGrid& rho0,
                                         const std::vector<ScalarGrid>& inflow,
                                         const std::vector<VectorGrid>& u,
                                         const std::vector<ScalarGrid>& hulls,
                                         AdvectionScheme scheme) {
    if (hulls.empty()) throw InvalidInput("rebuild_sequence: no hulls");
    const std::size_t frames = hulls.size();
    if (u.size() + 1 < frames) throw InvalidInput("rebuild_sequence: velocity sequence too short");
    std::vector<ScalarGrid> seq;
    seq.reserve(frames);
    ScalarGrid first = rho0;
    for (std::size_t i = 0; i < first.data.size(); ++i)
        first.data[i] *= clamp(hulls[0].data[i], 0.0, 1.0);
    seq.push_back(std::move(first));
    for (std::size_t t = 1; t < frames; ++t) {
        ScalarGrid source = seq[t - 1];
        if (t - 1 < inflow.size())
            for (std::size_t i = 0; i < source.data.size(); ++i)
                source.data[i] += inflow[t - 1].data[i];
        ScalarGrid next = advect(source, u[t - 1], scheme);
        for (std::size_t i = 0; i < next.data.size(); ++i)
            next.data[i] *= clamp(hulls[t].data[i], 0.0, 1.0);
        seq.push_back(std::move(next));
    }
    return seq;
}

// --- checkpoint ----------------------------------------------------------------

namespace {

std::string frame_tag(int t) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%04d", t);
    return buf;
}

std::string num_str(double v) {
    std::ostringstream ss;
    ss.precision(17);
    ss << v;
    return ss.str();
}

}  // namespace

void Checkpoint::save(const std::string& dir) const {
    const fs::path sdir = fs::path(dir) / "state";
    fs::create_directories(sdir);
    save_gtvf((sdir / "rho0.gtvf").string(), state.rho0);
    for (int t = 0; t < state.frames; ++t) {
        save_gtvf((sdir / ("frame_" + frame_tag(t) + ".rho.gtvf")).string(),
                  state.rho[static_cast<size_t>(t)]);
        save_gtvf((sdir / ("frame_" + frame_tag(t) + ".u.gtvf")).string(),
                  state.u[static_cast<size_t>(t)]);
        save_gtvf((sdir / ("inflow_" + frame_tag(t) + ".gtvf")).string(),
                  state.inflow[static_cast<size_t>(t)]);
        save_gtvf((sdir / ("frame_" + frame_tag(t) + ".hull.gtvf")).string(),
                  hulls[static_cast<size_t>(t)]);
    }
    save_gtvf((sdir / "inflow_mask.gtvf").string(), inflow_mask);

    std::vector<std::pair<std::string, std::string>> kv;
    kv.emplace_back("iteration", std::to_string(iteration));
    kv.emplace_back("scale_index", std::to_string(scale_index));
    kv.emplace_back("seed", std::to_string(seed));
    kv.emplace_back("variant", variant);
    kv.emplace_back("frames", std::to_string(state.frames));
    kv.emplace_back("ambient", num_str(lights.ambient));
    kv.emplace_back("n_points", std::to_string(lights.points.size()));
    for (std::size_t p = 0; p < lights.points.size(); ++p)
        kv.emplace_back("point_" + std::to_string(p),
                        num_str(lights.points[p].position.x) + " " +
                            num_str(lights.points[p].position.y) + " " +
                            num_str(lights.points[p].position.z) + " " +
                            num_str(lights.points[p].intensity));
    {
        std::ostringstream bg;
        for (std::size_t i = 0; i < background.color.size(); ++i)
            bg << (i ? " " : "") << num_str(background.color[i]);
        kv.emplace_back("background", bg.str());
    }
    for (const auto& [k, v] : extra_meta) kv.emplace_back(k, v);
    write_kv_file((sdir / "meta").string(), kv);
}

Checkpoint Checkpoint::load(const std::string& dir) {
    const fs::path sdir = fs::path(dir) / "state";
    const auto kv = read_kv_file((sdir / "meta").string());
    auto get = [&](const std::string& key) -> const std::string& {
        const auto it = kv.find(key);
        if (it == kv.end()) throw IoError("checkpoint meta missing key: " + key);
        return it->second;
    };
    Checkpoint cp;
    cp.iteration = std::stoi(get("iteration"));
    cp.scale_index = std::stoi(get("scale_index"));
    cp.seed = std::stoull(get("seed"));
    cp.variant = get("variant");
    cp.state.frames = std::stoi(get("frames"));
    cp.lights.ambient = std::stod(get("ambient"));
    const int n_points = std::stoi(get("n_points"));
    for (int p = 0; p < n_points; ++p) {
        std::istringstream ss(get("point_" + std::to_string(p)));
        PointLight light;
        ss >> light.position.x >> light.position.y >> light.position.z >> light.intensity;
        cp.lights.points.push_back(light);
    }
    if (kv.count("background")) {
        std::istringstream ss(kv.at("background"));
        double v;
        while (ss >> v) cp.background.color.push_back(v);
    }
    cp.state.rho0 = load_gtvf_scalar((sdir / "rho0.gtvf").string());
    for (int t = 0; t < cp.state.frames; ++t) {
        cp.state.rho.push_back(
            load_gtvf_scalar((sdir / ("frame_" + frame_tag(t) + ".rho.gtvf")).string()));
        cp.state.u.push_back(
            load_gtvf_vector((sdir / ("frame_" + frame_tag(t) + ".u.gtvf")).string()));
        cp.state.inflow.push_back(
            load_gtvf_scalar((sdir / ("inflow_" + frame_tag(t) + ".gtvf")).string()));
        cp.hulls.push_back(
            load_gtvf_scalar((sdir / ("frame_" + frame_tag(t) + ".hull.gtvf")).string()));
    }
    cp.inflow_mask = load_gtvf_scalar((sdir / "inflow_mask.gtvf").string());
    for (const auto& [k, v] : kv) cp.extra_meta[k] = v;
    return cp;
}

// --- reconstructor ----------------------------------------------------------

Reconstructor::Reconstructor(const SceneBundle& scene, const ReconConfig& cfg,
                             std::string out_dir)
    : scene_(scene), cfg_(cfg), out_dir_(std::move(out_dir)), rng_(cfg.seed) {
    fs::create_directories(out_dir_);
    cfg_.weights.validate();
    cfg_.schedule.validate();
    cfg_.render.validate();
    loss_csv_.open((fs::path(out_dir_) / "loss.csv").string());
    if (!loss_csv_) throw IoError("cannot open loss.csv in " + out_dir_);
    loss_csv_ << "pass,iteration,target,warp_dens,warp_vel,div,disc,total\n";
    loss_csv_.precision(12);
}

GridDims Reconstructor::dims_for_level(int level_nx) const {
    const double r = static_cast<double>(level_nx) / scene_.dims.nx;
    auto scaled = [&](int n) {
        return std::max(4, static_cast<int>(std::lround(n * r)));
    };
    return {level_nx, scaled(scene_.dims.ny), scaled(scene_.dims.nz)};
}

Reconstructor::ScaleCtx Reconstructor::make_scale(int level_nx) const {
    ScaleCtx ctx;
    ctx.level_nx = level_nx;
    ctx.dims = dims_for_level(level_nx);
    ScalarGrid probe(scene_.dims, scene_.origin, scene_.cell_size);
    const ScalarGrid scaled = resample(probe, ctx.dims);
    ctx.origin = scaled.origin;
    ctx.cell_size = scaled.cell_size;
    for (const ScalarGrid& h : base_hulls_) ctx.hulls.push_back(resample(h, ctx.dims));
    ctx.inflow_mask = resample(base_inflow_mask_, ctx.dims);
    for (double& v : ctx.inflow_mask.data) v = v > 0.25 ? 1.0 : 0.0;

    const double ir = static_cast<double>(level_nx) / scene_.dims.nx;
    for (const Camera& cam : scene_.cameras) {
        Camera scaled_cam = cam;
        scaled_cam.width = std::max(8, static_cast<int>(std::lround(cam.width * ir)));
        scaled_cam.height = std::max(8, static_cast<int>(std::lround(cam.height * ir)));
        ctx.cams.push_back(scaled_cam);
    }
    ctx.targets.resize(base_targets_.size());
    for (std::size_t t = 0; t < base_targets_.size(); ++t)
        for (std::size_t v = 0; v < base_targets_[t].size(); ++v)
            ctx.targets[t].push_back(
                base_targets_[t][v].resized(ctx.cams[v].width, ctx.cams[v].height));
    return ctx;
}

void Reconstructor::build_hulls() {
    base_hulls_.clear();
    const GridFrame frame{scene_.dims, scene_.origin, scene_.cell_size};
    for (int t = 0; t < scene_.frames; ++t) {
        std::vector<ViewMask> masks;
        for (int v = 0; v < scene_.views; ++v) {
            // hulls key off the raw targets; with a non-black background the
            // background is subtracted first
            Image img = base_targets_[static_cast<size_t>(t)][static_cast<size_t>(v)].to_gray();
            if (!scene_.background.color.empty()) {
                double bg = 0.0;
                for (double c : scene_.background.color) bg += c;
                bg /= static_cast<double>(scene_.background.color.size());
                for (double& px : img.data) px = std::max(0.0, px - bg);
            }
            masks.push_back(binarize(img, scene_.cameras[static_cast<size_t>(v)], cfg_.hull_eps,
                                     cfg_.hull_blur_px));
        }
        if (scene_.views == 1) {
            base_hulls_.push_back(
                single_view_hull(masks[0], frame, cfg_.hull_blur_vol));
        } else {
            base_hulls_.push_back(carve(masks, frame, cfg_.hull_blur_vol));
        }
    }
    base_inflow_mask_ = place_inflow(base_hulls_, cfg_.inflow_overlap);
}

void Reconstructor::load_targets() {
    base_targets_.assign(static_cast<size_t>(scene_.frames), {});
    for (int t = 0; t < scene_.frames; ++t)
        for (int v = 0; v < scene_.views; ++v)
            base_targets_[static_cast<size_t>(t)].push_back(scene_.load_target(t, v));
}

void Reconstructor::init_disc() {
    Rng init_rng = rng_.fork(91);
    disc_ = DiscriminatorNet(DiscriminatorNet::default_arch(), 3, init_rng);
    disc_opt_ = DiscAdamState::for_net(disc_);
    disc_opt_.lr = cfg_.disc.lr;
    disc_opt_.weight_l2 = cfg_.disc.weight_l2;
    history_ = HistoryBuffer(static_cast<size_t>(cfg_.disc.history_capacity));

    disc_refs_.clear();
    if (!cfg_.disc.refs_dir.empty()) {
        std::vector<std::string> files;
        for (const auto& entry : fs::directory_iterator(cfg_.disc.refs_dir))
            if (entry.path().extension() == ".pfm") files.push_back(entry.path().string());
        std::sort(files.begin(), files.end());
        for (const auto& f : files) disc_refs_.push_back(load_pfm(f));
    }
    // the input views count as references as well
    for (const auto& frame_targets : base_targets_)
        for (const Image& img : frame_targets) disc_refs_.push_back(img);
    if (disc_refs_.empty()) throw InvalidInput("discriminator: no reference images");
    disc_ready_ = true;
}

void Reconstructor::check_finite(double v, const std::string& term) const {
    if (!std::isfinite(v))
        throw NumericalError("non-finite value in " + term + "; aborting");
}

void Reconstructor::csv_row(const std::string& pass, int iteration, double target,
                            double warp_dens, double warp_vel, double div, double disc,
                            double total) {
    loss_csv_ << pass << "," << iteration << "," << target << "," << warp_dens << ","
              << warp_vel << "," << div << "," << disc << "," << total << "\n";
    check_finite(total, pass + " total loss");
}

namespace {

void clip_and_mask(ScalarGrid& rho, const ScalarGrid& hull) {
    for (std::size_t i = 0; i < rho.data.size(); ++i) {
        const double v = rho.data[i] < 0.0 ? 0.0 : rho.data[i];
        rho.data[i] = v * clamp(hull.data[i], 0.0, 1.0);
    }
}

void axpy(std::vector<double>& y, double a, const std::vector<double>& x) {
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += a * x[i];
}

ScalarGrid downsample_to(const ScalarGrid& g, const GridDims& dims) {
    return g.dims == dims ? g : resample(g, dims);
}

}  // namespace

double Reconstructor::dens_target_step(ScalarGrid& rho, AdamState& adam, const ScaleCtx& ctx,
                                       int frame, double lr, double w_target,
                                       const ScalarGrid* extra_grad) {
    const TargetLossResult res =
        target_loss(rho, scene_.lights, ctx.cams, ctx.targets[static_cast<size_t>(frame)],
                    cfg_.render, scene_.background);
    std::vector<double> grad(rho.data.size(), 0.0);
    axpy(grad, w_target, res.grad_rho.data);
    if (extra_grad) axpy(grad, 1.0, extra_grad->data);
    adam.update(rho.data, grad, lr);
    clip_and_mask(rho, ctx.hulls[static_cast<size_t>(frame)]);
    return res.loss;
}

void Reconstructor::single_pass() {
    const ScaleCtx ctx = make_scale(scene_.dims.nx);
    st_.frames = scene_.frames;
    st_.rho.assign(static_cast<size_t>(scene_.frames), ScalarGrid());
    st_.u.assign(static_cast<size_t>(scene_.frames),
                 VectorGrid(ctx.dims, ctx.origin, ctx.cell_size));
    st_.inflow.assign(static_cast<size_t>(scene_.frames),
                      ScalarGrid(ctx.dims, ctx.origin, ctx.cell_size));
    int iter = 0;
    for (int t = 0; t < scene_.frames; ++t) {
        ScalarGrid rho = ctx.hulls[static_cast<size_t>(t)];
        for (double& v : rho.data) v *= cfg_.init_density;
        AdamState adam;
        for (int i = 0; i < cfg_.schedule.pre_first_dens_iters; ++i) {
            const double frac =
                cfg_.schedule.pre_first_dens_iters > 1
                    ? static_cast<double>(i) / (cfg_.schedule.pre_first_dens_iters - 1)
                    : 0.0;
            const double loss = dens_target_step(rho, adam, ctx, t,
                                                 cfg_.schedule.eta_rho_first.at(frac),
                                                 cfg_.weights.w_target, nullptr);
            csv_row("single", iter++, loss, 0, 0, 0, 0, cfg_.weights.w_target * loss);
        }
        st_.rho[static_cast<size_t>(t)] = std::move(rho);
    }
    st_.rho0 = st_.rho[0];
}

void Reconstructor::pre_pass() {
    const ScaleCtx ctx = make_scale(scene_.dims.nx);
    const int F = scene_.frames;
    st_.frames = F;
    st_.rho.assign(static_cast<size_t>(F), ScalarGrid());
    st_.u.clear();
    st_.inflow.assign(static_cast<size_t>(F), ScalarGrid(ctx.dims, ctx.origin, ctx.cell_size));

    int iter = 0;
    // frame 0 and 1 tomography
    st_.rho[0] = ctx.hulls[0];
    for (double& v : st_.rho[0].data) v *= cfg_.init_density;
    AdamState adam0;
    for (int i = 0; i < cfg_.schedule.pre_first_dens_iters; ++i) {
        const double frac = cfg_.schedule.pre_first_dens_iters > 1
                                ? static_cast<double>(i) / (cfg_.schedule.pre_first_dens_iters - 1)
                                : 0.0;
        const double loss = dens_target_step(st_.rho[0], adam0, ctx, 0,
                                             cfg_.schedule.eta_rho_first.at(frac),
                                             cfg_.weights.w_target, nullptr);
        csv_row("pre", iter++, loss, 0, 0, 0, 0, cfg_.weights.w_target * loss);
    }
    st_.rho[1] = st_.rho[0];
    AdamState adam1;
    for (int i = 0; i < cfg_.schedule.pre_first_dens_iters; ++i) {
        const double frac = cfg_.schedule.pre_first_dens_iters > 1
                                ? static_cast<double>(i) / (cfg_.schedule.pre_first_dens_iters - 1)
                                : 0.0;
        const double loss = dens_target_step(st_.rho[1], adam1, ctx, 1,
                                             cfg_.schedule.eta_rho_first.at(frac),
                                             cfg_.weights.w_target, nullptr);
        csv_row("pre", iter++, loss, 0, 0, 0, 0, cfg_.weights.w_target * loss);
    }

    // first-frame velocity on the coarse ladder
    const auto main_ladder = resolution_ladder(scene_.dims.nx, cfg_.schedule.main_ms_count + 1,
                                               cfg_.schedule.growth);
    const auto pre_ladder =
        resolution_ladder(main_ladder.front(), cfg_.schedule.pre_vel_ms_count + 1,
                          cfg_.schedule.growth);
    {
        const GridDims d0 = dims_for_level(pre_ladder.front());
        ScalarGrid hull1 = resample(ctx.hulls[1], d0);
        VectorGrid u0(hull1.dims, hull1.origin, hull1.cell_size);
        Rng vel_rng = rng_.fork(11);
        const double amp = cfg_.init_velocity_cells * scene_.cell_size;
        for (std::int64_t c = 0; c < d0.cells(); ++c) {
            const double h = clamp(hull1.data[static_cast<size_t>(c)], 0.0, 1.0);
            for (int comp = 0; comp < 3; ++comp)
                u0.data[static_cast<size_t>(3 * c + comp)] = h * vel_rng.uniform(-amp, amp);
        }
        AdamState au;
        int scale_idx = 0;
        for (int i = 0; i < cfg_.schedule.pre_first_vel_iters; ++i) {
            const int want = std::min(static_cast<int>(pre_ladder.size()) - 1,
                                      cfg_.schedule.pre_vel_ms_interval > 0
                                          ? i / cfg_.schedule.pre_vel_ms_interval
                                          : 0);
            if (want != scale_idx) {
                scale_idx = want;
                u0 = resample(u0, dims_for_level(pre_ladder[static_cast<size_t>(scale_idx)]));
                au = AdamState();
            }
            const ScalarGrid r0 = downsample_to(st_.rho[0], u0.dims);
            const ScalarGrid r1 = downsample_to(st_.rho[1], u0.dims);
            const WarpLossResult warp = warp_loss(&r0, r1, nullptr, &u0, nullptr, cfg_.scheme);
            const DivLossResult div = div_loss(u0);
            std::vector<double> grad(u0.data.size(), 0.0);
            axpy(grad, cfg_.weights.w_warp_dens_vel, warp.g_u_prev.data);
            axpy(grad, cfg_.weights.w_div.start, div.grad_u.data);
            const double frac = cfg_.schedule.pre_first_vel_iters > 1
                                    ? static_cast<double>(i) /
                                          (cfg_.schedule.pre_first_vel_iters - 1)
                                    : 0.0;
            au.update(u0.data, grad, cfg_.schedule.eta_u_first.at(frac));
            const double total = cfg_.weights.w_warp_dens_vel * warp.loss +
                                 cfg_.weights.w_div.start * div.loss;
            csv_row("pre", iter++, 0, warp.loss, 0, div.loss, 0, total);
        }
        st_.u.assign(static_cast<size_t>(F), u0);
    }

    // remaining frames: transported init, then refine
    for (int t = 1; t < F - 1; ++t) {
        st_.u[static_cast<size_t>(t)] =
            advect_vector(st_.u[static_cast<size_t>(t - 1)], st_.u[static_cast<size_t>(t - 1)],
                          cfg_.scheme);
        const VectorGrid u_base = resample(st_.u[static_cast<size_t>(t)], ctx.dims);
        st_.rho[static_cast<size_t>(t + 1)] =
            advect(st_.rho[static_cast<size_t>(t)], u_base, cfg_.scheme);
        clip_and_mask(st_.rho[static_cast<size_t>(t + 1)], ctx.hulls[static_cast<size_t>(t + 1)]);

        AdamState ar;
        for (int i = 0; i < cfg_.schedule.pre_dens_iters; ++i) {
            const double frac = cfg_.schedule.pre_dens_iters > 1
                                    ? static_cast<double>(i) / (cfg_.schedule.pre_dens_iters - 1)
                                    : 0.0;
            const double loss = dens_target_step(st_.rho[static_cast<size_t>(t + 1)], ar, ctx,
                                                 t + 1, cfg_.schedule.eta_rho_pre.at(frac),
                                                 cfg_.weights.w_target, nullptr);
            csv_row("pre", iter++, loss, 0, 0, 0, 0, cfg_.weights.w_target * loss);
        }

        AdamState au;
        VectorGrid& ut = st_.u[static_cast<size_t>(t)];
        for (int i = 0; i < cfg_.schedule.pre_later_vel_iters; ++i) {
            const ScalarGrid r_from = downsample_to(st_.rho[static_cast<size_t>(t)], ut.dims);
            const ScalarGrid r_to = downsample_to(st_.rho[static_cast<size_t>(t + 1)], ut.dims);
            const WarpLossResult warp =
                warp_loss(&r_from, r_to, nullptr, &ut, nullptr, cfg_.scheme);
            const DivLossResult div = div_loss(ut);
            std::vector<double> grad(ut.data.size(), 0.0);
            axpy(grad, cfg_.weights.w_warp_dens_vel, warp.g_u_prev.data);
            axpy(grad, cfg_.weights.w_div.start, div.grad_u.data);
            const double frac = cfg_.schedule.pre_later_vel_iters > 1
                                    ? static_cast<double>(i) /
                                          (cfg_.schedule.pre_later_vel_iters - 1)
                                    : 0.0;
            au.update(ut.data, grad, cfg_.schedule.eta_u_pre.at(frac));
            const double total = cfg_.weights.w_warp_dens_vel * warp.loss +
                                 cfg_.weights.w_div.start * div.loss;
            csv_row("pre", iter++, 0, warp.loss, 0, div.loss, 0, total);
        }
    }
    if (F >= 2)
        st_.u[static_cast<size_t>(F - 1)] =
            advect_vector(st_.u[static_cast<size_t>(F - 2)], st_.u[static_cast<size_t>(F - 2)],
                          cfg_.scheme);
    st_.rho0 = st_.rho[0];
}

void Reconstructor::coupled_pass(bool multi_scale, bool use_disc) {
    const int F = scene_.frames;
    std::vector<int> ladder;
    if (multi_scale)
        ladder = resolution_ladder(scene_.dims.nx, cfg_.schedule.main_ms_count + 1,
                                   cfg_.schedule.growth);
    else
        ladder = {scene_.dims.nx};

    ScaleCtx ctx = make_scale(ladder.front());
    for (int t = 0; t < F; ++t) {
        st_.rho[static_cast<size_t>(t)] = resample(st_.rho[static_cast<size_t>(t)], ctx.dims);
        clip_and_mask(st_.rho[static_cast<size_t>(t)], ctx.hulls[static_cast<size_t>(t)]);
        st_.u[static_cast<size_t>(t)] = resample(st_.u[static_cast<size_t>(t)], ctx.dims);
        st_.inflow[static_cast<size_t>(t)] = ScalarGrid(ctx.dims, ctx.origin, ctx.cell_size);
    }
    std::vector<AdamState> ar(static_cast<size_t>(F)), au(static_cast<size_t>(F));

    int scale_idx = 0;
    for (int i = 0; i < cfg_.schedule.main_iters; ++i) {
        if (multi_scale) {
            const int want = std::min(static_cast<int>(ladder.size()) - 1,
                                      cfg_.schedule.main_ms_interval > 0
                                          ? i / cfg_.schedule.main_ms_interval
                                          : 0);
            if (want != scale_idx) {
                scale_idx = want;
                ctx = make_scale(ladder[static_cast<size_t>(scale_idx)]);
                for (int t = 0; t < F; ++t) {
                    st_.rho[static_cast<size_t>(t)] =
                        resample(st_.rho[static_cast<size_t>(t)], ctx.dims);
                    clip_and_mask(st_.rho[static_cast<size_t>(t)],
                                  ctx.hulls[static_cast<size_t>(t)]);
                    st_.u[static_cast<size_t>(t)] =
                        resample(st_.u[static_cast<size_t>(t)], ctx.dims);
                    st_.inflow[static_cast<size_t>(t)] =
                        ScalarGrid(ctx.dims, ctx.origin, ctx.cell_size);
                    ar[static_cast<size_t>(t)] = AdamState();
                    au[static_cast<size_t>(t)] = AdamState();
                }
            }
        }
        const double frac =
            cfg_.schedule.main_iters > 1
                ? static_cast<double>(i) / (cfg_.schedule.main_iters - 1)
                : 0.0;
        const double w_wd = cfg_.weights.w_warp_dens.at(frac);
        const double w_wv = cfg_.weights.w_warp_vel.at(frac);
        const double w_dv = cfg_.weights.w_div.at(frac);

        double sum_target = 0, sum_wd = 0, sum_wv = 0, sum_div = 0, sum_disc = 0;
        for (int t = 0; t < F; ++t) {
            ScalarGrid& rho_t = st_.rho[static_cast<size_t>(t)];
            // density step
            const ScalarGrid* prev = t > 0 ? &st_.rho[static_cast<size_t>(t - 1)] : nullptr;
            const ScalarGrid* next = t < F - 1 ? &st_.rho[static_cast<size_t>(t + 1)] : nullptr;
            const VectorGrid* u_prev = t > 0 ? &st_.u[static_cast<size_t>(t - 1)] : nullptr;
            const VectorGrid* u_cur = t < F - 1 ? &st_.u[static_cast<size_t>(t)] : nullptr;
            WarpLossResult warp = warp_loss(prev, rho_t, next, u_prev, u_cur, cfg_.scheme);
            ScalarGrid extra(ctx.dims, ctx.origin, ctx.cell_size);
            axpy(extra.data, w_wd, warp.g_cur.data);
            if (use_disc && disc_ready_) {
                double dl = 0.0;
                const ScalarGrid dg = disc_density_grad(rho_t, ctx, &dl);
                axpy(extra.data, cfg_.weights.w_disc, dg.data);
                sum_disc += dl;
            }
            const double t_loss = dens_target_step(rho_t, ar[static_cast<size_t>(t)], ctx, t,
                                                   cfg_.schedule.eta_rho_main.at(frac),
                                                   cfg_.weights.w_target, &extra);
            sum_target += t_loss;

            // velocity step
            VectorGrid& u_t = st_.u[static_cast<size_t>(t)];
            std::vector<double> gu(u_t.data.size(), 0.0);
            if (t < F - 1) {
                // count each transport pair (t -> t+1) once
                const WarpLossResult wnext = warp_loss(
                    nullptr, rho_t, &st_.rho[static_cast<size_t>(t + 1)], nullptr, &u_t,
                    cfg_.scheme);
                axpy(gu, cfg_.weights.w_warp_dens_vel, wnext.g_u_cur.data);
                sum_wd += wnext.loss;
            }
            const VectorGrid* up = t > 0 ? &st_.u[static_cast<size_t>(t - 1)] : nullptr;
            const VectorGrid* un = t < F - 1 ? &st_.u[static_cast<size_t>(t + 1)] : nullptr;
            const WarpLossVecResult wvec = warp_loss_vector(up, u_t, un, cfg_.scheme);
            axpy(gu, w_wv, wvec.g_cur.data);
            const DivLossResult div = div_loss(u_t);
            axpy(gu, w_dv, div.grad_u.data);
            au[static_cast<size_t>(t)].update(u_t.data, gu, cfg_.schedule.eta_u_main.at(frac));
            sum_wv += wvec.loss;
            sum_div += div.loss;
        }
        if (use_disc && disc_ready_) disc_update(st_.rho, ctx);
        const double total = cfg_.weights.w_target * sum_target + w_wd * sum_wd + w_wv * sum_wv +
                             w_dv * sum_div + cfg_.weights.w_disc * sum_disc;
        csv_row(multi_scale ? "coupled-ms" : "coupled", i, sum_target, sum_wd, sum_wv, sum_div,
                sum_disc, total);
    }
    // leave the state at base resolution
    if (st_.rho[0].dims != scene_.dims) {
        const ScaleCtx base = make_scale(scene_.dims.nx);
        for (int t = 0; t < F; ++t) {
            st_.rho[static_cast<size_t>(t)] = resample(st_.rho[static_cast<size_t>(t)], base.dims);
            clip_and_mask(st_.rho[static_cast<size_t>(t)], base.hulls[static_cast<size_t>(t)]);
            st_.u[static_cast<size_t>(t)] = resample(st_.u[static_cast<size_t>(t)], base.dims);
            st_.inflow[static_cast<size_t>(t)] = ScalarGrid(base.dims, base.origin, base.cell_size);
        }
    }
    st_.rho0 = st_.rho[0];
}

void Reconstructor::global_pass(bool use_disc) {
    const int F = scene_.frames;
    const auto ladder = resolution_ladder(scene_.dims.nx, cfg_.schedule.main_ms_count + 1,
                                          cfg_.schedule.growth);
    ScaleCtx ctx = make_scale(ladder.front());

    // unknowns: rho0, inflow[t], u[t]; the per-frame sequence is derived
    st_.rho0 = resample(st_.rho[0], ctx.dims);
    clip_and_mask(st_.rho0, ctx.hulls[0]);
    for (int t = 0; t < F; ++t) {
        st_.u[static_cast<size_t>(t)] = resample(st_.u[static_cast<size_t>(t)], ctx.dims);
        st_.inflow[static_cast<size_t>(t)] = ScalarGrid(ctx.dims, ctx.origin, ctx.cell_size);
    }
    AdamState a_rho0;
    std::vector<AdamState> au(static_cast<size_t>(F)), ai(static_cast<size_t>(F));

    int scale_idx = 0;
    for (int i = 0; i < cfg_.schedule.main_iters; ++i) {
        const int want = std::min(static_cast<int>(ladder.size()) - 1,
                                  cfg_.schedule.main_ms_interval > 0
                                      ? i / cfg_.schedule.main_ms_interval
                                      : 0);
        if (want != scale_idx) {
            scale_idx = want;
            ctx = make_scale(ladder[static_cast<size_t>(scale_idx)]);
            st_.rho0 = resample(st_.rho0, ctx.dims);
            clip_and_mask(st_.rho0, ctx.hulls[0]);
            for (int t = 0; t < F; ++t) {
                st_.u[static_cast<size_t>(t)] = resample(st_.u[static_cast<size_t>(t)], ctx.dims);
                st_.inflow[static_cast<size_t>(t)] =
                    resample(st_.inflow[static_cast<size_t>(t)], ctx.dims);
                for (std::size_t c = 0; c < st_.inflow[static_cast<size_t>(t)].data.size(); ++c)
                    st_.inflow[static_cast<size_t>(t)].data[c] *=
                        ctx.inflow_mask.data[c];
                au[static_cast<size_t>(t)] = AdamState();
                ai[static_cast<size_t>(t)] = AdamState();
            }
            a_rho0 = AdamState();
        }
        const double frac =
            cfg_.schedule.main_iters > 1
                ? static_cast<double>(i) / (cfg_.schedule.main_iters - 1)
                : 0.0;
        const double w_wd = cfg_.weights.w_warp_dens.at(frac);
        const double w_wv = cfg_.weights.w_warp_vel.at(frac);
        const double w_dv = cfg_.weights.w_div.at(frac);
        const double beta = cfg_.weights.beta_ema;

        // (1) rebuild the sequence from the unknowns, keeping the raw
        // advections for the transport-loss residuals
        std::vector<ScalarGrid> raw_adv(static_cast<size_t>(std::max(0, F - 1)));
        {
            st_.rho.assign(static_cast<size_t>(F), ScalarGrid());
            st_.rho[0] = st_.rho0;
            clip_and_mask(st_.rho[0], ctx.hulls[0]);
            for (int t = 1; t < F; ++t) {
                ScalarGrid source = st_.rho[static_cast<size_t>(t - 1)];
                for (std::size_t c = 0; c < source.data.size(); ++c)
                    source.data[c] += st_.inflow[static_cast<size_t>(t - 1)].data[c];
                raw_adv[static_cast<size_t>(t - 1)] =
                    advect(source, st_.u[static_cast<size_t>(t - 1)], cfg_.scheme);
                st_.rho[static_cast<size_t>(t)] = raw_adv[static_cast<size_t>(t - 1)];
                for (std::size_t c = 0; c < st_.rho[static_cast<size_t>(t)].data.size(); ++c)
                    st_.rho[static_cast<size_t>(t)].data[c] *=
                        clamp(ctx.hulls[static_cast<size_t>(t)].data[c], 0.0, 1.0);
            }
        }

        // (2) backward sweep with EMA gradient accumulation
        ScalarGrid grad_a_next(ctx.dims, ctx.origin, ctx.cell_size);  // nabla rho^{t+1}_A
        double sum_target = 0, sum_wd = 0, sum_wv = 0, sum_div = 0, sum_disc = 0;
        for (int t = F - 1; t >= 0; --t) {
            ScalarGrid& rho_t = st_.rho[static_cast<size_t>(t)];
            // per-frame density gradient: target + transport + critic terms
            const TargetLossResult tl =
                target_loss(rho_t, scene_.lights, ctx.cams,
                            ctx.targets[static_cast<size_t>(t)], cfg_.render, scene_.background);
            sum_target += tl.loss;
            ScalarGrid grad_rho_t(ctx.dims, ctx.origin, ctx.cell_size);
            axpy(grad_rho_t.data, cfg_.weights.w_target, tl.grad_rho.data);
            if (use_disc && disc_ready_) {
                double dl = 0.0;
                const ScalarGrid dg = disc_density_grad(rho_t, ctx, &dl);
                axpy(grad_rho_t.data, cfg_.weights.w_disc, dg.data);
                sum_disc += dl;
            }
            // backward-looking warp term: d|A(...)-rho_t|^2/d rho_t = -2 r
            if (t > 0) {
                for (std::size_t c = 0; c < grad_rho_t.data.size(); ++c) {
                    const double r = raw_adv[static_cast<size_t>(t - 1)].data[c] - rho_t.data[c];
                    grad_rho_t.data[c] -= w_wd * 2.0 * r;
                }
            }

            std::vector<double> gu(st_.u[static_cast<size_t>(t)].data.size(), 0.0);
            ScalarGrid chain(ctx.dims, ctx.origin, ctx.cell_size);
            if (t < F - 1) {
                ScalarGrid source_t = rho_t;
                for (std::size_t c = 0; c < source_t.data.size(); ++c)
                    source_t.data[c] += st_.inflow[static_cast<size_t>(t)].data[c];

                // forward-looking warp term through the advection
                ScalarGrid r2(ctx.dims, ctx.origin, ctx.cell_size);
                double wl = 0.0;
                for (std::size_t c = 0; c < r2.data.size(); ++c) {
                    const double r = raw_adv[static_cast<size_t>(t)].data[c] -
                                     st_.rho[static_cast<size_t>(t + 1)].data[c];
                    wl += r * r;
                    r2.data[c] = 2.0 * r;
                }
                sum_wd += wl;
                const ScalarGrid warp_vjp =
                    advect_vjp_s(source_t, st_.u[static_cast<size_t>(t)], r2, cfg_.scheme);
                axpy(grad_rho_t.data, w_wd, warp_vjp.data);
                const VectorGrid warp_vjp_u =
                    advect_vjp_u(source_t, st_.u[static_cast<size_t>(t)], r2, cfg_.scheme);
                axpy(gu, cfg_.weights.w_warp_dens_vel, warp_vjp_u.data);

                // chain through the advection that produced frame t+1
                ScalarGrid masked_next = grad_a_next;
                for (std::size_t c = 0; c < masked_next.data.size(); ++c)
                    masked_next.data[c] *=
                        clamp(ctx.hulls[static_cast<size_t>(t + 1)].data[c], 0.0, 1.0);
                chain = advect_vjp_s(source_t, st_.u[static_cast<size_t>(t)], masked_next,
                                     cfg_.scheme);
                const VectorGrid chain_u = advect_vjp_u(
                    source_t, st_.u[static_cast<size_t>(t)], masked_next, cfg_.scheme);
                axpy(gu, cfg_.weights.lambda_u_a, chain_u.data);

                // inflow: the chained plus forward warp gradients, masked
                std::vector<double> gi(st_.inflow[static_cast<size_t>(t)].data.size(), 0.0);
                axpy(gi, w_wd, warp_vjp.data);
                axpy(gi, cfg_.weights.lambda_rho_a, chain.data);
                for (std::size_t c = 0; c < gi.size(); ++c) gi[c] *= ctx.inflow_mask.data[c];
                ai[static_cast<size_t>(t)].update(st_.inflow[static_cast<size_t>(t)].data, gi,
                                                  cfg_.schedule.eta_rho_main.at(frac));
                for (std::size_t c = 0; c < gi.size(); ++c)
                    st_.inflow[static_cast<size_t>(t)].data[c] *= ctx.inflow_mask.data[c];
            }

            // velocity coherence and divergence apply to every frame
            {
                const VectorGrid* up = t > 0 ? &st_.u[static_cast<size_t>(t - 1)] : nullptr;
                const VectorGrid* un = t < F - 1 ? &st_.u[static_cast<size_t>(t + 1)] : nullptr;
                const WarpLossVecResult wvec =
                    warp_loss_vector(up, st_.u[static_cast<size_t>(t)], un, cfg_.scheme);
                axpy(gu, w_wv, wvec.g_cur.data);
                sum_wv += wvec.loss;
                const DivLossResult div = div_loss(st_.u[static_cast<size_t>(t)]);
                axpy(gu, w_dv, div.grad_u.data);
                sum_div += div.loss;
                au[static_cast<size_t>(t)].update(st_.u[static_cast<size_t>(t)].data, gu,
                                                  cfg_.schedule.eta_u_main.at(frac));
            }

            if (t == 0) {
                std::vector<double> g0(st_.rho0.data.size(), 0.0);
                axpy(g0, 1.0, grad_rho_t.data);
                axpy(g0, cfg_.weights.lambda_rho_a, chain.data);
                a_rho0.update(st_.rho0.data, g0, cfg_.schedule.eta_rho_main.at(frac));
                for (double& v : st_.rho0.data) v = std::max(0.0, v);
            }
            // EMA accumulation feeding the next (earlier) frame
            for (std::size_t c = 0; c < grad_a_next.data.size(); ++c)
                grad_a_next.data[c] = beta * chain.data[c] + (1.0 - beta) * grad_rho_t.data[c];
        }

        // (3) constraints: non-negative composition inside the inflow mask
        for (int t = 0; t < F - 1; ++t) {
            ScalarGrid& inf = st_.inflow[static_cast<size_t>(t)];
            for (std::size_t c = 0; c < inf.data.size(); ++c) {
                if (ctx.inflow_mask.data[c] == 0.0) {
                    inf.data[c] = 0.0;
                } else if (inf.data[c] < -st_.rho[static_cast<size_t>(t)].data[c]) {
                    inf.data[c] = -st_.rho[static_cast<size_t>(t)].data[c];
                }
            }
        }

        if (use_disc && disc_ready_) disc_update(st_.rho, ctx);
        const double total = cfg_.weights.w_target * sum_target + w_wd * sum_wd +
                             w_wv * sum_wv + w_dv * sum_div + cfg_.weights.w_disc * sum_disc;
        csv_row(use_disc ? "full" : "glob-trans", i, sum_target, sum_wd, sum_wv, sum_div,
                sum_disc, total);
    }

    // final rebuild at the last working scale, then bring to base resolution
    if (st_.rho0.dims != scene_.dims) {
        const ScaleCtx base = make_scale(scene_.dims.nx);
        st_.rho0 = resample(st_.rho0, base.dims);
        for (double& v : st_.rho0.data) v = std::max(0.0, v);
        for (int t = 0; t < F; ++t) {
            st_.u[static_cast<size_t>(t)] = resample(st_.u[static_cast<size_t>(t)], base.dims);
            st_.inflow[static_cast<size_t>(t)] =
                resample(st_.inflow[static_cast<size_t>(t)], base.dims);
            for (std::size_t c = 0; c < st_.inflow[static_cast<size_t>(t)].data.size(); ++c)
                st_.inflow[static_cast<size_t>(t)].data[c] *= base.inflow_mask.data[c];
        }
        st_.rho = rebuild_sequence(st_.rho0, st_.inflow, st_.u, base.hulls, cfg_.scheme);
    } else {
        st_.rho = rebuild_sequence(st_.rho0, st_.inflow, st_.u, ctx.hulls, cfg_.scheme);
    }
}

Camera Reconstructor::random_disc_camera(int res) {
    const Camera& ref = scene_.cameras[0];
    const Vec3 center(0.5 * (scene_.origin.x * 2 + (scene_.dims.nx - 1) * scene_.cell_size),
                      0.5 * (scene_.origin.y * 2 + (scene_.dims.ny - 1) * scene_.cell_size),
                      0.5 * (scene_.origin.z * 2 + (scene_.dims.nz - 1) * scene_.cell_size));
    const Vec3 rel = ref.position - center;
    const double radius = std::sqrt(rel.x * rel.x + rel.z * rel.z);
    const double az = rng_.uniform(0.0, 360.0);
    Camera cam = ref;
    cam.position = center + Vec3(radius * std::sin(deg_to_rad(az)), rel.y,
                                 radius * std::cos(deg_to_rad(az)));
    cam.look_at = center;
    cam.up = Vec3(0, 1, 0);
    cam.width = res;
    cam.height = res;
    return cam;
}

std::vector<Image> Reconstructor::render_random_fakes(const std::vector<ScalarGrid>& seq,
                                                      const ScaleCtx& ctx, int count,
                                                      std::vector<Camera>& cams_out,
                                                      std::vector<int>& frames_out) {
    std::vector<Image> fakes;
    const int res = std::max(cfg_.disc.input_res, 32);
    for (int n = 0; n < count; ++n) {
        const int t = rng_.uniform_int(0, static_cast<int>(seq.size()) - 1);
        Camera cam = random_disc_camera(res);
        fakes.push_back(render_view(seq[static_cast<size_t>(t)], scene_.lights, cam, cfg_.render,
                                    scene_.background));
        cams_out.push_back(cam);
        frames_out.push_back(t);
    }
    (void)ctx;
    return fakes;
}

ScalarGrid Reconstructor::disc_density_grad(const ScalarGrid& rho, const ScaleCtx& ctx,
                                            double* loss_out) {
    const int res = std::max(cfg_.disc.input_res, 32);
    // fake views of this frame from random angles
    std::vector<Camera> cams;
    std::vector<Image> fakes;
    for (int n = 0; n < cfg_.disc.fake_batch; ++n) {
        cams.push_back(random_disc_camera(res));
        fakes.push_back(
            render_view(rho, scene_.lights, cams.back(), cfg_.render, scene_.background));
    }
    // real references
    std::vector<Image> reals;
    for (int n = 0; n < cfg_.disc.real_batch; ++n) {
        const int idx = rng_.uniform_int(0, static_cast<int>(disc_refs_.size()) - 1);
        reals.push_back(disc_refs_[static_cast<size_t>(idx)].resized(res, res));
    }
    std::vector<Image> image_grads;
    const double loss = disc_density_image_grads(disc_, reals, fakes, image_grads);
    if (loss_out) *loss_out = loss;
    (void)ctx;
    return render_vjp_multi(rho, scene_.lights, cams, cfg_.render, scene_.background,
                            image_grads);
}

void Reconstructor::disc_update(const std::vector<ScalarGrid>& seq, const ScaleCtx& ctx) {
    const int res = std::max(cfg_.disc.input_res, 32);
    std::vector<Camera> cams;
    std::vector<int> frames;
    const std::vector<Image> fakes =
        render_random_fakes(seq, ctx, cfg_.disc.fake_batch, cams, frames);
    std::vector<Image> reals;
    for (int n = 0; n < cfg_.disc.real_batch; ++n) {
        const int idx = rng_.uniform_int(0, static_cast<int>(disc_refs_.size()) - 1);
        reals.push_back(disc_refs_[static_cast<size_t>(idx)].resized(res, res));
    }
    disc_train_step(disc_, disc_opt_, reals, fakes, history_, cfg_.disc.aug, res, rng_);
}

void Reconstructor::save_checkpoint(Variant variant, int iteration, int scale_index) {
    Checkpoint cp;
    cp.state = st_;
    cp.hulls = base_hulls_;
    cp.inflow_mask = base_inflow_mask_;
    cp.lights = scene_.lights;
    cp.background = scene_.background;
    cp.variant = variant_name(variant);
    cp.seed = cfg_.seed;
    cp.iteration = iteration;
    cp.scale_index = scale_index;
    cp.save(out_dir_);
    if (disc_ready_) disc_.save((fs::path(out_dir_) / "state" / "disc.gtdn").string());
}

void Reconstructor::run(Variant variant) {
    load_targets();
    build_hulls();
    if (variant == Variant::Full) init_disc();

    switch (variant) {
        case Variant::Single:
            single_pass();
            break;
        case Variant::Forward:
            pre_pass();
            break;
        case Variant::Coupled:
            pre_pass();
            coupled_pass(false, false);
            break;
        case Variant::CoupledMs:
            pre_pass();
            coupled_pass(true, false);
            break;
        case Variant::GlobTrans:
            pre_pass();
            global_pass(false);
            break;
        case Variant::Full:
            pre_pass();
            global_pass(true);
            break;
    }

    // normalize stored state to base resolution
    const ScaleCtx base = make_scale(scene_.dims.nx);
    for (int t = 0; t < st_.frames; ++t) {
        if (st_.rho[static_cast<size_t>(t)].dims != base.dims) {
            st_.rho[static_cast<size_t>(t)] = resample(st_.rho[static_cast<size_t>(t)], base.dims);
            clip_and_mask(st_.rho[static_cast<size_t>(t)], base.hulls[static_cast<size_t>(t)]);
        }
        if (st_.u[static_cast<size_t>(t)].dims != base.dims)
            st_.u[static_cast<size_t>(t)] = resample(st_.u[static_cast<size_t>(t)], base.dims);
        if (st_.inflow[static_cast<size_t>(t)].dims != base.dims)
            st_.inflow[static_cast<size_t>(t)] =
                resample(st_.inflow[static_cast<size_t>(t)], base.dims);
    }
    if (st_.rho0.dims != base.dims) st_.rho0 = resample(st_.rho0, base.dims);
    save_checkpoint(variant, cfg_.schedule.main_iters, cfg_.schedule.main_ms_count);
    loss_csv_.flush();
}

}  // namespace flowrec
