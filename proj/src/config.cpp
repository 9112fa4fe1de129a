#include "flowrec/config.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace flowrec {

Schedule Schedule::reference() {
    Schedule s;
    s.pre_first_dens_iters = 600;
    s.pre_dens_iters = 600;
    s.pre_first_vel_iters = 6000;
    s.pre_vel_ms_interval = 1000;
    s.pre_vel_ms_count = 4;
    s.pre_later_vel_iters = 600;
    s.main_iters = 4200;
    s.main_ms_interval = 400;
    s.main_ms_count = 8;
    s.eta_rho_first = Fade{3.0, 3.0, FadeKind::Constant};
    s.eta_rho_pre = Fade{3.0, 1.0, FadeKind::Linear};
    s.eta_rho_main = Fade{2.4, 2.4, FadeKind::Constant};
    s.eta_u_first = Fade{0.04, 0.04, FadeKind::Constant};
    s.eta_u_pre = Fade{0.02, 0.02, FadeKind::Constant};
    s.eta_u_main = Fade{0.02, 0.016, FadeKind::Exponential};
    return s;
}

void Schedule::validate() const {
    if (pre_first_dens_iters < 0 || pre_dens_iters < 0 || pre_first_vel_iters < 0 ||
        pre_later_vel_iters < 0 || main_iters < 0)
        throw InvalidInput("schedule: iteration counts must be >= 0");
    if (pre_vel_ms_count < 0 || main_ms_count < 0)
        throw InvalidInput("schedule: multi-scale counts must be >= 0");
    if (growth <= 1.0) throw InvalidInput("schedule: growth factor must exceed 1");
}

std::vector<int> resolution_ladder(int base, int levels, double growth) {
    if (base < 4) throw InvalidInput("resolution_ladder: base too small");
    if (levels < 1) throw InvalidInput("resolution_ladder: need at least one level");
    std::vector<int> ladder;
    for (int k = levels - 1; k >= 0; --k) {
        const int n = std::max(4, static_cast<int>(std::lround(base / std::pow(growth, k))));
        if (ladder.empty() || n > ladder.back()) ladder.push_back(n);
    }
    if (ladder.back() != base) ladder.push_back(base);
    return ladder;
}

void ReconConfig::rescale_weights(const GridDims& volume, int target_w, int target_h) {
    const double vs = LossWeights::volume_scale(volume);
    const double is = LossWeights::image_scale(target_w, target_h);
    weights.w_target *= is;
    weights.w_disc *= is;
    weights.w_warp_dens.start *= vs;
    weights.w_warp_dens.end *= vs;
    weights.w_warp_dens_vel *= vs;
    weights.w_warp_vel.start *= vs;
    weights.w_warp_vel.end *= vs;
    weights.w_div.start *= vs;
    weights.w_div.end *= vs;
}

namespace {

double to_double(const std::string& v) {
    std::size_t pos = 0;
    const double d = std::stod(v, &pos);
    return d;
}

int to_int(const std::string& v) { return std::stoi(v); }

bool to_bool(const std::string& v) {
    if (v == "true" || v == "1" || v == "on") return true;
    if (v == "false" || v == "0" || v == "off") return false;
    throw InvalidInput("config: bad boolean value: " + v);
}

void set_fade(Fade& f, const std::string& key_tail, const std::string& value) {
    if (key_tail == "start")
        f.start = to_double(value);
    else if (key_tail == "end")
        f.end = to_double(value);
    else if (key_tail == "kind") {
        if (value == "constant")
            f.kind = FadeKind::Constant;
        else if (value == "linear")
            f.kind = FadeKind::Linear;
        else if (value == "exponential")
            f.kind = FadeKind::Exponential;
        else
            throw InvalidInput("config: bad fade kind: " + value);
    } else {
        // plain assignment pins the value
        f.start = f.end = to_double(value);
        f.kind = FadeKind::Constant;
    }
}

// splits "w_div.start" into base/tail
std::pair<std::string, std::string> split_key(const std::string& key) {
    const auto dot = key.find('.');
    if (dot == std::string::npos) return {key, ""};
    return {key.substr(0, dot), key.substr(dot + 1)};
}

}  // namespace

void apply_config_entry(ReconConfig& cfg, const std::string& section, const std::string& key,
                        const std::string& value) {
    const auto [base, tail] = split_key(key);
    if (section == "weights") {
        if (base == "w_target")
            cfg.weights.w_target = to_double(value);
        else if (base == "w_warp_dens")
            set_fade(cfg.weights.w_warp_dens, tail, value);
        else if (base == "w_warp_dens_vel")
            cfg.weights.w_warp_dens_vel = to_double(value);
        else if (base == "w_warp_vel")
            set_fade(cfg.weights.w_warp_vel, tail, value);
        else if (base == "w_div")
            set_fade(cfg.weights.w_div, tail, value);
        else if (base == "w_disc")
            cfg.weights.w_disc = to_double(value);
        else if (base == "lambda_rho_a")
            cfg.weights.lambda_rho_a = to_double(value);
        else if (base == "lambda_u_a")
            cfg.weights.lambda_u_a = to_double(value);
        else if (base == "beta_ema")
            cfg.weights.beta_ema = to_double(value);
        else
            throw InvalidInput("config: unknown weights key: " + key);
    } else if (section == "schedule") {
        Schedule& s = cfg.schedule;
        if (base == "pre_first_dens_iters")
            s.pre_first_dens_iters = to_int(value);
        else if (base == "pre_dens_iters")
            s.pre_dens_iters = to_int(value);
        else if (base == "pre_first_vel_iters")
            s.pre_first_vel_iters = to_int(value);
        else if (base == "pre_vel_ms_interval")
            s.pre_vel_ms_interval = to_int(value);
        else if (base == "pre_vel_ms_count")
            s.pre_vel_ms_count = to_int(value);
        else if (base == "pre_later_vel_iters")
            s.pre_later_vel_iters = to_int(value);
        else if (base == "main_iters")
            s.main_iters = to_int(value);
        else if (base == "main_ms_interval")
            s.main_ms_interval = to_int(value);
        else if (base == "main_ms_count")
            s.main_ms_count = to_int(value);
        else if (base == "growth")
            s.growth = to_double(value);
        else if (base == "eta_rho_first")
            set_fade(s.eta_rho_first, tail, value);
        else if (base == "eta_rho_pre")
            set_fade(s.eta_rho_pre, tail, value);
        else if (base == "eta_rho_main")
            set_fade(s.eta_rho_main, tail, value);
        else if (base == "eta_u_first")
            set_fade(s.eta_u_first, tail, value);
        else if (base == "eta_u_pre")
            set_fade(s.eta_u_pre, tail, value);
        else if (base == "eta_u_main")
            set_fade(s.eta_u_main, tail, value);
        else if (base == "reference" && to_bool(value))
            s = Schedule::reference();
        else
            throw InvalidInput("config: unknown schedule key: " + key);
    } else if (section == "render") {
        if (base == "step_size")
            cfg.render.step_size = to_double(value);
        else if (base == "shadow_step_size")
            cfg.render.shadow_step_size = to_double(value);
        else if (base == "normalized_scatter")
            cfg.render.normalized_scatter = to_bool(value);
        else
            throw InvalidInput("config: unknown render key: " + key);
    } else if (section == "disc") {
        DiscSettings& d = cfg.disc;
        if (base == "input_res")
            d.input_res = to_int(value);
        else if (base == "history_capacity")
            d.history_capacity = to_int(value);
        else if (base == "lr")
            d.lr = to_double(value);
        else if (base == "weight_l2")
            d.weight_l2 = to_double(value);
        else if (base == "real_batch")
            d.real_batch = to_int(value);
        else if (base == "fake_batch")
            d.fake_batch = to_int(value);
        else if (base == "history_batch")
            d.history_batch = to_int(value);
        else if (base == "refs_dir")
            d.refs_dir = value;
        else if (base == "crop_min")
            d.aug.crop_min = to_double(value);
        else if (base == "crop_max")
            d.aug.crop_max = to_double(value);
        else if (base == "scale_min")
            d.aug.scale_min = to_double(value);
        else if (base == "scale_max")
            d.aug.scale_max = to_double(value);
        else if (base == "rotate_deg")
            d.aug.rotate_deg = to_double(value);
        else if (base == "intensity_min")
            d.aug.intensity_min = to_double(value);
        else if (base == "intensity_max")
            d.aug.intensity_max = to_double(value);
        else if (base == "gamma_min")
            d.aug.gamma_min = to_double(value);
        else if (base == "gamma_max")
            d.aug.gamma_max = to_double(value);
        else
            throw InvalidInput("config: unknown disc key: " + key);
    } else if (section == "recon" || section.empty()) {
        if (base == "scheme") {
            if (value == "sl" || value == "semi_lagrangian")
                cfg.scheme = AdvectionScheme::SemiLagrangian;
            else if (value == "maccormack")
                cfg.scheme = AdvectionScheme::MacCormackClamped;
            else
                throw InvalidInput("config: unknown scheme: " + value);
        } else if (base == "init_density")
            cfg.init_density = to_double(value);
        else if (base == "init_velocity_cells")
            cfg.init_velocity_cells = to_double(value);
        else if (base == "hull_eps")
            cfg.hull_eps = to_double(value);
        else if (base == "hull_blur_px")
            cfg.hull_blur_px = to_double(value);
        else if (base == "hull_blur_vol")
            cfg.hull_blur_vol = to_double(value);
        else if (base == "inflow_overlap")
            cfg.inflow_overlap = to_int(value);
        else if (base == "seed")
            cfg.seed = std::stoull(value);
        else
            throw InvalidInput("config: unknown recon key: " + key);
    } else {
        throw InvalidInput("config: unknown section: " + section);
    }
}

void load_config_file(ReconConfig& cfg, const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open config: " + path);
    std::string line, section;
    int lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        const auto hash = line.find_first_of("#;");
        if (hash != std::string::npos) line = line.substr(0, hash);
        const auto b = line.find_first_not_of(" \t\r");
        if (b == std::string::npos) continue;
        const auto e = line.find_last_not_of(" \t\r");
        line = line.substr(b, e - b + 1);
        if (line.front() == '[') {
            if (line.back() != ']')
                throw InvalidInput("config: bad section header at line " + std::to_string(lineno));
            section = line.substr(1, line.size() - 2);
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw InvalidInput("config: expected key=value at line " + std::to_string(lineno));
        auto trim = [](std::string s) {
            const auto bb = s.find_first_not_of(" \t");
            const auto ee = s.find_last_not_of(" \t");
            return bb == std::string::npos ? std::string() : s.substr(bb, ee - bb + 1);
        };
        apply_config_entry(cfg, section, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
}

void apply_config_override(ReconConfig& cfg, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos)
        throw InvalidInput("config override must be section.key=value: " + assignment);
    const std::string path = assignment.substr(0, eq);
    const std::string value = assignment.substr(eq + 1);
    const auto dot = path.find('.');
    if (dot == std::string::npos)
        throw InvalidInput("config override must be section.key=value: " + assignment);
    apply_config_entry(cfg, path.substr(0, dot), path.substr(dot + 1), value);
}

}  // namespace flowrec
