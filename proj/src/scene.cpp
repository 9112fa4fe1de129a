#include "flowrec/scene.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

namespace fs = std::filesystem;

namespace flowrec {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    const auto e = s.find_last_not_of(" \t\r\n");
    return b == std::string::npos ? "" : s.substr(b, e - b + 1);
}

std::string frame_tag(int t) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%04d", t);
    return buf;
}

}  // namespace

std::map<std::string, std::string> read_kv_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open: " + path);
    std::map<std::string, std::string> kv;
    std::string line;
    while (std::getline(f, line)) {
        if (line.empty() || line[0] == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
    }
    return kv;
}

void write_kv_file(const std::string& path,
                   const std::vector<std::pair<std::string, std::string>>& entries) {
    std::ofstream f(path);
    if (!f) throw IoError("cannot open for writing: " + path);
    for (const auto& [k, v] : entries) f << k << " = " << v << "\n";
    if (!f) throw IoError("write failed: " + path);
}

LightConfig load_lights(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open: " + path);
    LightConfig lights;
    lights.ambient = 0.0;
    std::string line;
    while (std::getline(f, line)) {
        const auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        const std::string key = trim(line.substr(0, eq));
        const std::string val = trim(line.substr(eq + 1));
        if (key == "ambient") {
            lights.ambient = std::stod(val);
        } else if (key == "point") {
            std::istringstream ss(val);
            PointLight p;
            ss >> p.position.x >> p.position.y >> p.position.z >> p.intensity;
            if (!ss) throw IoError("bad point light line in " + path);
            lights.points.push_back(p);
        }
    }
    lights.validate();
    return lights;
}

void save_lights(const std::string& path, const LightConfig& lights) {
    std::ofstream f(path);
    if (!f) throw IoError("cannot open for writing: " + path);
    f.precision(17);
    f << "ambient = " << lights.ambient << "\n";
    for (const PointLight& p : lights.points)
        f << "point = " << p.position.x << " " << p.position.y << " " << p.position.z << " "
          << p.intensity << "\n";
    if (!f) throw IoError("write failed: " + path);
}

Image SceneBundle::load_target(int frame, int view) const {
    return load_pfm((fs::path(dir) / target_files.at(frame).at(view)).string());
}

ScalarGrid SceneBundle::load_density(int frame) const {
    return load_gtvf_scalar((fs::path(dir) / density_files.at(frame)).string());
}

VectorGrid SceneBundle::load_velocity(int frame) const {
    return load_gtvf_vector((fs::path(dir) / velocity_files.at(frame)).string());
}

void SceneBundle::save_manifest() const {
    std::vector<std::pair<std::string, std::string>> kv;
    auto num = [](double v) {
        std::ostringstream ss;
        ss.precision(17);
        ss << v;
        return ss.str();
    };
    kv.emplace_back("version", "1");
    kv.emplace_back("frames", std::to_string(frames));
    kv.emplace_back("views", std::to_string(views));
    kv.emplace_back("nx", std::to_string(dims.nx));
    kv.emplace_back("ny", std::to_string(dims.ny));
    kv.emplace_back("nz", std::to_string(dims.nz));
    kv.emplace_back("origin", num(origin.x) + " " + num(origin.y) + " " + num(origin.z));
    kv.emplace_back("cell_size", num(cell_size));
    kv.emplace_back("seed", std::to_string(seed));
    {
        std::ostringstream bg;
        bg.precision(17);
        for (std::size_t i = 0; i < background.color.size(); ++i)
            bg << (i ? " " : "") << background.color[i];
        kv.emplace_back("background", bg.str());
    }
    kv.emplace_back("lights_file", "lights.txt");
    for (int v = 0; v < views; ++v)
        kv.emplace_back("camera_file_" + std::to_string(v), "cameras/cam_" + std::to_string(v) + ".txt");
    for (int t = 0; t < frames; ++t)
        for (int v = 0; v < views; ++v)
            kv.emplace_back("target_file_" + frame_tag(t) + "_" + std::to_string(v),
                            target_files.at(t).at(v));
    for (int t = 0; t < static_cast<int>(density_files.size()); ++t)
        kv.emplace_back("density_file_" + frame_tag(t), density_files.at(t));
    for (int t = 0; t < static_cast<int>(velocity_files.size()); ++t)
        kv.emplace_back("velocity_file_" + frame_tag(t), velocity_files.at(t));
    write_kv_file((fs::path(dir) / "manifest").string(), kv);
    save_lights((fs::path(dir) / "lights.txt").string(), lights);
    fs::create_directories(fs::path(dir) / "cameras");
    for (int v = 0; v < views; ++v)
        save_camera((fs::path(dir) / "cameras" / ("cam_" + std::to_string(v) + ".txt")).string(),
                    cameras.at(v));
}

SceneBundle SceneBundle::load(const std::string& dir) {
    const auto kv = read_kv_file((fs::path(dir) / "manifest").string());
    auto get = [&](const std::string& key) -> const std::string& {
        const auto it = kv.find(key);
        if (it == kv.end()) throw IoError("manifest missing key: " + key);
        return it->second;
    };
    SceneBundle b;
    b.dir = dir;
    b.frames = std::stoi(get("frames"));
    b.views = std::stoi(get("views"));
    b.dims = {std::stoi(get("nx")), std::stoi(get("ny")), std::stoi(get("nz"))};
    {
        std::istringstream ss(get("origin"));
        ss >> b.origin.x >> b.origin.y >> b.origin.z;
    }
    b.cell_size = std::stod(get("cell_size"));
    b.seed = std::stoull(get("seed"));
    if (kv.count("background")) {
        std::istringstream ss(kv.at("background"));
        double v;
        while (ss >> v) b.background.color.push_back(v);
    }
    b.lights = load_lights((fs::path(dir) / get("lights_file")).string());
    for (int v = 0; v < b.views; ++v)
        b.cameras.push_back(
            load_camera((fs::path(dir) / get("camera_file_" + std::to_string(v))).string()));
    b.target_files.resize(static_cast<size_t>(b.frames));
    for (int t = 0; t < b.frames; ++t)
        for (int v = 0; v < b.views; ++v)
            b.target_files[static_cast<size_t>(t)].push_back(
                get("target_file_" + frame_tag(t) + "_" + std::to_string(v)));
    for (int t = 0; t < b.frames; ++t) {
        const std::string key = "density_file_" + frame_tag(t);
        if (!kv.count(key)) break;
        b.density_files.push_back(kv.at(key));
    }
    for (int t = 0; t < b.frames; ++t) {
        const std::string key = "velocity_file_" + frame_tag(t);
        if (!kv.count(key)) break;
        b.velocity_files.push_back(kv.at(key));
    }
    return b;
}

}  // namespace flowrec
