#pragma once

#include <map>
#include <string>
#include <vector>

#include "flowrec/camera.hpp"
#include "flowrec/grid.hpp"
#include "flowrec/image.hpp"
#include "flowrec/render.hpp"

namespace flowrec {

/// On-disk package of target images, calibrations, lights and (for synthetic
/// scenes) ground-truth volumes. All paths in the manifest are relative to
/// the bundle directory.
struct SceneBundle {
    std::string dir;
    int frames = 0;
    int views = 0;
    GridDims dims;
    Vec3 origin;
    double cell_size = 1.0;
    std::uint64_t seed = 0;
    LightConfig lights;
    Background background;

    std::vector<Camera> cameras;                      // [view]
    std::vector<std::vector<std::string>> target_files;  // [frame][view]
    std::vector<std::string> density_files;           // [frame], may be empty
    std::vector<std::string> velocity_files;          // [frame], may be empty

    bool has_ground_truth() const { return !density_files.empty(); }

    Image load_target(int frame, int view) const;
    ScalarGrid load_density(int frame) const;
    VectorGrid load_velocity(int frame) const;

    void save_manifest() const;
    static SceneBundle load(const std::string& dir);
};

/// Key=value text file helpers (manifest, checkpoint meta, light files).
std::map<std::string, std::string> read_kv_file(const std::string& path);
void write_kv_file(const std::string& path, const std::vector<std::pair<std::string, std::string>>& entries);

/// lights file: `ambient = i_a` plus one `point = x y z intensity` per light.
LightConfig load_lights(const std::string& path);
void save_lights(const std::string& path, const LightConfig& lights);

}  // namespace flowrec
