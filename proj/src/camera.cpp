#include "flowrec/camera.hpp"

#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

namespace flowrec {

void Camera::validate() const {
    if (!(near < far) || near <= 0.0) throw InvalidInput("camera: need 0 < near < far");
    if (!(fov_y > 0.0 && fov_y < 180.0)) throw InvalidInput("camera: fov_y out of (0,180)");
    if (width <= 0 || height <= 0) throw InvalidInput("camera: bad resolution");
    const Vec3 view = look_at - position;
    if (view.norm() == 0.0) throw InvalidInput("camera: position equals look_at");
    const Vec3 f = view.normalized();
    if (f.cross(up).norm() < 1e-9) throw InvalidInput("camera: up parallel to view direction");
}

CameraBasis camera_basis(const Camera& cam) {
    cam.validate();
    CameraBasis b;
    b.forward = (cam.look_at - cam.position).normalized();
    b.right = b.forward.cross(cam.up).normalized();
    b.up = b.right.cross(b.forward);
    return b;
}

Ray pixel_ray(const Camera& cam, const CameraBasis& basis, double px, double py) {
    const double tan_half = std::tan(deg_to_rad(cam.fov_y) * 0.5);
    const double aspect = static_cast<double>(cam.width) / cam.height;
    const double sx = (2.0 * (px + 0.5) / cam.width - 1.0) * tan_half * aspect;
    const double sy = (1.0 - 2.0 * (py + 0.5) / cam.height) * tan_half;
    Ray r;
    r.origin = cam.position;
    r.dir = (basis.forward + basis.right * sx + basis.up * sy).normalized();
    return r;
}

bool project_point(const Camera& cam, const CameraBasis& basis, const Vec3& p, double& px,
                   double& py) {
    const Vec3 rel = p - cam.position;
    const double depth = rel.dot(basis.forward);
    if (depth <= 0.0) return false;
    const double tan_half = std::tan(deg_to_rad(cam.fov_y) * 0.5);
    const double aspect = static_cast<double>(cam.width) / cam.height;
    const double sx = rel.dot(basis.right) / (depth * tan_half * aspect);
    const double sy = rel.dot(basis.up) / (depth * tan_half);
    px = (sx + 1.0) * 0.5 * cam.width - 0.5;
    py = (1.0 - sy) * 0.5 * cam.height - 0.5;
    return true;
}

Camera load_camera(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open camera file: " + path);
    Camera cam;
    std::string line;
    auto parse_vec = [](const std::string& v) {
        std::istringstream ss(v);
        Vec3 r;
        ss >> r.x >> r.y >> r.z;
        return r;
    };
    while (std::getline(f, line)) {
        const auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        std::string key = line.substr(0, eq);
        std::string val = line.substr(eq + 1);
        auto trim = [](std::string& s) {
            const auto b = s.find_first_not_of(" \t\r");
            const auto e = s.find_last_not_of(" \t\r");
            s = (b == std::string::npos) ? "" : s.substr(b, e - b + 1);
        };
        trim(key);
        trim(val);
        if (key == "position")
            cam.position = parse_vec(val);
        else if (key == "look_at")
            cam.look_at = parse_vec(val);
        else if (key == "up")
            cam.up = parse_vec(val);
        else if (key == "fov_y")
            cam.fov_y = std::stod(val);
        else if (key == "width")
            cam.width = std::stoi(val);
        else if (key == "height")
            cam.height = std::stoi(val);
        else if (key == "near")
            cam.near = std::stod(val);
        else if (key == "far")
            cam.far = std::stod(val);
    }
    cam.validate();
    return cam;
}

void save_camera(const std::string& path, const Camera& cam) {
    std::ofstream f(path);
    if (!f) throw IoError("cannot open for writing: " + path);
    f.precision(17);
    f << "position = " << cam.position.x << " " << cam.position.y << " " << cam.position.z << "\n";
    f << "look_at = " << cam.look_at.x << " " << cam.look_at.y << " " << cam.look_at.z << "\n";
    f << "up = " << cam.up.x << " " << cam.up.y << " " << cam.up.z << "\n";
    f << "fov_y = " << cam.fov_y << "\n";
    f << "width = " << cam.width << "\n";
    f << "height = " << cam.height << "\n";
    f << "near = " << cam.near << "\n";
    f << "far = " << cam.far << "\n";
    if (!f) throw IoError("write failed: " + path);
}

Camera rotated_about_y(const Camera& cam, const Vec3& center, double angle_deg) {
    const double a = deg_to_rad(angle_deg);
    const double c = std::cos(a), s = std::sin(a);
    auto rot = [&](const Vec3& p) {
        const Vec3 rel = p - center;
        return center + Vec3(c * rel.x + s * rel.z, rel.y, -s * rel.x + c * rel.z);
    };
    Camera out = cam;
    out.position = rot(cam.position);
    out.look_at = rot(cam.look_at);
    const Vec3 up_tip = rot(cam.position + cam.up);
    out.up = (up_tip - out.position).normalized();
    return out;
}

std::vector<Camera> arc_cameras(const Vec3& center, double radius, double elevation_deg,
                                double arc_deg, int count, double fov_y, int width, int height,
                                double near, double far) {
    if (count <= 0) throw InvalidInput("arc_cameras: count must be positive");
    std::vector<Camera> cams;
    cams.reserve(static_cast<size_t>(count));
    const double el = deg_to_rad(elevation_deg);
    for (int i = 0; i < count; ++i) {
        const double az =
            (count == 1) ? 0.0 : deg_to_rad(-arc_deg / 2.0 + arc_deg * i / (count - 1));
        Camera cam;
        cam.position = center + Vec3(radius * std::cos(el) * std::sin(az),
                                     radius * std::sin(el),
                                     radius * std::cos(el) * std::cos(az));
        cam.look_at = center;
        cam.up = Vec3(0.0, 1.0, 0.0);
        cam.fov_y = fov_y;
        cam.width = width;
        cam.height = height;
        cam.near = near;
        cam.far = far;
        cams.push_back(cam);
    }
    return cams;
}

}  // namespace flowrec
