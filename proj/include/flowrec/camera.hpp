#pragma once

#include <string>
#include <vector>

#include "flowrec/common.hpp"

namespace flowrec {

/// Calibrated pinhole view.
struct Camera {
    Vec3 position;
    Vec3 look_at;
    Vec3 up{0.0, 1.0, 0.0};
    double fov_y = 45.0;  // vertical field of view, degrees
    int width = 64, height = 64;
    double near = 0.1, far = 10.0;

    void validate() const;
};

/// Orthonormal view basis (right, up, forward), right-handed.
struct CameraBasis {
    Vec3 right, up, forward;
};

CameraBasis camera_basis(const Camera& cam);

/// World-space ray through the center of pixel (px, py); direction is unit
/// length, so near/far act as distances along the ray.
struct Ray {
    Vec3 origin, dir;
};

Ray pixel_ray(const Camera& cam, const CameraBasis& basis, double px, double py);

/// Projects a world point to pixel coordinates; returns false when the point
/// is behind the camera.
bool project_point(const Camera& cam, const CameraBasis& basis, const Vec3& p, double& px,
                   double& py);

/// Plain-text calibration file: one `key = value` per line with keys
/// position, look_at, up, fov_y, width, height, near, far.
Camera load_camera(const std::string& path);
void save_camera(const std::string& path, const Camera& cam);

/// Rotates the camera position (and up) about the vertical axis through
/// `center` by `angle_deg`; look_at is preserved.
Camera rotated_about_y(const Camera& cam, const Vec3& center, double angle_deg);

/// Evenly spaced views on an azimuth arc at fixed elevation and radius,
/// all looking at `center`.
std::vector<Camera> arc_cameras(const Vec3& center, double radius, double elevation_deg,
                                double arc_deg, int count, double fov_y, int width, int height,
                                double near, double far);

}  // namespace flowrec
