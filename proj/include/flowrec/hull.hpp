#pragma once

#include <vector>

#include "flowrec/camera.hpp"
#include "flowrec/grid.hpp"
#include "flowrec/image.hpp"

namespace flowrec {

/// Per-view silhouette mask with values in [0,1].
struct ViewMask {
    Image mask;  // 1 channel
    Camera camera;
};

/// Grid placement shared by hull volumes (dims + world frame).
struct GridFrame {
    GridDims dims;
    Vec3 origin;
    double cell_size = 1.0;

    Vec3 center() const {
        return origin + Vec3(dims.nx - 1, dims.ny - 1, dims.nz - 1) * (0.5 * cell_size);
    }
};

/// mask = step(target - eps) blurred by a Gaussian of sigma pixels.
/// Values exactly at the threshold count as covered.
ViewMask binarize(const Image& target, const Camera& cam, double eps, double blur_sigma_px);

/// Intersection of the back-projected masks: per cell the product of the
/// bilinearly sampled mask values at the projected center (0 outside any
/// image), then a volumetric Gaussian blur of sigma_vol cells.
ScalarGrid carve(const std::vector<ViewMask>& masks, const GridFrame& frame, double sigma_vol);

/// Single-view hull: auxiliary views are created by rotating the camera
/// evenly around the volume's central vertical axis; each auxiliary view
/// reuses max(mask, mirror of mask about the projected rotation axis).
ScalarGrid single_view_hull(const ViewMask& view, const GridFrame& frame, double sigma_vol,
                            int n_aux = 4);

/// Separable Gaussian blur with renormalized edge kernels (constants stay
/// constant). Exposed for tests.
Image gaussian_blur(const Image& img, double sigma_px);
ScalarGrid gaussian_blur(const ScalarGrid& g, double sigma_cells);

}  // namespace flowrec
