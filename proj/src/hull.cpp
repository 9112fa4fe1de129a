#include "flowrec/hull.hpp"

#include <cmath>

#include "flowrec/parallel.hpp"

namespace flowrec {

namespace {

std::vector<double> gaussian_kernel(double sigma) {
    const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
    std::vector<double> k(static_cast<size_t>(2 * radius + 1));
    double sum = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        const double v = std::exp(-0.5 * (i * i) / (sigma * sigma));
        k[static_cast<size_t>(i + radius)] = v;
        sum += v;
    }
    for (double& v : k) v /= sum;
    return k;
}

// 1D pass with renormalized kernels at the borders.
void blur_line(const double* src, int n, std::ptrdiff_t stride, double* dst,
               const std::vector<double>& kernel) {
    const int radius = static_cast<int>(kernel.size()) / 2;
    for (int i = 0; i < n; ++i) {
        double sum = 0.0, wsum = 0.0;
        for (int o = -radius; o <= radius; ++o) {
            const int s = i + o;
            if (s < 0 || s >= n) continue;
            const double w = kernel[static_cast<size_t>(o + radius)];
            sum += w * src[s * stride];
            wsum += w;
        }
        dst[i * stride] = wsum > 0.0 ? sum / wsum : 0.0;
    }
}

}  // namespace

Image gaussian_blur(const Image& img, double sigma_px) {
    if (sigma_px <= 0.0) return img;
    const auto kernel = gaussian_kernel(sigma_px);
    Image tmp = img, out = img;
    for (int c = 0; c < img.channels; ++c) {
        for (int y = 0; y < img.height; ++y)
            blur_line(img.data.data() + img.index(0, y, c), img.width, img.channels,
                      tmp.data.data() + tmp.index(0, y, c), kernel);
        for (int x = 0; x < img.width; ++x)
            blur_line(tmp.data.data() + tmp.index(x, 0, c), img.height,
                      static_cast<std::ptrdiff_t>(img.width) * img.channels,
                      out.data.data() + out.index(x, 0, c), kernel);
    }
    return out;
}

ScalarGrid gaussian_blur(const ScalarGrid& g, double sigma_cells) {
    if (sigma_cells <= 0.0) return g;
    const auto kernel = gaussian_kernel(sigma_cells);
    ScalarGrid a = g, b = g;
    const GridDims d = g.dims;
    // x
    for (int k = 0; k < d.nz; ++k)
        for (int j = 0; j < d.ny; ++j)
            blur_line(g.data.data() + g.index(0, j, k), d.nx, 1, a.data.data() + a.index(0, j, k),
                      kernel);
    // y
    for (int k = 0; k < d.nz; ++k)
        for (int i = 0; i < d.nx; ++i)
            blur_line(a.data.data() + a.index(i, 0, k), d.ny, d.nx,
                      b.data.data() + b.index(i, 0, k), kernel);
    // z
    for (int j = 0; j < d.ny; ++j)
        for (int i = 0; i < d.nx; ++i)
            blur_line(b.data.data() + b.index(i, j, 0), d.nz,
                      static_cast<std::ptrdiff_t>(d.nx) * d.ny,
                      a.data.data() + a.index(i, j, 0), kernel);
    return a;
}

ViewMask binarize(const Image& target, const Camera& cam, double eps, double blur_sigma_px) {
    const Image gray = target.to_gray();
    Image mask(gray.width, gray.height, 1);
    for (int y = 0; y < gray.height; ++y)
        for (int x = 0; x < gray.width; ++x)
            mask.at(x, y) = gray.at(x, y) >= eps ? 1.0 : 0.0;
    ViewMask out;
    out.mask = gaussian_blur(mask, blur_sigma_px);
    out.camera = cam;
    return out;
}

ScalarGrid carve(const std::vector<ViewMask>& masks, const GridFrame& frame, double sigma_vol) {
    if (masks.empty()) throw InvalidInput("carve: need at least one mask");
    ScalarGrid hull(frame.dims, frame.origin, frame.cell_size, 1.0);
    std::vector<CameraBasis> bases;
    bases.reserve(masks.size());
    for (const auto& m : masks) bases.push_back(camera_basis(m.camera));

    const GridDims d = frame.dims;
    parallel_chunks(d.nz, [&](std::int64_t kb, std::int64_t ke) {
        for (int k = static_cast<int>(kb); k < ke; ++k)
            for (int j = 0; j < d.ny; ++j)
                for (int i = 0; i < d.nx; ++i) {
                    const Vec3 p = hull.cell_center(i, j, k);
                    double v = 1.0;
                    for (size_t m = 0; m < masks.size() && v > 0.0; ++m) {
                        double px, py;
                        const Camera& cam = masks[m].camera;
                        if (!project_point(cam, bases[m], p, px, py) || px < 0.0 ||
                            px > cam.width - 1.0 || py < 0.0 || py > cam.height - 1.0) {
                            v = 0.0;
                            break;
                        }
                        // mask resolution may differ from the calibration
                        const Image& img = masks[m].mask;
                        const double mx = px * (img.width - 1.0) / std::max(1.0, cam.width - 1.0);
                        const double my =
                            py * (img.height - 1.0) / std::max(1.0, cam.height - 1.0);
                        v *= img.sample(mx, my);
                    }
                    hull.at(i, j, k) = v;
                }
    });
    return gaussian_blur(hull, sigma_vol);
}

ScalarGrid single_view_hull(const ViewMask& view, const GridFrame& frame, double sigma_vol,
                            int n_aux) {
    const Vec3 center = frame.center();
    // Column of the projected rotation axis in the source view; the mirror
    // flips about it.
    const CameraBasis basis = camera_basis(view.camera);
    double ax0, ay0, ax1, ay1;
    const double span = frame.cell_size * frame.dims.ny * 0.25;
    const bool p0 = project_point(view.camera, basis, center - Vec3(0, span, 0), ax0, ay0);
    const bool p1 = project_point(view.camera, basis, center + Vec3(0, span, 0), ax1, ay1);
    const double axis_col = (p0 && p1) ? 0.5 * (ax0 + ax1) : (view.camera.width - 1.0) * 0.5;
    const double mask_axis_col = axis_col * (view.mask.width - 1.0) /
                                 std::max(1.0, view.camera.width - 1.0);

    Image mirrored(view.mask.width, view.mask.height, 1);
    for (int y = 0; y < view.mask.height; ++y)
        for (int x = 0; x < view.mask.width; ++x) {
            const double rx = 2.0 * mask_axis_col - x;
            const double mv = (rx < 0.0 || rx > view.mask.width - 1.0)
                                  ? 0.0
                                  : view.mask.sample(rx, y);
            mirrored.at(x, y) = std::max(view.mask.at(x, y), mv);
        }

    std::vector<ViewMask> masks;
    masks.push_back(view);
    for (int a = 1; a <= n_aux; ++a) {
        ViewMask aux;
        aux.mask = mirrored;
        aux.camera = rotated_about_y(view.camera, center, 360.0 * a / (n_aux + 1));
        masks.push_back(aux);
    }
    return carve(masks, frame, sigma_vol);
}

}  // namespace flowrec
