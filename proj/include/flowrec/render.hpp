#pragma once

#include <vector>

#include "flowrec/camera.hpp"
#include "flowrec/grid.hpp"
#include "flowrec/image.hpp"

namespace flowrec {

struct PointLight {
    Vec3 position;
    double intensity = 0.85;
};

struct LightConfig {
    std::vector<PointLight> points;
    double ambient = 0.64;

    void validate() const {
        if (ambient < 0.0) throw InvalidInput("lights: ambient intensity must be >= 0");
        for (const auto& p : points)
            if (p.intensity < 0.0) throw InvalidInput("lights: point intensity must be >= 0");
    }
};

/// Background for compositing: a per-pixel image when `image` is non-empty,
/// otherwise a constant color (empty = black, 1 or 3 entries).
struct Background {
    std::vector<double> color;
    Image image;

    int channels() const {
        if (image.width > 0) return image.channels;
        return color.size() == 3 ? 3 : 1;
    }
    double value(int x, int y, int c) const {
        if (image.width > 0) return image.at(x, y, image.channels == 3 ? c : 0);
        if (color.empty()) return 0.0;
        return color[color.size() == 3 ? static_cast<size_t>(c) : 0];
    }
};

struct RenderSettings {
    double step_size = 0.5;         // ray step as a fraction of the cell size
    double shadow_step_size = 1.0;  // shadow-ray step as a fraction of the cell size
    bool normalized_scatter = true; // weight-normalized gradient scatter (off = exact Jacobian)

    void validate() const {
        if (!(step_size > 0.0 && step_size <= 2.0) ||
            !(shadow_step_size > 0.0 && shadow_step_size <= 2.0))
            throw InvalidInput("render settings: step sizes must be in (0, 2]");
    }
};

/// Outgoing light per cell: ambient plus single-scattered point lights with
/// inverse-square-style falloff 1/(1+dist) and Beer-Lambert shadowing
/// accumulated toward each light.
ScalarGrid light_grid(const ScalarGrid& rho, const LightConfig& lights,
                      const RenderSettings& settings);

struct RenderResult {
    Image radiance;      // 1 channel
    Image transparency;  // 1 channel, in [0,1]
};

/// Front-to-back emission/absorption ray march between the near/far clip
/// and the volume box.
RenderResult raymarch(const ScalarGrid& rho, const ScalarGrid& light, const Camera& cam,
                      const RenderSettings& settings);

/// out = radiance + transparency * background (channel-broadcast as needed).
Image composite(const Image& radiance, const Image& transparency, const Background& bg);

/// Renders and composites in one call.
Image render_view(const ScalarGrid& rho, const LightConfig& lights, const Camera& cam,
                  const RenderSettings& settings, const Background& bg);

/// Full-chain reverse-mode gradient of <grad_image, composite(raymarch(...))>
/// w.r.t. the density, including the light grid and shadow dependence.
/// With normalized_scatter the per-cell gradients are divided by their
/// accumulated interpolation weights and rescaled so the total over cells is
/// preserved; without it the result is the exact Jacobian transpose.
ScalarGrid render_vjp(const ScalarGrid& rho, const LightConfig& lights, const Camera& cam,
                      const RenderSettings& settings, const Background& bg,
                      const Image& grad_image);

/// Multi-view variant sharing one light grid; grad_images[i] pairs with
/// cams[i].
ScalarGrid render_vjp_multi(const ScalarGrid& rho, const LightConfig& lights,
                            const std::vector<Camera>& cams, const RenderSettings& settings,
                            const Background& bg, const std::vector<Image>& grad_images);

}  // namespace flowrec
