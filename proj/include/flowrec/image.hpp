#pragma once

#include <string>
#include <vector>

#include "flowrec/common.hpp"

namespace flowrec {

/// Linear-radiance raster, row-major from the top-left, 1 or 3 interleaved
/// channels.
class Image {
  public:
    int width = 0, height = 0, channels = 1;
    std::vector<double> data;

    Image() = default;
    Image(int w, int h, int ch, double fill = 0.0)
        : width(w), height(h), channels(ch),
          data(static_cast<size_t>(w) * h * ch, fill) {
        if (w <= 0 || h <= 0 || (ch != 1 && ch != 3))
            throw InvalidInput("Image: bad dimensions");
    }

    std::size_t index(int x, int y, int c = 0) const {
        return static_cast<std::size_t>(c) +
               channels * (static_cast<std::size_t>(x) + static_cast<std::size_t>(width) * y);
    }
    double& at(int x, int y, int c = 0) { return data[index(x, y, c)]; }
    double at(int x, int y, int c = 0) const { return data[index(x, y, c)]; }

    bool same_shape(const Image& o) const {
        return width == o.width && height == o.height && channels == o.channels;
    }
    std::size_t pixel_count() const { return static_cast<std::size_t>(width) * height; }

    /// Mean over channels (identity for 1-channel images).
    Image to_gray() const;
    /// Replicates a 1-channel image into 3 channels.
    Image to_rgb() const;
    /// Bilinear resize (clamped sampling).
    Image resized(int new_w, int new_h) const;
    /// Clamped bilinear sample at pixel coordinates (x in [0,w-1]).
    double sample(double x, double y, int c = 0) const;
};

/// Portable float map. Grayscale images use "Pf", 3-channel "PF";
/// little-endian (negative scale), rows bottom-to-top per convention.
void save_pfm(const std::string& path, const Image& img);
Image load_pfm(const std::string& path);

/// 8-bit P6 preview with gamma 2.2 encoding.
void save_ppm(const std::string& path, const Image& img);

}  // namespace flowrec
