#include "flowrec/image.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace flowrec {

Image Image::to_gray() const {
    if (channels == 1) return *this;
    Image out(width, height, 1);
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x)
            out.at(x, y) = (at(x, y, 0) + at(x, y, 1) + at(x, y, 2)) / 3.0;
    return out;
}

Image Image::to_rgb() const {
    if (channels == 3) return *this;
    Image out(width, height, 3);
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x)
            for (int c = 0; c < 3; ++c) out.at(x, y, c) = at(x, y);
    return out;
}

double Image::sample(double x, double y, int c) const {
    x = clamp(x, 0.0, width - 1.0);
    y = clamp(y, 0.0, height - 1.0);
    int x0 = static_cast<int>(std::floor(x));
    int y0 = static_cast<int>(std::floor(y));
    if (x0 > width - 2) x0 = std::max(0, width - 2);
    if (y0 > height - 2) y0 = std::max(0, height - 2);
    const int x1 = std::min(width - 1, x0 + 1);
    const int y1 = std::min(height - 1, y0 + 1);
    const double fx = x - x0, fy = y - y0;
    const double a = at(x0, y0, c) + fx * (at(x1, y0, c) - at(x0, y0, c));
    const double b = at(x0, y1, c) + fx * (at(x1, y1, c) - at(x0, y1, c));
    return a + fy * (b - a);
}

Image Image::resized(int new_w, int new_h) const {
    if (new_w == width && new_h == height) return *this;
    Image out(new_w, new_h, channels);
    // Box-average when shrinking, bilinear when growing; separable per axis
    // would be cleaner but image sizes here are small.
    const double rx = static_cast<double>(width) / new_w;
    const double ry = static_cast<double>(height) / new_h;
    if (rx > 1.0 || ry > 1.0) {
        for (int y = 0; y < new_h; ++y)
            for (int x = 0; x < new_w; ++x) {
                const double ax = x * rx, bx = (x + 1) * rx;
                const double ay = y * ry, by = (y + 1) * ry;
                for (int c = 0; c < channels; ++c) {
                    double sum = 0.0, wsum = 0.0;
                    for (int sy = static_cast<int>(ay); sy < std::min<int>(height, static_cast<int>(std::ceil(by))); ++sy)
                        for (int sx = static_cast<int>(ax); sx < std::min<int>(width, static_cast<int>(std::ceil(bx))); ++sx) {
                            const double wx = std::min(bx, sx + 1.0) - std::max(ax, static_cast<double>(sx));
                            const double wy = std::min(by, sy + 1.0) - std::max(ay, static_cast<double>(sy));
                            const double w = std::max(0.0, wx) * std::max(0.0, wy);
                            sum += w * at(sx, sy, c);
                            wsum += w;
                        }
                    out.at(x, y, c) = wsum > 0 ? sum / wsum : 0.0;
                }
            }
    } else {
        for (int y = 0; y < new_h; ++y)
            for (int x = 0; x < new_w; ++x) {
                const double gx = (x + 0.5) * rx - 0.5;
                const double gy = (y + 0.5) * ry - 0.5;
                for (int c = 0; c < channels; ++c) out.at(x, y, c) = sample(gx, gy, c);
            }
    }
    return out;
}

namespace {

bool host_is_little_endian() {
    const std::uint16_t v = 1;
    unsigned char b;
    std::memcpy(&b, &v, 1);
    return b == 1;
}

}  // namespace

void save_pfm(const std::string& path, const Image& img) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for writing: " + path);
    f << (img.channels == 3 ? "PF" : "Pf") << "\n"
      << img.width << " " << img.height << "\n"
      << "-1.0\n";
    // bottom-to-top rows
    std::vector<float> row(static_cast<size_t>(img.width) * img.channels);
    for (int y = img.height - 1; y >= 0; --y) {
        for (int x = 0; x < img.width; ++x)
            for (int c = 0; c < img.channels; ++c)
                row[static_cast<size_t>(x) * img.channels + c] =
                    static_cast<float>(img.at(x, y, c));
        f.write(reinterpret_cast<const char*>(row.data()),
                static_cast<std::streamsize>(row.size() * sizeof(float)));
    }
    if (!f) throw IoError("write failed: " + path);
}

Image load_pfm(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open: " + path);
    std::string tag;
    f >> tag;
    int channels;
    if (tag == "PF")
        channels = 3;
    else if (tag == "Pf")
        channels = 1;
    else
        throw IoError("not a PFM file: " + path);
    int w, h;
    double scale;
    f >> w >> h >> scale;
    f.get();  // single whitespace after the header
    if (w <= 0 || h <= 0) throw IoError("bad PFM dims in " + path);
    const bool file_le = scale < 0.0;
    Image img(w, h, channels);
    std::vector<float> row(static_cast<size_t>(w) * channels);
    for (int y = h - 1; y >= 0; --y) {
        f.read(reinterpret_cast<char*>(row.data()),
               static_cast<std::streamsize>(row.size() * sizeof(float)));
        if (!f) throw IoError("truncated PFM file: " + path);
        if (file_le != host_is_little_endian()) {
            for (float& v : row) {
                std::uint32_t u;
                std::memcpy(&u, &v, 4);
                u = ((u & 0xFF) << 24) | ((u & 0xFF00) << 8) | ((u >> 8) & 0xFF00) | (u >> 24);
                std::memcpy(&v, &u, 4);
            }
        }
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < channels; ++c)
                img.at(x, y, c) = row[static_cast<size_t>(x) * channels + c];
    }
    return img;
}

void save_ppm(const std::string& path, const Image& img) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for writing: " + path);
    f << "P6\n" << img.width << " " << img.height << "\n255\n";
    std::vector<unsigned char> row(static_cast<size_t>(img.width) * 3);
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x)
            for (int c = 0; c < 3; ++c) {
                const double v = img.at(x, y, img.channels == 3 ? c : 0);
                const double e = std::pow(clamp(v, 0.0, 1.0), 1.0 / 2.2);
                row[static_cast<size_t>(x) * 3 + c] =
                    static_cast<unsigned char>(std::lround(e * 255.0));
            }
        f.write(reinterpret_cast<const char*>(row.data()),
                static_cast<std::streamsize>(row.size()));
    }
    if (!f) throw IoError("write failed: " + path);
}

}  // namespace flowrec
