#include <doctest.h>

#include <cmath>

#include "flowrec/hull.hpp"
#include "flowrec/rng.hpp"
#include "test_util.hpp"

using namespace flowrec;
using namespace flowrec::testutil;

namespace {

GridFrame unit_frame(int n) {
    const double h = 1.0 / n;
    return GridFrame{{n, n, n}, Vec3(-0.5 + 0.5 * h, -0.5 + 0.5 * h, -0.5 + 0.5 * h), h};
}

Camera view_at(double azimuth_deg, int res = 32) {
    const double a = deg_to_rad(azimuth_deg);
    Camera cam;
    cam.position = Vec3(2.5 * std::sin(a), 0.4, 2.5 * std::cos(a));
    cam.look_at = Vec3(0, 0, 0);
    cam.up = Vec3(0, 1, 0);
    cam.fov_y = 40.0;
    cam.width = res;
    cam.height = res;
    cam.near = 0.5;
    cam.far = 6.0;
    return cam;
}

}  // namespace

TEST_CASE("binarize: zeros, constants, threshold convention") {
    const Camera cam = view_at(0);
    Image zero(16, 16, 1, 0.0);
    const ViewMask m0 = binarize(zero, cam, 0.04, 1.0);
    for (double v : m0.mask.data) CHECK(v == 0.0);

    Image one(16, 16, 1, 1.0);
    const ViewMask m1 = binarize(one, cam, 0.04, 1.0);
    for (double v : m1.mask.data) CHECK(v == doctest::Approx(1.0).epsilon(1e-12));

    // value exactly at the threshold counts as covered
    Image edge(8, 8, 1, 0.04);
    const ViewMask me = binarize(edge, cam, 0.04, 0.0);
    for (double v : me.mask.data) CHECK(v == 1.0);
}

TEST_CASE("carve: all-ones and any-zero masks") {
    const GridFrame frame = unit_frame(16);
    std::vector<ViewMask> masks;
    for (double az : {-60.0, 0.0, 60.0})
        masks.push_back(ViewMask{Image(32, 32, 1, 1.0), view_at(az)});
    const ScalarGrid hull = carve(masks, frame, 0.0);
    // volume center is inside every frustum
    CHECK(hull.at(8, 8, 8) == doctest::Approx(1.0));
    for (double v : hull.data) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }

    masks[1].mask.data.assign(masks[1].mask.data.size(), 0.0);
    const ScalarGrid empty = carve(masks, frame, 0.0);
    for (double v : empty.data) CHECK(v == 0.0);

    CHECK_THROWS_AS(carve({}, frame, 0.5), InvalidInput);
}

TEST_CASE("carve: sphere silhouettes over a 120 degree arc") {
    const GridFrame frame = unit_frame(24);
    const double radius = 0.22;
    std::vector<ViewMask> masks;
    for (int v = 0; v < 5; ++v) {
        const Camera cam = view_at(-60.0 + 30.0 * v);
        const CameraBasis basis = camera_basis(cam);
        Image mask(cam.width, cam.height, 1, 0.0);
        // rasterize the sphere's silhouette by sampling cell candidates
        for (int y = 0; y < cam.height; ++y)
            for (int x = 0; x < cam.width; ++x) {
                // distance of the pixel ray to the sphere center
                const Ray ray = pixel_ray(cam, basis, x, y);
                const Vec3 oc = Vec3(0, 0, 0) - ray.origin;
                const double along = oc.dot(ray.dir);
                const double closest = (oc - ray.dir * along).norm();
                if (closest <= radius) mask.at(x, y) = 1.0;
            }
        masks.push_back(ViewMask{mask, cam});
    }
    const ScalarGrid hull = carve(masks, frame, 0.0);

    // hull must contain the sphere and not exceed ~2.5x its volume
    double hull_volume = 0.0;
    bool contains_sphere = true;
    for (int k = 0; k < 24; ++k)
        for (int j = 0; j < 24; ++j)
            for (int i = 0; i < 24; ++i) {
                const Vec3 p = hull.cell_center(i, j, k);
                const bool inside = p.norm() <= radius - frame.cell_size;  // one-cell margin
                if (hull.at(i, j, k) > 0.5) hull_volume += 1.0;
                if (inside && hull.at(i, j, k) < 0.5) contains_sphere = false;
            }
    CHECK(contains_sphere);
    const double sphere_cells =
        4.0 / 3.0 * kPi * std::pow(radius / frame.cell_size, 3.0);
    CHECK(hull_volume >= sphere_cells * 0.99);
    CHECK(hull_volume <= sphere_cells * 2.5);
}

TEST_CASE("carve: monotone in the masks; more views never grow the hull") {
    const GridFrame frame = unit_frame(12);
    Rng rng(55);
    std::vector<ViewMask> masks;
    for (double az : {-40.0, 20.0}) {
        Image m(24, 24, 1);
        for (double& v : m.data) v = rng.uniform(0.0, 1.0);
        masks.push_back(ViewMask{m, view_at(az, 24)});
    }
    const ScalarGrid hull = carve(masks, frame, 0.0);

    // enlarge one mask pointwise -> hull does not shrink anywhere
    std::vector<ViewMask> bigger = masks;
    for (double& v : bigger[0].mask.data) v = std::min(1.0, v + 0.3);
    const ScalarGrid hull_big = carve(bigger, frame, 0.0);
    for (std::size_t i = 0; i < hull.data.size(); ++i)
        CHECK(hull_big.data[i] >= hull.data[i] - 1e-12);

    // add a view -> hull never grows (pre-blur)
    std::vector<ViewMask> more = masks;
    Image extra(24, 24, 1);
    for (double& v : extra.data) v = rng.uniform(0.0, 1.0);
    more.push_back(ViewMask{extra, view_at(80.0, 24)});
    const ScalarGrid hull_more = carve(more, frame, 0.0);
    for (std::size_t i = 0; i < hull.data.size(); ++i)
        CHECK(hull_more.data[i] <= hull.data[i] + 1e-12);
}

TEST_CASE("single view hull: symmetric masks and brute-force containment") {
    const GridFrame frame = unit_frame(16);
    const Camera cam = view_at(0);

    // all-ones mask: interior of the frusta intersection is kept
    const ViewMask ones{Image(32, 32, 1, 1.0), cam};
    const ScalarGrid h1 = single_view_hull(ones, frame, 0.0);
    CHECK(h1.at(8, 8, 8) == doctest::Approx(1.0));

    // off-center blob: brute-force oracle over all cells using the same
    // projector; the hull must contain every cell whose projections fall in
    // all (mirrored) masks
    Image blob(32, 32, 1, 0.0);
    for (int y = 10; y < 18; ++y)
        for (int x = 18; x < 26; ++x) blob.at(x, y) = 1.0;
    const ViewMask vm{blob, cam};
    const ScalarGrid hull = single_view_hull(vm, frame, 0.0);

    // brute-force oracle: replay the construction cell by cell
    Image mirrored(32, 32, 1, 0.0);
    for (int y = 0; y < 32; ++y)
        for (int x = 0; x < 32; ++x) {
            const double rx = 31.0 - x;  // axis projects to the image center column
            mirrored.at(x, y) = std::max(blob.at(x, y), blob.sample(rx, y));
        }
    std::vector<Camera> cams{cam};
    std::vector<const Image*> mask_imgs{&blob};
    for (int a = 1; a <= 4; ++a) {
        cams.push_back(rotated_about_y(cam, frame.center(), 360.0 * a / 5));
        mask_imgs.push_back(&mirrored);
    }
    int nonzero = 0;
    for (int k = 0; k < 16; ++k)
        for (int j = 0; j < 16; ++j)
            for (int i = 0; i < 16; ++i) {
                const Vec3 p = hull.cell_center(i, j, k);
                double expect = 1.0;
                for (size_t v = 0; v < cams.size(); ++v) {
                    const CameraBasis basis = camera_basis(cams[v]);
                    double px, py;
                    if (!project_point(cams[v], basis, p, px, py) || px < 0 || px > 31 ||
                        py < 0 || py > 31) {
                        expect = 0.0;
                        break;
                    }
                    expect *= mask_imgs[v]->sample(px, py);
                }
                CHECK(hull.at(i, j, k) == doctest::Approx(expect).epsilon(1e-9));
                if (expect > 0.5) ++nonzero;
            }
    CHECK(nonzero > 0);
}
