#include <doctest.h>

#include <cstdio>
#include <filesystem>

#include "flowrec/grid.hpp"
#include "flowrec/rng.hpp"
#include "test_util.hpp"

using namespace flowrec;
using namespace flowrec::testutil;

TEST_CASE("trilinear sampling: cell centers and constants") {
    Rng rng(11);
    ScalarGrid g = random_scalar({4, 5, 3}, rng);
    // exact value at every cell center
    for (int k = 0; k < 3; ++k)
        for (int j = 0; j < 5; ++j)
            for (int i = 0; i < 4; ++i)
                CHECK(sample_trilinear(g, g.cell_center(i, j, k)) ==
                      doctest::Approx(g.at(i, j, k)).epsilon(1e-14));

    ScalarGrid c({4, 4, 4}, Vec3(), 1.0, 0.73);
    for (int t = 0; t < 20; ++t) {
        const Vec3 p(rng.uniform(-2, 6), rng.uniform(-2, 6), rng.uniform(-2, 6));
        CHECK(sample_trilinear(c, p) == doctest::Approx(0.73).epsilon(1e-14));
    }
}

TEST_CASE("trilinear sampling: 1D ramp midpoint and linearity") {
    ScalarGrid g({2, 1, 1}, Vec3(), 1.0);
    g.at(0, 0, 0) = 0.0;
    g.at(1, 0, 0) = 1.0;
    CHECK(sample_trilinear(g, Vec3(0.5, 0, 0)) == doctest::Approx(0.5));

    // sample(alpha*a + beta*b, p) == alpha*sample(a,p) + beta*sample(b,p)
    Rng rng(7);
    ScalarGrid a = random_scalar({5, 4, 6}, rng);
    ScalarGrid b = random_scalar({5, 4, 6}, rng);
    const double alpha = 1.7, beta = -0.4;
    ScalarGrid mix = a;
    for (std::size_t i = 0; i < mix.data.size(); ++i)
        mix.data[i] = alpha * a.data[i] + beta * b.data[i];
    for (int t = 0; t < 50; ++t) {
        const Vec3 p(rng.uniform(-1, 6), rng.uniform(-1, 5), rng.uniform(-1, 7));
        const double lhs = sample_trilinear(mix, p);
        const double rhs = alpha * sample_trilinear(a, p) + beta * sample_trilinear(b, p);
        CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
    }
}

TEST_CASE("resample: identity, constants, ramps") {
    Rng rng(3);
    ScalarGrid g = random_scalar({6, 6, 6}, rng);
    const ScalarGrid same = resample(g, g.dims);
    CHECK(same.data == g.data);

    ScalarGrid c({5, 5, 5}, Vec3(), 0.2, 0.31);
    const ScalarGrid up = resample(c, {9, 9, 9});
    const ScalarGrid down = resample(c, {3, 3, 3});
    for (double v : up.data) CHECK(v == doctest::Approx(0.31).epsilon(1e-14));
    for (double v : down.data) CHECK(v == doctest::Approx(0.31).epsilon(1e-14));

    // linear ramp upsamples exactly away from the clamped border
    ScalarGrid ramp({8, 8, 8}, Vec3(), 1.0);
    for (int k = 0; k < 8; ++k)
        for (int j = 0; j < 8; ++j)
            for (int i = 0; i < 8; ++i) ramp.at(i, j, k) = 0.5 * i - 0.25 * j + 0.125 * k;
    const ScalarGrid up2 = resample(ramp, {16, 16, 16});
    // interior new cells: source coordinate g = (i+0.5)/2 - 0.5 within [0,7]
    for (int k = 2; k < 14; ++k)
        for (int j = 2; j < 14; ++j)
            for (int i = 2; i < 14; ++i) {
                const double gx = (i + 0.5) * 0.5 - 0.5;
                const double gy = (j + 0.5) * 0.5 - 0.5;
                const double gz = (k + 0.5) * 0.5 - 0.5;
                const double expect = 0.5 * gx - 0.25 * gy + 0.125 * gz;
                CHECK(std::abs(up2.at(i, j, k) - expect) < 1e-12);
            }
}

TEST_CASE("resample: round trip of a constant and integral preservation") {
    ScalarGrid c({6, 6, 6}, Vec3(1, 2, 3), 0.5, 1.23);
    const ScalarGrid rt = resample(resample(c, {11, 7, 9}), c.dims);
    for (double v : rt.data) CHECK(v == doctest::Approx(1.23).epsilon(1e-12));
    // integral of a constant grid is exactly preserved under resizing
    const ScalarGrid up = resample(c, {12, 12, 12});
    const double vol_old = c.cell_size * c.cell_size * c.cell_size;
    const double vol_new = up.cell_size * up.cell_size * up.cell_size;
    double s_old = 0, s_new = 0;
    for (double v : c.data) s_old += v;
    for (double v : up.data) s_new += v;
    CHECK(s_old * vol_old == doctest::Approx(s_new * vol_new).epsilon(1e-12));
}

TEST_CASE("divergence: constants, linear fields, solenoidal fields") {
    VectorGrid constant({6, 6, 6}, Vec3(), 1.0, Vec3(0.3, -0.2, 0.9));
    for (double v : divergence(constant).data) CHECK(v == 0.0);

    // u = (x, 0, 0) in cell units -> divergence 1 everywhere (one-sided edges
    // of a linear field are exact too)
    VectorGrid lin({6, 6, 6}, Vec3(), 1.0);
    for (int k = 0; k < 6; ++k)
        for (int j = 0; j < 6; ++j)
            for (int i = 0; i < 6; ++i) lin.set_vec(i, j, k, Vec3(i, 0, 0));
    for (double v : divergence(lin).data) CHECK(v == doctest::Approx(1.0).epsilon(1e-13));

    VectorGrid rot({6, 6, 6}, Vec3(), 1.0);
    for (int k = 0; k < 6; ++k)
        for (int j = 0; j < 6; ++j)
            for (int i = 0; i < 6; ++i) rot.set_vec(i, j, k, Vec3(j, -i, 0));
    for (double v : divergence(rot).data) CHECK(v == doctest::Approx(0.0).epsilon(1e-13));
}

TEST_CASE("divergence: second-order interior convergence on a curl field") {
    // velocity = curl of (0, 0, psi) with psi = sin(2 pi x) sin(4 pi y):
    // u = (d psi/dy, -d psi/dx, 0), divergence is analytically 0; sampled
    // on grids of halving h the discrete interior divergence drops ~4x.
    // (the two frequencies must differ, otherwise the discrete stencils
    // cancel exactly)
    auto build = [](int n) {
        VectorGrid u({n, n, n}, Vec3(), 1.0 / n);
        for (int k = 0; k < n; ++k)
            for (int j = 0; j < n; ++j)
                for (int i = 0; i < n; ++i) {
                    const double x = (i + 0.5) / n, y = (j + 0.5) / n;
                    u.set_vec(i, j, k,
                              Vec3(4 * kPi * std::sin(2 * kPi * x) * std::cos(4 * kPi * y),
                                   -2 * kPi * std::cos(2 * kPi * x) * std::sin(4 * kPi * y), 0));
                }
        return u;
    };
    std::vector<double> errs;
    for (int n : {8, 16, 32}) {
        const VectorGrid u = build(n);
        const ScalarGrid d = divergence(u);
        double max_int = 0.0;
        for (int k = 1; k < n - 1; ++k)
            for (int j = 1; j < n - 1; ++j)
                for (int i = 1; i < n - 1; ++i) max_int = std::max(max_int, std::abs(d.at(i, j, k)));
        errs.push_back(max_int);
    }
    CHECK(errs[1] < errs[0]);
    CHECK(errs[2] < errs[1] / 3.0);  // ~4x once in the asymptotic regime
}

TEST_CASE("spatial gradient: constants and linear fields") {
    ScalarGrid c({5, 5, 5}, Vec3(), 1.0, 3.14);
    for (double v : spatial_gradient(c).data) CHECK(v == 0.0);

    ScalarGrid lin({6, 6, 6}, Vec3(), 1.0);
    for (int k = 0; k < 6; ++k)
        for (int j = 0; j < 6; ++j)
            for (int i = 0; i < 6; ++i) lin.at(i, j, k) = i + 2.0 * j + 3.0 * k;
    const VectorGrid g = spatial_gradient(lin);
    for (int k = 0; k < 6; ++k)
        for (int j = 0; j < 6; ++j)
            for (int i = 0; i < 6; ++i) {
                const Vec3 v = g.vec_at(i, j, k);
                CHECK(v.x == doctest::Approx(1.0).epsilon(1e-13));
                CHECK(v.y == doctest::Approx(2.0).epsilon(1e-13));
                CHECK(v.z == doctest::Approx(3.0).epsilon(1e-13));
            }
}

TEST_CASE("GTVF round trip") {
    Rng rng(99);
    ScalarGrid g = random_scalar({4, 3, 5}, rng, -2.0, 2.0, Vec3(0.5, -1.0, 2.0), 0.25);
    const std::string path = (std::filesystem::temp_directory_path() / "t.gtvf").string();
    save_gtvf(path, g);
    const ScalarGrid r = load_gtvf_scalar(path);
    REQUIRE(r.dims == g.dims);
    CHECK(r.cell_size == doctest::Approx(0.25));
    for (std::size_t i = 0; i < g.data.size(); ++i)
        CHECK(r.data[i] == doctest::Approx(g.data[i]).epsilon(1e-6));

    VectorGrid v({3, 4, 2}, Vec3(), 1.0);
    for (double& d : v.data) d = rng.uniform(-1, 1);
    save_gtvf(path, v);
    const VectorGrid rv = load_gtvf_vector(path);
    REQUIRE(rv.dims == v.dims);
    for (std::size_t i = 0; i < v.data.size(); ++i)
        CHECK(rv.data[i] == doctest::Approx(v.data[i]).epsilon(1e-6));

    CHECK_THROWS_AS(load_gtvf_scalar(path), IoError);  // channel mismatch
    std::filesystem::remove(path);
    CHECK_THROWS_AS(load_gtvf_scalar(path), IoError);
}
