#include <doctest.h>

#include <cmath>

#include "flowrec/advect.hpp"
#include "flowrec/rng.hpp"
#include "test_util.hpp"

using namespace flowrec;
using namespace flowrec::testutil;

namespace {

const AdvectionScheme kSchemes[] = {AdvectionScheme::SemiLagrangian,
                                    AdvectionScheme::MacCormackClamped};

// directional derivative of <g, advect(s,u)> along ds via central differences
double fd_directional_s(const ScalarGrid& s, const VectorGrid& u, const ScalarGrid& g,
                        const ScalarGrid& ds, AdvectionScheme scheme, double eps) {
    ScalarGrid sp = s, sm = s;
    for (std::size_t i = 0; i < s.data.size(); ++i) {
        sp.data[i] += eps * ds.data[i];
        sm.data[i] -= eps * ds.data[i];
    }
    const ScalarGrid ap = advect(sp, u, scheme);
    const ScalarGrid am = advect(sm, u, scheme);
    double v = 0.0;
    for (std::size_t i = 0; i < g.data.size(); ++i)
        v += g.data[i] * (ap.data[i] - am.data[i]);
    return v / (2 * eps);
}

double fd_directional_u(const ScalarGrid& s, const VectorGrid& u, const ScalarGrid& g,
                        const VectorGrid& du, AdvectionScheme scheme, double eps) {
    VectorGrid up = u, um = u;
    for (std::size_t i = 0; i < u.data.size(); ++i) {
        up.data[i] += eps * du.data[i];
        um.data[i] -= eps * du.data[i];
    }
    const ScalarGrid ap = advect(s, up, scheme);
    const ScalarGrid am = advect(s, um, scheme);
    double v = 0.0;
    for (std::size_t i = 0; i < g.data.size(); ++i)
        v += g.data[i] * (ap.data[i] - am.data[i]);
    return v / (2 * eps);
}

}  // namespace

TEST_CASE("advect: zero velocity is the identity") {
    Rng rng(21);
    const ScalarGrid s = random_scalar({6, 5, 4}, rng);
    const VectorGrid u({6, 5, 4}, Vec3(), 1.0);
    for (auto scheme : kSchemes) {
        const ScalarGrid out = advect(s, u, scheme);
        CHECK(out.data == s.data);
    }
}

TEST_CASE("advect: constants are preserved") {
    Rng rng(22);
    ScalarGrid s({6, 6, 6}, Vec3(), 1.0, 0.42);
    const VectorGrid u = random_vector({6, 6, 6}, rng, 1.5);
    for (auto scheme : kSchemes) {
        const ScalarGrid out = advect(s, u, scheme);
        for (double v : out.data) CHECK(v == doctest::Approx(0.42).epsilon(1e-14));
    }
}

TEST_CASE("advect: integer shift moves an impulse exactly") {
    ScalarGrid s({8, 1, 1}, Vec3(), 1.0);
    s.at(4, 0, 0) = 1.0;
    VectorGrid u({8, 1, 1}, Vec3(), 1.0, Vec3(1.0, 0.0, 0.0));
    const ScalarGrid out = advect(s, u, AdvectionScheme::SemiLagrangian);
    for (int i = 0; i < 8; ++i)
        CHECK(out.at(i, 0, 0) == doctest::Approx(i == 5 ? 1.0 : 0.0).epsilon(1e-14));
}

TEST_CASE("advect: SL output of a non-negative field stays non-negative") {
    Rng rng(23);
    for (int trial = 0; trial < 5; ++trial) {
        const ScalarGrid s = random_scalar({8, 8, 8}, rng, 0.0, 2.0);
        const VectorGrid u = random_vector({8, 8, 8}, rng, 2.5);
        const ScalarGrid out = advect(s, u, AdvectionScheme::SemiLagrangian);
        for (double v : out.data) CHECK(v >= 0.0);
    }
}

TEST_CASE("advect: MacCormack clamp invariant") {
    Rng rng(24);
    for (int trial = 0; trial < 5; ++trial) {
        const ScalarGrid s = random_scalar({8, 8, 8}, rng, 0.0, 1.0);
        const VectorGrid u = random_vector({8, 8, 8}, rng, 1.5);
        const ScalarGrid mc = advect(s, u, AdvectionScheme::MacCormackClamped);
        const ScalarGrid sl = advect(s, u, AdvectionScheme::SemiLagrangian);
        const double h = s.cell_size;
        for (int k = 0; k < 8; ++k)
            for (int j = 0; j < 8; ++j)
                for (int i = 0; i < 8; ++i) {
                    // min/max over the 8 interpolants of the forward lookup
                    const Vec3 vel = u.vec_at(i, j, k);
                    const TriLookup t = locate_clamped(
                        s.dims, i - vel.x / h, j - vel.y / h, k - vel.z / h);
                    double mn = 1e300, mx = -1e300;
                    for (int dz = 0; dz < 2; ++dz)
                        for (int dy = 0; dy < 2; ++dy)
                            for (int dx = 0; dx < 2; ++dx) {
                                const double v = s.at(std::min(t.i0 + dx, 7),
                                                      std::min(t.j0 + dy, 7),
                                                      std::min(t.k0 + dz, 7));
                                mn = std::min(mn, v);
                                mx = std::max(mx, v);
                            }
                    const double out = mc.at(i, j, k);
                    const bool in_bounds = out >= mn - 1e-12 && out <= mx + 1e-12;
                    const bool is_sl = out == sl.at(i, j, k);
                    CHECK((in_bounds || is_sl));
                }
    }
}

TEST_CASE("advect_vector: componentwise and self-advection of translation") {
    Rng rng(25);
    const VectorGrid field = random_vector({6, 6, 6}, rng, 1.0);
    const VectorGrid zero({6, 6, 6}, Vec3(), 1.0);
    const VectorGrid id = advect_vector(field, zero, AdvectionScheme::MacCormackClamped);
    CHECK(id.data == field.data);

    // constant (rigid translation) field advecting itself stays constant and
    // matches the per-component scalar result
    VectorGrid rigid({6, 6, 6}, Vec3(), 1.0, Vec3(0.7, -0.3, 0.2));
    const VectorGrid out = advect_vector(rigid, rigid, AdvectionScheme::SemiLagrangian);
    ScalarGrid comp({6, 6, 6}, Vec3(), 1.0, 0.7);
    const ScalarGrid outc = advect(comp, rigid, AdvectionScheme::SemiLagrangian);
    for (std::int64_t c = 0; c < rigid.dims.cells(); ++c) {
        CHECK(out.data[3 * c + 0] == doctest::Approx(outc.data[c]).epsilon(1e-14));
        CHECK(out.data[3 * c + 0] == doctest::Approx(0.7).epsilon(1e-14));
    }
}

TEST_CASE("advect VJPs: trivial cases") {
    Rng rng(26);
    const ScalarGrid s = random_scalar({6, 6, 6}, rng);
    const VectorGrid zero_u({6, 6, 6}, Vec3(), 1.0);
    const ScalarGrid g = random_scalar({6, 6, 6}, rng, -1.0, 1.0);

    for (auto scheme : kSchemes) {
        // u == 0: identity Jacobian
        const ScalarGrid vs = advect_vjp_s(s, zero_u, g, scheme);
        for (std::size_t i = 0; i < g.data.size(); ++i)
            CHECK(vs.data[i] == doctest::Approx(g.data[i]).epsilon(1e-12));

        // zero upstream -> zero gradients
        const ScalarGrid zg({6, 6, 6}, Vec3(), 1.0);
        const ScalarGrid vs0 = advect_vjp_s(s, zero_u, zg, scheme);
        for (double v : vs0.data) CHECK(v == 0.0);
        const VectorGrid vu0 = advect_vjp_u(s, zero_u, zg, scheme);
        for (double v : vu0.data) CHECK(v == 0.0);

        // constant field: no velocity gradient
        ScalarGrid c({6, 6, 6}, Vec3(), 1.0, 0.5);
        Rng r2(27);
        const VectorGrid u = random_vector({6, 6, 6}, r2, 1.0);
        const VectorGrid vu = advect_vjp_u(c, u, g, scheme);
        for (double v : vu.data) CHECK(std::abs(v) < 1e-12);
    }
}

TEST_CASE("advect VJPs: linearity in the upstream gradient") {
    Rng rng(28);
    const ScalarGrid s = random_scalar({6, 6, 6}, rng);
    const VectorGrid u = random_vector({6, 6, 6}, rng, 1.2);
    const ScalarGrid g = random_scalar({6, 6, 6}, rng, -1.0, 1.0);
    ScalarGrid g3 = g;
    for (double& v : g3.data) v *= 3.0;
    for (auto scheme : kSchemes) {
        const ScalarGrid a = advect_vjp_s(s, u, g, scheme);
        const ScalarGrid b = advect_vjp_s(s, u, g3, scheme);
        for (std::size_t i = 0; i < a.data.size(); ++i)
            CHECK(b.data[i] == doctest::Approx(3.0 * a.data[i]).epsilon(1e-12));
    }
}

TEST_CASE("advect VJPs: finite-difference dot-product identity") {
    Rng rng(29);
    const GridDims d{8, 8, 8};
    for (auto scheme : kSchemes) {
        const ScalarGrid s = random_scalar(d, rng, 0.0, 1.0);
        // keep backtraces interior so the FD probe does not cross clamp edges
        const VectorGrid u = random_vector(d, rng, 0.9);
        const ScalarGrid g = random_scalar(d, rng, -1.0, 1.0);

        const ScalarGrid vjps = advect_vjp_s(s, u, g, scheme);
        const VectorGrid vjpu = advect_vjp_u(s, u, g, scheme);

        const double eps = 1e-6;
        for (int dir = 0; dir < 3; ++dir) {
            const ScalarGrid ds = random_scalar(d, rng, -1.0, 1.0);
            const double analytic = dot(vjps.data, ds.data);
            const double numeric = fd_directional_s(s, u, g, ds, scheme, eps);
            CHECK(rel_err(analytic, numeric) < 1e-5);

            const VectorGrid du = random_vector(d, rng, 1.0);
            const double analytic_u = dot(vjpu.data, du.data);
            const double numeric_u = fd_directional_u(s, u, g, du, scheme, eps);
            CHECK(rel_err(analytic_u, numeric_u) < 1e-5);
        }
    }
}

TEST_CASE("advect: determinism") {
    Rng rng(31);
    const ScalarGrid s = random_scalar({8, 8, 8}, rng);
    const VectorGrid u = random_vector({8, 8, 8}, rng, 1.0);
    const ScalarGrid g = random_scalar({8, 8, 8}, rng, -1, 1);
    for (auto scheme : kSchemes) {
        CHECK(advect(s, u, scheme).data == advect(s, u, scheme).data);
        CHECK(advect_vjp_s(s, u, g, scheme).data == advect_vjp_s(s, u, g, scheme).data);
        CHECK(advect_vjp_u(s, u, g, scheme).data == advect_vjp_u(s, u, g, scheme).data);
    }
}

TEST_CASE("advect: dimension mismatch is rejected") {
    const ScalarGrid s({4, 4, 4}, Vec3(), 1.0);
    const VectorGrid u({5, 4, 4}, Vec3(), 1.0);
    CHECK_THROWS_AS(advect(s, u, AdvectionScheme::SemiLagrangian), InvalidInput);
}
