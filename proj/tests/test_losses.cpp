#include <doctest.h>

#include <cmath>

#include "flowrec/losses.hpp"
#include "flowrec/rng.hpp"
#include "test_util.hpp"

using namespace flowrec;
using namespace flowrec::testutil;

namespace {

constexpr AdvectionScheme kScheme = AdvectionScheme::MacCormackClamped;

ScalarGrid unit_volume(int n, double fill = 0.0) {
    const double h = 1.0 / n;
    return ScalarGrid({n, n, n}, Vec3(-0.5 + 0.5 * h, -0.5 + 0.5 * h, -0.5 + 0.5 * h), h, fill);
}

}  // namespace

TEST_CASE("fade schedules") {
    Fade lin{1.0, 3.0, FadeKind::Linear};
    CHECK(lin.at(0.0) == doctest::Approx(1.0));
    CHECK(lin.at(0.5) == doctest::Approx(2.0));
    CHECK(lin.at(1.0) == doctest::Approx(3.0));

    Fade expo{1e-10, 1e-8, FadeKind::Exponential};
    CHECK(expo.at(0.0) == doctest::Approx(1e-10));
    CHECK(expo.at(0.5) == doctest::Approx(1e-9));
    CHECK(expo.at(1.0) == doctest::Approx(1e-8));

    Fade c{0.7, 0.0, FadeKind::Constant};
    CHECK(c.at(0.9) == doctest::Approx(0.7));

    LossWeights w;
    CHECK_NOTHROW(w.validate());
    w.beta_ema = 1.5;
    CHECK_THROWS_AS(w.validate(), InvalidInput);
}

TEST_CASE("div loss: constants, linear field, gradient check") {
    VectorGrid constant({6, 6, 6}, Vec3(), 1.0, Vec3(0.4, 0.1, -0.2));
    CHECK(div_loss(constant).loss == 0.0);

    // u=(x,0,0) in cell units: every cell contributes 1
    VectorGrid lin({6, 6, 6}, Vec3(), 1.0);
    for (int k = 0; k < 6; ++k)
        for (int j = 0; j < 6; ++j)
            for (int i = 0; i < 6; ++i) lin.set_vec(i, j, k, Vec3(i, 0, 0));
    CHECK(div_loss(lin).loss == doctest::Approx(216.0).epsilon(1e-12));

    Rng rng(61);
    const VectorGrid u = random_vector({8, 8, 8}, rng, 1.0);
    const DivLossResult res = div_loss(u);
    const double eps = 1e-6;
    for (int trial = 0; trial < 5; ++trial) {
        const VectorGrid du = random_vector({8, 8, 8}, rng, 1.0);
        VectorGrid up = u, um = u;
        for (std::size_t i = 0; i < u.data.size(); ++i) {
            up.data[i] += eps * du.data[i];
            um.data[i] -= eps * du.data[i];
        }
        const double numeric = (div_loss(up).loss - div_loss(um).loss) / (2 * eps);
        const double analytic = dot(res.grad_u.data, du.data);
        CHECK(rel_err(analytic, numeric) < 1e-6);
    }
}

TEST_CASE("warp loss: exact transport and zero-velocity fixed points") {
    Rng rng(62);
    const GridDims d{8, 8, 8};
    const ScalarGrid s_prev = random_scalar(d, rng, 0.0, 1.0);
    const VectorGrid u_prev = random_vector(d, rng, 0.8);
    const VectorGrid u_cur = random_vector(d, rng, 0.8);
    const ScalarGrid s_cur = advect(s_prev, u_prev, kScheme);
    const ScalarGrid s_next = advect(s_cur, u_cur, kScheme);

    const WarpLossResult res = warp_loss(&s_prev, s_cur, &s_next, &u_prev, &u_cur, kScheme);
    CHECK(res.loss == doctest::Approx(0.0).epsilon(1e-20));
    for (double v : res.g_prev.data) CHECK(v == 0.0);
    for (double v : res.g_cur.data) CHECK(v == 0.0);

    // static field, zero velocity
    const ScalarGrid s = random_scalar(d, rng, 0.0, 1.0);
    const VectorGrid zero(d, Vec3(), 1.0);
    const WarpLossResult stat = warp_loss(&s, s, &s, &zero, &zero, kScheme);
    CHECK(stat.loss == doctest::Approx(0.0).epsilon(1e-20));
}

TEST_CASE("warp loss: finite-difference gradients for all five slots") {
    Rng rng(63);
    const GridDims d{8, 8, 8};
    const ScalarGrid s_prev = random_scalar(d, rng, 0.0, 1.0);
    const ScalarGrid s_cur = random_scalar(d, rng, 0.0, 1.0);
    const ScalarGrid s_next = random_scalar(d, rng, 0.0, 1.0);
    const VectorGrid u_prev = random_vector(d, rng, 0.7);
    const VectorGrid u_cur = random_vector(d, rng, 0.7);

    const WarpLossResult res = warp_loss(&s_prev, s_cur, &s_next, &u_prev, &u_cur, kScheme);
    CHECK(res.loss > 0.0);

    const double eps = 1e-6;
    auto loss_of = [&](const ScalarGrid& a, const ScalarGrid& b, const ScalarGrid& c,
                       const VectorGrid& ua, const VectorGrid& ub) {
        return warp_loss(&a, b, &c, &ua, &ub, kScheme).loss;
    };

    // scalar slots
    const ScalarGrid ds = random_scalar(d, rng, -1.0, 1.0);
    auto check_scalar = [&](const ScalarGrid& grad, int slot) {
        ScalarGrid ap = s_prev, am = s_prev, bp = s_cur, bm = s_cur, cp = s_next, cm = s_next;
        for (std::size_t i = 0; i < ds.data.size(); ++i) {
            if (slot == 0) {
                ap.data[i] += eps * ds.data[i];
                am.data[i] -= eps * ds.data[i];
            } else if (slot == 1) {
                bp.data[i] += eps * ds.data[i];
                bm.data[i] -= eps * ds.data[i];
            } else {
                cp.data[i] += eps * ds.data[i];
                cm.data[i] -= eps * ds.data[i];
            }
        }
        const double numeric = (loss_of(ap, bp, cp, u_prev, u_cur) -
                                loss_of(am, bm, cm, u_prev, u_cur)) /
                               (2 * eps);
        CHECK(rel_err(dot(grad.data, ds.data), numeric) < 1e-5);
    };
    check_scalar(res.g_prev, 0);
    check_scalar(res.g_cur, 1);
    check_scalar(res.g_next, 2);

    // velocity slots
    const VectorGrid du = random_vector(d, rng, 1.0);
    auto check_vec = [&](const VectorGrid& grad, int slot) {
        VectorGrid ap = u_prev, am = u_prev, bp = u_cur, bm = u_cur;
        for (std::size_t i = 0; i < du.data.size(); ++i) {
            if (slot == 0) {
                ap.data[i] += eps * du.data[i];
                am.data[i] -= eps * du.data[i];
            } else {
                bp.data[i] += eps * du.data[i];
                bm.data[i] -= eps * du.data[i];
            }
        }
        const double numeric = (loss_of(s_prev, s_cur, s_next, ap, bp) -
                                loss_of(s_prev, s_cur, s_next, am, bm)) /
                               (2 * eps);
        CHECK(rel_err(dot(grad.data, du.data), numeric) < 1e-5);
    };
    check_vec(res.g_u_prev, 0);
    check_vec(res.g_u_cur, 1);

    // missing neighbors drop their term
    const WarpLossResult first = warp_loss(nullptr, s_cur, &s_next, nullptr, &u_cur, kScheme);
    const WarpLossResult last = warp_loss(&s_prev, s_cur, nullptr, &u_prev, nullptr, kScheme);
    CHECK(first.loss + last.loss == doctest::Approx(res.loss).epsilon(1e-12));
}

TEST_CASE("warp loss vector: self-advected sequence has zero loss") {
    Rng rng(64);
    const GridDims d{6, 6, 6};
    const VectorGrid u_prev = random_vector(d, rng, 0.5);
    const VectorGrid u_cur = advect_vector(u_prev, u_prev, kScheme);
    const VectorGrid u_next = advect_vector(u_cur, u_cur, kScheme);
    const WarpLossVecResult res = warp_loss_vector(&u_prev, u_cur, &u_next, kScheme);
    CHECK(res.loss == doctest::Approx(0.0).epsilon(1e-18));
    for (double v : res.g_cur.data) CHECK(std::abs(v) < 1e-12);

    // gradient of the advected-field slots matches finite differences when
    // the advecting occurrences are held fixed (frozen self-advection)
    const VectorGrid a = random_vector(d, rng, 0.6);
    const VectorGrid b = random_vector(d, rng, 0.6);
    const VectorGrid c = random_vector(d, rng, 0.6);
    const WarpLossVecResult r2 = warp_loss_vector(&a, b, &c, kScheme);
    const double eps = 1e-6;
    const VectorGrid db = random_vector(d, rng, 1.0);
    auto frozen_loss = [&](const VectorGrid& bcur) {
        // matches warp_loss_vector's definition with the advecting velocity
        // frozen at b
        double loss = 0.0;
        const VectorGrid adv1 = advect_vector(a, a, kScheme);
        for (std::size_t i = 0; i < adv1.data.size(); ++i) {
            const double r = adv1.data[i] - bcur.data[i];
            loss += r * r;
        }
        ScalarGrid comp(d, Vec3(), 1.0);
        for (int ch = 0; ch < 3; ++ch) {
            for (std::int64_t idx = 0; idx < d.cells(); ++idx)
                comp.data[idx] = bcur.data[3 * idx + ch];
            const ScalarGrid adv = advect(comp, b, kScheme);
            for (std::int64_t idx = 0; idx < d.cells(); ++idx) {
                const double r = adv.data[idx] - c.data[3 * idx + ch];
                loss += r * r;
            }
        }
        return loss;
    };
    VectorGrid bp = b, bm = b;
    for (std::size_t i = 0; i < b.data.size(); ++i) {
        bp.data[i] += eps * db.data[i];
        bm.data[i] -= eps * db.data[i];
    }
    const double numeric = (frozen_loss(bp) - frozen_loss(bm)) / (2 * eps);
    CHECK(rel_err(dot(r2.g_cur.data, db.data), numeric) < 1e-5);
}

TEST_CASE("target loss: exact-match and zero-density fixed points") {
    Rng rng(65);
    ScalarGrid rho = unit_volume(8);
    for (double& v : rho.data) v = rng.uniform(0.05, 0.8);
    LightConfig lights;
    lights.ambient = 0.64;
    lights.points.push_back({Vec3(0.2, 2.0, 0.1), 0.85});
    RenderSettings settings;
    settings.normalized_scatter = false;
    Background bg;
    std::vector<Camera> cams;
    for (double az : {-30.0, 30.0}) {
        Camera cam;
        cam.position = Vec3(2.2 * std::sin(deg_to_rad(az)), 0.3, 2.2 * std::cos(deg_to_rad(az)));
        cam.look_at = Vec3(0, 0, 0);
        cam.fov_y = 40.0;
        cam.width = 12;
        cam.height = 12;
        cam.near = 0.5;
        cam.far = 5.0;
        cams.push_back(cam);
    }
    std::vector<Image> targets;
    for (const Camera& cam : cams) targets.push_back(render_view(rho, lights, cam, settings, bg));

    const TargetLossResult exact = target_loss(rho, lights, cams, targets, settings, bg);
    CHECK(exact.loss == doctest::Approx(0.0).epsilon(1e-20));
    for (double v : exact.grad_rho.data) CHECK(v == 0.0);

    // zero density against black targets: also a fixed point
    ScalarGrid zero = unit_volume(8);
    std::vector<Image> black(cams.size(), Image(12, 12, 1, 0.0));
    const TargetLossResult z = target_loss(zero, lights, cams, black, settings, bg);
    CHECK(z.loss == 0.0);
    for (double v : z.grad_rho.data) CHECK(v == 0.0);

    // gradient check against finite differences
    std::vector<Image> shifted = targets;
    for (Image& img : shifted)
        for (double& v : img.data) v += 0.05;
    const TargetLossResult res = target_loss(rho, lights, cams, shifted, settings, bg);
    CHECK(res.loss > 0.0);
    const double eps = 1e-6;
    ScalarGrid dir = unit_volume(8);
    for (double& v : dir.data) v = rng.uniform(-1.0, 1.0);
    ScalarGrid rp = rho, rm = rho;
    for (std::size_t i = 0; i < rho.data.size(); ++i) {
        rp.data[i] += eps * dir.data[i];
        rm.data[i] = std::max(0.0, rm.data[i] - eps * dir.data[i]);
    }
    const double numeric = (target_loss(rp, lights, cams, shifted, settings, bg).loss -
                            target_loss(rm, lights, cams, shifted, settings, bg).loss) /
                           (2 * eps);
    CHECK(rel_err(dot(res.grad_rho.data, dir.data), numeric) < 1e-5);

    std::vector<Image> wrong(1, targets[0]);
    CHECK_THROWS_AS(target_loss(rho, lights, cams, wrong, settings, bg), InvalidInput);
}
