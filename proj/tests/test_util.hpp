#pragma once

#include <cmath>

#include "flowrec/grid.hpp"
#include "flowrec/rng.hpp"

namespace flowrec::testutil {

inline ScalarGrid random_scalar(GridDims d, Rng& rng, double lo = 0.0, double hi = 1.0,
                                Vec3 origin = Vec3(), double h = 1.0) {
    ScalarGrid g(d, origin, h);
    for (double& v : g.data) v = rng.uniform(lo, hi);
    return g;
}

inline VectorGrid random_vector(GridDims d, Rng& rng, double amp, Vec3 origin = Vec3(),
                                double h = 1.0) {
    VectorGrid g(d, origin, h);
    for (double& v : g.data) v = rng.uniform(-amp, amp);
    return g;
}

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double rel_err(double a, double b) {
    const double scale = std::max(std::abs(a), std::abs(b));
    if (scale == 0.0) return 0.0;
    return std::abs(a - b) / scale;
}

}  // namespace flowrec::testutil
