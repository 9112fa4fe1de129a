#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "flowrec/common.hpp"

namespace flowrec {

/// Adam with bias correction over a flat parameter block. Moments are reset
/// when the parameter changes size (multi-scale growth).
struct AdamState {
    std::vector<double> m, v;
    std::int64_t step = 0;
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

    void match(std::size_t n) {
        if (m.size() != n) {
            m.assign(n, 0.0);
            v.assign(n, 0.0);
            step = 0;
        }
    }

    void update(std::vector<double>& param, const std::vector<double>& grad, double lr) {
        if (param.size() != grad.size()) throw InvalidInput("adam: shape mismatch");
        match(param.size());
        ++step;
        const double bias1 = 1.0 - std::pow(beta1, static_cast<double>(step));
        const double bias2 = 1.0 - std::pow(beta2, static_cast<double>(step));
        for (std::size_t i = 0; i < param.size(); ++i) {
            m[i] = beta1 * m[i] + (1.0 - beta1) * grad[i];
            v[i] = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i];
            const double mh = m[i] / bias1;
            const double vh = v[i] / bias2;
            param[i] -= lr * mh / (std::sqrt(vh) + eps);
        }
    }
};

}  // namespace flowrec
