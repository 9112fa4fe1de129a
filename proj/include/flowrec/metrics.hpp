#pragma once

#include <optional>
#include <vector>

#include "flowrec/advect.hpp"
#include "flowrec/grid.hpp"
#include "flowrec/image.hpp"

namespace flowrec {

/// Root mean squared difference over cells; with a mask, only cells where
/// mask > 0.5 contribute.
double rmse(const ScalarGrid& a, const ScalarGrid& b, const ScalarGrid* mask = nullptr);
double rmse(const VectorGrid& a, const VectorGrid& b, const ScalarGrid* mask = nullptr);
double rmse(const Image& a, const Image& b);

/// 10 log10(peak^2 / MSE), capped at 99 dB for identical images.
double psnr(const Image& img, const Image& ref, double peak = 1.0);

/// Mean local SSIM with an 11x11 Gaussian window (sigma 1.5), k1=0.01,
/// k2=0.03, dynamic range 1.
double ssim(const Image& img, const Image& ref);

/// Hull-masked per-frame transport residual: the advected previous frame
/// (plus inflow when given), hull-composed, against the stored frame.
std::vector<double> transport_error(const std::vector<ScalarGrid>& rho_seq,
                                    const std::vector<VectorGrid>& u_seq,
                                    const std::vector<ScalarGrid>& hulls,
                                    const std::vector<ScalarGrid>* inflows, AdvectionScheme scheme);

/// Repeatedly advects an initial state with a velocity sequence; the caller
/// compares the final grid against its reference.
ScalarGrid warp_test(const ScalarGrid& rho_init, const std::vector<VectorGrid>& u_seq,
                     AdvectionScheme scheme);

}  // namespace flowrec
