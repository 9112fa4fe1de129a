#pragma once

#include "flowrec/grid.hpp"

namespace flowrec {

enum class AdvectionScheme {
    SemiLagrangian,
    MacCormackClamped,
};

/// Transports s by one frame along u: out(x) = s(x - u(x)) with trilinear
/// lookups, clamped at the open boundaries. MacCormack runs the
/// predictor-corrector variant and reverts per cell to the semi-Lagrangian
/// value whenever the corrected value leaves the min/max range of the first
/// lookup's eight interpolants.
ScalarGrid advect(const ScalarGrid& s, const VectorGrid& u, AdvectionScheme scheme);

/// Componentwise advection of a vector field (each channel treated as a
/// scalar).
VectorGrid advect_vector(const VectorGrid& field, const VectorGrid& u, AdvectionScheme scheme);

/// Reverse-mode gradient w.r.t. the advected field:
/// returns d<grad_out, advect(s,u)>/ds. The MacCormack clamp branch is
/// re-derived from the forward pass and held fixed.
ScalarGrid advect_vjp_s(const ScalarGrid& s, const VectorGrid& u, const ScalarGrid& grad_out,
                        AdvectionScheme scheme);

/// Reverse-mode gradient w.r.t. the velocity: d<grad_out, advect(s,u)>/du,
/// obtained by differentiating the lookup positions.
VectorGrid advect_vjp_u(const ScalarGrid& s, const VectorGrid& u, const ScalarGrid& grad_out,
                        AdvectionScheme scheme);

}  // namespace flowrec
