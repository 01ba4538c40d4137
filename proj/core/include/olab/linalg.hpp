#pragma once

#include "olab/tensor.hpp"

namespace olab {

struct EigResult {
    Tensor eigenvalues;  // k, sorted descending
    Tensor eigenvectors; // k x k, column i pairs with eigenvalue i
};

/// Symmetric eigendecomposition via cyclic Jacobi rotations. Sweeps stop when
/// the off-diagonal Frobenius mass drops below 1e-12 * ||A||_F or after 100
/// sweeps. Throws if `a` is not symmetric within 1e-10 relative.
EigResult sym_eig(const Tensor &a);

/// Q f(Lambda) Q^T for f(l) = (l + eps)^power, eigenvalues clamped at zero
/// before the shift. Used for Shampoo-style fractional matrix powers.
Tensor sym_power_from_eig(const EigResult &eig, double power, double eps);

} // namespace olab
