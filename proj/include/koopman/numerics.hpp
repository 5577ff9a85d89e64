#pragma once

#include "koopman/types.hpp"

namespace koopman {

// Default relative cutoff for treating singular values as zero in pinv_solve:
// rtol = 1e-12 * max(rows, cols), applied relative to the largest singular value.
double pinv_default_rtol(Eigen::Index rows, Eigen::Index cols);

// Minimum-norm least-squares solution of A x = b via a rank-revealing SVD.
// Singular values sigma_k <= rtol * sigma_max are treated as exact zeros, so an
// all-zero A yields x = 0. b may have several columns.
CMat pinv_solve(const CMat& A, const CMat& b, double rtol = -1.0);
RMat pinv_solve(const RMat& A, const RMat& b, double rtol = -1.0);

// argmin_x |A x - b|^2 + delta2 |x|^2. delta2 = 0 falls through to pinv_solve;
// delta2 > 0 is solved through the (strictly convex) normal equations.
CMat ridge_solve(const CMat& A, const CMat& b, double delta2);

// exp(J t) for a single Jordan block: upper triangular, entry (i, i+k) equals
// exp(lambda t) t^k / k!.
CMat jordan_exp(const JordanBlock& block, double t);

}  // namespace koopman
