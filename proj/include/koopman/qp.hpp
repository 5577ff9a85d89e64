#pragma once

#include "koopman/types.hpp"

namespace koopman {

// Dense condensed quadratic program in the horizon input vector u (length
// m*Np): minimize u^T H1 u + (h + Re(H2^T z0))^T u subject to
// L u <= d - Re(M z0). H2 and M carry the only z0 dependence, so one matrix-
// vector product per solve folds the lifted state into real data.
struct DenseQp {
  RMat H1;  // mNp x mNp, symmetric PSD
  RVec h;   // mNp
  CMat H2;  // N x mNp
  RMat L;   // n_c x mNp (may have zero rows: unconstrained)
  CMat M;   // n_c x N
  RVec d;   // n_c

  Eigen::Index vars() const { return H1.rows(); }
  Eigen::Index constraints() const { return L.rows(); }
  void validate() const;
};

struct QpSolution {
  RVec u_star;
  RVec duals;             // one multiplier per constraint row, >= 0
  double stationarity = 0.0;    // |2 H1 u + q + L^T y|_inf, recomputed
  double primal_feasibility = 0.0;  // max(0, max(L u - d)), recomputed
  double complementarity = 0.0;     // max |y_i (L u - d)_i|, recomputed
  int iterations = 0;
  bool converged = false;
};

struct QpWarmStart {
  RVec u;
  RVec duals;
};

struct QpSettings {
  double eps_abs = 1e-6;
  double eps_rel = 1e-6;
  int max_iterations = 20000;
  double rho = 0.1;        // initial step; adapted in [rho_min, rho_max]
  double rho_min = 1e-3;
  double rho_max = 1e3;
  double sigma = 1e-6;     // primal regularization
  double alpha = 1.6;      // over-relaxation
  bool polish = true;      // active-set KKT refinement of the ADMM point
};

// Solves with the z0-dependent terms already folded into q and d.
QpSolution solve_qp_folded(const RMat& H1, const RVec& q, const RMat& L, const RVec& d,
                           const QpWarmStart* warm = nullptr, const QpSettings& settings = {});

// Folds z0 through H2 / M and solves. Throws NumericalError when the
// divergence certificate detects primal infeasibility.
QpSolution solve_qp(const DenseQp& qp, const CVec& z0, const QpWarmStart* warm = nullptr,
                    const QpSettings& settings = {});

}  // namespace koopman
