#pragma once

#include "koopman/boundary.hpp"
#include "koopman/dynamics.hpp"
#include "koopman/observable.hpp"
#include "koopman/types.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace koopman {

struct EigenvalueSet {
  CVec values;
  bool closed_under_conjugation = false;
};

bool conjugation_closed(const CVec& values, double tol = 1e-9);

// Continuous-time eigenvalue seeds from a one-step linear fit: K minimizes
// |X' - K X|_F over snapshot pairs, eigenvalues are log(eig(K)) / Ts.
// Zero-magnitude discrete eigenvalues have no finite logarithm and are
// excluded with a warning.
EigenvalueSet dmd_eigenvalues(const TrajectoryDataset& ds,
                              std::vector<std::string>* warnings = nullptr);

// All sums sum_k alpha_k lambda_k with alpha in N^p, sum alpha <= degree,
// ordered by total degree ascending then exponent tuple lexicographically
// descending, deduplicated within 1e-12. Degree 0 contributes the zero
// eigenvalue. For p base values the count before deduplication is
// binomial(p + degree, degree).
EigenvalueSet lattice(const EigenvalueSet& base, int degree);

// Projection objective for one output component: p(Lambda) is the squared
// distance from the stacked trajectory samples of that component to the range
// of the Vandermonde blocks of Lambda. H keeps one trajectory per column.
struct LambdaObjective {
  int Mt = 0;
  int Ms = 0;
  double Ts = 0.0;
  CMat H;  // (Ms+1) x Mt
  double h_norm_sq = 0.0;
};

LambdaObjective make_objective(const TrajectoryDataset& ds, const Observable& h, int component);

// p(Lambda) = |h|^2 - h^H L (L^H L)^{-1} L^H h, evaluated per trajectory with
// the shared Gram matrix; falls back to an SVD projection when the
// (equilibrated) Gram matrix is ill-conditioned. Never negative.
double objective_value(const LambdaObjective& obj, const CVec& lambdas);

// Analytic gradient with respect to (Re lambda_1, Im lambda_1, Re lambda_2, ...),
// assembled per trajectory from q = (L^H L)^{-1} L^H h and the column
// derivatives dV/dRe = Ts * [0..Ms] o V (column-wise), dV/dIm = i dV/dRe.
// Ill-conditioned Gram matrices (cond > 1e14 after column equilibration) are
// an error suggesting fewer or better-separated eigenvalues.
RVec objective_gradient(const LambdaObjective& obj, const CVec& lambdas);

struct OptimizeOptions {
  int restarts = 5;          // perturbed starts in addition to the unperturbed one
  int max_iterations = 200;  // BFGS iterations per start
  double armijo_c = 1e-4;
  double backtrack = 0.5;
  int max_halvings = 40;
  double grad_tol = 1e-8;      // scaled by 1 + |p|
  double perturb_sigma = 0.25; // relative to |lambda| per eigenvalue
  std::uint64_t seed = 7;
};

struct OptimizeResult {
  CVec values;
  double objective = 0.0;
  double initial_objective = 0.0;
  int iterations = 0;  // accepted BFGS steps over the winning start
  std::vector<std::string> warnings;
};

// Multi-start BFGS with Armijo backtracking over a conjugacy-respecting
// parametrization: real eigenvalues stay real (one parameter), conjugate
// pairs move as one mirrored (Re, Im) pair, unpaired complex eigenvalues move
// freely. The result never has a larger objective than the initial guess.
OptimizeResult optimize_eigenvalues(const LambdaObjective& obj, const CVec& init,
                                    const OptimizeOptions& opts = {});

}  // namespace koopman
