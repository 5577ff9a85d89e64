#pragma once

#include "koopman/eigfun.hpp"
#include "koopman/observable.hpp"
#include "koopman/types.hpp"

#include <memory>
#include <string>
#include <vector>

namespace koopman {

// How the output matrix C is obtained: block-diagonal ones rows over the
// partition (valid for boundary-optimal sets), sample-based least squares,
// or sample-based minimax fitting.
enum class CMode { BlockDiagonal, L2Fit, SupFit };

std::string to_string(CMode mode);
CMode cmode_from_string(const std::string& s);

// Linear predictor in eigenfunction coordinates. The continuous generator is
// diagonal (the eigenvalues); one sampling step multiplies coordinate i by
// ad(i) = exp(lambda_i Ts). B maps inputs into the generator, Bd into the
// one-step map; outputs are y = Re(C z).
struct LinearPredictor {
  CVec lambdas;  // diagonal of A
  CMat B;        // N x m, empty columns when uncontrolled
  CMat C;        // n_h x N
  CVec ad;       // diagonal of Ad = exp(lambda Ts)
  CMat Bd;       // N x m
  double Ts = 0.0;
  bool realness_checked = false;  // spectrum conjugate-closed => outputs must be real
  std::shared_ptr<const EigenfunctionSet> lift;

  int size() const { return static_cast<int>(lambdas.size()); }
  int output_dim() const { return static_cast<int>(C.rows()); }
  int input_dim() const { return static_cast<int>(Bd.cols()); }
  void validate() const;
};

struct ACResult {
  CVec lambdas;
  CMat C;
  std::vector<std::string> warnings;
};

// C (and the diagonal A) for the set. BlockDiagonal requires the partition to
// cover every row; the fit modes evaluate the lifted state at `samples`
// (n x S; extensions must be fitted) and match h there. A rank-deficient
// sample matrix is handled by the pseudoinverse and reported as a warning.
ACResult assemble_AC(const EigenfunctionSet& set, const Observable& h, CMode mode,
                     const RMat& samples = RMat());

// Predictor without input channels; fit_B fills B/Bd afterwards if needed.
LinearPredictor make_predictor(std::shared_ptr<const EigenfunctionSet> lift, const ACResult& ac,
                               double Ts);

// Input-matrix maps between the continuous generator and the one-step form:
// B = diag(lambda / (1 - e^{-lambda Ts})) Bd and its inverse, with the
// lambda -> 0 limits 1/Ts and Ts.
CMat continuous_from_discrete_input(const CVec& lambdas, double Ts, const CMat& Bd);
CMat discrete_from_continuous_input(const CVec& lambdas, double Ts, const CMat& B);

struct FitBResult {
  CMat B;
  CMat Bd;
};

// Multi-step input-matrix regression on a controlled dataset: rows
// sum_{i<k} u_i^T kron (C Ad^{k-i-1}) against targets h(x_k) - C Ad^k z0,
// stacked over trajectories and steps, solved in the least-squares sense and
// un-vectorized column-major. max_steps < 0 uses every step; otherwise the
// per-trajectory horizon is min(Ms, max_steps).
FitBResult fit_B(const CVec& lambdas, const CMat& C, const EigenfunctionSet& lift,
                 const TrajectoryDataset& ds, const Observable& h, int max_steps = -1);

// Rollout of steps sampling periods from a lifted initial state (inputs
// m x steps, ignored when the predictor is uncontrolled). Returns
// n_h x (steps+1); column k is Re(C z_k). When the spectrum is
// conjugate-closed the imaginary residue must stay below 1e-6 relative.
RMat predict_lifted(const LinearPredictor& pred, CVec z0, const RMat& inputs, int steps);

// Same, lifting x0 through the eigenfunction extensions first.
RMat predict(const LinearPredictor& pred, const RVec& x0, const RMat& inputs, int steps);

// Percent error 100 * sqrt(sum_k |pred_k - true_k|^2) / sqrt(sum_k |true_k|^2)
// over matching columns. An all-zero true sequence has no defined error.
double rmse_error(const RMat& truth, const RMat& pred);

}  // namespace koopman
