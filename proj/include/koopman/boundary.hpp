#pragma once

#include "koopman/dynamics.hpp"
#include "koopman/observable.hpp"
#include "koopman/types.hpp"

#include <vector>

namespace koopman {

// Split of the lifted dimension across output components: component i of h is
// approximated by Ni[i] eigenfunctions.
struct OutputPartition {
  int n_h = 0;
  std::vector<int> Ni;
  int total() const;
  void validate() const;
};

OutputPartition even_partition(int n_h, int total);

// Structured stacked matrix L mapping boundary values to on-data eigenfunction
// value predictions. Per trajectory the block is the same (Ms+1) x Ni matrix
// V with columns [1, e^{lambda Ts}, ..., e^{lambda Ms Ts}]; globally L is the
// column-block arrangement [bdiag(v_1) ... bdiag(v_Ni)] over Mt trajectories.
// Stored implicitly; dense() exists for tests and small problems.
struct VandermondeBlocks {
  CVec lambdas;
  int Mt = 0;
  int Ms = 0;
  double Ts = 0.0;
  CMat V;  // (Ms+1) x Ni, shared by every trajectory

  Eigen::Index rows() const { return static_cast<Eigen::Index>(Mt) * (Ms + 1); }
  Eigen::Index cols() const { return static_cast<Eigen::Index>(lambdas.size()) * Mt; }

  // y = L g with g laid out eigenvalue-major: g[l*Mt + j] is the boundary
  // value of eigenvalue l on trajectory j.
  CVec multiply(const CVec& g) const;

  // Minimum-norm least squares per trajectory; H holds one trajectory per
  // column ((Ms+1) x Mt), the result is Ni x Mt. Columns of V are rescaled to
  // unit norm before the rank-revealing solve (the solution is mapped back),
  // which keeps strongly growing eigenvalues from masking the rest.
  CMat solve(const CMat& H) const;

  // Same as solve but with the first-difference smoothing term appended:
  // argmin |h - V q|^2 + alpha |D V q|^2 with (Dv)_k = (v_{k+1} - v_k)/Ts.
  CMat solve_regularized(const CMat& H, double alpha) const;

  CMat dense() const;
};

// Builds the shared Vandermonde block for the given eigenvalues. Eigenvalues
// whose real part grows past exp(300) over the data window are rejected by
// name before they overflow.
VandermondeBlocks build_L(const CVec& lambdas, int Mt, int Ms, double Ts);

// Reshapes the stacked per-trajectory values of one scalar signal into the
// (Ms+1) x Mt trajectory-per-column form used by VandermondeBlocks::solve.
CMat trajectory_columns(const TrajectoryDataset& ds, const Observable& h, int component);

// Optimal boundary values: G(i, j) is the value of lifted function i at the
// initial condition of trajectory j. Rows are grouped by output component in
// partition order, each group following its eigenvalue list.
struct BoundaryMatrix {
  CMat G;  // N x Mt
  CVec lambdas;
  OutputPartition partition;
};

struct Regularizer {
  double alpha = 0.0;  // weight on the first-difference roughness term
};

BoundaryMatrix optimal_boundary(const TrajectoryDataset& ds, const Observable& h,
                                const OutputPartition& partition,
                                const std::vector<CVec>& lambdas_per_component,
                                const Regularizer& reg = {});

}  // namespace koopman
