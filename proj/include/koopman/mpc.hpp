#pragma once

#include "koopman/dynamics.hpp"
#include "koopman/observable.hpp"
#include "koopman/predictor.hpp"
#include "koopman/qp.hpp"
#include "koopman/types.hpp"

#include <string>
#include <vector>

namespace koopman {

// Piecewise-constant output reference: value(t) is the column of the last
// breakpoint at or before t, clamped to the first/last column outside the
// covered range. Empty schedule means no tracking term.
struct ReferenceSchedule {
  RVec times;   // ascending breakpoints, seconds
  RMat values;  // n_h x times.size()

  bool empty() const { return times.size() == 0; }
  RVec value(double t) const;
  void validate() const;
};

// Receding-horizon problem data on the predictor outputs y = Re(C z):
// minimize sum_i (y_i' Q y_i + q_lin' y_i + u_i' R u_i + r_lin' u_i) plus the
// terminal term y_Np' QN y_Np + qN_lin' y_Np, subject to the stage rows
// E y_i + F u_i <= b and terminal EN y_Np <= bN. A non-empty reference adds
// the tracking term -2 (Q_i r_i)' y_i per stage. Costs are constant across
// the horizon; an empty QN falls back to Q (reported as a warning).
struct MpcSpec {
  int Np = 0;
  RMat Q;       // n_h x n_h, PSD
  RMat R;       // m x m, PSD
  RMat QN;      // empty -> Q
  RVec q_lin;   // empty -> 0
  RVec r_lin;   // empty -> 0
  RVec qN_lin;  // empty -> 0
  RMat E, F;    // stage constraint rows, E: nc x n_h, F: nc x m
  RVec b;       // nc
  RMat EN;      // terminal rows, empty -> none
  RVec bN;
  ReferenceSchedule reference;
  RVec u_min, u_max;  // declared input box, used to saturate the applied input

  RMat terminal_weight() const { return QN.size() > 0 ? QN : Q; }
  void validate(int n_h, int m) const;
};

// Dense condensation of the horizon over the stacked output map
// [C; C Ad; ...; C Ad^Np] and the lower-triangular response blocks
// C Ad^j Bd. Conjugate-pair structure must collapse the input response to a
// real matrix (checked within 1e-9); H1 is symmetrized and its spectrum
// floored at zero when rounding leaves it slightly indefinite.
struct CondensedMpc {
  DenseQp qp;  // qp.h carries only the constant q_lin / r_lin part
  RMat BtR;    // Re(B_stack)', maps stacked stage linear terms to h
  int n_h = 0;
  int m = 0;
  int Np = 0;
  double Ts = 0.0;
  std::vector<std::string> warnings;

  // Dense linear term at loop time t: the reference previewed over the
  // horizon folds q_i = q_lin - 2 Q_i ref(t + i Ts) through BtR. Without a
  // schedule this is qp.h unchanged.
  RVec linear_term(const MpcSpec& spec, double t) const;
};

CondensedMpc condense(const MpcSpec& spec, const LinearPredictor& pred);

// One sampled-data step of the loop log.
struct MpcLogRow {
  double t = 0.0;
  RVec x;    // measured plant state
  RVec u;    // applied input (after saturation)
  RVec ref;  // reference at t, empty without a schedule
  int qp_iterations = 0;
  bool converged = true;
  double lift_ms = 0.0;
  double solve_ms = 0.0;
};

struct ClosedLoopResult {
  std::vector<MpcLogRow> rows;
  int n = 0;
  int m = 0;
  int n_ref = 0;          // reference columns logged per row
  int outside_hull = 0;   // lift queries that left the interpolation hull
  bool aborted = false;   // loop stopped early; rows hold the prefix
  std::string abort_reason;
};

// Sampled-data closed loop: measure the true plant state, lift it through
// the predictor's eigenfunctions, solve the dense QP warm-started from the
// previous solution shifted by one stage, apply the first input (saturated
// to the declared box) to the plant for Ts. A QP that stops at the iteration
// limit contributes its best iterate; more than five such steps in a row, or
// an infeasible QP, abort the loop with the prefix logged.
ClosedLoopResult closed_loop(const VectorField& vf, const LinearPredictor& pred,
                             const MpcSpec& spec, const RVec& x0, double duration,
                             const QpSettings& settings = QpSettings());

// Log CSV: t, x1..xn, u1..um, ref1..ref_nh, qp_iters, lift_ms, solve_ms.
// An empty log writes the header only.
// Timing columns are wall-clock and therefore non-reproducible; runs that
// must be byte-identical across repetitions drop them.
void write_closed_loop_csv(const std::string& path, const ClosedLoopResult& log,
                           bool include_timing = true);

// Components stacked under the base observable to make costs and constraints
// affine in the predicted outputs. Optional parts are declared by dim = 0.
struct StackParts {
  Observable base;                // required
  Observable stage_cost;          // scalar l(x), adds one output row
  Observable terminal_cost;      // scalar l_N(x), adds one output row
  Observable stage_constraint;    // c~(x), rows coupled to inputs by D
  RMat input_coupling;            // D: stage_constraint.dim x m
  Observable terminal_constraint; // c_N(x)
  RVec u_min, u_max;              // input box, both empty or both length m
};

// Extended observable [base; l; l_N; -u_max; u_min; c~; c_N] with the
// constraint wiring that renders everything affine in y: stage rows select
// the box constants and c~ with F = [I; -I; D], rhs zero, so
// E y + F u <= 0 realizes u in [u_min, u_max] and c~(x) + D u <= 0;
// terminal rows select c_N. With no optional parts the base is returned
// unchanged and the wiring is empty.
struct StackedObservable {
  Observable h;
  int base_dim = 0;
  int stage_cost_row = -1;     // row of l(x) in h, -1 when absent
  int terminal_cost_row = -1;  // row of l_N(x)
  RMat E, F;
  RVec b;
  RMat EN;
  RVec bN;
};

StackedObservable stack_observable(const StackParts& parts, int m);

}  // namespace koopman
