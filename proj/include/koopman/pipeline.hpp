#pragma once

#include "koopman/config.hpp"
#include "koopman/dynamics.hpp"
#include "koopman/mpc.hpp"
#include "koopman/predictor.hpp"
#include "koopman/svg.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace koopman {

// End-to-end orchestration driven by one RunConfig: data generation,
// eigenfunction learning, prediction scoring, the accuracy table and the
// closed-loop experiment. Every step is deterministic given the config, so
// repeated runs reproduce their outputs byte for byte.

// Datasets for one run. The controlled set shares the sampler and seed with
// the uncontrolled one, so both start from the same initial conditions.
struct RunData {
  TrajectoryDataset uncontrolled;
  TrajectoryDataset controlled;  // generated only when the input map is fitted
  bool has_controlled = false;
};

RunData generate_data(const RunConfig& cfg);

// Observable the predictor is trained on: the state, extended by the input
// box rows when the mpc section declares bounds (the stacking wires the box
// as constraints affine in the predicted outputs).
StackedObservable build_observable(const RunConfig& cfg, int n, int m);

// Eigenfunction budget per output component. Explicit budgets must list one
// entry per component of the (possibly extended) observable.
OutputPartition build_partition(const LiftConfig& lift, int n_h);

// Per-component record of the eigenvalue selection.
struct ComponentReport {
  int component = 0;
  int Ni = 0;
  int lattice_degree = 0;  // degree at which the lattice covered the budget
  CVec initial;            // lattice seed
  CVec optimized;          // equals the seed in lattice mode
  double initial_objective = 0.0;
  double objective = 0.0;
  int iterations = 0;  // accepted descent steps (0 in lattice mode)
};

struct LearnResult {
  LinearPredictor predictor;
  std::vector<ComponentReport> components;
  std::vector<std::string> warnings;
};

// Full learning pass: eigenvalue seeds from the one-step linear fit, lattice
// growth to the per-component budget, optional objective descent, boundary
// values, extensions, the output matrix and (optionally) the input matrix.
// Errors carry the failing stage as a message prefix.
LearnResult learn_predictor(const RunConfig& cfg, const RunData& data);

// Test initial conditions for prediction scoring, uniform over the region
// each preset targets: the limit cycle interior (vanderpol), the unit disk
// (duffing) or the disk the configured data sampler spans (linear).
RMat test_states(const RunConfig& cfg, int count, std::uint64_t seed);

struct PredictionScore {
  double mean_pct = 0.0;   // mean percent error over the test states
  double stdev_pct = 0.0;  // sample standard deviation
  int count = 0;
};

// Rolls the predictor and the plant from every column of `states` over
// round(duration / Ts) steps and aggregates the percent errors on the state
// rows. A non-null `input` is sampled zero-order-hold, u_k = input(k Ts),
// and applied to both; it requires a fitted input map.
PredictionScore score_predictor(const LinearPredictor& pred, const VectorField& vf,
                                const RMat& states, double duration,
                                const std::function<RVec(double)>& input = {});

// One accuracy-table entry: a lifted dimension and eigenvalue mode scored on
// the shared test states, unforced and (when the input map is fitted) under
// the unit square-wave test signal.
struct TableRow {
  int n = 0;
  std::string mode;  // "lattice" | "optimized"
  double mean_pct = 0.0;
  double stdev_pct = 0.0;
  bool forced = false;
  double forced_mean_pct = 0.0;
  double forced_stdev_pct = 0.0;
};

struct TableResult {
  std::vector<TableRow> rows;
  int test_points = 0;
  double horizon = 0.0;
  std::vector<std::string> warnings;
};

// Learns one predictor per (n_grid value, eigenvalue mode) pair on the same
// datasets and scores all of them on the same test states.
TableResult evaluate_table(const RunConfig& cfg);

void write_table_csv(const std::string& path, const TableResult& table);

// Learning report CSV: one row per output component with the objective
// values and the eigenvalue lists before and after descent.
void write_learn_report(const std::string& path, const LearnResult& result);

// Closed-loop experiment assembled from the config: stage weights padded
// with zeros to the predictor's output dimension, constraint wiring from the
// observable stacking, reference rows zero-padded the same way.
struct MpcExperiment {
  VectorField vf;
  MpcSpec spec;
  RVec x0;
  double duration = 0.0;
};

MpcExperiment build_mpc_experiment(const RunConfig& cfg, const LinearPredictor& pred);

ClosedLoopResult run_mpc(const RunConfig& cfg, const LinearPredictor& pred,
                         const QpSettings& settings = QpSettings());

// Figures. The prediction figure shows one panel per state row (truth solid,
// prediction dashed); the closed-loop figure shows the phase portrait, each
// state against its reference and the input trace.
Figure prediction_figure(const RMat& truth, const RMat& predicted, double Ts);
Figure mpc_figure(const ClosedLoopResult& log);

}  // namespace koopman
