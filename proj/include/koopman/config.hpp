#pragma once

#include "koopman/dynamics.hpp"
#include "koopman/eigfun.hpp"
#include "koopman/mpc.hpp"
#include "koopman/predictor.hpp"
#include "koopman/spectrum.hpp"
#include "koopman/types.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace koopman {

// Versioned JSON run description. Parsing is strict: unknown keys, wrong
// types and out-of-range values are ConfigErrors naming the offending path.

struct SystemConfig {
  std::string kind = "vanderpol";  // vanderpol | duffing | linear
  RMat A;                          // linear only
  RMat H;                          // linear only, optional input map
};

struct SamplerConfig {
  std::string kind = "circle";  // circle | disk
  double radius = 1.0;
  RVec center;  // defaults to the origin of the system dimension
};

struct ExcitationConfig {
  std::string kind = "none";  // none | uniform | square | sine
  double lo = -1.0;           // uniform
  double hi = 1.0;
  double amplitude = 1.0;  // square / sine
  double period = 1.0;
};

struct DataConfig {
  int trajectories = 100;
  double duration = 1.0;
  double controlled_duration = 2.0;  // forced dataset used for the input fit
  double ts = 0.01;
  std::uint64_t seed = 1;
  SamplerConfig sampler;
  ExcitationConfig excitation;  // forcing of the controlled dataset
};

struct LiftConfig {
  int n = 2;
  bool even_partition = true;       // "partition": "even"
  std::vector<int> partition;       // explicit per-component budgets otherwise
  std::string eigenvalues = "optimized";  // optimized | lattice
  int lattice_degree = 0;                 // 0 = grow until the budget is met
  OptimizeOptions optimize;
  ExtensionKind extension = ExtensionKind::TriangulatedLinear;
  double delta2 = 1e-8;
  std::vector<ProductSpec> products;
  std::vector<JordanBlock> jordan_blocks;
};

struct PredictorConfig {
  CMode c_mode = CMode::L2Fit;
  bool fit_b = false;
  int b_horizon = -1;  // -1 = every step
};

struct MpcSectionConfig {
  bool present = false;
  int np = 10;
  RVec q;  // stage weight diagonal over the physical outputs
  RVec r;
  RVec qn;  // optional terminal diagonal; empty = stage weight
  RVec u_min;
  RVec u_max;
  double duration = 1.0;
  RVec x0;  // empty = origin
  ReferenceSchedule reference;
};

struct PredictSectionConfig {
  bool present = false;
  RVec x0;
  double duration = 1.0;
  ExcitationConfig excitation;
};

struct TableSectionConfig {
  bool present = false;
  int test_points = 200;
  double horizon = 1.0;
  std::vector<int> n_grid;
  std::uint64_t seed = 99;
};

struct OutputConfig {
  std::string directory = "out";
  bool plots = true;
};

struct RunConfig {
  SystemConfig system;
  DataConfig data;
  LiftConfig lift;
  PredictorConfig predictor;
  MpcSectionConfig mpc;
  PredictSectionConfig predict;
  TableSectionConfig table;
  OutputConfig output;

  // Cross-field checks shared by parsing and the CLI (after flag overrides).
  void validate() const;
};

RunConfig parse_run_config(const std::string& text);
RunConfig load_run_config(const std::string& path);

// Bridges into the simulation types.
VectorField make_system(const SystemConfig& cfg);
InitialSampler make_sampler(const SamplerConfig& cfg, int state_dim);
InputPolicy make_excitation(const ExcitationConfig& cfg, int input_dim);

}  // namespace koopman
