#pragma once

#include "koopman/rng.hpp"
#include "koopman/types.hpp"

#include <functional>
#include <string>
#include <vector>

namespace koopman {

// Controlled vector field xdot = f(x, u). Uncontrolled systems take input_dim = 0
// (eval still receives a u argument, of size 0).
struct VectorField {
  int state_dim = 0;
  int input_dim = 0;
  std::string name;
  std::function<RVec(const RVec&, const RVec&)> eval;
};

// x1' = 2 x2, x2' = -0.8 x1 + 2 x2 - 10 x1^2 x2 + u. Unstable focus at the
// origin surrounded by a stable limit cycle.
VectorField vanderpol();

// x1' = x2, x2' = -0.5 x2 - x1 (4 x1^2 - 1) + 0.5 u. Stable equilibria at
// (+-0.5, 0), saddle at the origin.
VectorField duffing();

// Test fixtures: xdot = a x (scalar), xdot = A x, xdot = A x + H u.
VectorField scalar_linear(double a);
VectorField linear_system(const RMat& A);
VectorField linear_control_system(const RMat& A, const RMat& H);

// State inflation for inputs entering nonlinearly: state becomes [x; v] with
// vdot = u, and the original input channels read the appended state v.
VectorField inflate_state(const VectorField& vf);

// Classical fixed-step RK4. Each sampling interval dt is cut into equal
// internal steps no longer than substep. Returns steps+1 states including x0.
// u, when present, is held constant over the whole call (zero-order hold is
// realized by the caller integrating one interval at a time). Non-finite
// states abort with an error naming the step.
std::vector<RVec> integrate(const VectorField& vf, const RVec& x0, const RVec& u, double dt,
                            int steps, double substep = 1e-3);

// Mt trajectories sampled every Ts; states laid out as columns indexed by
// j*(Ms+1)+k for trajectory j, sample k. Inputs, when present, are the
// zero-order-hold values on [k, k+1), so there are Ms per trajectory.
struct TrajectoryDataset {
  int n = 0;
  int m = 0;  // 0 when uncontrolled
  int Mt = 0;
  int Ms = 0;
  double Ts = 0.0;
  RMat states;  // n x Mt*(Ms+1)
  RMat inputs;  // m x Mt*Ms, empty when m = 0

  int samples_per_traj() const { return Ms + 1; }
  Eigen::Index col(int j, int k) const { return static_cast<Eigen::Index>(j) * (Ms + 1) + k; }
  RVec state(int j, int k) const { return states.col(col(j, k)); }
  RVec input(int j, int k) const { return inputs.col(static_cast<Eigen::Index>(j) * Ms + k); }
  RMat initial_conditions() const;
  void validate() const;
};

// Initial-condition samplers over R^2 (circle boundary, solid disk) or an
// explicit point list for arbitrary dimension.
struct InitialSampler {
  enum class Kind { Circle, Disk, List, Custom };
  Kind kind = Kind::Circle;
  double radius = 1.0;
  RVec center;
  std::vector<RVec> points;                  // Kind::List
  std::function<RVec(Rng&)> custom;          // Kind::Custom (tests)
  int dim() const;
  RVec sample(Rng& rng, int index) const;    // List ignores rng, cycles by index
};

InitialSampler circle_sampler(double radius, RVec center = RVec::Zero(2));
InitialSampler disk_sampler(double radius, RVec center = RVec::Zero(2));
InitialSampler list_sampler(std::vector<RVec> points);

// Input policy for data generation: no input, piecewise-constant uniform
// random on [lo, hi]^m per sampling interval, or a deterministic signal u(t).
struct InputPolicy {
  enum class Kind { None, Uniform, Signal };
  Kind kind = Kind::None;
  double lo = -1.0;
  double hi = 1.0;
  std::function<RVec(double)> signal;
};

InputPolicy no_input();
InputPolicy uniform_input(double lo, double hi);
InputPolicy signal_input(std::function<RVec(double)> u_of_t);

// Square wave with the given amplitude and period: +amp on the first half
// period, -amp on the second. sine_wave is amp * sin(2 pi t / period).
std::function<RVec(double)> square_wave(double amplitude, double period, int m = 1);
std::function<RVec(double)> sine_wave(double amplitude, double period, int m = 1);

// Simulates Mt trajectories of duration seconds sampled every Ts. The RNG
// stream of trajectory j is derived from (seed, j) alone, so datasets are
// reproducible bit for bit regardless of thread count. Duplicate initial
// conditions (within 1e-12) are rejected by resampling; an explicit list with
// duplicates is an error.
TrajectoryDataset generate_dataset(const VectorField& vf, const InitialSampler& sampler, int Mt,
                                   double duration, double Ts, const InputPolicy& policy,
                                   std::uint64_t seed, double substep = 1e-3);

// CSV round trip. Header is traj,k,t,x1..xn[,u1..um]; values carry 17
// significant digits so write/read reproduces the dataset exactly. Input
// fields are empty on each trajectory's final sample.
void write_dataset_csv(const TrajectoryDataset& ds, const std::string& path);
TrajectoryDataset read_dataset_csv(const std::string& path);

}  // namespace koopman
