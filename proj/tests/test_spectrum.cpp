#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "koopman/numerics.hpp"
#include "koopman/spectrum.hpp"

#include "oracles.hpp"

#include <cmath>

using namespace koopman;

namespace {

// Dataset whose samples follow x_{k+1} = G x_k exactly (no integrator error),
// one column per trajectory start.
TrajectoryDataset discrete_dataset(const RMat& G, const RMat& x0s, int Ms, double Ts) {
  TrajectoryDataset ds;
  ds.n = static_cast<int>(G.rows());
  ds.m = 0;
  ds.Mt = static_cast<int>(x0s.cols());
  ds.Ms = Ms;
  ds.Ts = Ts;
  ds.states.resize(ds.n, static_cast<Eigen::Index>(ds.Mt) * (Ms + 1));
  for (int j = 0; j < ds.Mt; ++j) {
    RVec x = x0s.col(j);
    for (int k = 0; k <= Ms; ++k) {
      ds.states.col(ds.col(j, k)) = x;
      x = G * x;
    }
  }
  return ds;
}

// Exact sampled flow of xdot = a x for a batch of scalar initial conditions.
TrajectoryDataset scalar_flow_dataset(double a, const std::vector<double>& x0s, int Ms, double Ts) {
  RMat G = RMat::Constant(1, 1, std::exp(a * Ts));
  RMat X0(1, static_cast<Eigen::Index>(x0s.size()));
  for (std::size_t i = 0; i < x0s.size(); ++i) X0(0, static_cast<Eigen::Index>(i)) = x0s[i];
  return discrete_dataset(G, X0, Ms, Ts);
}

CVec make_cvec(std::initializer_list<Complex> vals) {
  CVec v(static_cast<Eigen::Index>(vals.size()));
  Eigen::Index i = 0;
  for (const Complex& c : vals) v(i++) = c;
  return v;
}

}  // namespace

TEST_CASE("dmd_eigenvalues: scalar geometric decay") {
  const auto ds = scalar_flow_dataset(std::log(0.9), {1.0, -0.5, 2.0}, 20, 1.0);
  const auto es = dmd_eigenvalues(ds);
  REQUIRE(es.values.size() == 1);
  CHECK(std::abs(es.values(0) - Complex(std::log(0.9), 0.0)) < 1e-10);
  CHECK(es.closed_under_conjugation);
}

TEST_CASE("dmd_eigenvalues: planar rotation gives a conjugate pair") {
  const double theta = 0.1;
  RMat G(2, 2);
  G << std::cos(theta), -std::sin(theta), std::sin(theta), std::cos(theta);
  RMat X0(2, 3);
  X0 << 1.0, 0.3, -0.7, 0.0, 0.9, 0.4;
  const auto ds = discrete_dataset(G, X0, 30, 1.0);
  const auto es = dmd_eigenvalues(ds);
  REQUIRE(es.values.size() == 2);
  CHECK(std::abs(es.values(0) - Complex(0.0, theta)) < 1e-9);
  CHECK(std::abs(es.values(1) - Complex(0.0, -theta)) < 1e-9);
  CHECK(es.closed_under_conjugation);
}

TEST_CASE("dmd_eigenvalues: constant equilibrium data excludes the zero mode") {
  RMat G = RMat::Identity(2, 2);
  RMat X0(2, 2);
  X0 << 0.5, 0.5, 0.0, 1e-9;  // nearly parallel constant trajectories
  X0(1, 1) = 0.3;
  auto ds = discrete_dataset(G, X0, 10, 0.5);
  // Overwrite to a single repeated column direction: both trajectories constant.
  std::vector<std::string> warnings;
  RMat X0b(2, 1);
  X0b << 0.5, 0.1;
  ds = discrete_dataset(G, X0b, 10, 0.5);
  const auto es = dmd_eigenvalues(ds, &warnings);
  REQUIRE(es.values.size() == 1);
  CHECK(std::abs(es.values(0)) < 1e-12);
  CHECK(!warnings.empty());
}

TEST_CASE("lattice: base pair to degree two") {
  const Complex a(-0.1, 0.0), b(-0.25, 0.0);
  EigenvalueSet base;
  base.values = make_cvec({a, b});
  const auto lat = lattice(base, 2);
  REQUIRE(lat.values.size() == 6);
  CHECK(std::abs(lat.values(0) - Complex(0, 0)) == 0.0);
  CHECK(std::abs(lat.values(1) - a) < 1e-15);
  CHECK(std::abs(lat.values(2) - b) < 1e-15);
  CHECK(std::abs(lat.values(3) - 2.0 * a) < 1e-15);
  CHECK(std::abs(lat.values(4) - (a + b)) < 1e-15);
  CHECK(std::abs(lat.values(5) - 2.0 * b) < 1e-15);
}

TEST_CASE("lattice: degree zero is the zero eigenvalue") {
  EigenvalueSet base;
  base.values = make_cvec({Complex(1, 2), Complex(3, -1)});
  const auto lat = lattice(base, 0);
  REQUIRE(lat.values.size() == 1);
  CHECK(lat.values(0) == Complex(0, 0));
}

TEST_CASE("lattice: coincident sums deduplicate") {
  // a + a = b + 0 arranged so degree-2 values collide.
  EigenvalueSet base;
  base.values = make_cvec({Complex(-0.1, 0), Complex(-0.2, 0)});
  const auto lat = lattice(base, 2);
  // 2a == b collides with the degree-1 entry b.
  int count = 0;
  for (Eigen::Index i = 0; i < lat.values.size(); ++i) {
    if (std::abs(lat.values(i) - Complex(-0.2, 0)) < 1e-12) ++count;
  }
  CHECK(count == 1);
  CHECK(lat.values.size() == 5);
  // Conjugate-pair base stays closed under conjugation.
  EigenvalueSet cpair;
  cpair.values = make_cvec({Complex(-0.1, 0.4), Complex(-0.1, -0.4)});
  CHECK(lattice(cpair, 3).closed_under_conjugation);
}

TEST_CASE("objective_value: exact scalar flow has zero residual") {
  const double a = -0.35;
  const auto ds = scalar_flow_dataset(a, {1.0, 0.4, -0.8, 1.5}, 40, 0.05);
  const auto obj = make_objective(ds, state_observable(1), 0);
  const double p = objective_value(obj, make_cvec({Complex(a, 0)}));
  CHECK(p <= 1e-12 * obj.h_norm_sq);
  // A wrong eigenvalue leaves residual behind.
  CHECK(objective_value(obj, make_cvec({Complex(a + 0.5, 0)})) > 1e-3 * obj.h_norm_sq);
}

TEST_CASE("objective_value: zero target data gives zero for any eigenvalues") {
  auto ds = scalar_flow_dataset(-0.2, {1.0, 2.0}, 10, 0.1);
  ds.states.setZero();
  const auto obj = make_objective(ds, state_observable(1), 0);
  CHECK(objective_value(obj, make_cvec({Complex(-0.3, 1.0), Complex(0.2, 0)})) == 0.0);
}

TEST_CASE("objective_value: hopeless eigenvalue leaves nearly all energy") {
  const auto ds = scalar_flow_dataset(-0.1, {1.0, -1.0, 0.5}, 30, 0.1);
  const auto obj = make_objective(ds, state_observable(1), 0);
  // A function decaying to ~0 within one sample cannot capture slow decay.
  const double p = objective_value(obj, make_cvec({Complex(-500.0, 0)}));
  CHECK(p > 0.5 * obj.h_norm_sq);
  CHECK(p <= obj.h_norm_sq * (1.0 + 1e-12));
}

TEST_CASE("objective_value: matches dense projection oracle") {
  Rng rng(42);
  for (int trial = 0; trial < 12; ++trial) {
    const int Mt = 2 + static_cast<int>(rng.next() % 3);
    const int Ms = 5 + static_cast<int>(rng.next() % 12);
    const int Ni = 1 + static_cast<int>(rng.next() % 3);
    TrajectoryDataset ds;
    ds.n = 1;
    ds.Mt = Mt;
    ds.Ms = Ms;
    ds.Ts = 0.08;
    ds.states.resize(1, static_cast<Eigen::Index>(Mt) * (Ms + 1));
    for (Eigen::Index i = 0; i < ds.states.cols(); ++i) ds.states(0, i) = rng.gaussian();
    CVec lam(Ni);
    for (int l = 0; l < Ni; ++l) lam(l) = Complex(rng.uniform(-1.0, 0.4), rng.uniform(-2, 2));

    const auto obj = make_objective(ds, state_observable(1), 0);
    const double p = objective_value(obj, lam);

    // Oracle: materialize L, least-squares via an independent decomposition.
    const auto B = build_L(lam, Mt, Ms, ds.Ts);
    const CMat L = B.dense();
    CMat h(L.rows(), 1);
    for (int j = 0; j < Mt; ++j)
      for (int k = 0; k <= Ms; ++k)
        h(static_cast<Eigen::Index>(j) * (Ms + 1) + k, 0) = ds.states(0, ds.col(j, k));
    const CMat g = oracle::lstsq(L, h);
    const double ref = (h - L * g).squaredNorm();
    CHECK(p == doctest::Approx(ref).epsilon(1e-9));
  }
}

TEST_CASE("objective_gradient: matches central finite differences") {
  Rng rng(4242);
  double worst = 0.0;
  for (int trial = 0; trial < 25; ++trial) {
    const int Mt = 1 + static_cast<int>(rng.next() % 5);
    const int Ms = 5 + static_cast<int>(rng.next() % 16);
    const int Ni = 1 + static_cast<int>(rng.next() % 3);
    TrajectoryDataset ds;
    ds.n = 1;
    ds.Mt = Mt;
    ds.Ms = Ms;
    ds.Ts = 0.1;
    ds.states.resize(1, static_cast<Eigen::Index>(Mt) * (Ms + 1));
    for (Eigen::Index i = 0; i < ds.states.cols(); ++i) ds.states(0, i) = rng.gaussian();
    CVec lam(Ni);
    for (int l = 0; l < Ni; ++l) lam(l) = Complex(rng.uniform(-0.8, 0.3), rng.uniform(-1.5, 1.5));
    const auto obj = make_objective(ds, state_observable(1), 0);

    const RVec g = objective_gradient(obj, lam);
    const auto f = [&](const RVec& p) {
      CVec v(Ni);
      for (int l = 0; l < Ni; ++l) v(l) = Complex(p(2 * l), p(2 * l + 1));
      return objective_value(obj, v);
    };
    RVec p0(2 * Ni);
    for (int l = 0; l < Ni; ++l) {
      p0(2 * l) = lam(l).real();
      p0(2 * l + 1) = lam(l).imag();
    }
    const RVec fd = oracle::central_diff_gradient(f, p0, 1e-6);
    const double rel = (g - fd).lpNorm<Eigen::Infinity>() /
                       std::max(1e-12, fd.lpNorm<Eigen::Infinity>());
    worst = std::max(worst, rel);
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("objective_gradient: zero data gives zero gradient") {
  auto ds = scalar_flow_dataset(-0.2, {1.0, 2.0}, 12, 0.1);
  ds.states.setZero();
  const auto obj = make_objective(ds, state_observable(1), 0);
  const RVec g = objective_gradient(obj, make_cvec({Complex(-0.4, 0.7)}));
  CHECK(g.lpNorm<Eigen::Infinity>() == 0.0);
}

TEST_CASE("objective_gradient: stationary at an exactly recoverable eigenvalue") {
  const double a = -0.5;
  const auto ds = scalar_flow_dataset(a, {1.0, -2.0, 0.7}, 25, 0.1);
  const auto obj = make_objective(ds, state_observable(1), 0);
  const RVec g = objective_gradient(obj, make_cvec({Complex(a, 0)}));
  CHECK(g.lpNorm<Eigen::Infinity>() < 1e-7 * (1.0 + obj.h_norm_sq));
}

TEST_CASE("objective_gradient: near-duplicate eigenvalues are rejected") {
  const auto ds = scalar_flow_dataset(-0.3, {1.0, 0.5}, 20, 0.1);
  const auto obj = make_objective(ds, state_observable(1), 0);
  CHECK_THROWS_WITH_AS(
      objective_gradient(obj, make_cvec({Complex(-0.3, 0), Complex(-0.3, 1e-13)})),
      doctest::Contains("better-separated"), NumericalError);
}

TEST_CASE("optimize_eigenvalues: recovers the scalar flow rate") {
  const double a = -0.6;
  const auto ds = scalar_flow_dataset(a, {1.0, 0.3, -1.2}, 30, 0.1);
  const auto obj = make_objective(ds, state_observable(1), 0);
  OptimizeOptions opts;
  opts.restarts = 2;
  const auto res = optimize_eigenvalues(obj, make_cvec({Complex(a + 0.3, 0)}), opts);
  CHECK(res.objective <= 1e-10 * obj.h_norm_sq);
  CHECK(std::abs(res.values(0).real() - a) < 1e-4);
  CHECK(res.objective <= res.initial_objective);
}

TEST_CASE("optimize_eigenvalues: stationary start returns unchanged") {
  const double a = -0.5;
  const auto ds = scalar_flow_dataset(a, {1.0, -2.0, 0.7}, 25, 0.1);
  const auto obj = make_objective(ds, state_observable(1), 0);
  OptimizeOptions opts;
  opts.restarts = 0;
  const auto res = optimize_eigenvalues(obj, make_cvec({Complex(a, 0)}), opts);
  CHECK(std::abs(res.values(0) - Complex(a, 0)) < 1e-9);
  CHECK(res.objective <= res.initial_objective);
}

TEST_CASE("optimize_eigenvalues: objective never increases on random instances") {
  Rng rng(5150);
  for (int trial = 0; trial < 6; ++trial) {
    TrajectoryDataset ds;
    ds.n = 1;
    ds.Mt = 3;
    ds.Ms = 18;
    ds.Ts = 0.1;
    ds.states.resize(1, 3 * 19);
    for (Eigen::Index i = 0; i < ds.states.cols(); ++i) ds.states(0, i) = rng.gaussian();
    const auto obj = make_objective(ds, state_observable(1), 0);
    CVec init(2);
    init << Complex(rng.uniform(-0.5, 0.2), rng.uniform(0.2, 1.0)), Complex(0, 0);
    init(1) = std::conj(init(0));
    OptimizeOptions opts;
    opts.restarts = 2;
    opts.max_iterations = 60;
    const auto res = optimize_eigenvalues(obj, init, opts);
    CHECK(res.objective <= res.initial_objective + 1e-12);
    // Conjugate pairing is preserved by the mirrored parametrization.
    CHECK(std::abs(res.values(1) - std::conj(res.values(0))) < 1e-12);
  }
}

TEST_CASE("optimize_eigenvalues: conjugate-closed input stays closed") {
  const auto ds = scalar_flow_dataset(-0.4, {1.0, 0.6, -0.9, 1.4}, 30, 0.1);
  const auto obj = make_objective(ds, state_observable(1), 0);
  CVec init(3);
  init << Complex(-0.2, 0.9), Complex(-0.2, -0.9), Complex(-0.5, 0.0);
  OptimizeOptions opts;
  opts.restarts = 3;
  const auto res = optimize_eigenvalues(obj, init, opts);
  CHECK(conjugation_closed(res.values, 1e-9));
  CHECK(std::abs(res.values(2).imag()) == 0.0);  // real eigenvalue stays real
}

TEST_CASE("optimize_eigenvalues: empty set and non-finite input are errors") {
  const auto ds = scalar_flow_dataset(-0.4, {1.0}, 10, 0.1);
  const auto obj = make_objective(ds, state_observable(1), 0);
  CHECK_THROWS_AS(optimize_eigenvalues(obj, CVec()), DimensionError);
  CVec bad(1);
  bad << Complex(std::nan(""), 0.0);
  CHECK_THROWS_AS(optimize_eigenvalues(obj, bad), NumericalError);
}
