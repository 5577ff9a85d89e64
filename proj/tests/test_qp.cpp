#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "koopman/qp.hpp"
#include "koopman/rng.hpp"

#include "oracles.hpp"

#include <cmath>

using namespace koopman;

namespace {

RMat random_spd(int n, Rng& rng, double ridge) {
  RMat G(n, n);
  for (Eigen::Index i = 0; i < G.size(); ++i) G(i) = rng.gaussian();
  return G.transpose() * G + ridge * RMat::Identity(n, n);
}

}  // namespace

TEST_CASE("unconstrained solve is the closed-form stationary point") {
  Rng rng(41);
  for (int trial = 0; trial < 10; ++trial) {
    const int n = 2 + static_cast<int>(rng.next() % 6);
    const int N = 3 + static_cast<int>(rng.next() % 4);
    DenseQp qp;
    qp.H1 = random_spd(n, rng, 0.5);
    qp.h = RVec::NullaryExpr(n, [&](Eigen::Index) { return rng.uniform(-1, 1); });
    qp.H2.resize(N, n);
    for (Eigen::Index i = 0; i < qp.H2.size(); ++i)
      qp.H2(i) = Complex(rng.uniform(-1, 1), rng.uniform(-1, 1));
    qp.L.resize(0, n);
    qp.M.resize(0, N);
    qp.d.resize(0);

    CVec z0(N);
    for (Eigen::Index i = 0; i < N; ++i) z0(i) = Complex(rng.uniform(-1, 1), rng.uniform(-1, 1));

    const QpSolution sol = solve_qp(qp, z0);
    const RVec q = qp.h + (qp.H2.transpose() * z0).real();
    const RVec expect = qp.H1.ldlt().solve(-0.5 * q);
    CHECK(sol.converged);
    CHECK((sol.u_star - expect).norm() <= 1e-6 * (1.0 + expect.norm()));
    CHECK(sol.stationarity <= 1e-8 * (1.0 + q.norm()));
  }
}

TEST_CASE("a clamped scalar activates its constraint") {
  RMat H1 = RMat::Identity(1, 1);
  RVec q = RVec::Zero(1);
  RMat L(1, 1);
  L << 1.0;
  RVec d(1);
  d << -1.0;

  const QpSolution sol = solve_qp_folded(H1, q, L, d);
  CHECK(sol.converged);
  CHECK(sol.u_star(0) == doctest::Approx(-1.0).epsilon(1e-8));
  CHECK(sol.duals(0) > 0.0);
  CHECK(sol.primal_feasibility <= 1e-8);
  CHECK(sol.complementarity <= 1e-6);
}

TEST_CASE("random strictly convex programs match the active-set oracle") {
  Rng rng(1234);
  int solved = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 2 + static_cast<int>(rng.next() % 9);          // <= 10 vars
    const int mc = 1 + static_cast<int>(rng.next() % 20);        // <= 20 rows
    const RMat H = random_spd(n, rng, 1.0);
    RVec q(n);
    for (int i = 0; i < n; ++i) q(i) = rng.uniform(-2, 2);
    RMat A(mc, n);
    for (Eigen::Index i = 0; i < A.size(); ++i) A(i) = rng.uniform(-1, 1);
    // Feasibility by construction: make a random point strictly feasible.
    RVec x_feas(n);
    for (int i = 0; i < n; ++i) x_feas(i) = rng.uniform(-1, 1);
    RVec b = A * x_feas;
    for (int i = 0; i < mc; ++i) b(i) += rng.uniform(0.1, 1.0);

    const oracle::QpOracleResult ref = oracle::active_set_qp(H, q, A, b);
    REQUIRE(ref.feasible);

    const QpSolution sol = solve_qp_folded(H, q, A, b);
    CHECK(sol.converged);
    CHECK((sol.u_star - ref.x).norm() <= 1e-5 * (1.0 + ref.x.norm()));
    CHECK(sol.stationarity <= 1e-5);
    CHECK(sol.primal_feasibility <= 1e-6);
    CHECK(sol.complementarity <= 1e-6);
    ++solved;
  }
  CHECK(solved == 100);
}

TEST_CASE("warm and cold starts land on the same solution") {
  Rng rng(99);
  const int n = 8, mc = 12;
  const RMat H = random_spd(n, rng, 1.0);
  RVec q(n);
  for (int i = 0; i < n; ++i) q(i) = rng.uniform(-2, 2);
  RMat A(mc, n);
  for (Eigen::Index i = 0; i < A.size(); ++i) A(i) = rng.uniform(-1, 1);
  RVec x_feas = RVec::Zero(n);
  RVec b = A * x_feas;
  for (int i = 0; i < mc; ++i) b(i) += rng.uniform(0.2, 1.0);

  const QpSolution cold = solve_qp_folded(H, q, A, b);
  QpWarmStart warm{cold.u_star, cold.duals};
  const QpSolution rewarmed = solve_qp_folded(H, q, A, b, &warm);
  CHECK(rewarmed.converged);
  CHECK(rewarmed.iterations <= cold.iterations);
  CHECK((rewarmed.u_star - cold.u_star).norm() <= 1e-5 * (1.0 + cold.u_star.norm()));

  // A deliberately wrong warm start still converges to the same point.
  QpWarmStart junk{RVec::Constant(n, 5.0), RVec::Constant(mc, 1.0)};
  const QpSolution recovered = solve_qp_folded(H, q, A, b, &junk);
  CHECK(recovered.converged);
  CHECK((recovered.u_star - cold.u_star).norm() <= 1e-5 * (1.0 + cold.u_star.norm()));
}

TEST_CASE("inconsistent constraints raise the infeasibility certificate") {
  RMat H1 = RMat::Identity(1, 1);
  RVec q = RVec::Zero(1);
  RMat L(2, 1);
  L << 1.0,
      -1.0;
  RVec d(2);
  d << -1.0, -1.0;  // u <= -1 and u >= 1

  CHECK_THROWS_AS(solve_qp_folded(H1, q, L, d), NumericalError);
}

TEST_CASE("iteration cap returns the best iterate flagged not converged") {
  Rng rng(7);
  const int n = 6, mc = 10;
  const RMat H = random_spd(n, rng, 0.01);
  RVec q(n);
  for (int i = 0; i < n; ++i) q(i) = rng.uniform(-2, 2);
  RMat A(mc, n);
  for (Eigen::Index i = 0; i < A.size(); ++i) A(i) = rng.uniform(-1, 1);
  RVec b = A * RVec::Zero(n);
  for (int i = 0; i < mc; ++i) b(i) += rng.uniform(0.2, 1.0);

  QpSettings strict;
  strict.max_iterations = 3;
  strict.polish = false;
  const QpSolution sol = solve_qp_folded(H, q, A, b, nullptr, strict);
  CHECK_FALSE(sol.converged);
  CHECK(sol.u_star.allFinite());
  CHECK(sol.iterations == 3);
}

TEST_CASE("active bounds are met to polish accuracy") {
  // Horizon-style box problem: quadratic pulls all coordinates past the box,
  // so every constraint is active and must hold to 1e-8.
  const int n = 10;
  RMat H1 = RMat::Identity(n, n);
  RVec q = RVec::Constant(n, 4.0);  // unconstrained optimum at -2
  RMat L(2 * n, n);
  L.topRows(n) = RMat::Identity(n, n);
  L.bottomRows(n) = -RMat::Identity(n, n);
  RVec d = RVec::Ones(2 * n);  // |u_i| <= 1

  const QpSolution sol = solve_qp_folded(H1, q, L, d);
  CHECK(sol.converged);
  for (int i = 0; i < n; ++i) CHECK(std::abs(sol.u_star(i) + 1.0) <= 1e-8);
  CHECK(sol.primal_feasibility <= 1e-8);
}

TEST_CASE("malformed dense programs are rejected") {
  DenseQp qp;
  qp.H1 = RMat::Identity(2, 2);
  qp.H1(0, 1) = 0.5;  // asymmetric
  qp.h = RVec::Zero(2);
  qp.H2 = CMat::Zero(1, 2);
  qp.L.resize(0, 2);
  qp.M.resize(0, 1);
  qp.d.resize(0);
  CHECK_THROWS_AS(qp.validate(), NumericalError);

  qp.H1(1, 0) = 0.5;  // symmetric again
  qp.h = RVec::Zero(3);
  CHECK_THROWS_AS(qp.validate(), DimensionError);
}
