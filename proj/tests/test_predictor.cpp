#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "koopman/predictor.hpp"
#include "koopman/rng.hpp"
#include "koopman/spectrum.hpp"

#include "oracles.hpp"

#include <cmath>
#include <memory>

using namespace koopman;

namespace {

TrajectoryDataset cloud_dataset(const RMat& pts) {
  TrajectoryDataset ds;
  ds.n = static_cast<int>(pts.rows());
  ds.m = 0;
  ds.Mt = static_cast<int>(pts.cols());
  ds.Ms = 0;
  ds.Ts = 0.01;
  ds.states = pts;
  return ds;
}

RMat random_cloud(int n, int P, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  Rng rng(seed);
  RMat pts(n, P);
  for (int i = 0; i < P; ++i)
    for (int a = 0; a < n; ++a) pts(a, i) = rng.uniform(lo, hi);
  return pts;
}

// Set whose rows are fixed linear functionals of the state, with extensions
// fitted over the given cloud. Linear rows make barycentric evaluation exact,
// so lifted states away from vertices are still exactly v^T x.
std::shared_ptr<EigenfunctionSet> linear_row_set(const TrajectoryDataset& ds, const CMat& V,
                                                 const CVec& lambdas) {
  auto set = std::make_shared<EigenfunctionSet>();
  const int N = static_cast<int>(V.rows());
  set->eigenvalues = lambdas;
  for (int i = 0; i < N; ++i) set->blocks.push_back(JordanBlock{lambdas(i), 1});
  set->partition = OutputPartition{1, {N}};
  set->Ts = ds.Ts;
  set->Mt = ds.Mt;
  set->Ms = ds.Ms;
  set->values = V * ds.states.cast<Complex>();
  set->products.assign(static_cast<std::size_t>(N), {});
  set->extensions.assign(static_cast<std::size_t>(N), {});
  fit_extensions(*set, ds, ExtensionKind::TriangulatedLinear, 0.0, 0.0);
  return set;
}

}  // namespace

TEST_CASE("bdiag C with unit budgets is the identity pattern") {
  const RMat pts = random_cloud(2, 50, 1);
  TrajectoryDataset ds = cloud_dataset(pts);
  CMat V = CMat::Identity(2, 2);
  CVec lambdas(2);
  lambdas << Complex(-0.5, 0), Complex(-1.0, 0);
  auto set = linear_row_set(ds, V, lambdas);
  set->partition = OutputPartition{2, {1, 1}};

  const ACResult ac = assemble_AC(*set, state_observable(2), CMode::BlockDiagonal);
  CHECK(ac.warnings.empty());
  REQUIRE(ac.C.rows() == 2);
  REQUIRE(ac.C.cols() == 2);
  CHECK(ac.C(0, 0) == Complex(1, 0));
  CHECK(ac.C(1, 1) == Complex(1, 0));
  CHECK(ac.C(0, 1) == Complex(0, 0));
  CHECK(ac.C(1, 0) == Complex(0, 0));
}

TEST_CASE("bdiag on-data residual equals the eigenvalue objective") {
  // Deliberately mismatched eigenvalues: the residual is nonzero and must
  // equal the sum of the per-component selection objectives.
  RMat A(2, 2);
  A << -0.5, 0.0,
        0.0, -1.0;
  std::vector<RVec> ics;
  Rng rng(7);
  for (int j = 0; j < 12; ++j) {
    RVec x(2);
    x << rng.uniform(0.5, 1.5), rng.uniform(-1.5, -0.5);
    ics.push_back(x);
  }
  const TrajectoryDataset ds = generate_dataset(linear_system(A), list_sampler(ics),
                                                static_cast<int>(ics.size()), 1.0, 0.05,
                                                no_input(), 3);
  const Observable h = state_observable(2);
  const OutputPartition part{2, {2, 2}};
  std::vector<CVec> lambdas(2);
  lambdas[0] = CVec(2);
  lambdas[0] << Complex(-0.3, 0), Complex(-0.9, 0);
  lambdas[1] = lambdas[0];

  const BoundaryMatrix bm = optimal_boundary(ds, h, part, lambdas);
  const EigenfunctionSet set = propagate_values(bm, ds.Ts, ds.Ms);
  const ACResult ac = assemble_AC(set, h, CMode::BlockDiagonal);

  double resid = 0.0;
  for (Eigen::Index c = 0; c < set.values.cols(); ++c) {
    const int j = static_cast<int>(c) / (ds.Ms + 1);
    const int k = static_cast<int>(c) % (ds.Ms + 1);
    const CVec y = ac.C * set.values.col(c);
    const RVec truth = h.eval(ds.state(j, k));
    for (int r = 0; r < 2; ++r) resid += std::norm(y(r) - Complex(truth(r), 0.0));
  }

  double objective = 0.0;
  for (int i = 0; i < 2; ++i) {
    const LambdaObjective obj = make_objective(ds, h, i);
    objective += objective_value(obj, lambdas[static_cast<std::size_t>(i)]);
  }
  CHECK(resid == doctest::Approx(objective).epsilon(1e-8));
}

TEST_CASE("l2 fit recovers exactly representable observables") {
  const RMat pts = random_cloud(2, 120, 9);
  TrajectoryDataset ds = cloud_dataset(pts);
  CMat V(2, 2);
  V << Complex(1.0, 0), Complex(0.5, 0),
       Complex(-0.25, 0), Complex(1.5, 0);
  CVec lambdas(2);
  lambdas << Complex(-0.2, 0), Complex(-0.6, 0);
  auto set = linear_row_set(ds, V, lambdas);

  // h = c1 row1 + c2 row2 with real coefficients is a linear observable.
  const double c1 = 0.8, c2 = -1.3;
  const RVec w = (c1 * V.row(0) + c2 * V.row(1)).real().transpose();
  Observable h;
  h.dim = 1;
  h.eval = [w](const RVec& x) {
    RVec y(1);
    y(0) = w.dot(x);
    return y;
  };

  const ACResult ac = assemble_AC(*set, h, CMode::L2Fit, pts);
  CHECK(ac.warnings.empty());
  CHECK(std::abs(ac.C(0, 0) - Complex(c1, 0)) < 1e-8);
  CHECK(std::abs(ac.C(0, 1) - Complex(c2, 0)) < 1e-8);

  const CMat Z = set->evaluate_many(pts);
  double resid = 0.0;
  for (Eigen::Index s = 0; s < pts.cols(); ++s)
    resid += std::norm((ac.C * Z.col(s))(0) - Complex(h.eval(pts.col(s))(0), 0));
  CHECK(resid < 1e-16);
}

TEST_CASE("rank-deficient sample matrices are flagged and still fit") {
  const RMat pts = random_cloud(2, 60, 13);
  TrajectoryDataset ds = cloud_dataset(pts);
  CMat V(3, 2);  // third row duplicates the first: rank 2 < N = 3
  V << Complex(1, 0), Complex(0, 0),
       Complex(0, 0), Complex(1, 0),
       Complex(1, 0), Complex(0, 0);
  CVec lambdas(3);
  lambdas << Complex(-0.2, 0), Complex(-0.4, 0), Complex(-0.2, 0);
  auto set = linear_row_set(ds, V, lambdas);

  const ACResult ac = assemble_AC(*set, state_observable(2), CMode::L2Fit, pts);
  REQUIRE_FALSE(ac.warnings.empty());
  CHECK(ac.warnings.front().find("rank") != std::string::npos);

  const CMat Z = set->evaluate_many(pts);
  for (Eigen::Index s = 0; s < 10; ++s) {
    const CVec y = ac.C * Z.col(s);
    CHECK(std::abs(y(0) - Complex(pts(0, s), 0)) < 1e-8);
    CHECK(std::abs(y(1) - Complex(pts(1, s), 0)) < 1e-8);
  }
}

TEST_CASE("sup fit lands within 1% of a subgradient oracle") {
  const RMat pts = random_cloud(2, 150, 21);
  TrajectoryDataset ds = cloud_dataset(pts);
  CMat V(3, 2);
  V << Complex(1, 0), Complex(0.3, 0),
       Complex(-0.2, 0), Complex(1, 0),
       Complex(0.5, -0.4), Complex(0.1, 0.8);
  CVec lambdas(3);
  lambdas << Complex(-0.2, 0), Complex(-0.4, 0), Complex(-0.3, 0.5);
  auto set = linear_row_set(ds, V, lambdas);

  Observable h;  // deliberately outside the span
  h.dim = 1;
  h.eval = [](const RVec& x) {
    RVec y(1);
    y(0) = x(0) * x(0) + std::sin(x(1));
    return y;
  };

  const ACResult ac = assemble_AC(*set, h, CMode::SupFit, pts);
  const CMat Z = set->evaluate_many(pts);
  CVec targets(pts.cols());
  for (Eigen::Index s = 0; s < pts.cols(); ++s) targets(s) = Complex(h.eval(pts.col(s))(0), 0);

  double irls = 0.0;
  for (Eigen::Index s = 0; s < pts.cols(); ++s)
    irls = std::max(irls, std::abs((ac.C.row(0) * Z.col(s))(0) - targets(s)));
  const double orac = oracle::chebyshev_row_value(Z, targets);
  CHECK(irls <= 1.01 * orac + 1e-12);

  // And the minimax fit must beat the plain least-squares fit on the max norm.
  const ACResult l2 = assemble_AC(*set, h, CMode::L2Fit, pts);
  double l2max = 0.0;
  for (Eigen::Index s = 0; s < pts.cols(); ++s)
    l2max = std::max(l2max, std::abs((l2.C.row(0) * Z.col(s))(0) - targets(s)));
  CHECK(irls <= l2max + 1e-12);
}

TEST_CASE("input-matrix conversion round-trips including zero eigenvalues") {
  CVec lambdas(4);
  lambdas << Complex(0, 0), Complex(-0.5, 0.3), Complex(-0.5, -0.3), Complex(1e-9, 0);
  const double Ts = 0.02;
  Rng rng(31);
  CMat Bd(4, 2);
  for (Eigen::Index i = 0; i < Bd.size(); ++i)
    Bd(i) = Complex(rng.uniform(-1, 1), rng.uniform(-1, 1));

  const CMat B = continuous_from_discrete_input(lambdas, Ts, Bd);
  const CMat back = discrete_from_continuous_input(lambdas, Ts, B);
  CHECK((back - Bd).norm() <= 1e-10 * Bd.norm());

  // Zero eigenvalue: the gain limit is exactly 1/Ts.
  CHECK(std::abs(B(0, 0) - Bd(0, 0) / Ts) <= 1e-12 * std::abs(B(0, 0)));

  // Against the explicit formula away from zero.
  const Complex lam = lambdas(1);
  const Complex gain = lam / (1.0 - std::exp(-lam * Ts));
  CHECK(std::abs(B(1, 1) - gain * Bd(1, 1)) <= 1e-12 * std::abs(B(1, 1)));
}

TEST_CASE("fit_B recovers a planted linear lifted system") {
  RMat A(2, 2);
  A << -0.4, 0.0,
        0.0, -1.1;
  RMat H(2, 1);
  H << 0.7,
      -0.3;
  std::vector<RVec> ics;
  Rng rng(5);
  for (int j = 0; j < 20; ++j) {
    RVec x(2);
    x << rng.uniform(-1, 1), rng.uniform(-1, 1);
    ics.push_back(x);
  }
  const TrajectoryDataset ds =
      generate_dataset(linear_control_system(A, H), list_sampler(ics),
                       static_cast<int>(ics.size()), 1.0, 0.05, uniform_input(-1.0, 1.0), 11);

  CVec lambdas(2);
  lambdas << Complex(A(0, 0), 0), Complex(A(1, 1), 0);
  auto set = linear_row_set(ds, CMat::Identity(2, 2), lambdas);
  const CMat C = CMat::Identity(2, 2);

  const FitBResult fit = fit_B(lambdas, C, *set, ds, state_observable(2));
  CMat Bd_true(2, 1);
  for (int i = 0; i < 2; ++i)
    Bd_true(i, 0) = (std::exp(A(i, i) * ds.Ts) - 1.0) / A(i, i) * H(i, 0);
  CHECK((fit.Bd - Bd_true).norm() <= 1e-8 * Bd_true.norm());

  // Eq-style consistency between the two input-matrix forms.
  const CMat back = discrete_from_continuous_input(lambdas, ds.Ts, fit.B);
  CHECK((back - fit.Bd).norm() <= 1e-10 * fit.Bd.norm());
}

TEST_CASE("fit_B with zero excitation returns the minimum-norm zero matrix") {
  RMat A(2, 2);
  A << -0.4, 0.0,
        0.0, -1.1;
  RMat H(2, 1);
  H << 1.0,
       1.0;
  std::vector<RVec> ics;
  for (int j = 0; j < 5; ++j) {
    RVec x(2);
    x << 0.2 + 0.1 * j, -0.3 - 0.1 * j;
    ics.push_back(x);
  }
  const TrajectoryDataset ds =
      generate_dataset(linear_control_system(A, H), list_sampler(ics),
                       static_cast<int>(ics.size()), 0.5, 0.05, uniform_input(0.0, 0.0), 2);

  CVec lambdas(2);
  lambdas << Complex(A(0, 0), 0), Complex(A(1, 1), 0);
  auto set = linear_row_set(ds, CMat::Identity(2, 2), lambdas);
  const FitBResult fit = fit_B(lambdas, CMat::Identity(2, 2), *set, ds, state_observable(2));
  CHECK(fit.Bd.norm() <= 1e-10);
}

TEST_CASE("prediction on an exactly representable linear flow") {
  RMat A(2, 2);
  A << -0.4, 0.0,
        0.0, -1.1;
  std::vector<RVec> ics;
  Rng rng(19);
  for (int j = 0; j < 10; ++j) {
    RVec x(2);
    x << rng.uniform(-1, 1), rng.uniform(-1, 1);
    ics.push_back(x);
  }
  const TrajectoryDataset ds = generate_dataset(linear_system(A), list_sampler(ics),
                                                static_cast<int>(ics.size()), 1.0, 0.05,
                                                no_input(), 23);
  CVec lambdas(2);
  lambdas << Complex(A(0, 0), 0), Complex(A(1, 1), 0);
  auto set = linear_row_set(ds, CMat::Identity(2, 2), lambdas);

  ACResult ac;
  ac.lambdas = lambdas;
  ac.C = CMat::Identity(2, 2);
  const LinearPredictor pred = make_predictor(set, ac, ds.Ts);
  pred.validate();
  CHECK(pred.realness_checked);  // real spectrum is conjugate-closed

  // Rolling out from each training IC reproduces the trajectory.
  double worst = 0.0;
  for (int j = 0; j < ds.Mt; ++j) {
    const RMat yhat = predict(pred, ds.state(j, 0), RMat(), ds.Ms);
    for (int k = 0; k <= ds.Ms; ++k)
      worst = std::max(worst, (yhat.col(k) - ds.state(j, k)).norm());
  }
  CHECK(worst <= 1e-8);

  // steps = 0 returns only the lifted reconstruction at x0.
  const RMat y0 = predict(pred, ds.state(0, 0), RMat(), 0);
  REQUIRE(y0.cols() == 1);
  CHECK((y0.col(0) - ds.state(0, 0)).norm() <= 1e-10);
}

TEST_CASE("zero eigenvalue with no input predicts a constant") {
  const RMat pts = random_cloud(2, 40, 3);
  TrajectoryDataset ds = cloud_dataset(pts);
  CMat V(1, 2);
  V << Complex(1, 0), Complex(1, 0);
  CVec lambdas(1);
  lambdas << Complex(0, 0);
  auto set = linear_row_set(ds, V, lambdas);

  ACResult ac;
  ac.lambdas = lambdas;
  ac.C = CMat::Ones(1, 1);
  const LinearPredictor pred = make_predictor(set, ac, 0.01);
  const RMat y = predict(pred, pts.col(4), RMat(), 25);
  for (Eigen::Index k = 0; k <= 25; ++k)
    CHECK(y(0, k) == doctest::Approx(y(0, 0)).epsilon(1e-14));
}

TEST_CASE("conjugate-closed spectra with unpaired C are rejected") {
  LinearPredictor pred;
  pred.lambdas.resize(2);
  pred.lambdas << Complex(-0.1, 1.0), Complex(-0.1, -1.0);
  pred.Ts = 0.1;
  pred.ad = (pred.lambdas * pred.Ts).array().exp().matrix();
  pred.C = CMat::Zero(1, 2);
  pred.C(0, 0) = Complex(1, 0);  // picks one member of the pair: complex output
  pred.realness_checked = true;

  CVec z0(2);
  z0 << Complex(0.3, 0.4), Complex(0.3, -0.4);
  CHECK_THROWS_AS(predict_lifted(pred, z0, RMat(), 5), NumericalError);

  // With the paired C the same rollout is fine and real.
  pred.C(0, 1) = Complex(1, 0);
  const RMat y = predict_lifted(pred, z0, RMat(), 5);
  CHECK(y.allFinite());
}

TEST_CASE("controlled rollout applies Bd per step") {
  LinearPredictor pred;
  pred.lambdas.resize(1);
  pred.lambdas << Complex(-0.5, 0);
  pred.Ts = 0.1;
  pred.ad = (pred.lambdas * pred.Ts).array().exp().matrix();
  pred.C = CMat::Ones(1, 1);
  pred.Bd = CMat::Constant(1, 1, Complex(0.2, 0));
  pred.B = continuous_from_discrete_input(pred.lambdas, pred.Ts, pred.Bd);
  pred.realness_checked = true;

  RMat u(1, 3);
  u << 1.0, -2.0, 0.5;
  CVec z0(1);
  z0 << Complex(1.0, 0);
  const RMat y = predict_lifted(pred, z0, u, 3);

  const double a = std::exp(-0.05);
  double z = 1.0;
  CHECK(y(0, 0) == doctest::Approx(z).epsilon(1e-14));
  for (int k = 0; k < 3; ++k) {
    z = a * z + 0.2 * u(0, k);
    CHECK(y(0, k + 1) == doctest::Approx(z).epsilon(1e-13));
  }
}

TEST_CASE("rmse_error follows the percent formula") {
  RMat truth(2, 4), pred(2, 4);
  Rng rng(77);
  for (Eigen::Index i = 0; i < truth.size(); ++i) truth(i) = rng.uniform(-1, 1);

  CHECK(rmse_error(truth, truth) == doctest::Approx(0.0));
  pred.setZero();
  CHECK(rmse_error(truth, pred) == doctest::Approx(100.0));
  pred = 2.0 * truth;
  CHECK(rmse_error(truth, pred) == doctest::Approx(100.0));

  RMat zero = RMat::Zero(2, 4);
  CHECK_THROWS_AS(rmse_error(zero, pred), NumericalError);
  RMat shorter(2, 3);
  shorter.setOnes();
  CHECK_THROWS_AS(rmse_error(truth, shorter), DimensionError);
}

TEST_CASE("predictor validation catches a drifted Ad") {
  CVec lambdas(1);
  lambdas << Complex(-0.5, 0);
  ACResult ac;
  ac.lambdas = lambdas;
  ac.C = CMat::Ones(1, 1);
  LinearPredictor pred = make_predictor(nullptr, ac, 0.1);
  pred.validate();
  pred.ad(0) += Complex(1e-6, 0);
  CHECK_THROWS_AS(pred.validate(), NumericalError);
}
