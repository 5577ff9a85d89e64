#include "koopman/predictor.hpp"

#include "koopman/numerics.hpp"
#include "koopman/spectrum.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace koopman {

namespace {

// lambda / (1 - e^{-lambda Ts}) with the removable singularity at 0 filled by
// the series 1 - e^{-x} = x (1 - x/2 + x^2/6 - x^3/24 ...).
Complex input_gain(const Complex& lambda, double Ts) {
  const Complex x = lambda * Ts;
  if (std::abs(x) < 1e-6) {
    const Complex denom = 1.0 - x / 2.0 + x * x / 6.0 - x * x * x / 24.0;
    return 1.0 / (Ts * denom);
  }
  return lambda / (1.0 - std::exp(-x));
}

// Weighted complex least squares for one output row: minimizes
// sum_s w_s |c z_s - t_s|^2 over the row vector c.
CVec weighted_row_fit(const CMat& Z, const CVec& targets, const RVec& weights) {
  const Eigen::Index S = Z.cols();
  CMat M(S, Z.rows());
  CVec rhs(S);
  for (Eigen::Index s = 0; s < S; ++s) {
    const double sw = std::sqrt(weights(s));
    M.row(s) = sw * Z.col(s).transpose();
    rhs(s) = sw * targets(s);
  }
  return pinv_solve(M, rhs);
}

}  // namespace

std::string to_string(CMode mode) {
  switch (mode) {
    case CMode::BlockDiagonal: return "bdiag";
    case CMode::L2Fit: return "l2_fit";
    case CMode::SupFit: return "sup_fit";
  }
  return "unknown";
}

CMode cmode_from_string(const std::string& s) {
  if (s == "bdiag") return CMode::BlockDiagonal;
  if (s == "l2_fit") return CMode::L2Fit;
  if (s == "sup_fit") return CMode::SupFit;
  throw ConfigError("unknown C mode: " + s);
}

void LinearPredictor::validate() const {
  const int N = size();
  require(ad.size() == N, "LinearPredictor: Ad diagonal length mismatch");
  require(C.cols() == N, "LinearPredictor: C column count mismatch");
  require(Ts > 0.0, "LinearPredictor: Ts must be positive");
  if (B.size() > 0 || Bd.size() > 0) {
    require(B.rows() == N && Bd.rows() == N, "LinearPredictor: input matrix row mismatch");
    require(B.cols() == Bd.cols(), "LinearPredictor: B and Bd column mismatch");
  }
  for (int i = 0; i < N; ++i) {
    if (std::abs(ad(i) - std::exp(lambdas(i) * Ts)) > 1e-12 * (1.0 + std::abs(ad(i))))
      throw NumericalError("LinearPredictor: Ad is not exp(A Ts)");
  }
  require_finite(C, "predictor C");
  if (Bd.size() > 0) require_finite(Bd, "predictor Bd");
}

ACResult assemble_AC(const EigenfunctionSet& set, const Observable& h, CMode mode,
                     const RMat& samples) {
  set.validate();
  ACResult out;
  out.lambdas = set.eigenvalues;
  const int N = set.size();

  if (mode == CMode::BlockDiagonal) {
    require(set.partition.n_h == h.dim, "assemble_AC: partition does not match the observable");
    require(set.partition.total() == N,
            "assemble_AC: bdiag needs the partition to cover every row");
    out.C = CMat::Zero(h.dim, N);
    int col = 0;
    for (int i = 0; i < h.dim; ++i) {
      const int Ni = set.partition.Ni[static_cast<std::size_t>(i)];
      out.C.block(i, col, 1, Ni).setOnes();
      col += Ni;
    }
    return out;
  }

  require(samples.size() > 0, "assemble_AC: fit modes need sample states");
  require_finite(samples, "C-fit samples");
  const Eigen::Index S = samples.cols();
  const CMat Z = set.evaluate_many(samples);
  CMat H(h.dim, S);
  for (Eigen::Index s = 0; s < S; ++s) H.col(s) = h.eval(samples.col(s)).cast<Complex>();

  // Rank check on the small Gram matrix; deficiency only means the
  // pseudoinverse picks the minimum-norm C, but it is worth surfacing.
  {
    const CMat gram = Z * Z.adjoint();
    Eigen::SelfAdjointEigenSolver<CMat> es(gram);
    const RVec ev = es.eigenvalues().cwiseMax(0.0);
    const double tol = static_cast<double>(std::max<Eigen::Index>(Z.rows(), Z.cols())) *
                       std::numeric_limits<double>::epsilon() * ev.maxCoeff();
    int rank = 0;
    for (Eigen::Index i = 0; i < ev.size(); ++i)
      if (ev(i) > tol) ++rank;
    if (rank < N)
      out.warnings.push_back("assemble_AC: sample matrix rank " + std::to_string(rank) + " < " +
                             std::to_string(N) + "; using the minimum-norm fit");
  }

  if (mode == CMode::L2Fit) {
    // minimize |C Z - H|_F  <=>  Z^T C^T = H^T in the least-squares sense.
    const CMat Zt = Z.transpose();
    const CMat Ht = H.transpose();
    out.C = pinv_solve(Zt, Ht).transpose();
    return out;
  }

  // SupFit: the objective max_s |h(x_s) - C z_s|_inf splits across output
  // rows; each row solves a scalar Chebyshev problem by Lawson's iteration
  // (residual-reweighted least squares).
  out.C = CMat::Zero(h.dim, N);
  for (int r = 0; r < h.dim; ++r) {
    const CVec targets = H.row(r).transpose();
    RVec w = RVec::Constant(S, 1.0 / static_cast<double>(S));
    CVec c = weighted_row_fit(Z, targets, w);
    double best = (Z.transpose() * c - targets).cwiseAbs().maxCoeff();
    CVec best_c = c;
    for (int it = 0; it < 200; ++it) {
      RVec resid = (Z.transpose() * c - targets).cwiseAbs();
      const double fmax = resid.maxCoeff();
      if (fmax < best) {
        best = fmax;
        best_c = c;
      }
      w = w.cwiseProduct(resid.array().max(1e-300).matrix());
      const double total = w.sum();
      if (!(total > 0.0)) break;
      w /= total;
      const CVec next = weighted_row_fit(Z, targets, w);
      if ((next - c).norm() <= 1e-12 * (1.0 + c.norm())) {
        c = next;
        break;
      }
      c = next;
    }
    const double last = (Z.transpose() * c - targets).cwiseAbs().maxCoeff();
    out.C.row(r) = (last < best ? c : best_c).transpose();
  }
  return out;
}

LinearPredictor make_predictor(std::shared_ptr<const EigenfunctionSet> lift, const ACResult& ac,
                               double Ts) {
  require(Ts > 0.0, "make_predictor: Ts must be positive");
  LinearPredictor pred;
  pred.lambdas = ac.lambdas;
  pred.C = ac.C;
  pred.Ts = Ts;
  pred.ad = (ac.lambdas * Ts).array().exp().matrix();
  pred.realness_checked = conjugation_closed(ac.lambdas);
  pred.lift = std::move(lift);
  return pred;
}

CMat continuous_from_discrete_input(const CVec& lambdas, double Ts, const CMat& Bd) {
  require(Bd.rows() == lambdas.size(), "input-matrix map: row mismatch");
  CMat B = Bd;
  for (Eigen::Index i = 0; i < lambdas.size(); ++i) B.row(i) *= input_gain(lambdas(i), Ts);
  return B;
}

CMat discrete_from_continuous_input(const CVec& lambdas, double Ts, const CMat& B) {
  require(B.rows() == lambdas.size(), "input-matrix map: row mismatch");
  CMat Bd = B;
  for (Eigen::Index i = 0; i < lambdas.size(); ++i) Bd.row(i) /= input_gain(lambdas(i), Ts);
  return Bd;
}

FitBResult fit_B(const CVec& lambdas, const CMat& C, const EigenfunctionSet& lift,
                 const TrajectoryDataset& ds, const Observable& h, int max_steps) {
  require(ds.m > 0, "fit_B: the dataset has no inputs");
  require(C.cols() == lift.size(), "fit_B: C does not match the eigenfunction set");
  require(lambdas.size() == lift.size(), "fit_B: eigenvalue count mismatch");
  const int N = lift.size();
  const int m = ds.m;
  const int n_h = static_cast<int>(C.rows());
  const int K = max_steps < 0 ? ds.Ms : std::min(ds.Ms, max_steps);
  require(K >= 1, "fit_B: need at least one prediction step");

  const CVec ad = (lambdas * ds.Ts).array().exp().matrix();

  const Eigen::Index rows = static_cast<Eigen::Index>(ds.Mt) * K * n_h;
  CMat Theta(rows, static_cast<Eigen::Index>(m) * N);
  CVec theta(rows);

  Eigen::Index at = 0;
  for (int j = 0; j < ds.Mt; ++j) {
    CVec z = lift.evaluate(ds.state(j, 0));  // z_0 through the extensions
    CMat S = CMat::Zero(n_h, static_cast<Eigen::Index>(m) * N);
    for (int k = 1; k <= K; ++k) {
      // S_k = S_{k-1} (I_m kron Ad) + u_{k-1}^T kron C
      const RVec u = ds.input(j, k - 1);
      for (int b = 0; b < m; ++b) {
        auto block = S.middleCols(static_cast<Eigen::Index>(b) * N, N);
        block *= ad.asDiagonal();
        block += u(b) * C;
      }
      z = ad.cwiseProduct(z);
      const CVec target = h.eval(ds.state(j, k)).cast<Complex>() - C * z;
      Theta.middleRows(at, n_h) = S;
      theta.segment(at, n_h) = target;
      at += n_h;
    }
  }

  const CVec vec_bd = pinv_solve(Theta, theta);
  FitBResult out;
  out.Bd.resize(N, m);
  for (int b = 0; b < m; ++b) out.Bd.col(b) = vec_bd.segment(static_cast<Eigen::Index>(b) * N, N);
  out.B = continuous_from_discrete_input(lambdas, ds.Ts, out.Bd);
  return out;
}

RMat predict_lifted(const LinearPredictor& pred, CVec z0, const RMat& inputs, int steps) {
  require(steps >= 0, "predict: steps must be >= 0");
  require(z0.size() == pred.size(), "predict: lifted state length mismatch");
  const bool controlled = pred.Bd.size() > 0 && inputs.size() > 0;
  if (controlled) {
    require(inputs.rows() == pred.Bd.cols(), "predict: input row count mismatch");
    require(inputs.cols() >= steps, "predict: need one input column per step");
  }

  const int n_h = pred.output_dim();
  RMat out(n_h, steps + 1);
  CVec z = std::move(z0);
  double imag_worst = 0.0;
  double scale = 0.0;
  for (int k = 0;; ++k) {
    const CVec y = pred.C * z;
    out.col(k) = y.real();
    imag_worst = std::max(imag_worst, y.imag().cwiseAbs().maxCoeff());
    scale = std::max(scale, y.real().cwiseAbs().maxCoeff());
    if (k == steps) break;
    z = pred.ad.cwiseProduct(z);
    if (controlled) z += pred.Bd * inputs.col(k).cast<Complex>();
  }
  if (pred.realness_checked && imag_worst > 1e-6 * std::max(scale, 1e-12))
    throw NumericalError("predict: conjugate-closed spectrum produced a complex output");
  require_finite(out, "predicted outputs");
  return out;
}

RMat predict(const LinearPredictor& pred, const RVec& x0, const RMat& inputs, int steps) {
  require(pred.lift != nullptr, "predict: predictor has no eigenfunction set attached");
  return predict_lifted(pred, pred.lift->evaluate(x0), inputs, steps);
}

double rmse_error(const RMat& truth, const RMat& pred) {
  require(truth.rows() == pred.rows() && truth.cols() == pred.cols(),
          "rmse_error: sequence shapes differ");
  const double denom = truth.squaredNorm();
  if (!(denom > 0.0)) throw NumericalError("rmse_error: true sequence is identically zero");
  return 100.0 * std::sqrt((pred - truth).squaredNorm()) / std::sqrt(denom);
}

}  // namespace koopman
