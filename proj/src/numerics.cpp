#include "koopman/numerics.hpp"

#include <Eigen/SVD>

namespace koopman {

double pinv_default_rtol(Eigen::Index rows, Eigen::Index cols) {
  return 1e-12 * static_cast<double>(std::max(rows, cols));
}

namespace {

template <typename Mat>
Mat pinv_solve_impl(const Mat& A, const Mat& b, double rtol) {
  require(A.rows() == b.rows(), "pinv_solve: A and b row counts differ");
  require_finite(A, "pinv_solve: A");
  require_finite(b, "pinv_solve: b");
  if (rtol < 0.0) rtol = pinv_default_rtol(A.rows(), A.cols());
  if (A.size() == 0) return Mat::Zero(A.cols(), b.cols());

  // BDC for larger panels, Jacobi for small ones (Eigen's own guidance).
  Eigen::VectorXd sv;
  Mat U, V;
  if (std::min(A.rows(), A.cols()) > 16) {
    Eigen::BDCSVD<Mat> svd(A, Eigen::ComputeThinU | Eigen::ComputeThinV);
    sv = svd.singularValues();
    U = svd.matrixU();
    V = svd.matrixV();
  } else {
    Eigen::JacobiSVD<Mat> svd(A, Eigen::ComputeThinU | Eigen::ComputeThinV);
    sv = svd.singularValues();
    U = svd.matrixU();
    V = svd.matrixV();
  }
  const double cutoff = rtol * (sv.size() > 0 ? sv(0) : 0.0);
  Mat y = U.adjoint() * b;
  for (Eigen::Index k = 0; k < sv.size(); ++k) {
    if (sv(k) > cutoff && sv(k) > 0.0) {
      y.row(k) /= sv(k);
    } else {
      y.row(k).setZero();
    }
  }
  return V * y;
}

}  // namespace

CMat pinv_solve(const CMat& A, const CMat& b, double rtol) {
  return pinv_solve_impl<CMat>(A, b, rtol);
}

RMat pinv_solve(const RMat& A, const RMat& b, double rtol) {
  return pinv_solve_impl<RMat>(A, b, rtol);
}

CMat ridge_solve(const CMat& A, const CMat& b, double delta2) {
  require(A.rows() == b.rows(), "ridge_solve: A and b row counts differ");
  require(delta2 >= 0.0, "ridge_solve: delta2 must be >= 0");
  if (delta2 == 0.0) return pinv_solve(A, b);
  require_finite(A, "ridge_solve: A");
  require_finite(b, "ridge_solve: b");
  CMat gram = A.adjoint() * A;
  gram.diagonal().array() += delta2;
  Eigen::LDLT<CMat> ldlt(gram);
  if (ldlt.info() != Eigen::Success) {
    throw NumericalError("ridge_solve: normal-equation factorization failed");
  }
  return ldlt.solve(A.adjoint() * b);
}

CMat jordan_exp(const JordanBlock& block, double t) {
  require(block.size >= 1, "jordan_exp: block size must be >= 1");
  const int n = block.size;
  CMat E = CMat::Zero(n, n);
  const Complex e = std::exp(block.lambda * t);
  double coeff = 1.0;  // t^k / k!
  for (int k = 0; k < n; ++k) {
    if (k > 0) coeff *= t / static_cast<double>(k);
    for (int i = 0; i + k < n; ++i) E(i, i + k) = e * coeff;
  }
  return E;
}

}  // namespace koopman
