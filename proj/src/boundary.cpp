#include "koopman/boundary.hpp"

#include "koopman/numerics.hpp"

#include <Eigen/SVD>

namespace koopman {

int OutputPartition::total() const {
  int t = 0;
  for (int v : Ni) t += v;
  return t;
}

void OutputPartition::validate() const {
  require(n_h > 0, "partition: n_h must be positive");
  require(static_cast<int>(Ni.size()) == n_h, "partition: one block size per output component");
  for (int v : Ni) require(v >= 1, "partition: block sizes must be >= 1");
}

OutputPartition even_partition(int n_h, int total) {
  require(n_h > 0 && total >= n_h, "even_partition: need at least one function per component");
  OutputPartition p;
  p.n_h = n_h;
  p.Ni.assign(static_cast<std::size_t>(n_h), total / n_h);
  for (int i = 0; i < total % n_h; ++i) p.Ni[static_cast<std::size_t>(i)] += 1;
  return p;
}

VandermondeBlocks build_L(const CVec& lambdas, int Mt, int Ms, double Ts) {
  require(lambdas.size() >= 1, "build_L: empty eigenvalue set");
  require(Mt >= 1 && Ms >= 1 && Ts > 0.0, "build_L: bad dimensions");
  require_finite(lambdas, "build_L: lambdas");
  for (Eigen::Index l = 0; l < lambdas.size(); ++l) {
    if (lambdas(l).real() * Ms * Ts > 300.0) {
      throw NumericalError("build_L: eigenvalue " + std::to_string(lambdas(l).real()) +
                           (lambdas(l).imag() >= 0 ? "+" : "") + std::to_string(lambdas(l).imag()) +
                           "j overflows over the data window");
    }
  }
  VandermondeBlocks B;
  B.lambdas = lambdas;
  B.Mt = Mt;
  B.Ms = Ms;
  B.Ts = Ts;
  B.V.resize(Ms + 1, lambdas.size());
  for (Eigen::Index l = 0; l < lambdas.size(); ++l) {
    const Complex r = std::exp(lambdas(l) * Ts);
    Complex v(1.0, 0.0);
    for (int k = 0; k <= Ms; ++k) {
      B.V(k, l) = v;
      v *= r;  // value recursion keeps the one-step ratio exact
    }
  }
  return B;
}

CVec VandermondeBlocks::multiply(const CVec& g) const {
  require(g.size() == cols(), "VandermondeBlocks::multiply: g size mismatch");
  const Eigen::Index Ni = lambdas.size();
  CVec y = CVec::Zero(rows());
  for (int j = 0; j < Mt; ++j) {
    CVec gj(Ni);
    for (Eigen::Index l = 0; l < Ni; ++l) gj(l) = g(l * Mt + j);
    y.segment(static_cast<Eigen::Index>(j) * (Ms + 1), Ms + 1) = V * gj;
  }
  return y;
}

namespace {

// Thin SVD solve with unit-norm column scaling; returns the minimum-norm LS
// solution for every column of H at once.
CMat equilibrated_solve(const CMat& A, const CMat& H) {
  const Eigen::Index nc = A.cols();
  RVec scale(nc);
  CMat An = A;
  for (Eigen::Index c = 0; c < nc; ++c) {
    const double nrm = A.col(c).norm();
    scale(c) = nrm > 0.0 ? nrm : 1.0;
    An.col(c) /= scale(c);
  }
  Eigen::BDCSVD<CMat> svd(An, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Eigen::VectorXd sv = svd.singularValues();
  const double cutoff = pinv_default_rtol(A.rows(), nc) * (sv.size() > 0 ? sv(0) : 0.0);
  CMat Y = svd.matrixU().adjoint() * H;
  for (Eigen::Index k = 0; k < sv.size(); ++k) {
    if (sv(k) > cutoff && sv(k) > 0.0) {
      Y.row(k) /= sv(k);
    } else {
      Y.row(k).setZero();
    }
  }
  CMat Q = svd.matrixV() * Y;
  for (Eigen::Index c = 0; c < nc; ++c) Q.row(c) /= scale(c);
  return Q;
}

}  // namespace

CMat VandermondeBlocks::solve(const CMat& H) const {
  require(H.rows() == Ms + 1 && H.cols() == Mt, "VandermondeBlocks::solve: H shape mismatch");
  return equilibrated_solve(V, H);
}

CMat VandermondeBlocks::solve_regularized(const CMat& H, double alpha) const {
  require(alpha >= 0.0, "VandermondeBlocks::solve_regularized: alpha must be >= 0");
  if (alpha == 0.0) return solve(H);
  require(H.rows() == Ms + 1 && H.cols() == Mt, "VandermondeBlocks::solve_regularized: H shape");
  // Stack sqrt(alpha) * D V under V and zeros under H; the trajectory blocks
  // stay identical so one factorization still serves all trajectories.
  const double w = std::sqrt(alpha);
  CMat A(2 * Ms + 1, V.cols());
  A.topRows(Ms + 1) = V;
  for (int k = 0; k < Ms; ++k) A.row(Ms + 1 + k) = w * (V.row(k + 1) - V.row(k)) / Ts;
  CMat Hs = CMat::Zero(2 * Ms + 1, H.cols());
  Hs.topRows(Ms + 1) = H;
  return equilibrated_solve(A, Hs);
}

CMat VandermondeBlocks::dense() const {
  const Eigen::Index Ni = lambdas.size();
  CMat L = CMat::Zero(rows(), cols());
  for (Eigen::Index l = 0; l < Ni; ++l) {
    for (int j = 0; j < Mt; ++j) {
      L.block(static_cast<Eigen::Index>(j) * (Ms + 1), l * Mt + j, Ms + 1, 1) = V.col(l);
    }
  }
  return L;
}

CMat trajectory_columns(const TrajectoryDataset& ds, const Observable& h, int component) {
  require(component >= 0 && component < h.dim, "trajectory_columns: component out of range");
  CMat H(ds.Ms + 1, ds.Mt);
  for (int j = 0; j < ds.Mt; ++j) {
    for (int k = 0; k <= ds.Ms; ++k) {
      H(k, j) = Complex(h.eval(ds.state(j, k))(component), 0.0);
    }
  }
  return H;
}

BoundaryMatrix optimal_boundary(const TrajectoryDataset& ds, const Observable& h,
                                const OutputPartition& partition,
                                const std::vector<CVec>& lambdas_per_component,
                                const Regularizer& reg) {
  partition.validate();
  require(partition.n_h == h.dim, "optimal_boundary: partition does not match observable");
  require(lambdas_per_component.size() == static_cast<std::size_t>(h.dim),
          "optimal_boundary: one eigenvalue list per output component");

  BoundaryMatrix out;
  out.partition = partition;
  const int N = partition.total();
  out.G.resize(N, ds.Mt);
  out.lambdas.resize(N);

  int row = 0;
  for (int i = 0; i < h.dim; ++i) {
    const CVec& lam = lambdas_per_component[static_cast<std::size_t>(i)];
    require(static_cast<int>(lam.size()) == partition.Ni[static_cast<std::size_t>(i)],
            "optimal_boundary: eigenvalue count differs from partition block " + std::to_string(i));
    const VandermondeBlocks B = build_L(lam, ds.Mt, ds.Ms, ds.Ts);
    const CMat H = trajectory_columns(ds, h, i);
    const CMat Q = reg.alpha > 0.0 ? B.solve_regularized(H, reg.alpha) : B.solve(H);
    out.G.block(row, 0, lam.size(), ds.Mt) = Q;
    out.lambdas.segment(row, lam.size()) = lam;
    row += static_cast<int>(lam.size());
  }
  return out;
}

}  // namespace koopman
