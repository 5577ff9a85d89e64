#include "koopman/qp.hpp"

#include "koopman/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

namespace koopman {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double inf_norm(const RVec& v) { return v.size() ? v.cwiseAbs().maxCoeff() : 0.0; }

// KKT residuals of the point (u, y) for min u^T H1 u + q^T u, L u <= d.
void kkt_residuals(const RMat& H1, const RVec& q, const RMat& L, const RVec& d, const RVec& u,
                   const RVec& y, QpSolution& sol) {
  RVec grad = 2.0 * (H1 * u) + q;
  if (L.rows() > 0) grad += L.transpose() * y;
  sol.stationarity = inf_norm(grad);
  if (L.rows() > 0) {
    const RVec slack = L * u - d;
    sol.primal_feasibility = std::max(0.0, slack.maxCoeff());
    sol.complementarity = y.cwiseProduct(slack).cwiseAbs().maxCoeff();
  } else {
    sol.primal_feasibility = 0.0;
    sol.complementarity = 0.0;
  }
}

// Active-set refinement: equality-solve the KKT system on the constraints the
// ADMM point reports active, then keep the result only if it improves every
// recomputed residual class.
void polish(const RMat& H1, const RVec& q, const RMat& L, const RVec& d, QpSolution& sol) {
  const Eigen::Index nc = L.rows();
  if (nc == 0) return;
  const RVec slack = L * sol.u_star - d;
  std::vector<Eigen::Index> active;
  for (Eigen::Index i = 0; i < nc; ++i)
    if (slack(i) > -1e-7 || sol.duals(i) > 1e-7) active.push_back(i);
  const auto na = static_cast<Eigen::Index>(active.size());
  const Eigen::Index nv = H1.rows();
  if (na > nv) return;  // over-determined active set: keep the ADMM point

  RMat K(nv + na, nv + na);
  K.setZero();
  K.topLeftCorner(nv, nv) = 2.0 * H1;
  RVec rhs(nv + na);
  rhs.head(nv) = -q;
  for (Eigen::Index a = 0; a < na; ++a) {
    K.block(nv + a, 0, 1, nv) = L.row(active[static_cast<std::size_t>(a)]);
    K.block(0, nv + a, nv, 1) = L.row(active[static_cast<std::size_t>(a)]).transpose();
    rhs(nv + a) = d(active[static_cast<std::size_t>(a)]);
  }

  Eigen::FullPivLU<RMat> lu(K);
  if (!lu.isInvertible()) return;
  RVec sol_vec = lu.solve(rhs);
  // One step of iterative refinement sharpens the factorization result.
  sol_vec += lu.solve(rhs - K * sol_vec);

  RVec u = sol_vec.head(nv);
  RVec y = RVec::Zero(nc);
  bool dual_ok = true;
  for (Eigen::Index a = 0; a < na; ++a) {
    const double mult = sol_vec(nv + a);
    if (mult < -1e-7) dual_ok = false;
    y(active[static_cast<std::size_t>(a)]) = std::max(0.0, mult);
  }
  if (!dual_ok) return;

  QpSolution cand = sol;
  cand.u_star = std::move(u);
  cand.duals = std::move(y);
  kkt_residuals(H1, q, L, d, cand.u_star, cand.duals, cand);
  const double before =
      std::max({sol.stationarity, sol.primal_feasibility, sol.complementarity});
  const double after =
      std::max({cand.stationarity, cand.primal_feasibility, cand.complementarity});
  if (after <= before) sol = std::move(cand);
}

}  // namespace

void DenseQp::validate() const {
  const Eigen::Index n = H1.rows();
  require(H1.cols() == n, "DenseQp: H1 must be square");
  require(h.size() == n, "DenseQp: h length mismatch");
  require(H2.cols() == n, "DenseQp: H2 column mismatch");
  require(L.cols() == n || L.rows() == 0, "DenseQp: L column mismatch");
  require(d.size() == L.rows(), "DenseQp: d length mismatch");
  require(M.rows() == L.rows(), "DenseQp: M row mismatch");
  if ((H1 - H1.transpose()).cwiseAbs().maxCoeff() > 1e-9 * (1.0 + H1.cwiseAbs().maxCoeff()))
    throw NumericalError("DenseQp: H1 is not symmetric");
  require_finite(H1, "H1");
  require_finite(h, "h");
}

QpSolution solve_qp_folded(const RMat& H1, const RVec& q, const RMat& L, const RVec& d,
                           const QpWarmStart* warm, const QpSettings& settings) {
  const Eigen::Index nv = H1.rows();
  const Eigen::Index nc = L.rows();
  require(q.size() == nv, "solve_qp: q length mismatch");
  require(d.size() == nc, "solve_qp: d length mismatch");
  require_finite(q, "qp linear term");

  QpSolution sol;
  if (nc == 0) {
    // Unconstrained minimum -1/2 H1^+ q, via the pseudoinverse so PSD ranks
    // degrade to the minimum-norm stationary point.
    const RMat rhs = -0.5 * q;
    sol.u_star = pinv_solve(H1, rhs).col(0);
    sol.duals.resize(0);
    sol.iterations = 0;
    sol.converged = true;
    kkt_residuals(H1, q, L, d, sol.u_star, sol.duals, sol);
    return sol;
  }

  const RMat P = 2.0 * H1;
  double rho = settings.rho;

  RVec u = warm && warm->u.size() == nv ? warm->u : RVec::Zero(nv);
  RVec y = warm && warm->duals.size() == nc ? warm->duals : RVec::Zero(nc);
  RVec z = (L * u).cwiseMin(d);

  Eigen::LDLT<RMat> kkt;
  const auto refactor = [&]() {
    kkt.compute(P + settings.sigma * RMat::Identity(nv, nv) + rho * (L.transpose() * L));
    if (kkt.info() != Eigen::Success)
      throw NumericalError("solve_qp: KKT factorization failed");
  };
  refactor();

  RVec y_prev = y;
  RVec u_best = u, y_best = y;
  double best_score = kInf;
  int it = 0;
  bool converged = false;
  for (it = 1; it <= settings.max_iterations; ++it) {
    const RVec rhs = settings.sigma * u - q + L.transpose() * (rho * z - y);
    const RVec u_tilde = kkt.solve(rhs);
    const RVec zt = L * u_tilde;
    const RVec u_next = settings.alpha * u_tilde + (1.0 - settings.alpha) * u;
    const RVec z_relax = settings.alpha * zt + (1.0 - settings.alpha) * z;
    const RVec z_next = (z_relax + y / rho).cwiseMin(d);
    y = y + rho * (z_relax - z_next);
    y = y.cwiseMax(0.0);
    u = u_next;
    z = z_next;

    if (it % 10 == 0 || it == 1) {
      const RVec Lu = L * u;
      const double r_prim = inf_norm(Lu - z);
      const RVec Px = P * u;
      const RVec Lty = L.transpose() * y;
      const double r_dual = inf_norm(Px + q + Lty);
      const double eps_prim =
          settings.eps_abs + settings.eps_rel * std::max(inf_norm(Lu), inf_norm(z));
      const double eps_dual =
          settings.eps_abs +
          settings.eps_rel * std::max({inf_norm(Px), inf_norm(Lty), inf_norm(q)});
      const double score = std::max(r_prim, r_dual);
      if (score < best_score) {
        best_score = score;
        u_best = u;
        y_best = y;
      }
      if (r_prim <= eps_prim && r_dual <= eps_dual) {
        converged = true;
        break;
      }

      // Primal infeasibility certificate from the dual update direction.
      const RVec dy = y - y_prev;
      const double dy_norm = inf_norm(dy);
      if (dy_norm > 1e-12) {
        const bool nonneg = dy.minCoeff() >= -1e-10 * dy_norm;
        const double support = d.dot(dy);
        const double atv = inf_norm(L.transpose() * dy);
        if (nonneg && atv <= 1e-8 * dy_norm && support < -1e-8 * dy_norm)
          throw NumericalError("solve_qp: problem is primal infeasible");
      }
      y_prev = y;

      if (it % 50 == 0 && r_dual > 1e-300) {
        const double scale = std::sqrt((r_prim / std::max(eps_prim, 1e-300)) /
                                       (r_dual / std::max(eps_dual, 1e-300)));
        const double rho_new = std::clamp(rho * scale, settings.rho_min, settings.rho_max);
        if (rho_new > 5.0 * rho || rho_new < rho / 5.0) {
          rho = rho_new;
          refactor();
        }
      }
    }
  }

  sol.u_star = converged ? u : u_best;
  sol.duals = converged ? y : y_best;
  sol.iterations = std::min(it, settings.max_iterations);
  sol.converged = converged;
  kkt_residuals(H1, q, L, d, sol.u_star, sol.duals, sol);
  if (settings.polish) polish(H1, q, L, d, sol);
  return sol;
}

QpSolution solve_qp(const DenseQp& qp, const CVec& z0, const QpWarmStart* warm,
                    const QpSettings& settings) {
  qp.validate();
  require(z0.size() == qp.H2.rows(), "solve_qp: z0 length mismatch");
  RVec q = qp.h;
  if (qp.H2.size() > 0) q += (qp.H2.transpose() * z0).real();
  RVec d_eff = qp.d;
  if (qp.M.size() > 0) d_eff -= (qp.M * z0).real();
  return solve_qp_folded(qp.H1, q, qp.L, d_eff, warm, settings);
}

}  // namespace koopman
