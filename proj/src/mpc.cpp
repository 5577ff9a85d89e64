#include "koopman/mpc.hpp"

#include "koopman/io.hpp"

#include <Eigen/Eigenvalues>

#include <chrono>
#include <cmath>
#include <sstream>
#include <utility>
#include <vector>

namespace koopman {

namespace {

void check_psd(const RMat& M, const char* name) {
  if (M.size() == 0) return;
  const double scale = std::max(1.0, M.cwiseAbs().maxCoeff());
  if ((M - M.transpose()).cwiseAbs().maxCoeff() > 1e-9 * scale)
    throw NumericalError(std::string("MpcSpec: ") + name + " is not symmetric");
  Eigen::SelfAdjointEigenSolver<RMat> es(M, Eigen::EigenvaluesOnly);
  if (es.eigenvalues().minCoeff() < -1e-10 * scale)
    throw NumericalError(std::string("MpcSpec: ") + name + " is not positive semidefinite");
}

// Stacked constant stage linear terms [q_lin; ...; q_lin; qN_lin].
RVec stacked_constant(const MpcSpec& spec, int n_h) {
  RVec q = RVec::Zero(static_cast<Eigen::Index>(spec.Np + 1) * n_h);
  if (spec.q_lin.size() > 0)
    for (int i = 0; i < spec.Np; ++i) q.segment(static_cast<Eigen::Index>(i) * n_h, n_h) = spec.q_lin;
  if (spec.qN_lin.size() > 0) q.tail(n_h) = spec.qN_lin;
  return q;
}

double elapsed_ms(std::chrono::steady_clock::time_point a, std::chrono::steady_clock::time_point b) {
  return std::chrono::duration<double, std::milli>(b - a).count();
}

}  // namespace

RVec ReferenceSchedule::value(double t) const {
  require(times.size() > 0, "ReferenceSchedule: empty schedule has no value");
  Eigen::Index idx = 0;
  while (idx + 1 < times.size() && times(idx + 1) <= t) ++idx;
  return values.col(idx);
}

void ReferenceSchedule::validate() const {
  if (times.size() == 0) {
    require(values.size() == 0, "ReferenceSchedule: values without breakpoints");
    return;
  }
  require(values.cols() == times.size(), "ReferenceSchedule: one value column per breakpoint");
  for (Eigen::Index i = 0; i + 1 < times.size(); ++i)
    if (!(times(i) < times(i + 1)))
      throw ConfigError("ReferenceSchedule: breakpoints must be strictly increasing");
  require_finite(times, "schedule times");
  require_finite(values, "schedule values");
}

void MpcSpec::validate(int n_h, int m) const {
  if (Np < 1) throw ConfigError("MpcSpec: Np must be at least 1");
  require(Q.rows() == n_h && Q.cols() == n_h, "MpcSpec: Q must be n_h x n_h");
  require(R.rows() == m && R.cols() == m, "MpcSpec: R must be m x m");
  if (QN.size() > 0) require(QN.rows() == n_h && QN.cols() == n_h, "MpcSpec: QN must be n_h x n_h");
  check_psd(Q, "Q");
  check_psd(R, "R");
  check_psd(QN, "QN");
  if (q_lin.size() > 0) require(q_lin.size() == n_h, "MpcSpec: q_lin length mismatch");
  if (qN_lin.size() > 0) require(qN_lin.size() == n_h, "MpcSpec: qN_lin length mismatch");
  if (r_lin.size() > 0) require(r_lin.size() == m, "MpcSpec: r_lin length mismatch");
  if (E.size() > 0 || F.size() > 0 || b.size() > 0) {
    require(E.rows() == F.rows() && E.rows() == b.size(),
            "MpcSpec: stage constraint row counts disagree");
    require(E.cols() == n_h && F.cols() == m, "MpcSpec: stage constraint column mismatch");
  }
  if (EN.size() > 0 || bN.size() > 0)
    require(EN.rows() == bN.size() && EN.cols() == n_h, "MpcSpec: terminal constraint mismatch");
  if (u_min.size() > 0 || u_max.size() > 0)
    require(u_min.size() == m && u_max.size() == m,
            "MpcSpec: input box must declare both bounds");
  reference.validate();
  if (!reference.empty())
    require(reference.values.rows() == n_h, "MpcSpec: reference dimension mismatch");
}

CondensedMpc condense(const MpcSpec& spec, const LinearPredictor& pred) {
  pred.validate();
  const int N = pred.size();
  const int n_h = pred.output_dim();
  const int m = pred.input_dim();
  require(m > 0, "condense: predictor has no input channels");
  spec.validate(n_h, m);
  const int Np = spec.Np;

  CondensedMpc out;
  out.n_h = n_h;
  out.m = m;
  out.Np = Np;
  out.Ts = pred.Ts;
  if (spec.QN.size() == 0)
    out.warnings.push_back("terminal weight not set; defaulting to the stage weight Q");

  // Stacked output map over the horizon, block k = C Ad^k.
  CMat A_stack(static_cast<Eigen::Index>(Np + 1) * n_h, N);
  CMat Ck = pred.C;
  for (int k = 0; k <= Np; ++k) {
    A_stack.middleRows(static_cast<Eigen::Index>(k) * n_h, n_h) = Ck;
    if (k < Np) Ck = Ck * pred.ad.asDiagonal();
  }

  // Step responses G_j = C Ad^j Bd fill the lower-triangular blocks of the
  // input response; the first block row (stage 0 output) is zero.
  std::vector<CMat> G(Np);
  for (int j = 0; j < Np; ++j)
    G[j] = A_stack.middleRows(static_cast<Eigen::Index>(j) * n_h, n_h) * pred.Bd;
  CMat B_stack = CMat::Zero(A_stack.rows(), static_cast<Eigen::Index>(m) * Np);
  for (int k = 1; k <= Np; ++k)
    for (int i = 0; i < k; ++i)
      B_stack.block(static_cast<Eigen::Index>(k) * n_h, static_cast<Eigen::Index>(i) * m, n_h, m) =
          G[k - 1 - i];

  // Conjugate pairs must cancel the imaginary part of the input response.
  const double bscale = std::max(1.0, B_stack.real().cwiseAbs().maxCoeff());
  if (B_stack.imag().cwiseAbs().maxCoeff() > 1e-9 * bscale)
    throw NumericalError(
        "condense: input response did not collapse to a real matrix; "
        "the spectrum is not conjugate-closed");
  const RMat Br = B_stack.real();

  // Fold the block-diagonal weight without materializing it.
  const RMat QN = spec.terminal_weight();
  RMat QB(Br.rows(), Br.cols());
  for (int k = 0; k <= Np; ++k)
    QB.middleRows(static_cast<Eigen::Index>(k) * n_h, n_h) =
        (k == Np ? QN : spec.Q) * Br.middleRows(static_cast<Eigen::Index>(k) * n_h, n_h);

  RMat H1 = Br.transpose() * QB;
  for (int i = 0; i < Np; ++i)
    H1.block(static_cast<Eigen::Index>(i) * m, static_cast<Eigen::Index>(i) * m, m, m) += spec.R;
  H1 = ((H1 + H1.transpose()) / 2.0).eval();
  {
    Eigen::SelfAdjointEigenSolver<RMat> es(H1);
    const double h1scale = std::max(1.0, H1.cwiseAbs().maxCoeff());
    if (es.eigenvalues().minCoeff() < -1e-10 * h1scale) {
      const RVec clipped = es.eigenvalues().cwiseMax(0.0);
      H1 = es.eigenvectors() * clipped.asDiagonal() * es.eigenvectors().transpose();
      H1 = ((H1 + H1.transpose()) / 2.0).eval();
      out.warnings.push_back("condensed Hessian left indefinite by rounding; spectrum floored at zero");
    }
  }

  CMat QA(A_stack.rows(), A_stack.cols());
  for (int k = 0; k <= Np; ++k)
    QA.middleRows(static_cast<Eigen::Index>(k) * n_h, n_h) =
        (k == Np ? QN : spec.Q) * A_stack.middleRows(static_cast<Eigen::Index>(k) * n_h, n_h);

  out.qp.H1 = H1;
  out.qp.H2 = 2.0 * (QA.transpose() * Br);

  // Constraint rows: Np stage blocks, then the terminal block. E acts on the
  // stacked outputs (already real through Br), F couples the inputs directly.
  const Eigen::Index nc = spec.E.rows();
  const Eigen::Index ncN = spec.EN.rows();
  const Eigen::Index rows = Np * nc + ncN;
  if (rows > 0) {
    RMat L = RMat::Zero(rows, static_cast<Eigen::Index>(m) * Np);
    CMat M = CMat::Zero(rows, N);
    RVec d(rows);
    for (int i = 0; i < Np; ++i) {
      if (nc == 0) break;
      L.middleRows(i * nc, nc) = spec.E * Br.middleRows(static_cast<Eigen::Index>(i) * n_h, n_h);
      L.block(i * nc, static_cast<Eigen::Index>(i) * m, nc, m) += spec.F;
      M.middleRows(i * nc, nc) = spec.E * A_stack.middleRows(static_cast<Eigen::Index>(i) * n_h, n_h);
      d.segment(i * nc, nc) = spec.b;
    }
    if (ncN > 0) {
      L.bottomRows(ncN) = spec.EN * Br.middleRows(static_cast<Eigen::Index>(Np) * n_h, n_h);
      M.bottomRows(ncN) = spec.EN * A_stack.middleRows(static_cast<Eigen::Index>(Np) * n_h, n_h);
      d.tail(ncN) = spec.bN;
    }
    out.qp.L = L;
    out.qp.M = M;
    out.qp.d = d;
  }

  RVec r_stack = RVec::Zero(static_cast<Eigen::Index>(m) * Np);
  if (spec.r_lin.size() > 0)
    for (int i = 0; i < Np; ++i) r_stack.segment(static_cast<Eigen::Index>(i) * m, m) = spec.r_lin;

  out.BtR = Br.transpose();
  out.qp.h = out.BtR * stacked_constant(spec, n_h) + r_stack;
  out.qp.validate();
  return out;
}

RVec CondensedMpc::linear_term(const MpcSpec& spec, double t) const {
  if (spec.reference.empty()) return qp.h;
  const RMat QN = spec.terminal_weight();
  RVec q(static_cast<Eigen::Index>(Np + 1) * n_h);
  for (int i = 0; i <= Np; ++i)
    q.segment(static_cast<Eigen::Index>(i) * n_h, n_h) =
        -2.0 * ((i == Np ? QN : spec.Q) * spec.reference.value(t + i * Ts));
  return qp.h + BtR * q;
}

ClosedLoopResult closed_loop(const VectorField& vf, const LinearPredictor& pred,
                             const MpcSpec& spec, const RVec& x0, double duration,
                             const QpSettings& settings) {
  require(pred.lift != nullptr, "closed_loop: predictor carries no eigenfunction lift");
  require(x0.size() == vf.state_dim, "closed_loop: initial state dimension mismatch");
  require(vf.input_dim == pred.input_dim(), "closed_loop: plant and predictor input dims disagree");

  const double Ts = pred.Ts;
  const long steps = std::lround(duration / Ts);
  if (steps < 0 || std::abs(duration - steps * Ts) > 1e-9 * std::max(1.0, std::abs(duration)))
    throw ConfigError("closed_loop: duration must be a whole number of sampling periods");

  CondensedMpc cond = condense(spec, pred);

  ClosedLoopResult out;
  out.n = vf.state_dim;
  out.m = cond.m;
  out.n_ref = spec.reference.empty() ? 0 : cond.n_h;
  out.rows.reserve(static_cast<std::size_t>(steps));

  RVec x = x0;
  QpWarmStart warm;
  bool have_warm = false;
  int bad_streak = 0;
  int tri_hint = 0;
  const Eigen::Index nc = spec.E.rows();

  for (long k = 0; k < steps; ++k) {
    const double t = static_cast<double>(k) * Ts;
    MpcLogRow row;
    row.t = t;
    row.x = x;
    if (out.n_ref > 0) row.ref = spec.reference.value(t);

    const auto t0 = std::chrono::steady_clock::now();
    int outside = 0;
    const CVec z0 = pred.lift->evaluate(x, &tri_hint, &outside);
    out.outside_hull += outside;
    const auto t1 = std::chrono::steady_clock::now();

    // Fold the parameter into the folded-QP data; the reference preview
    // refreshes the linear term each step.
    const RVec q = cond.linear_term(spec, t) + (cond.qp.H2.transpose() * z0).real();
    RVec d_eff;
    if (cond.qp.L.rows() > 0) d_eff = cond.qp.d - (cond.qp.M * z0).real();

    QpSolution sol;
    try {
      sol = solve_qp_folded(cond.qp.H1, q, cond.qp.L, d_eff, have_warm ? &warm : nullptr,
                            settings);
    } catch (const NumericalError& e) {
      out.aborted = true;
      out.abort_reason = e.what();
      break;
    }
    const auto t2 = std::chrono::steady_clock::now();

    row.qp_iterations = sol.iterations;
    row.converged = sol.converged;
    bad_streak = sol.converged ? 0 : bad_streak + 1;

    RVec u0 = sol.u_star.head(cond.m);
    if (spec.u_min.size() > 0) u0 = u0.cwiseMax(spec.u_min).cwiseMin(spec.u_max);
    row.u = u0;
    row.lift_ms = elapsed_ms(t0, t1);
    row.solve_ms = elapsed_ms(t1, t2);
    out.rows.push_back(std::move(row));

    if (bad_streak > 5) {
      out.aborted = true;
      out.abort_reason = "QP failed to converge on more than five consecutive steps";
      break;
    }

    // Shifted warm start: drop stage 0, repeat the last stage; terminal
    // constraint duals carry over unchanged.
    warm.u = sol.u_star;
    if (cond.Np > 1) {
      warm.u.head(static_cast<Eigen::Index>(cond.Np - 1) * cond.m) =
          sol.u_star.tail(static_cast<Eigen::Index>(cond.Np - 1) * cond.m);
      if (nc > 0) {
        warm.duals = sol.duals;
        warm.duals.head((cond.Np - 1) * nc) = sol.duals.segment(nc, (cond.Np - 1) * nc);
      } else {
        warm.duals = sol.duals;
      }
    } else {
      warm.duals = sol.duals;
    }
    have_warm = true;

    x = integrate(vf, x, u0, Ts, 1).back();
  }
  return out;
}

void write_closed_loop_csv(const std::string& path, const ClosedLoopResult& log,
                           bool include_timing) {
  std::ostringstream os;
  os << "t";
  for (int i = 1; i <= log.n; ++i) os << ",x" << i;
  for (int i = 1; i <= log.m; ++i) os << ",u" << i;
  for (int i = 1; i <= log.n_ref; ++i) os << ",ref" << i;
  os << ",qp_iters";
  if (include_timing) os << ",lift_ms,solve_ms";
  os << '\n';
  for (const MpcLogRow& r : log.rows) {
    os << format_double(r.t);
    for (int i = 0; i < log.n; ++i) os << ',' << format_double(r.x(i));
    for (int i = 0; i < log.m; ++i) os << ',' << format_double(r.u(i));
    for (int i = 0; i < log.n_ref; ++i) os << ',' << format_double(r.ref(i));
    os << ',' << r.qp_iterations;
    if (include_timing) os << ',' << format_double(r.lift_ms) << ',' << format_double(r.solve_ms);
    os << '\n';
  }
  write_text_file(path, os.str());
}

StackedObservable stack_observable(const StackParts& parts, int m) {
  require(parts.base.dim > 0 && static_cast<bool>(parts.base.eval),
          "stack_observable: base observable required");
  if (parts.stage_cost.dim > 0)
    require(parts.stage_cost.dim == 1, "stack_observable: stage cost must be scalar");
  if (parts.terminal_cost.dim > 0)
    require(parts.terminal_cost.dim == 1, "stack_observable: terminal cost must be scalar");
  const int n_c = parts.stage_constraint.dim;
  if (n_c > 0)
    require(parts.input_coupling.rows() == n_c && parts.input_coupling.cols() == m,
            "stack_observable: input coupling must be n_c x m");
  else
    require(parts.input_coupling.size() == 0,
            "stack_observable: input coupling without a stage constraint");
  const bool box = parts.u_min.size() > 0 || parts.u_max.size() > 0;
  if (box)
    require(parts.u_min.size() == m && parts.u_max.size() == m,
            "stack_observable: input box needs both bounds");
  const int n_cN = parts.terminal_constraint.dim;

  StackedObservable out;
  out.base_dim = parts.base.dim;
  int dim = parts.base.dim;
  if (parts.stage_cost.dim > 0) out.stage_cost_row = dim++;
  if (parts.terminal_cost.dim > 0) out.terminal_cost_row = dim++;
  const int box_rows = box ? 2 * m : 0;
  const int box_at = dim;
  dim += box_rows;
  const int c_at = dim;
  dim += n_c;
  const int cN_at = dim;
  dim += n_cN;

  if (dim == parts.base.dim) {
    out.h = parts.base;
    return out;
  }

  const StackParts p = parts;
  const int base_dim = out.base_dim;
  const int sc = out.stage_cost_row;
  const int tc = out.terminal_cost_row;
  out.h.dim = dim;
  out.h.eval = [p, dim, base_dim, sc, tc, box, box_at, c_at, cN_at, m, n_c, n_cN](const RVec& x) {
    RVec y(dim);
    y.head(base_dim) = p.base.eval(x);
    if (sc >= 0) y(sc) = p.stage_cost.eval(x)(0);
    if (tc >= 0) y(tc) = p.terminal_cost.eval(x)(0);
    if (box) {
      y.segment(box_at, m) = -p.u_max;
      y.segment(box_at + m, m) = p.u_min;
    }
    if (n_c > 0) y.segment(c_at, n_c) = p.stage_constraint.eval(x);
    if (n_cN > 0) y.segment(cN_at, n_cN) = p.terminal_constraint.eval(x);
    return y;
  };

  const int stage_rows = box_rows + n_c;
  if (stage_rows > 0) {
    out.E = RMat::Zero(stage_rows, dim);
    out.F = RMat::Zero(stage_rows, m);
    out.b = RVec::Zero(stage_rows);
    for (int i = 0; i < box_rows; ++i) out.E(i, box_at + i) = 1.0;
    if (box) {
      out.F.topRows(m) = RMat::Identity(m, m);
      out.F.middleRows(m, m) = -RMat::Identity(m, m);
    }
    for (int i = 0; i < n_c; ++i) out.E(box_rows + i, c_at + i) = 1.0;
    if (n_c > 0) out.F.bottomRows(n_c) = parts.input_coupling;
  }
  if (n_cN > 0) {
    out.EN = RMat::Zero(n_cN, dim);
    for (int i = 0; i < n_cN; ++i) out.EN(i, cN_at + i) = 1.0;
    out.bN = RVec::Zero(n_cN);
  }
  return out;
}

}  // namespace koopman
