#include "koopman/spectrum.hpp"

#include "koopman/numerics.hpp"
#include "koopman/parallel.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <limits>

namespace koopman {

bool conjugation_closed(const CVec& values, double tol) {
  const Eigen::Index n = values.size();
  std::vector<bool> used(static_cast<std::size_t>(n), false);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Complex target = std::conj(values(i));
    bool found = false;
    for (Eigen::Index j = 0; j < n; ++j) {
      if (used[static_cast<std::size_t>(j)]) continue;
      if (std::abs(values(j) - target) <= tol * (1.0 + std::abs(target))) {
        used[static_cast<std::size_t>(j)] = true;
        found = true;
        break;
      }
    }
    if (!found) return false;
  }
  return true;
}

EigenvalueSet dmd_eigenvalues(const TrajectoryDataset& ds, std::vector<std::string>* warnings) {
  ds.validate();
  const Eigen::Index pairs = static_cast<Eigen::Index>(ds.Mt) * ds.Ms;
  RMat X(ds.n, pairs), Xp(ds.n, pairs);
  Eigen::Index c = 0;
  for (int j = 0; j < ds.Mt; ++j) {
    for (int k = 0; k < ds.Ms; ++k, ++c) {
      X.col(c) = ds.state(j, k);
      Xp.col(c) = ds.state(j, k + 1);
    }
  }
  // K minimizing |Xp - K X|_F, via the transposed least-squares problem.
  const RMat Kt = pinv_solve(RMat(X.transpose()), RMat(Xp.transpose()));
  const RMat K = Kt.transpose();

  Eigen::EigenSolver<RMat> eig(K);
  require(eig.info() == Eigen::Success, "dmd_eigenvalues: eigen decomposition failed");
  const CVec mu = eig.eigenvalues();

  std::vector<Complex> kept;
  const double mu_max = mu.size() > 0 ? mu.cwiseAbs().maxCoeff() : 0.0;
  for (Eigen::Index i = 0; i < mu.size(); ++i) {
    if (std::abs(mu(i)) <= 1e-14 * std::max(1.0, mu_max)) {
      if (warnings) {
        warnings->push_back("dmd_eigenvalues: dropped zero-magnitude discrete eigenvalue");
      }
      continue;
    }
    kept.push_back(std::log(mu(i)) / ds.Ts);
  }
  std::sort(kept.begin(), kept.end(), [](const Complex& a, const Complex& b) {
    if (a.real() != b.real()) return a.real() > b.real();
    return a.imag() > b.imag();
  });

  EigenvalueSet out;
  out.values.resize(static_cast<Eigen::Index>(kept.size()));
  for (std::size_t i = 0; i < kept.size(); ++i) out.values(static_cast<Eigen::Index>(i)) = kept[i];
  out.closed_under_conjugation = conjugation_closed(out.values);
  return out;
}

namespace {

void enumerate_exponents(int remaining, int positions, std::vector<int>& cur,
                         std::vector<std::vector<int>>& out) {
  if (positions == 1) {
    cur.push_back(remaining);
    out.push_back(cur);
    cur.pop_back();
    return;
  }
  for (int e = remaining; e >= 0; --e) {  // descending: lexicographically largest first
    cur.push_back(e);
    enumerate_exponents(remaining - e, positions - 1, cur, out);
    cur.pop_back();
  }
}

}  // namespace

EigenvalueSet lattice(const EigenvalueSet& base, int degree) {
  require(base.values.size() >= 1, "lattice: empty base set");
  require(degree >= 0, "lattice: degree must be >= 0");
  const int p = static_cast<int>(base.values.size());

  std::vector<Complex> vals;
  for (int d = 0; d <= degree; ++d) {
    std::vector<std::vector<int>> exps;
    std::vector<int> cur;
    enumerate_exponents(d, p, cur, exps);
    for (const auto& e : exps) {
      Complex v(0.0, 0.0);
      for (int i = 0; i < p; ++i) v += static_cast<double>(e[static_cast<std::size_t>(i)]) * base.values(i);
      bool dup = false;
      for (const Complex& w : vals) {
        if (std::abs(w - v) <= 1e-12) {
          dup = true;
          break;
        }
      }
      if (!dup) vals.push_back(v);
    }
  }

  EigenvalueSet out;
  out.values.resize(static_cast<Eigen::Index>(vals.size()));
  for (std::size_t i = 0; i < vals.size(); ++i) out.values(static_cast<Eigen::Index>(i)) = vals[i];
  out.closed_under_conjugation = conjugation_closed(out.values);
  return out;
}

LambdaObjective make_objective(const TrajectoryDataset& ds, const Observable& h, int component) {
  LambdaObjective obj;
  obj.Mt = ds.Mt;
  obj.Ms = ds.Ms;
  obj.Ts = ds.Ts;
  obj.H = trajectory_columns(ds, h, component);
  obj.h_norm_sq = obj.H.squaredNorm();
  return obj;
}

namespace {

struct EquilibratedBlock {
  CMat Vn;     // unit-norm columns
  RVec scale;  // original column norms
};

EquilibratedBlock equilibrate(const CMat& V) {
  EquilibratedBlock eb;
  eb.Vn = V;
  eb.scale.resize(V.cols());
  for (Eigen::Index c = 0; c < V.cols(); ++c) {
    const double nrm = V.col(c).norm();
    eb.scale(c) = nrm > 0.0 ? nrm : 1.0;
    eb.Vn.col(c) /= eb.scale(c);
  }
  return eb;
}

// Gram condition estimate from the extreme eigenvalues of Vn^H Vn.
double gram_condition(const CMat& gram, Eigen::SelfAdjointEigenSolver<CMat>& es) {
  es.compute(gram, Eigen::EigenvaluesOnly);
  const RVec ev = es.eigenvalues();
  const double lo = ev.minCoeff();
  const double hi = ev.maxCoeff();
  if (hi <= 0.0) return std::numeric_limits<double>::infinity();
  if (lo <= 0.0) return std::numeric_limits<double>::infinity();
  return hi / lo;
}

constexpr double kGramCondLimit = 1e14;

}  // namespace

double objective_value(const LambdaObjective& obj, const CVec& lambdas) {
  require(obj.Mt >= 1 && obj.Ms >= 1, "objective_value: empty objective");
  const VandermondeBlocks B = build_L(lambdas, obj.Mt, obj.Ms, obj.Ts);
  const EquilibratedBlock eb = equilibrate(B.V);

  const CMat gram = eb.Vn.adjoint() * eb.Vn;
  Eigen::SelfAdjointEigenSolver<CMat> es;
  double proj_sq = 0.0;
  if (gram_condition(gram, es) <= kGramCondLimit) {
    const CMat W = eb.Vn.adjoint() * obj.H;       // Ni x Mt
    const CMat Q = Eigen::LLT<CMat>(gram).solve(W);
    proj_sq = (W.conjugate().cwiseProduct(Q)).sum().real();  // sum_j h_j^H P h_j
  } else {
    // SVD projection: keep directions above the pinv threshold.
    Eigen::BDCSVD<CMat> svd(eb.Vn, Eigen::ComputeThinU);
    const Eigen::VectorXd sv = svd.singularValues();
    const double cutoff = pinv_default_rtol(eb.Vn.rows(), eb.Vn.cols()) * (sv.size() ? sv(0) : 0.0);
    const CMat Y = svd.matrixU().adjoint() * obj.H;
    for (Eigen::Index k = 0; k < sv.size(); ++k) {
      if (sv(k) > cutoff && sv(k) > 0.0) proj_sq += Y.row(k).squaredNorm();
    }
  }
  return std::max(0.0, obj.h_norm_sq - proj_sq);
}

RVec objective_gradient(const LambdaObjective& obj, const CVec& lambdas) {
  require(obj.Mt >= 1 && obj.Ms >= 1, "objective_gradient: empty objective");
  const Eigen::Index Ni = lambdas.size();
  const VandermondeBlocks B = build_L(lambdas, obj.Mt, obj.Ms, obj.Ts);
  const EquilibratedBlock eb = equilibrate(B.V);

  const CMat gram = eb.Vn.adjoint() * eb.Vn;
  Eigen::SelfAdjointEigenSolver<CMat> es;
  if (gram_condition(gram, es) > kGramCondLimit) {
    throw NumericalError(
        "objective_gradient: Gram matrix is ill-conditioned; use fewer or better-separated "
        "eigenvalues");
  }
  const CMat W = eb.Vn.adjoint() * obj.H;
  CMat Q = Eigen::LLT<CMat>(gram).solve(W);   // coefficients in equilibrated basis
  for (Eigen::Index l = 0; l < Ni; ++l) Q.row(l) /= eb.scale(l);  // back to true q

  const CMat R = obj.H - B.V * Q;  // residuals, one trajectory per column

  // d p / d(Re, Im) of each eigenvalue from the derivative columns
  // dv = Ts * [0..Ms] o v; the two terms of the analytic formula collapse to
  // c_l = sum_j (r_j^H dv_l) q_{l j}.
  RVec grad(2 * Ni);
  CVec dv(obj.Ms + 1);
  for (Eigen::Index l = 0; l < Ni; ++l) {
    for (int k = 0; k <= obj.Ms; ++k) dv(k) = obj.Ts * static_cast<double>(k) * B.V(k, l);
    const CVec rv = R.adjoint() * dv;              // entries r_j^H dv_l
    const Complex c = (Q.row(l) * rv)(0, 0);       // sum_j q_{l j} (r_j^H dv_l)
    grad(2 * l) = -2.0 * c.real();
    grad(2 * l + 1) = 2.0 * c.imag();
  }
  return grad;
}

namespace {

// Conjugacy-respecting parametrization of an eigenvalue list.
struct ParamMap {
  enum class Kind { Real, Pair, Free };
  struct Entry {
    Kind kind;
    Eigen::Index self;
    Eigen::Index mate = -1;  // conjugate partner for Kind::Pair
  };
  std::vector<Entry> entries;
  Eigen::Index n = 0;

  static ParamMap build(const CVec& init) {
    ParamMap pm;
    pm.n = init.size();
    std::vector<bool> used(static_cast<std::size_t>(init.size()), false);
    for (Eigen::Index i = 0; i < init.size(); ++i) {
      if (used[static_cast<std::size_t>(i)]) continue;
      const double scale = 1.0 + std::abs(init(i));
      if (std::abs(init(i).imag()) <= 1e-12 * scale) {
        used[static_cast<std::size_t>(i)] = true;
        pm.entries.push_back({Kind::Real, i, -1});
        continue;
      }
      Eigen::Index mate = -1;
      for (Eigen::Index j = i + 1; j < init.size(); ++j) {
        if (used[static_cast<std::size_t>(j)]) continue;
        if (std::abs(init(j) - std::conj(init(i))) <= 1e-9 * scale) {
          mate = j;
          break;
        }
      }
      used[static_cast<std::size_t>(i)] = true;
      if (mate >= 0) {
        used[static_cast<std::size_t>(mate)] = true;
        pm.entries.push_back({Kind::Pair, i, mate});
      } else {
        pm.entries.push_back({Kind::Free, i, -1});
      }
    }
    return pm;
  }

  Eigen::Index param_count() const {
    Eigen::Index c = 0;
    for (const auto& e : entries) c += (e.kind == Kind::Real) ? 1 : 2;
    return c;
  }

  RVec pack(const CVec& lam) const {
    RVec p(param_count());
    Eigen::Index at = 0;
    for (const auto& e : entries) {
      p(at++) = lam(e.self).real();
      if (e.kind != Kind::Real) p(at++) = lam(e.self).imag();
    }
    return p;
  }

  CVec unpack(const RVec& p) const {
    CVec lam(n);
    Eigen::Index at = 0;
    for (const auto& e : entries) {
      const double re = p(at++);
      const double im = (e.kind != Kind::Real) ? p(at++) : 0.0;
      lam(e.self) = Complex(re, im);
      if (e.kind == Kind::Pair) lam(e.mate) = Complex(re, -im);
    }
    return lam;
  }

  // Chain rule from the full interleaved gradient to the reduced parameters.
  RVec reduce_gradient(const RVec& full) const {
    RVec g(param_count());
    Eigen::Index at = 0;
    for (const auto& e : entries) {
      double gre = full(2 * e.self);
      double gim = full(2 * e.self + 1);
      if (e.kind == Kind::Pair) {
        gre += full(2 * e.mate);
        gim -= full(2 * e.mate + 1);
      }
      g(at++) = gre;
      if (e.kind != Kind::Real) g(at++) = gim;
    }
    return g;
  }
};

struct StartOutcome {
  bool valid = false;
  double objective = std::numeric_limits<double>::infinity();
  RVec params;
  int iterations = 0;
  bool line_search_failed_at_start = false;
};

constexpr double kInf = std::numeric_limits<double>::infinity();

double safe_value(const LambdaObjective& obj, const ParamMap& pm, const RVec& p) {
  try {
    return objective_value(obj, pm.unpack(p));
  } catch (const Error&) {
    return kInf;
  }
}

StartOutcome run_bfgs(const LambdaObjective& obj, const ParamMap& pm, const RVec& p0,
                      const OptimizeOptions& opts) {
  StartOutcome out;
  const Eigen::Index np = p0.size();
  RVec p = p0;
  double f = safe_value(obj, pm, p);
  if (!std::isfinite(f)) return out;

  RVec g;
  try {
    g = pm.reduce_gradient(objective_gradient(obj, pm.unpack(p)));
  } catch (const Error&) {
    return out;
  }

  RMat Hinv = RMat::Identity(np, np);
  out.valid = true;
  out.params = p;
  out.objective = f;

  for (int it = 0; it < opts.max_iterations; ++it) {
    if (g.lpNorm<Eigen::Infinity>() <= opts.grad_tol * (1.0 + std::abs(f))) break;

    RVec d = -(Hinv * g);
    if (d.dot(g) >= 0.0) {  // lost positive definiteness, reset
      Hinv.setIdentity();
      d = -g;
    }

    // Armijo backtracking.
    double t = 1.0;
    const double slope = g.dot(d);
    double f_new = kInf;
    RVec p_new;
    bool accepted = false;
    for (int half = 0; half <= opts.max_halvings; ++half) {
      p_new = p + t * d;
      f_new = safe_value(obj, pm, p_new);
      if (std::isfinite(f_new) && f_new <= f + opts.armijo_c * t * slope) {
        accepted = true;
        break;
      }
      t *= opts.backtrack;
    }
    if (!accepted) {
      if (it == 0) out.line_search_failed_at_start = true;
      break;
    }

    RVec g_new;
    try {
      g_new = pm.reduce_gradient(objective_gradient(obj, pm.unpack(p_new)));
    } catch (const Error&) {
      // Accept the step, stop refining this start.
      p = p_new;
      f = f_new;
      ++out.iterations;
      break;
    }

    const RVec s = p_new - p;
    const RVec y = g_new - g;
    const double sy = s.dot(y);
    if (sy > 1e-12 * s.norm() * y.norm()) {
      const RVec Hy = Hinv * y;
      const double yHy = y.dot(Hy);
      // BFGS inverse update.
      Hinv += ((sy + yHy) / (sy * sy)) * (s * s.transpose()) -
              (Hy * s.transpose() + s * Hy.transpose()) / sy;
    }
    p = p_new;
    f = f_new;
    g = g_new;
    ++out.iterations;
  }

  if (f < out.objective) {
    out.objective = f;
    out.params = p;
  }
  return out;
}

}  // namespace

OptimizeResult optimize_eigenvalues(const LambdaObjective& obj, const CVec& init,
                                    const OptimizeOptions& opts) {
  require(init.size() >= 1, "optimize_eigenvalues: empty initial eigenvalue set");
  require_finite(init, "optimize_eigenvalues: init");

  const ParamMap pm = ParamMap::build(init);
  const RVec p0 = pm.pack(init);

  OptimizeResult res;
  res.initial_objective = objective_value(obj, init);

  const int starts = 1 + std::max(0, opts.restarts);
  std::vector<StartOutcome> outcomes(static_cast<std::size_t>(starts));
  Rng root(opts.seed);

  parallel_for(starts, [&](int s) {
    RVec p = p0;
    if (s > 0) {
      Rng rng = root.stream(static_cast<std::uint64_t>(s));
      Eigen::Index at = 0;
      for (const auto& e : pm.entries) {
        const double sigma = opts.perturb_sigma * std::abs(init(e.self));
        p(at++) += sigma * rng.gaussian();
        if (e.kind != ParamMap::Kind::Real) p(at++) += sigma * rng.gaussian();
      }
    }
    outcomes[static_cast<std::size_t>(s)] = run_bfgs(obj, pm, p, opts);
  });

  int best = -1;
  for (int s = 0; s < starts; ++s) {
    const auto& o = outcomes[static_cast<std::size_t>(s)];
    if (!o.valid) continue;
    if (best < 0 || o.objective < outcomes[static_cast<std::size_t>(best)].objective) best = s;
  }

  bool all_failed_immediately = true;
  for (const auto& o : outcomes) {
    if (o.valid && !(o.line_search_failed_at_start && o.iterations == 0)) {
      all_failed_immediately = false;
      break;
    }
  }

  if (best < 0 || outcomes[static_cast<std::size_t>(best)].objective > res.initial_objective) {
    res.values = init;
    res.objective = res.initial_objective;
    res.warnings.push_back("optimize_eigenvalues: no start improved on the initial guess");
    return res;
  }

  const auto& win = outcomes[static_cast<std::size_t>(best)];
  res.values = pm.unpack(win.params);
  res.objective = win.objective;
  res.iterations = win.iterations;
  if (all_failed_immediately) {
    res.warnings.push_back("optimize_eigenvalues: line search failed at iteration 0 on all starts");
  }
  return res;
}

}  // namespace koopman
