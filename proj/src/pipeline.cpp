#include "koopman/pipeline.hpp"

#include "koopman/boundary.hpp"
#include "koopman/io.hpp"
#include "koopman/rng.hpp"
#include "koopman/spectrum.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <utility>

namespace koopman {

namespace {

// Reruns a callable with the stage name prepended to any library error, so a
// failure inside the learning pass names the step that produced it.
template <typename F>
auto stage(const char* name, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const DimensionError& e) {
    throw DimensionError(std::string(name) + ": " + e.what());
  } catch (const NumericalError& e) {
    throw NumericalError(std::string(name) + ": " + e.what());
  } catch (const ConfigError& e) {
    throw ConfigError(std::string(name) + ": " + e.what());
  } catch (const IoError& e) {
    throw IoError(std::string(name) + ": " + e.what());
  }
}

void merge_warnings(std::vector<std::string>& into, const std::vector<std::string>& from) {
  for (const std::string& w : from) {
    if (std::find(into.begin(), into.end(), w) == into.end()) into.push_back(w);
  }
}

// Smallest lattice covering the budget; a fixed degree > 0 skips the growth.
// The first Ni values in lattice order (total degree, then exponent tuple)
// become the seed.
CVec lattice_seed(const EigenvalueSet& base, int Ni, int fixed_degree, int* degree_used) {
  int degree = fixed_degree > 0 ? fixed_degree : 1;
  EigenvalueSet grid = lattice(base, degree);
  if (fixed_degree <= 0) {
    while (grid.values.size() < Ni) {
      const Eigen::Index prev = grid.values.size();
      grid = lattice(base, ++degree);
      if (grid.values.size() == prev) {
        throw NumericalError("eigenvalue lattice saturated at " + std::to_string(prev) +
                             " distinct values, budget " + std::to_string(Ni));
      }
    }
  }
  if (grid.values.size() < Ni) {
    throw ConfigError("degree " + std::to_string(degree) + " yields " +
                      std::to_string(grid.values.size()) + " eigenvalues, budget " +
                      std::to_string(Ni));
  }
  *degree_used = degree;
  return grid.values.head(Ni);
}

}  // namespace

RunData generate_data(const RunConfig& cfg) {
  const VectorField vf = make_system(cfg.system);
  const InitialSampler sampler = make_sampler(cfg.data.sampler, vf.state_dim);
  RunData out;
  out.uncontrolled = generate_dataset(vf, sampler, cfg.data.trajectories, cfg.data.duration,
                                      cfg.data.ts, no_input(), cfg.data.seed);
  if (cfg.predictor.fit_b) {
    if (cfg.data.excitation.kind == "none") {
      throw ConfigError("data.excitation: fitting the input map needs a forced dataset");
    }
    const InputPolicy policy = make_excitation(cfg.data.excitation, vf.input_dim);
    out.controlled = generate_dataset(vf, sampler, cfg.data.trajectories,
                                      cfg.data.controlled_duration, cfg.data.ts, policy,
                                      cfg.data.seed);
    out.has_controlled = true;
  }
  return out;
}

StackedObservable build_observable(const RunConfig& cfg, int n, int m) {
  StackParts parts;
  parts.base = state_observable(n);
  if (cfg.mpc.present && cfg.mpc.u_min.size() > 0) {
    parts.u_min = cfg.mpc.u_min;
    parts.u_max = cfg.mpc.u_max;
  }
  return stack_observable(parts, m);
}

OutputPartition build_partition(const LiftConfig& lift, int n_h) {
  if (lift.even_partition) return even_partition(n_h, lift.n);
  if (static_cast<int>(lift.partition.size()) != n_h) {
    throw ConfigError("lift.partition: " + std::to_string(lift.partition.size()) +
                      " budgets for " + std::to_string(n_h) + " output components");
  }
  OutputPartition p;
  p.n_h = n_h;
  p.Ni = lift.partition;
  p.validate();
  return p;
}

LearnResult learn_predictor(const RunConfig& cfg, const RunData& data) {
  if (!cfg.lift.jordan_blocks.empty()) {
    throw ConfigError(
        "lift.jordan_blocks: the learned predictor is diagonal; generalized "
        "chains are only available through the eigenfunction layer");
  }
  const TrajectoryDataset& ds = data.uncontrolled;
  const VectorField vf = make_system(cfg.system);
  const StackedObservable stacked = build_observable(cfg, vf.state_dim, vf.input_dim);
  const Observable& h = stacked.h;

  LearnResult out;
  const OutputPartition partition =
      stage("partition", [&] { return build_partition(cfg.lift, h.dim); });
  const EigenvalueSet seeds =
      stage("spectrum", [&] { return dmd_eigenvalues(ds, &out.warnings); });

  const bool optimize = cfg.lift.eigenvalues == "optimized";
  std::vector<CVec> lambdas(partition.Ni.size());
  for (std::size_t i = 0; i < partition.Ni.size(); ++i) {
    ComponentReport rep;
    rep.component = static_cast<int>(i);
    rep.Ni = partition.Ni[i];
    rep.initial = stage("lattice", [&] {
      return lattice_seed(seeds, rep.Ni, cfg.lift.lattice_degree, &rep.lattice_degree);
    });
    const LambdaObjective obj =
        stage("objective", [&] { return make_objective(ds, h, rep.component); });
    if (optimize) {
      const OptimizeResult r =
          stage("optimize", [&] { return optimize_eigenvalues(obj, rep.initial, cfg.lift.optimize); });
      rep.optimized = r.values;
      rep.initial_objective = r.initial_objective;
      rep.objective = r.objective;
      rep.iterations = r.iterations;
      merge_warnings(out.warnings, r.warnings);
    } else {
      rep.optimized = rep.initial;
      rep.objective = stage("objective", [&] { return objective_value(obj, rep.initial); });
      rep.initial_objective = rep.objective;
    }
    lambdas[i] = rep.optimized;
    out.components.push_back(std::move(rep));
  }

  const BoundaryMatrix bm = stage("boundary", [&] {
    return optimal_boundary(ds, h, partition, lambdas, Regularizer{0.0});
  });
  EigenfunctionSet set = stage("propagate", [&] { return propagate_values(bm, ds.Ts, ds.Ms); });
  for (const ProductSpec& p : cfg.lift.products) {
    stage("products", [&] { append_product(set, p.indices, p.powers); });
  }
  stage("extensions", [&] {
    fit_extensions(set, ds, cfg.lift.extension, 0.0, cfg.lift.delta2, &out.warnings);
  });

  RMat samples;
  if (cfg.predictor.c_mode != CMode::BlockDiagonal) {
    // The fit sees the data cloud nudged off the interpolation nodes, so it
    // matches the extension behaviour rather than the exact node values. A
    // fixed stream id keeps the jitter independent of the dataset draws.
    samples = ds.states;
    Rng jitter = Rng(cfg.data.seed).stream(0x0bf5);
    for (Eigen::Index c = 0; c < samples.cols(); ++c) {
      for (Eigen::Index r = 0; r < samples.rows(); ++r) {
        samples(r, c) += jitter.uniform(-0.05, 0.05);
      }
    }
  }
  const ACResult ac =
      stage("outputs", [&] { return assemble_AC(set, h, cfg.predictor.c_mode, samples); });
  merge_warnings(out.warnings, ac.warnings);

  auto lift_ptr = std::make_shared<const EigenfunctionSet>(std::move(set));
  out.predictor = stage("predictor", [&] { return make_predictor(lift_ptr, ac, ds.Ts); });
  if (cfg.predictor.fit_b) {
    const FitBResult fb = stage("fit_B", [&]() -> FitBResult {
      if (!data.has_controlled) throw ConfigError("controlled dataset required");
      return fit_B(out.predictor.lambdas, out.predictor.C, *lift_ptr, data.controlled, h,
                   cfg.predictor.b_horizon);
    });
    out.predictor.B = fb.B;
    out.predictor.Bd = fb.Bd;
  }
  out.predictor.validate();
  return out;
}

namespace {

// One period of the attractor orbit, sampled as a polygon: settle onto the
// cycle, then cut it between two successive x2 sign changes on the x1 > 0
// half plane (a cycle around the origin passes there once per period).
RMat limit_cycle_polygon(const VectorField& vf) {
  const RVec u = RVec::Zero(vf.input_dim);
  const double dt = 0.01;
  RVec x(2);
  x << 0.5, 0.0;
  x = integrate(vf, x, u, dt, 3000).back();
  const std::vector<RVec> orbit = integrate(vf, x, u, dt, 3000);
  std::vector<int> crossings;
  for (std::size_t k = 0; k + 1 < orbit.size() && crossings.size() < 2; ++k) {
    if ((orbit[k](1) > 0.0) != (orbit[k + 1](1) > 0.0) && orbit[k + 1](0) > 0.0) {
      crossings.push_back(static_cast<int>(k) + 1);
    }
  }
  if (crossings.size() < 2) throw NumericalError("no closed orbit found");
  RMat poly(2, crossings[1] - crossings[0]);
  for (int k = crossings[0]; k < crossings[1]; ++k) {
    poly.col(k - crossings[0]) = orbit[static_cast<std::size_t>(k)];
  }
  return poly;
}

// Even-odd ray casting against the closed polygon.
bool inside_polygon(const RMat& poly, double px, double py) {
  bool in = false;
  const Eigen::Index P = poly.cols();
  for (Eigen::Index i = 0, j = P - 1; i < P; j = i++) {
    const double xi = poly(0, i), yi = poly(1, i);
    const double xj = poly(0, j), yj = poly(1, j);
    if ((yi > py) != (yj > py) && px < (xj - xi) * (py - yi) / (yj - yi) + xi) in = !in;
  }
  return in;
}

}  // namespace

RMat test_states(const RunConfig& cfg, int count, std::uint64_t seed) {
  if (count < 1) throw ConfigError("test states: count must be positive");
  const VectorField vf = make_system(cfg.system);
  Rng rng(seed);
  RMat out(vf.state_dim, count);
  if (cfg.system.kind == "vanderpol") {
    const RMat poly = stage("test states", [&] { return limit_cycle_polygon(vf); });
    const RVec lo = poly.rowwise().minCoeff();
    const RVec hi = poly.rowwise().maxCoeff();
    for (int i = 0; i < count; ++i) {
      int attempts = 0;
      for (;;) {
        const double x = rng.uniform(lo(0), hi(0));
        const double y = rng.uniform(lo(1), hi(1));
        if (inside_polygon(poly, x, y)) {
          out.col(i) << x, y;
          break;
        }
        if (++attempts > 10000) throw NumericalError("test states: rejection sampling stalled");
      }
    }
  } else if (cfg.system.kind == "duffing") {
    const InitialSampler disk = disk_sampler(1.0);
    for (int i = 0; i < count; ++i) out.col(i) = disk.sample(rng, i);
  } else {
    // interior of the region the data sampler spans, matching the presets
    SamplerConfig interior = cfg.data.sampler;
    interior.kind = "disk";
    const InitialSampler sampler = make_sampler(interior, vf.state_dim);
    for (int i = 0; i < count; ++i) out.col(i) = sampler.sample(rng, i);
  }
  return out;
}

PredictionScore score_predictor(const LinearPredictor& pred, const VectorField& vf,
                                const RMat& states, double duration,
                                const std::function<RVec(double)>& input) {
  require(states.rows() == vf.state_dim, "score: states rows must match the system dimension");
  require(states.cols() > 0, "score: no test states");
  require(pred.output_dim() >= vf.state_dim, "score: predictor outputs fewer rows than the state");
  const double Ts = pred.Ts;
  const int steps = static_cast<int>(std::lround(duration / Ts));
  if (steps < 1) throw ConfigError("score: horizon shorter than one sampling period");
  const int m = pred.input_dim();
  if (input && m == 0) {
    throw ConfigError("score: input signal given but the predictor has no input map");
  }
  RMat inputs;
  if (m > 0) {
    inputs = RMat::Zero(m, steps);
    if (input) {
      for (int k = 0; k < steps; ++k) inputs.col(k) = input(k * Ts);
    }
  }

  const int count = static_cast<int>(states.cols());
  std::vector<double> errors(static_cast<std::size_t>(count));
  const RVec u0 = RVec::Zero(vf.input_dim);
  for (int i = 0; i < count; ++i) {
    RMat truth(vf.state_dim, steps + 1);
    RVec x = states.col(i);
    truth.col(0) = x;
    for (int k = 0; k < steps; ++k) {
      const RVec u = m > 0 ? RVec(inputs.col(k)) : u0;
      x = integrate(vf, x, u, Ts, 1).back();
      truth.col(k + 1) = x;
    }
    const RMat predicted = predict(pred, states.col(i), inputs, steps);
    errors[static_cast<std::size_t>(i)] = rmse_error(truth, predicted.topRows(vf.state_dim));
  }

  PredictionScore score;
  score.count = count;
  for (double e : errors) score.mean_pct += e;
  score.mean_pct /= count;
  double var = 0.0;
  for (double e : errors) var += (e - score.mean_pct) * (e - score.mean_pct);
  score.stdev_pct = count > 1 ? std::sqrt(var / (count - 1)) : 0.0;
  return score;
}

TableResult evaluate_table(const RunConfig& cfg) {
  if (!cfg.table.present) throw ConfigError("table: section missing");
  const VectorField vf = make_system(cfg.system);
  const RunData data = generate_data(cfg);
  const RMat states = test_states(cfg, cfg.table.test_points, cfg.table.seed);

  TableResult out;
  out.test_points = cfg.table.test_points;
  out.horizon = cfg.table.horizon;
  // Forced accuracy is probed with a unit square wave of 0.3 s period.
  const std::function<RVec(double)> square = square_wave(1.0, 0.3, std::max(1, vf.input_dim));
  for (int n : cfg.table.n_grid) {
    for (const char* mode : {"lattice", "optimized"}) {
      RunConfig row_cfg = cfg;
      row_cfg.lift.n = n;
      row_cfg.lift.eigenvalues = mode;
      const LearnResult learned = learn_predictor(row_cfg, data);
      merge_warnings(out.warnings, learned.warnings);

      TableRow row;
      row.n = n;
      row.mode = mode;
      const PredictionScore s = score_predictor(learned.predictor, vf, states, cfg.table.horizon);
      row.mean_pct = s.mean_pct;
      row.stdev_pct = s.stdev_pct;
      if (learned.predictor.input_dim() > 0) {
        const PredictionScore f =
            score_predictor(learned.predictor, vf, states, cfg.table.horizon, square);
        row.forced = true;
        row.forced_mean_pct = f.mean_pct;
        row.forced_stdev_pct = f.stdev_pct;
      }
      out.rows.push_back(std::move(row));
    }
  }
  return out;
}

void write_table_csv(const std::string& path, const TableResult& table) {
  std::string text = "n,mode,mean_pct,stdev_pct,forced_mean_pct,forced_stdev_pct\n";
  for (const TableRow& r : table.rows) {
    text += std::to_string(r.n) + "," + r.mode + "," + format_double(r.mean_pct) + "," +
            format_double(r.stdev_pct);
    if (r.forced) {
      text += "," + format_double(r.forced_mean_pct) + "," + format_double(r.forced_stdev_pct);
    } else {
      text += ",,";
    }
    text += "\n";
  }
  write_text_file(path, text);
}

namespace {

std::string join_complex(const CVec& v) {
  std::string s;
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (i > 0) s += ";";
    s += format_complex(v(i));
  }
  return s;
}

}  // namespace

void write_learn_report(const std::string& path, const LearnResult& result) {
  std::string text =
      "component,budget,lattice_degree,initial_objective,objective,iterations,"
      "initial_eigenvalues,eigenvalues\n";
  for (const ComponentReport& r : result.components) {
    text += std::to_string(r.component) + "," + std::to_string(r.Ni) + "," +
            std::to_string(r.lattice_degree) + "," + format_double(r.initial_objective) + "," +
            format_double(r.objective) + "," + std::to_string(r.iterations) + "," +
            join_complex(r.initial) + "," + join_complex(r.optimized) + "\n";
  }
  write_text_file(path, text);
}

MpcExperiment build_mpc_experiment(const RunConfig& cfg, const LinearPredictor& pred) {
  if (!cfg.mpc.present) throw ConfigError("mpc: section missing");
  MpcExperiment exp;
  exp.vf = make_system(cfg.system);
  const int n = exp.vf.state_dim;
  const int m = exp.vf.input_dim;
  if (m < 1) throw ConfigError("mpc: the system has no input");
  if (pred.input_dim() != m) {
    throw ConfigError("mpc: predictor has " + std::to_string(pred.input_dim()) +
                      " input channels, the system has " + std::to_string(m));
  }
  const StackedObservable stacked = build_observable(cfg, n, m);
  const int n_h = stacked.h.dim;
  if (pred.output_dim() != n_h) {
    throw ConfigError("mpc: predictor has " + std::to_string(pred.output_dim()) +
                      " output rows, the constraint stacking needs " + std::to_string(n_h));
  }
  if (static_cast<int>(cfg.mpc.q.size()) != n) {
    throw ConfigError("mpc: q must weight the " + std::to_string(n) + " state outputs");
  }
  if (static_cast<int>(cfg.mpc.r.size()) != m) {
    throw ConfigError("mpc: r must weight the " + std::to_string(m) + " inputs");
  }

  MpcSpec spec;
  spec.Np = cfg.mpc.np;
  spec.Q = RMat::Zero(n_h, n_h);
  spec.Q.topLeftCorner(n, n) = RMat(cfg.mpc.q.asDiagonal());  // constraint rows carry no cost
  spec.R = RMat(cfg.mpc.r.asDiagonal());
  if (cfg.mpc.qn.size() > 0) {
    if (static_cast<int>(cfg.mpc.qn.size()) != n) {
      throw ConfigError("mpc: qn must weight the " + std::to_string(n) + " state outputs");
    }
    spec.QN = RMat::Zero(n_h, n_h);
    spec.QN.topLeftCorner(n, n) = RMat(cfg.mpc.qn.asDiagonal());
  }
  spec.E = stacked.E;
  spec.F = stacked.F;
  spec.b = stacked.b;
  spec.EN = stacked.EN;
  spec.bN = stacked.bN;
  spec.u_min = cfg.mpc.u_min;
  spec.u_max = cfg.mpc.u_max;
  if (!cfg.mpc.reference.empty()) {
    spec.reference.times = cfg.mpc.reference.times;
    RMat values = RMat::Zero(n_h, cfg.mpc.reference.values.cols());
    values.topRows(cfg.mpc.reference.values.rows()) = cfg.mpc.reference.values;
    spec.reference.values = std::move(values);
  }
  spec.validate(n_h, m);
  exp.spec = std::move(spec);
  exp.x0 = cfg.mpc.x0.size() > 0 ? cfg.mpc.x0 : RVec(RVec::Zero(n));
  exp.duration = cfg.mpc.duration;
  return exp;
}

ClosedLoopResult run_mpc(const RunConfig& cfg, const LinearPredictor& pred,
                         const QpSettings& settings) {
  const MpcExperiment exp = build_mpc_experiment(cfg, pred);
  return closed_loop(exp.vf, pred, exp.spec, exp.x0, exp.duration, settings);
}

Figure prediction_figure(const RMat& truth, const RMat& predicted, double Ts) {
  require(truth.rows() == predicted.rows(), "figure: truth and prediction row counts differ");
  require(truth.cols() == predicted.cols(), "figure: truth and prediction lengths differ");
  require(truth.rows() > 0 && truth.cols() > 0, "figure: nothing to plot");
  std::vector<double> t(static_cast<std::size_t>(truth.cols()));
  for (std::size_t k = 0; k < t.size(); ++k) t[k] = static_cast<double>(k) * Ts;

  Figure fig;
  fig.cols = truth.rows() > 1 ? 2 : 1;
  for (Eigen::Index r = 0; r < truth.rows(); ++r) {
    const std::string name = "x" + std::to_string(r + 1);
    Panel panel;
    panel.title = name;
    panel.xlabel = "time [s]";
    panel.ylabel = name;
    Series tru;
    tru.label = "true";
    tru.color = default_color(0);
    tru.x = t;
    Series est;
    est.label = "predicted";
    est.color = default_color(1);
    est.dashed = true;
    est.x = t;
    for (Eigen::Index k = 0; k < truth.cols(); ++k) {
      tru.y.push_back(truth(r, k));
      est.y.push_back(predicted(r, k));
    }
    panel.series = {std::move(tru), std::move(est)};
    fig.panels.push_back(std::move(panel));
  }
  return fig;
}

Figure mpc_figure(const ClosedLoopResult& log) {
  const int n = log.n;
  const int m = log.m;
  require(n > 0 && m > 0, "figure: empty closed-loop log");
  std::vector<double> t;
  std::vector<std::vector<double>> x(static_cast<std::size_t>(n));
  std::vector<std::vector<double>> u(static_cast<std::size_t>(m));
  std::vector<std::vector<double>> ref(static_cast<std::size_t>(log.n_ref));
  for (const MpcLogRow& row : log.rows) {
    t.push_back(row.t);
    for (int i = 0; i < n; ++i) x[static_cast<std::size_t>(i)].push_back(row.x(i));
    for (int j = 0; j < m; ++j) u[static_cast<std::size_t>(j)].push_back(row.u(j));
    for (int i = 0; i < log.n_ref; ++i) ref[static_cast<std::size_t>(i)].push_back(row.ref(i));
  }

  Figure fig;
  fig.cols = 2;
  if (n >= 2) {
    Panel phase;
    phase.title = "phase portrait";
    phase.xlabel = "x1";
    phase.ylabel = "x2";
    Series traj;
    traj.label = "closed loop";
    traj.color = default_color(0);
    traj.x = x[0];
    traj.y = x[1];
    phase.series.push_back(std::move(traj));
    if (log.n_ref >= 2) {
      Series target;
      target.label = "reference";
      target.color = default_color(3);
      target.dashed = true;
      target.x = ref[0];
      target.y = ref[1];
      phase.series.push_back(std::move(target));
    }
    fig.panels.push_back(std::move(phase));
  }
  for (int i = 0; i < n; ++i) {
    const std::string name = "x" + std::to_string(i + 1);
    Panel panel;
    panel.title = name;
    panel.xlabel = "time [s]";
    panel.ylabel = name;
    Series state;
    state.label = name;
    state.color = default_color(0);
    state.x = t;
    state.y = x[static_cast<std::size_t>(i)];
    panel.series.push_back(std::move(state));
    if (i < log.n_ref) {
      Series target;
      target.label = "reference";
      target.color = default_color(3);
      target.dashed = true;
      target.x = t;
      target.y = ref[static_cast<std::size_t>(i)];
      panel.series.push_back(std::move(target));
    }
    fig.panels.push_back(std::move(panel));
  }
  {
    Panel panel;
    panel.title = "input";
    panel.xlabel = "time [s]";
    panel.ylabel = "u";
    for (int j = 0; j < m; ++j) {
      Series channel;
      channel.label = "u" + std::to_string(j + 1);
      channel.color = default_color(2 + j);
      channel.x = t;
      channel.y = u[static_cast<std::size_t>(j)];
      panel.series.push_back(std::move(channel));
    }
    fig.panels.push_back(std::move(panel));
  }
  return fig;
}

}  // namespace koopman
