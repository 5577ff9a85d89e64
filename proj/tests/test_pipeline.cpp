#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "koopman/io.hpp"
#include "koopman/pipeline.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <string>

using namespace koopman;

namespace {

// Stable focus with eigenvalues -0.5 +- i; every learning quantity has a
// closed form, so the pipeline output can be pinned tightly.
const char* kLinearBase = R"({
  "version": 1,
  "system": {"kind": "linear", "a": [[-0.5, -1.0], [1.0, -0.5]]},
  "data": {
    "trajectories": 40,
    "duration": 1.2,
    "ts": 0.02,
    "seed": 3,
    "sampler": {"kind": "disk", "radius": 1.0}
  },
  "lift": {"n": 6, "partition": "even", "eigenvalues": "lattice"},
  "predictor": {"c_mode": "bdiag"}
})";

const char* kLinearControlled = R"({
  "version": 1,
  "system": {"kind": "linear", "a": [[-0.5, -1.0], [1.0, -0.5]], "h": [[0.0], [1.0]]},
  "data": {
    "trajectories": 40,
    "duration": 1.2,
    "controlled_duration": 0.6,
    "ts": 0.02,
    "seed": 3,
    "sampler": {"kind": "disk", "radius": 1.0},
    "excitation": {"kind": "uniform", "lo": -1.0, "hi": 1.0}
  },
  "lift": {"n": 6, "partition": "even", "eigenvalues": "lattice"},
  "predictor": {"c_mode": "bdiag", "fit_b": true}
})";

const char* kDuffingMpc = R"({
  "version": 1,
  "system": {"kind": "duffing"},
  "data": {
    "trajectories": 12,
    "duration": 1.0,
    "controlled_duration": 0.5,
    "ts": 0.01,
    "seed": 5,
    "sampler": {"kind": "circle", "radius": 1.0},
    "excitation": {"kind": "uniform", "lo": -1.0, "hi": 1.0}
  },
  "lift": {"n": 12, "partition": "even", "eigenvalues": "lattice"},
  "predictor": {"c_mode": "bdiag", "fit_b": true},
  "mpc": {
    "np": 5,
    "q": [1.0, 0.1],
    "r": [0.01],
    "u_min": [-1.0],
    "u_max": [1.0],
    "duration": 0.2,
    "x0": [0.5, 0.0],
    "reference": {"times": [0.0, 0.1], "values": [[0.3, -0.3], [0.0, 0.0]]}
  }
})";

std::string with_patch(const std::string& doc, const std::string& from, const std::string& to) {
  const std::size_t at = doc.find(from);
  REQUIRE(at != std::string::npos);
  std::string out = doc;
  out.replace(at, from.size(), to);
  return out;
}

RMat circle_states(double radius, int count) {
  RMat out(2, count);
  for (int i = 0; i < count; ++i) {
    const double th = 2.0 * M_PI * i / count;
    out.col(i) << radius * std::cos(th), radius * std::sin(th);
  }
  return out;
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("data generation follows the predictor needs") {
  const RunConfig cfg = parse_run_config(kLinearControlled);
  const RunData data = generate_data(cfg);
  CHECK(data.has_controlled);
  CHECK(data.uncontrolled.Mt == 40);
  CHECK(data.uncontrolled.Ms == 60);
  CHECK(data.uncontrolled.m == 0);
  CHECK(data.controlled.Mt == 40);
  CHECK(data.controlled.Ms == 30);
  CHECK(data.controlled.m == 1);
  // same sampler and seed: both sets start from the same points
  CHECK(data.uncontrolled.initial_conditions() == data.controlled.initial_conditions());

  const RunData plain = generate_data(parse_run_config(kLinearBase));
  CHECK(!plain.has_controlled);
  CHECK(plain.controlled.Mt == 0);

  const RunConfig broken = parse_run_config(with_patch(
      kLinearControlled, R"("excitation": {"kind": "uniform", "lo": -1.0, "hi": 1.0})",
      R"("excitation": {"kind": "none"})"));
  CHECK_THROWS_WITH_AS(generate_data(broken),
                       "data.excitation: fitting the input map needs a forced dataset",
                       ConfigError);
}

TEST_CASE("observable stacking and partition budgets") {
  const RunConfig plain = parse_run_config(kLinearBase);
  const StackedObservable bare = build_observable(plain, 2, 0);
  CHECK(bare.h.dim == 2);
  CHECK(bare.E.size() == 0);

  const RunConfig mpc = parse_run_config(kDuffingMpc);
  const StackedObservable stacked = build_observable(mpc, 2, 1);
  CHECK(stacked.h.dim == 4);
  CHECK(stacked.base_dim == 2);
  CHECK(stacked.E.rows() == 2);
  CHECK(stacked.E.cols() == 4);
  CHECK(stacked.F.rows() == 2);
  CHECK(stacked.F.cols() == 1);
  RVec x(2);
  x << 0.3, -0.2;
  const RVec y = stacked.h(x);
  CHECK(y(0) == 0.3);
  CHECK(y(1) == -0.2);
  CHECK(y(2) == -1.0);  // -u_max row
  CHECK(y(3) == -1.0);  // u_min row
  // E y + F u <= b realizes the box on u
  RVec u(1);
  u << 0.8;
  CHECK(((stacked.E * y + stacked.F * u - stacked.b).array() <= 1e-12).all());
  u << 1.2;
  CHECK(((stacked.E * y + stacked.F * u - stacked.b).array() > 1e-12).any());
  u << -1.2;
  CHECK(((stacked.E * y + stacked.F * u - stacked.b).array() > 1e-12).any());

  const OutputPartition even2 = build_partition(plain.lift, 2);
  CHECK(even2.Ni == std::vector<int>{3, 3});
  LiftConfig ten = plain.lift;
  ten.n = 10;
  CHECK(build_partition(ten, 4).Ni == std::vector<int>{3, 3, 2, 2});

  LiftConfig explicit_budgets = plain.lift;
  explicit_budgets.even_partition = false;
  explicit_budgets.partition = {3, 1};
  explicit_budgets.n = 4;
  CHECK(build_partition(explicit_budgets, 2).Ni == std::vector<int>{3, 1});
  CHECK_THROWS_AS(build_partition(explicit_budgets, 4), ConfigError);
}

TEST_CASE("learning a linear system reproduces its flow") {
  const RunConfig cfg = parse_run_config(kLinearBase);
  const RunData data = generate_data(cfg);
  const LearnResult learned = learn_predictor(cfg, data);

  REQUIRE(learned.components.size() == 2);
  for (const ComponentReport& rep : learned.components) {
    CHECK(rep.Ni == 3);
    CHECK(rep.lattice_degree == 1);
    CHECK(rep.initial.size() == 3);
    CHECK(rep.optimized == rep.initial);
    CHECK(rep.iterations == 0);
    CHECK(rep.objective == rep.initial_objective);
    CHECK(rep.objective >= 0.0);
    // the three-value lattice spans the flow of x_i exactly
    CHECK(rep.objective < 1e-6);
    // seed holds the zero eigenvalue and the system's conjugate pair
    double min_abs = 1e9;
    for (Eigen::Index i = 0; i < 3; ++i) min_abs = std::min(min_abs, std::abs(rep.initial(i)));
    CHECK(min_abs < 1e-9);
    for (Eigen::Index i = 0; i < 3; ++i) {
      if (std::abs(rep.initial(i)) > 1e-9) {
        CHECK(rep.initial(i).real() == doctest::Approx(-0.5).epsilon(1e-9));
        CHECK(std::abs(rep.initial(i).imag()) == doctest::Approx(1.0).epsilon(1e-9));
      }
    }
  }

  const LinearPredictor& pred = learned.predictor;
  CHECK(pred.size() == 6);
  CHECK(pred.output_dim() == 2);
  CHECK(pred.input_dim() == 0);
  CHECK(pred.Ts == 0.02);
  CHECK(pred.realness_checked);

  const VectorField vf = make_system(cfg.system);
  const PredictionScore score = score_predictor(pred, vf, circle_states(0.3, 16), 0.4);
  CHECK(score.count == 16);
  CHECK(score.mean_pct < 1e-6);
  CHECK(score.stdev_pct < 1e-6);
}

TEST_CASE("optimized mode never worsens the objective") {
  std::string doc = with_patch(kLinearBase, R"("n": 6)", R"("n": 4)");
  doc = with_patch(doc, R"("eigenvalues": "lattice")",
                   R"("eigenvalues": "optimized",
                      "optimize": {"restarts": 2, "iterations": 60, "seed": 1})");
  const RunConfig cfg = parse_run_config(doc);
  const RunData data = generate_data(cfg);
  const LearnResult learned = learn_predictor(cfg, data);

  const RunConfig seed_cfg =
      parse_run_config(with_patch(with_patch(kLinearBase, R"("n": 6)", R"("n": 4)"),
                                  R"("eigenvalues": "lattice")", R"("eigenvalues": "lattice")"));
  const LearnResult seeded = learn_predictor(seed_cfg, data);

  REQUIRE(learned.components.size() == 2);
  for (std::size_t i = 0; i < 2; ++i) {
    const ComponentReport& opt = learned.components[i];
    const ComponentReport& lat = seeded.components[i];
    CHECK(opt.Ni == 2);
    CHECK(opt.initial == lat.initial);
    CHECK(opt.initial_objective == doctest::Approx(lat.objective).epsilon(1e-12));
    CHECK(opt.objective <= opt.initial_objective + 1e-12);
    // a two-value prefix of the three-value lattice cannot span the real
    // flow, so there is room to descend
    CHECK(opt.initial_objective > 1e-4);
  }
  // the two-value prefix split the conjugate pair
  CHECK(!learned.predictor.realness_checked);
}

TEST_CASE("stage failures name the stage") {
  const RunConfig want_b = parse_run_config(kLinearControlled);
  const RunData plain = generate_data(parse_run_config(kLinearBase));
  try {
    learn_predictor(want_b, plain);
    FAIL("expected a ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()) == "fit_B: controlled dataset required");
  }

  RunConfig jordan = parse_run_config(kLinearBase);
  jordan.lift.jordan_blocks.push_back(JordanBlock{Complex(-0.5, 0.0), 2});
  CHECK_THROWS_AS(learn_predictor(jordan, plain), ConfigError);
  try {
    learn_predictor(jordan, plain);
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).rfind("lift.jordan_blocks", 0) == 0);
  }

  RunConfig bad_partition = parse_run_config(kLinearBase);
  bad_partition.lift.even_partition = false;
  bad_partition.lift.partition = {2, 2, 2};
  try {
    learn_predictor(bad_partition, plain);
    FAIL("expected a ConfigError");
  } catch (const ConfigError& e) {
    const std::string what = e.what();
    CHECK(what.rfind("partition: ", 0) == 0);
    CHECK(what.find("3 budgets for 2") != std::string::npos);
  }
}

TEST_CASE("products extend the lifted basis") {
  std::string doc = with_patch(kLinearBase, R"("c_mode": "bdiag")", R"("c_mode": "l2_fit")");
  doc = with_patch(doc, R"("eigenvalues": "lattice")",
                   R"("eigenvalues": "lattice",
                      "products": [{"indices": [1], "powers": [2.0]}])");
  const RunConfig cfg = parse_run_config(doc);
  const RunData data = generate_data(cfg);
  const LearnResult learned = learn_predictor(cfg, data);
  CHECK(learned.predictor.size() == 7);
  CHECK(std::abs(learned.predictor.lambdas(6) - 2.0 * learned.predictor.lambdas(1)) < 1e-12);

  const VectorField vf = make_system(cfg.system);
  const PredictionScore score = score_predictor(learned.predictor, vf, circle_states(0.3, 12), 0.4);
  CHECK(score.mean_pct < 2.0);

  // the block-diagonal output map has no row group for product rows
  const RunConfig bdiag = parse_run_config(
      with_patch(kLinearBase, R"("eigenvalues": "lattice")",
                 R"("eigenvalues": "lattice",
                    "products": [{"indices": [1], "powers": [2.0]}])"));
  try {
    learn_predictor(bdiag, data);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).rfind("outputs: ", 0) == 0);
  }
}

TEST_CASE("test states target each preset's region") {
  const RunConfig duffing = parse_run_config(kDuffingMpc);
  const RMat disk = test_states(duffing, 40, 7);
  CHECK(disk.rows() == 2);
  CHECK(disk.cols() == 40);
  for (Eigen::Index i = 0; i < disk.cols(); ++i) CHECK(disk.col(i).norm() <= 1.0 + 1e-12);
  CHECK(test_states(duffing, 40, 7) == disk);
  CHECK(test_states(duffing, 40, 8) != disk);

  const RunConfig vdp = parse_run_config(R"({
    "version": 1,
    "system": {"kind": "vanderpol"},
    "data": {"trajectories": 5, "duration": 0.5, "ts": 0.01, "seed": 2,
             "sampler": {"kind": "circle", "radius": 0.05}}
  })");
  const RMat interior = test_states(vdp, 25, 11);
  CHECK(interior.rows() == 2);
  CHECK(interior.allFinite());
  CHECK(interior.row(0).cwiseAbs().maxCoeff() < 1.5);
  CHECK(interior.row(1).cwiseAbs().maxCoeff() < 2.5);
  // a genuine two-dimensional spread, not a collapsed sample
  const RVec mean = interior.rowwise().mean();
  CHECK((interior.colwise() - mean).rowwise().norm().minCoeff() > 0.0);
  CHECK((interior.row(0).array() - mean(0)).abs().maxCoeff() > 0.05);
  CHECK((interior.row(1).array() - mean(1)).abs().maxCoeff() > 0.05);
  CHECK(test_states(vdp, 25, 11) == interior);

  // linear systems probe the interior of the sampler's disk
  const RunConfig ring = parse_run_config(with_patch(
      kLinearBase, R"("sampler": {"kind": "disk", "radius": 1.0})",
      R"("sampler": {"kind": "circle", "radius": 0.25})"));
  const RMat inside = test_states(ring, 10, 4);
  double max_norm = 0.0;
  for (Eigen::Index i = 0; i < inside.cols(); ++i) {
    CHECK(inside.col(i).norm() <= 0.25 + 1e-12);
    max_norm = std::max(max_norm, inside.col(i).norm());
  }
  CHECK(max_norm > 0.05);
}

TEST_CASE("forced prediction with a fitted input map") {
  const RunConfig cfg = parse_run_config(kLinearControlled);
  const RunData data = generate_data(cfg);
  const LearnResult learned = learn_predictor(cfg, data);
  CHECK(learned.predictor.input_dim() == 1);
  CHECK(learned.predictor.Bd.cwiseAbs().maxCoeff() > 1e-6);

  const VectorField vf = make_system(cfg.system);
  const RMat states = circle_states(0.2, 12);
  const PredictionScore forced =
      score_predictor(learned.predictor, vf, states, 0.3, square_wave(0.3, 0.2, 1));
  CHECK(forced.count == 12);
  CHECK(forced.mean_pct < 1e-6);

  const LearnResult plain = learn_predictor(parse_run_config(kLinearBase),
                                            generate_data(parse_run_config(kLinearBase)));
  CHECK_THROWS_AS(score_predictor(plain.predictor, vf, states, 0.3, square_wave(0.3, 0.2, 1)),
                  ConfigError);
}

TEST_CASE("accuracy table over budgets and modes") {
  // circle-sampled data so the hull covers the disk the test states fill
  std::string doc = with_patch(kLinearBase, R"("sampler": {"kind": "disk", "radius": 1.0})",
                               R"("sampler": {"kind": "circle", "radius": 1.0})");
  doc = with_patch(doc, R"("lift": {"n": 6, "partition": "even", "eigenvalues": "lattice"})",
                   R"("lift": {"n": 6, "partition": "even", "eigenvalues": "lattice",
                               "optimize": {"restarts": 1, "iterations": 40, "seed": 2}})");
  doc = with_patch(
      doc, R"("predictor": {"c_mode": "bdiag"})",
      R"("predictor": {"c_mode": "bdiag"},
         "table": {"test_points": 8, "horizon": 0.3, "n_grid": [4, 6], "seed": 21})");
  const RunConfig cfg = parse_run_config(doc);
  const TableResult table = evaluate_table(cfg);

  REQUIRE(table.rows.size() == 4);
  CHECK(table.test_points == 8);
  CHECK(table.horizon == 0.3);
  CHECK(table.rows[0].n == 4);
  CHECK(table.rows[0].mode == "lattice");
  CHECK(table.rows[1].n == 4);
  CHECK(table.rows[1].mode == "optimized");
  CHECK(table.rows[2].n == 6);
  CHECK(table.rows[2].mode == "lattice");
  CHECK(table.rows[3].mode == "optimized");
  for (const TableRow& row : table.rows) {
    CHECK(std::isfinite(row.mean_pct));
    CHECK(row.mean_pct >= 0.0);
    CHECK(!row.forced);
  }
  // the six-value budget represents this flow exactly
  CHECK(table.rows[2].mean_pct < 1e-6);

  const std::string path = temp_path("koopman_table_test.csv");
  write_table_csv(path, table);
  const std::string text = read_text_file(path);
  CHECK(text.rfind("n,mode,mean_pct,stdev_pct,forced_mean_pct,forced_stdev_pct\n", 0) == 0);
  CHECK(std::count(text.begin(), text.end(), '\n') == 5);
  CHECK(text.find("4,lattice,") != std::string::npos);
  CHECK(text.find(",,") != std::string::npos);  // no forced columns without an input map

  // same config, same bytes
  const std::string again = temp_path("koopman_table_test2.csv");
  write_table_csv(again, evaluate_table(cfg));
  CHECK(read_text_file(again) == text);
  std::remove(path.c_str());
  std::remove(again.c_str());
}

TEST_CASE("mpc experiment wiring and closed loop") {
  const RunConfig cfg = parse_run_config(kDuffingMpc);
  const RunData data = generate_data(cfg);
  const LearnResult learned = learn_predictor(cfg, data);
  CHECK(learned.predictor.output_dim() == 4);
  CHECK(learned.predictor.realness_checked);

  const MpcExperiment exp = build_mpc_experiment(cfg, learned.predictor);
  CHECK(exp.spec.Np == 5);
  CHECK(exp.spec.Q.rows() == 4);
  CHECK(exp.spec.Q(0, 0) == 1.0);
  CHECK(exp.spec.Q(1, 1) == 0.1);
  CHECK(exp.spec.Q(2, 2) == 0.0);
  CHECK(exp.spec.Q(3, 3) == 0.0);
  CHECK(exp.spec.QN.size() == 0);
  CHECK(exp.spec.R.rows() == 1);
  CHECK(exp.spec.R(0, 0) == 0.01);
  CHECK(exp.spec.reference.values.rows() == 4);
  CHECK(exp.spec.reference.values.cols() == 2);
  CHECK(exp.spec.reference.values(0, 0) == 0.3);
  CHECK(exp.spec.reference.values(0, 1) == -0.3);
  CHECK(exp.spec.reference.values.bottomRows(2).cwiseAbs().maxCoeff() == 0.0);
  CHECK(exp.x0(0) == 0.5);
  CHECK(exp.duration == 0.2);

  const ClosedLoopResult log = run_mpc(cfg, learned.predictor);
  CHECK(!log.aborted);
  CHECK(log.rows.size() >= 10);
  CHECK(log.n == 2);
  CHECK(log.m == 1);
  CHECK(log.n_ref == 4);
  for (const MpcLogRow& row : log.rows) {
    CHECK(row.u(0) <= 1.0 + 1e-8);
    CHECK(row.u(0) >= -1.0 - 1e-8);
  }
  CHECK(log.rows[1].t - log.rows[0].t == doctest::Approx(0.01));

  const Figure fig = mpc_figure(log);
  REQUIRE(fig.panels.size() == 4);
  CHECK(fig.panels[0].title == "phase portrait");
  CHECK(fig.panels[0].series.size() == 2);  // trajectory and reference
  CHECK(fig.panels[1].series.size() == 2);
  CHECK(fig.panels[3].title == "input");
  CHECK(fig.panels[3].series[0].label == "u1");
  CHECK(render_svg(fig).find("phase portrait") != std::string::npos);

  CHECK_THROWS_AS(build_mpc_experiment(parse_run_config(kLinearBase), learned.predictor),
                  ConfigError);

  // a predictor learned without the constraint stacking cannot serve the box
  const RunConfig no_mpc = parse_run_config(R"({
    "version": 1,
    "system": {"kind": "duffing"},
    "data": {"trajectories": 12, "duration": 1.0, "controlled_duration": 0.5, "ts": 0.01,
             "seed": 5, "sampler": {"kind": "circle", "radius": 1.0},
             "excitation": {"kind": "uniform", "lo": -1.0, "hi": 1.0}},
    "lift": {"n": 6, "partition": "even", "eigenvalues": "lattice"},
    "predictor": {"c_mode": "bdiag", "fit_b": true}
  })");
  const LearnResult narrow = learn_predictor(no_mpc, generate_data(no_mpc));
  try {
    build_mpc_experiment(cfg, narrow.predictor);
    FAIL("expected a ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("output rows") != std::string::npos);
  }
}

TEST_CASE("prediction figure pairs truth with the rollout") {
  RMat truth(2, 9);
  for (int k = 0; k < 9; ++k) {
    truth(0, k) = std::sin(0.3 * k);
    truth(1, k) = std::cos(0.3 * k);
  }
  const RMat predicted = truth.array() + 0.01;
  const Figure fig = prediction_figure(truth, predicted, 0.05);
  REQUIRE(fig.panels.size() == 2);
  CHECK(fig.cols == 2);
  CHECK(fig.panels[0].title == "x1");
  CHECK(fig.panels[1].ylabel == "x2");
  REQUIRE(fig.panels[0].series.size() == 2);
  CHECK(fig.panels[0].series[0].label == "true");
  CHECK(fig.panels[0].series[1].label == "predicted");
  CHECK(fig.panels[0].series[1].dashed);
  CHECK(fig.panels[0].series[0].x[3] == doctest::Approx(0.15));
  CHECK(fig.panels[0].series[0].y[0] == 0.0);
  CHECK(render_svg(fig).find(">predicted<") != std::string::npos);

  CHECK_THROWS_AS(prediction_figure(truth, predicted.leftCols(5), 0.05), DimensionError);
}

TEST_CASE("learning report lists one row per component") {
  const RunConfig cfg = parse_run_config(kLinearBase);
  const LearnResult learned = learn_predictor(cfg, generate_data(cfg));
  const std::string path = temp_path("koopman_learn_report.csv");
  write_learn_report(path, learned);
  const std::string text = read_text_file(path);
  CHECK(text.rfind("component,budget,lattice_degree,initial_objective,objective,iterations,"
                   "initial_eigenvalues,eigenvalues\n",
                   0) == 0);
  CHECK(std::count(text.begin(), text.end(), '\n') == 3);
  CHECK(text.find("0,3,1,") != std::string::npos);
  CHECK(text.find(";") != std::string::npos);  // joined eigenvalue lists
  CHECK(text.find("j") != std::string::npos);  // complex formatting
  std::remove(path.c_str());
}
