// Command-line front end: simulate datasets, learn predictors, roll
// predictions, build accuracy tables and run the closed loop, all from one
// json run configuration. Exit codes: 0 success, 2 configuration error,
// 3 numerical error, 4 io error.

#include "koopman/config.hpp"
#include "koopman/io.hpp"
#include "koopman/pipeline.hpp"
#include "koopman/serialize.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iostream>
#include <string>
#include <vector>

namespace {

using namespace koopman;

std::string out_path(const RunConfig& cfg, const std::string& name) {
  return (std::filesystem::path(cfg.output.directory) / name).string();
}

void print_warnings(const std::vector<std::string>& warnings) {
  for (const std::string& w : warnings) std::cerr << "warning: " << w << "\n";
}

void note_written(const std::string& path) { std::cout << "wrote " << path << "\n"; }

int cmd_generate(const RunConfig& cfg, bool verbose) {
  const RunData data = generate_data(cfg);
  nlohmann::json files = nlohmann::json::object();
  const auto emit = [&](const std::string& name, const TrajectoryDataset& ds) {
    const std::string path = out_path(cfg, name);
    write_dataset_csv(ds, path);
    files[name] = git_blob_sha1(read_text_file(path));
    note_written(path);
    if (verbose) {
      std::cout << "  " << ds.Mt << " trajectories, " << ds.Ms + 1 << " samples each, Ts "
                << ds.Ts << "\n";
    }
  };
  emit("uncontrolled.csv", data.uncontrolled);
  if (data.has_controlled) emit("controlled.csv", data.controlled);

  nlohmann::json manifest;
  manifest["seed"] = cfg.data.seed;
  manifest["files"] = files;
  const std::string path = out_path(cfg, "manifest.json");
  write_text_file(path, manifest.dump(2) + "\n");
  note_written(path);
  return 0;
}

int cmd_learn(const RunConfig& cfg, bool verbose) {
  const RunData data = generate_data(cfg);
  const LearnResult learned = learn_predictor(cfg, data);
  print_warnings(learned.warnings);
  if (verbose) {
    for (const ComponentReport& rep : learned.components) {
      std::cout << "component " << rep.component << ": budget " << rep.Ni << ", objective "
                << rep.initial_objective << " -> " << rep.objective << " (" << rep.iterations
                << " steps)\n";
    }
  }
  const std::string model = out_path(cfg, "predictor.json");
  save_predictor(model, learned.predictor);
  note_written(model);
  const std::string report = out_path(cfg, "learn_report.csv");
  write_learn_report(report, learned);
  note_written(report);
  return 0;
}

// Zero-order-hold input samples for the prediction rollout. Uniform draws
// come from a fixed child stream of the data seed, so reruns match.
RMat rollout_inputs(const RunConfig& cfg, int m, int steps, double Ts) {
  RMat inputs = RMat::Zero(std::max(m, 0), steps);
  if (cfg.predict.excitation.kind == "none") return inputs;
  const InputPolicy policy = make_excitation(cfg.predict.excitation, m);
  if (policy.kind == InputPolicy::Kind::Signal) {
    for (int k = 0; k < steps; ++k) inputs.col(k) = policy.signal(k * Ts);
  } else {
    Rng rng = Rng(cfg.data.seed).stream(0x11ca);
    for (Eigen::Index k = 0; k < inputs.cols(); ++k) {
      for (Eigen::Index r = 0; r < inputs.rows(); ++r) {
        inputs(r, k) = rng.uniform(policy.lo, policy.hi);
      }
    }
  }
  return inputs;
}

int cmd_predict(const RunConfig& cfg, const std::string& model, bool verbose) {
  if (!cfg.predict.present) throw ConfigError("predict: section missing from the config");
  const LinearPredictor pred = load_predictor(model);
  const VectorField vf = make_system(cfg.system);
  if (pred.output_dim() < vf.state_dim) {
    throw ConfigError("predict: the predictor outputs fewer rows than the state");
  }
  const double Ts = pred.Ts;
  const int steps = static_cast<int>(std::lround(cfg.predict.duration / Ts));
  const RMat inputs = rollout_inputs(cfg, pred.input_dim(), steps, Ts);

  RMat truth(vf.state_dim, steps + 1);
  RVec x = cfg.predict.x0;
  truth.col(0) = x;
  const RVec u0 = RVec::Zero(vf.input_dim);
  for (int k = 0; k < steps; ++k) {
    const RVec u = inputs.rows() > 0 ? RVec(inputs.col(k)) : u0;
    x = integrate(vf, x, u, Ts, 1).back();
    truth.col(k + 1) = x;
  }
  const RMat predicted = predict(pred, cfg.predict.x0, inputs, steps).topRows(vf.state_dim);

  std::string text = "t";
  for (int i = 0; i < vf.state_dim; ++i) text += ",true_x" + std::to_string(i + 1);
  for (int i = 0; i < vf.state_dim; ++i) text += ",pred_x" + std::to_string(i + 1);
  for (Eigen::Index j = 0; j < inputs.rows(); ++j) text += ",u" + std::to_string(j + 1);
  text += "\n";
  for (int k = 0; k <= steps; ++k) {
    text += format_double(k * Ts);
    for (int i = 0; i < vf.state_dim; ++i) text += "," + format_double(truth(i, k));
    for (int i = 0; i < vf.state_dim; ++i) text += "," + format_double(predicted(i, k));
    for (Eigen::Index j = 0; j < inputs.rows(); ++j) {
      text += k < steps ? "," + format_double(inputs(j, k)) : ",";
    }
    text += "\n";
  }
  const std::string csv = out_path(cfg, "prediction.csv");
  write_text_file(csv, text);
  note_written(csv);

  if (cfg.output.plots) {
    const std::string svg = out_path(cfg, "prediction.svg");
    write_svg(svg, prediction_figure(truth, predicted, Ts));
    note_written(svg);
  }
  if (verbose && steps > 0) {
    std::cout << "error " << rmse_error(truth, predicted) << " % over " << steps * Ts << " s\n";
  }
  return 0;
}

int cmd_table(const RunConfig& cfg, bool verbose) {
  const TableResult table = evaluate_table(cfg);
  print_warnings(table.warnings);
  if (verbose) {
    for (const TableRow& row : table.rows) {
      std::cout << "n " << row.n << " " << row.mode << ": " << row.mean_pct << " % +- "
                << row.stdev_pct;
      if (row.forced) std::cout << ", forced " << row.forced_mean_pct << " %";
      std::cout << "\n";
    }
  }
  const std::string path = out_path(cfg, "table.csv");
  write_table_csv(path, table);
  note_written(path);
  return 0;
}

int cmd_mpc(const RunConfig& cfg, const std::string& model, bool verbose) {
  if (!cfg.mpc.present) throw ConfigError("mpc: section missing from the config");
  const LinearPredictor pred = load_predictor(model);
  const ClosedLoopResult log = run_mpc(cfg, pred);

  // timing columns are wall clock and would break byte-for-byte reruns
  const std::string csv = out_path(cfg, "mpc_log.csv");
  write_closed_loop_csv(csv, log, false);
  note_written(csv);
  if (cfg.output.plots && log.n > 0 && log.m > 0) {
    const std::string svg = out_path(cfg, "mpc.svg");
    write_svg(svg, mpc_figure(log));
    note_written(svg);
  }
  if (verbose && log.outside_hull > 0) {
    std::cout << log.outside_hull << " lift queries left the interpolation hull\n";
  }
  if (log.aborted) {
    std::cerr << "mpc aborted after " << log.rows.size() << " steps: " << log.abort_reason
              << "\n";
    return 3;
  }
  if (verbose) std::cout << "closed loop finished, " << log.rows.size() << " steps\n";
  return 0;
}

int run_selftest(bool verbose) {
  struct Check {
    const char* name;
    std::function<bool()> run;
  };
  const std::vector<Check> checks = {
      {"rng child streams ignore parent position",
       [] {
         Rng consumed(9);
         consumed.uniform();
         return consumed.stream(4).uniform() == Rng(9).stream(4).uniform();
       }},
      {"rk4 reproduces a linear decay",
       [] {
         RVec x0(1);
         x0 << 1.0;
         const auto xs = integrate(scalar_linear(-1.0), x0, RVec(), 0.1, 10);
         return std::abs(xs.back()(0) - std::exp(-1.0)) < 1e-9;
       }},
      {"datasets are seed deterministic",
       [] {
         const auto a =
             generate_dataset(vanderpol(), circle_sampler(0.05), 3, 0.2, 0.01, no_input(), 5);
         const auto b =
             generate_dataset(vanderpol(), circle_sampler(0.05), 3, 0.2, 0.01, no_input(), 5);
         return a.states == b.states;
       }},
      {"eigenfunction values follow the one step recursion",
       [] {
         const Complex lambda(-0.4, 1.1);
         CMat G(1, 2);
         G << Complex(0.3, -0.2), Complex(-1.0, 0.5);
         const EigenfunctionSet set =
             propagate_blocks({JordanBlock{lambda, 1}}, G, even_partition(1, 1), 0.05, 4);
         const Complex growth = std::exp(lambda * 0.05);
         for (int j = 0; j < 2; ++j) {
           for (int k = 0; k < 4; ++k) {
             const Complex step = set.values(0, j * 5 + k + 1) - growth * set.values(0, j * 5 + k);
             if (std::abs(step) > 1e-12) return false;
           }
         }
         return true;
       }},
      {"qp solver clips the unconstrained optimum",
       [] {
         RMat H1(1, 1), L(1, 1);
         H1 << 1.0;
         L << 1.0;
         RVec q(1), d(1);
         q << -4.0;
         d << 1.0;
         const QpSolution s = solve_qp_folded(H1, q, L, d);
         return s.converged && std::abs(s.u_star(0) - 1.0) < 1e-6;
       }},
  };

  int failures = 0;
  for (const Check& check : checks) {
    bool ok = false;
    std::string why;
    try {
      ok = check.run();
    } catch (const std::exception& e) {
      why = e.what();
    }
    std::cout << (ok ? "pass: " : "FAIL: ") << check.name << "\n";
    if (!ok && verbose && !why.empty()) std::cout << "  threw: " << why << "\n";
    failures += ok ? 0 : 1;
  }
  return failures == 0 ? 0 : 3;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Koopman eigenfunction predictors: datasets, learning, prediction and MPC"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_override;
  std::string model_override;
  std::uint64_t seed_override = 0;
  bool seed_given = false;
  int threads = 0;
  bool verbose = false;

  const auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "run configuration (json)")
        ->required()
        ->check(CLI::ExistingFile);
    sub->add_option("--out", out_override, "output directory (overrides the config)");
    sub->add_option("--seed", seed_override, "data seed override")
        ->each([&](const std::string&) { seed_given = true; });
    sub->add_option("--threads", threads, "Eigen thread count");
    sub->add_flag("--verbose,-v", verbose, "print progress and warnings");
  };

  CLI::App* c_generate =
      app.add_subcommand("generate", "simulate the datasets and write them as csv");
  CLI::App* c_learn = app.add_subcommand("learn", "learn a predictor and save it as json");
  CLI::App* c_predict =
      app.add_subcommand("predict", "roll the predictor against the simulated truth");
  CLI::App* c_table = app.add_subcommand("table", "accuracy table over lifted dimensions");
  CLI::App* c_mpc = app.add_subcommand("mpc", "closed-loop control experiment");
  CLI::App* c_selftest = app.add_subcommand("selftest", "fast built-in consistency checks");
  for (CLI::App* sub : {c_generate, c_learn, c_predict, c_table, c_mpc}) add_common(sub);
  for (CLI::App* sub : {c_predict, c_mpc}) {
    sub->add_option("--model", model_override, "predictor json (default <out>/predictor.json)");
  }
  c_selftest->add_flag("--verbose,-v", verbose, "explain failures");

  CLI11_PARSE(app, argc, argv);

  try {
    if (c_selftest->parsed()) return run_selftest(verbose);

    if (threads > 0) Eigen::setNbThreads(threads);
    RunConfig cfg = load_run_config(config_path);
    if (!out_override.empty()) cfg.output.directory = out_override;
    if (seed_given) cfg.data.seed = seed_override;
    cfg.validate();
    std::error_code ec;
    std::filesystem::create_directories(cfg.output.directory, ec);
    if (ec) throw IoError("cannot create output directory " + cfg.output.directory);
    const std::string model =
        model_override.empty() ? out_path(cfg, "predictor.json") : model_override;

    if (c_generate->parsed()) return cmd_generate(cfg, verbose);
    if (c_learn->parsed()) return cmd_learn(cfg, verbose);
    if (c_predict->parsed()) return cmd_predict(cfg, model, verbose);
    if (c_table->parsed()) return cmd_table(cfg, verbose);
    if (c_mpc->parsed()) return cmd_mpc(cfg, model, verbose);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return 4;
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return 3;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
