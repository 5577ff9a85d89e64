#include "koopman/config.hpp"

#include "koopman/io.hpp"

#include "json.hpp"

#include <cmath>
#include <initializer_list>
#include <string>
#include <vector>

namespace koopman {
namespace {

using nlohmann::json;

[[noreturn]] void fail(const std::string& path, const std::string& what) {
  throw ConfigError("config: " + path + " " + what);
}

void check_keys(const json& j, const std::string& path,
                std::initializer_list<const char*> allowed) {
  if (!j.is_object()) fail(path, "must be an object");
  for (const auto& item : j.items()) {
    bool known = false;
    for (const char* k : allowed)
      if (item.key() == k) {
        known = true;
        break;
      }
    if (!known) throw ConfigError("config: unknown key '" + path + "." + item.key() + "'");
  }
}

const json* find(const json& j, const std::string& key) {
  const auto it = j.find(key);
  return it == j.end() ? nullptr : &*it;
}

double get_double(const json& j, const std::string& path) {
  if (!j.is_number()) fail(path, "must be a number");
  return j.get<double>();
}

int get_int(const json& j, const std::string& path) {
  if (!j.is_number_integer()) fail(path, "must be an integer");
  return j.get<int>();
}

std::uint64_t get_u64(const json& j, const std::string& path) {
  if (!j.is_number_unsigned() && !j.is_number_integer()) fail(path, "must be an integer");
  if (j.is_number_integer() && j.get<long long>() < 0) fail(path, "must be nonnegative");
  return j.get<std::uint64_t>();
}

bool get_bool(const json& j, const std::string& path) {
  if (!j.is_boolean()) fail(path, "must be a boolean");
  return j.get<bool>();
}

std::string get_string(const json& j, const std::string& path) {
  if (!j.is_string()) fail(path, "must be a string");
  return j.get<std::string>();
}

RVec get_vector(const json& j, const std::string& path) {
  if (!j.is_array()) fail(path, "must be an array of numbers");
  RVec v(static_cast<Eigen::Index>(j.size()));
  Eigen::Index i = 0;
  for (const auto& e : j) v(i++) = get_double(e, path + "[]");
  return v;
}

RMat get_matrix(const json& j, const std::string& path) {
  if (!j.is_array() || j.empty()) fail(path, "must be a nonempty array of rows");
  const auto cols = static_cast<Eigen::Index>(j.front().size());
  RMat m(static_cast<Eigen::Index>(j.size()), cols);
  Eigen::Index r = 0;
  for (const auto& row : j) {
    if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != cols)
      fail(path, "rows must be equally sized arrays");
    Eigen::Index c = 0;
    for (const auto& e : row) m(r, c++) = get_double(e, path + "[][]");
    ++r;
  }
  return m;
}

SystemConfig parse_system(const json& j) {
  check_keys(j, "system", {"kind", "a", "h"});
  SystemConfig cfg;
  if (const json* k = find(j, "kind")) cfg.kind = get_string(*k, "system.kind");
  if (cfg.kind != "vanderpol" && cfg.kind != "duffing" && cfg.kind != "linear")
    fail("system.kind", "must be vanderpol, duffing or linear");
  if (cfg.kind == "linear") {
    const json* a = find(j, "a");
    if (!a) fail("system.a", "is required for a linear system");
    cfg.A = get_matrix(*a, "system.a");
    if (cfg.A.rows() != cfg.A.cols()) fail("system.a", "must be square");
    if (const json* h = find(j, "h")) {
      cfg.H = get_matrix(*h, "system.h");
      if (cfg.H.rows() != cfg.A.rows()) fail("system.h", "row count must match system.a");
    }
  } else if (find(j, "a") || find(j, "h")) {
    fail("system", "matrices are only valid with kind linear");
  }
  return cfg;
}

SamplerConfig parse_sampler(const json& j, const std::string& path) {
  check_keys(j, path, {"kind", "radius", "center"});
  SamplerConfig cfg;
  if (const json* k = find(j, "kind")) cfg.kind = get_string(*k, path + ".kind");
  if (cfg.kind != "circle" && cfg.kind != "disk") fail(path + ".kind", "must be circle or disk");
  if (const json* r = find(j, "radius")) cfg.radius = get_double(*r, path + ".radius");
  if (!(cfg.radius > 0.0)) fail(path + ".radius", "must be positive");
  if (const json* c = find(j, "center")) cfg.center = get_vector(*c, path + ".center");
  return cfg;
}

ExcitationConfig parse_excitation(const json& j, const std::string& path) {
  check_keys(j, path, {"kind", "lo", "hi", "amplitude", "period"});
  ExcitationConfig cfg;
  if (const json* k = find(j, "kind")) cfg.kind = get_string(*k, path + ".kind");
  if (cfg.kind != "none" && cfg.kind != "uniform" && cfg.kind != "square" && cfg.kind != "sine")
    fail(path + ".kind", "must be none, uniform, square or sine");
  if (const json* v = find(j, "lo")) cfg.lo = get_double(*v, path + ".lo");
  if (const json* v = find(j, "hi")) cfg.hi = get_double(*v, path + ".hi");
  if (const json* v = find(j, "amplitude")) cfg.amplitude = get_double(*v, path + ".amplitude");
  if (const json* v = find(j, "period")) cfg.period = get_double(*v, path + ".period");
  if (cfg.kind == "uniform" && !(cfg.lo < cfg.hi)) fail(path, "needs lo < hi");
  if ((cfg.kind == "square" || cfg.kind == "sine") && !(cfg.period > 0.0))
    fail(path + ".period", "must be positive");
  return cfg;
}

DataConfig parse_data(const json& j) {
  check_keys(j, "data",
             {"trajectories", "duration", "controlled_duration", "ts", "seed", "sampler",
              "excitation"});
  DataConfig cfg;
  if (const json* v = find(j, "trajectories")) cfg.trajectories = get_int(*v, "data.trajectories");
  if (const json* v = find(j, "duration")) cfg.duration = get_double(*v, "data.duration");
  if (const json* v = find(j, "controlled_duration")) {
    cfg.controlled_duration = get_double(*v, "data.controlled_duration");
    if (!(cfg.controlled_duration > 0.0)) fail("data.controlled_duration", "must be positive");
  }
  if (const json* v = find(j, "ts")) cfg.ts = get_double(*v, "data.ts");
  if (const json* v = find(j, "seed")) cfg.seed = get_u64(*v, "data.seed");
  if (const json* v = find(j, "sampler")) cfg.sampler = parse_sampler(*v, "data.sampler");
  if (const json* v = find(j, "excitation"))
    cfg.excitation = parse_excitation(*v, "data.excitation");
  if (cfg.trajectories < 1) fail("data.trajectories", "must be at least 1");
  if (!(cfg.duration > 0.0)) fail("data.duration", "must be positive");
  if (!(cfg.ts > 0.0)) fail("data.ts", "must be positive");
  if (cfg.duration + 1e-12 < cfg.ts) fail("data.duration", "must cover one sampling period");
  return cfg;
}

LiftConfig parse_lift(const json& j) {
  check_keys(j, "lift",
             {"n", "partition", "eigenvalues", "lattice_degree", "optimize", "extension",
              "products", "jordan_blocks"});
  LiftConfig cfg;
  if (const json* v = find(j, "n")) cfg.n = get_int(*v, "lift.n");
  if (cfg.n < 1) fail("lift.n", "must be at least 1");
  if (const json* v = find(j, "partition")) {
    if (v->is_string()) {
      if (get_string(*v, "lift.partition") != "even")
        fail("lift.partition", "must be \"even\" or an array of budgets");
      cfg.even_partition = true;
    } else if (v->is_array()) {
      cfg.even_partition = false;
      for (const auto& e : *v) {
        const int b = get_int(e, "lift.partition[]");
        if (b < 1) fail("lift.partition", "budgets must be positive");
        cfg.partition.push_back(b);
      }
      if (cfg.partition.empty()) fail("lift.partition", "must not be empty");
      int total = 0;
      for (const int b : cfg.partition) total += b;
      if (total != cfg.n) fail("lift.partition", "budgets must sum to lift.n");
    } else {
      fail("lift.partition", "must be \"even\" or an array of budgets");
    }
  }
  if (const json* v = find(j, "eigenvalues")) cfg.eigenvalues = get_string(*v, "lift.eigenvalues");
  if (cfg.eigenvalues != "optimized" && cfg.eigenvalues != "lattice")
    fail("lift.eigenvalues", "must be optimized or lattice");
  if (const json* v = find(j, "lattice_degree")) {
    cfg.lattice_degree = get_int(*v, "lift.lattice_degree");
    if (cfg.lattice_degree < 0) fail("lift.lattice_degree", "must be nonnegative");
  }
  if (const json* v = find(j, "optimize")) {
    check_keys(*v, "lift.optimize", {"restarts", "iterations", "seed"});
    if (const json* o = find(*v, "restarts")) {
      cfg.optimize.restarts = get_int(*o, "lift.optimize.restarts");
      if (cfg.optimize.restarts < 0) fail("lift.optimize.restarts", "must be nonnegative");
    }
    if (const json* o = find(*v, "iterations")) {
      cfg.optimize.max_iterations = get_int(*o, "lift.optimize.iterations");
      if (cfg.optimize.max_iterations < 1) fail("lift.optimize.iterations", "must be positive");
    }
    if (const json* o = find(*v, "seed")) cfg.optimize.seed = get_u64(*o, "lift.optimize.seed");
  }
  if (const json* v = find(j, "extension")) {
    check_keys(*v, "lift.extension", {"kind", "delta2"});
    if (const json* k = find(*v, "kind")) {
      const std::string s = get_string(*k, "lift.extension.kind");
      try {
        cfg.extension = extension_kind_from_string(s);
      } catch (const Error&) {
        fail("lift.extension.kind",
             "must be triangulated-linear, rbf-ridge or nearest-neighbor");
      }
    }
    if (const json* d = find(*v, "delta2")) {
      cfg.delta2 = get_double(*d, "lift.extension.delta2");
      if (cfg.delta2 < 0.0) fail("lift.extension.delta2", "must be nonnegative");
    }
  }
  if (const json* v = find(j, "products")) {
    if (!v->is_array()) fail("lift.products", "must be an array");
    for (const auto& p : *v) {
      check_keys(p, "lift.products[]", {"indices", "powers"});
      ProductSpec spec;
      const json* idx = find(p, "indices");
      const json* pow = find(p, "powers");
      if (!idx || !pow) fail("lift.products[]", "needs indices and powers");
      for (const auto& e : *idx) spec.indices.push_back(get_int(e, "lift.products[].indices"));
      for (const auto& e : *pow) spec.powers.push_back(get_double(e, "lift.products[].powers"));
      if (spec.indices.empty() || spec.indices.size() != spec.powers.size())
        fail("lift.products[]", "indices and powers must be equally sized and nonempty");
      cfg.products.push_back(std::move(spec));
    }
  }
  if (const json* v = find(j, "jordan_blocks")) {
    if (!v->is_array()) fail("lift.jordan_blocks", "must be an array");
    for (const auto& b : *v) {
      check_keys(b, "lift.jordan_blocks[]", {"re", "im", "size"});
      JordanBlock block;
      if (const json* re = find(b, "re")) block.lambda.real(get_double(*re, "lift.jordan_blocks[].re"));
      if (const json* im = find(b, "im")) block.lambda.imag(get_double(*im, "lift.jordan_blocks[].im"));
      if (const json* sz = find(b, "size")) block.size = get_int(*sz, "lift.jordan_blocks[].size");
      if (block.size < 1) fail("lift.jordan_blocks[].size", "must be at least 1");
      cfg.jordan_blocks.push_back(block);
    }
  }
  return cfg;
}

PredictorConfig parse_predictor(const json& j) {
  check_keys(j, "predictor", {"c_mode", "fit_b", "b_horizon"});
  PredictorConfig cfg;
  if (const json* v = find(j, "c_mode")) {
    const std::string s = get_string(*v, "predictor.c_mode");
    try {
      cfg.c_mode = cmode_from_string(s);
    } catch (const Error&) {
      fail("predictor.c_mode", "must be bdiag, l2_fit or sup_fit");
    }
  }
  if (const json* v = find(j, "fit_b")) cfg.fit_b = get_bool(*v, "predictor.fit_b");
  if (const json* v = find(j, "b_horizon")) {
    cfg.b_horizon = get_int(*v, "predictor.b_horizon");
    if (cfg.b_horizon < -1) fail("predictor.b_horizon", "must be -1 or nonnegative");
  }
  return cfg;
}

MpcSectionConfig parse_mpc(const json& j) {
  check_keys(j, "mpc",
             {"np", "q", "r", "qn", "u_min", "u_max", "duration", "x0", "reference"});
  MpcSectionConfig cfg;
  cfg.present = true;
  if (const json* v = find(j, "np")) cfg.np = get_int(*v, "mpc.np");
  if (cfg.np < 1) fail("mpc.np", "must be at least 1");
  const json* q = find(j, "q");
  const json* r = find(j, "r");
  if (!q || !r) fail("mpc", "needs the q and r weight diagonals");
  cfg.q = get_vector(*q, "mpc.q");
  cfg.r = get_vector(*r, "mpc.r");
  if (cfg.q.size() < 1 || cfg.q.minCoeff() < 0.0) fail("mpc.q", "must be nonnegative");
  if (cfg.r.size() < 1 || cfg.r.minCoeff() < 0.0) fail("mpc.r", "must be nonnegative");
  if (const json* v = find(j, "qn")) {
    cfg.qn = get_vector(*v, "mpc.qn");
    if (cfg.qn.size() != cfg.q.size()) fail("mpc.qn", "must match the q length");
    if (cfg.qn.size() > 0 && cfg.qn.minCoeff() < 0.0) fail("mpc.qn", "must be nonnegative");
  }
  if (const json* v = find(j, "u_min")) cfg.u_min = get_vector(*v, "mpc.u_min");
  if (const json* v = find(j, "u_max")) cfg.u_max = get_vector(*v, "mpc.u_max");
  if (cfg.u_min.size() != cfg.u_max.size())
    fail("mpc", "u_min and u_max must be equally sized");
  for (Eigen::Index i = 0; i < cfg.u_min.size(); ++i)
    if (!(cfg.u_min(i) < cfg.u_max(i))) fail("mpc", "needs u_min < u_max elementwise");
  if (const json* v = find(j, "duration")) cfg.duration = get_double(*v, "mpc.duration");
  if (cfg.duration < 0.0) fail("mpc.duration", "must be nonnegative");
  if (const json* v = find(j, "x0")) cfg.x0 = get_vector(*v, "mpc.x0");
  if (const json* v = find(j, "reference")) {
    check_keys(*v, "mpc.reference", {"times", "values"});
    const json* times = find(*v, "times");
    const json* values = find(*v, "values");
    if (!times || !values) fail("mpc.reference", "needs times and values");
    cfg.reference.times = get_vector(*times, "mpc.reference.times");
    cfg.reference.values = get_matrix(*values, "mpc.reference.values");
    if (cfg.reference.values.cols() != cfg.reference.times.size())
      fail("mpc.reference.values", "needs one column per breakpoint");
    for (Eigen::Index i = 1; i < cfg.reference.times.size(); ++i)
      if (!(cfg.reference.times(i) > cfg.reference.times(i - 1)))
        fail("mpc.reference.times", "must be strictly increasing");
  }
  return cfg;
}

PredictSectionConfig parse_predict(const json& j) {
  check_keys(j, "predict", {"x0", "duration", "excitation"});
  PredictSectionConfig cfg;
  cfg.present = true;
  const json* x0 = find(j, "x0");
  if (!x0) fail("predict.x0", "is required");
  cfg.x0 = get_vector(*x0, "predict.x0");
  if (const json* v = find(j, "duration")) cfg.duration = get_double(*v, "predict.duration");
  if (!(cfg.duration >= 0.0)) fail("predict.duration", "must be nonnegative");
  if (const json* v = find(j, "excitation"))
    cfg.excitation = parse_excitation(*v, "predict.excitation");
  return cfg;
}

TableSectionConfig parse_table(const json& j) {
  check_keys(j, "table", {"test_points", "horizon", "n_grid", "seed"});
  TableSectionConfig cfg;
  cfg.present = true;
  if (const json* v = find(j, "test_points")) cfg.test_points = get_int(*v, "table.test_points");
  if (cfg.test_points < 1) fail("table.test_points", "must be at least 1");
  if (const json* v = find(j, "horizon")) cfg.horizon = get_double(*v, "table.horizon");
  if (!(cfg.horizon > 0.0)) fail("table.horizon", "must be positive");
  if (const json* v = find(j, "n_grid")) {
    for (const auto& e : *v) {
      const int n = get_int(e, "table.n_grid[]");
      if (n < 1) fail("table.n_grid", "entries must be positive");
      cfg.n_grid.push_back(n);
    }
  }
  if (const json* v = find(j, "seed")) cfg.seed = get_u64(*v, "table.seed");
  return cfg;
}

OutputConfig parse_output(const json& j) {
  check_keys(j, "output", {"directory", "plots"});
  OutputConfig cfg;
  if (const json* v = find(j, "directory")) cfg.directory = get_string(*v, "output.directory");
  if (cfg.directory.empty()) fail("output.directory", "must not be empty");
  if (const json* v = find(j, "plots")) cfg.plots = get_bool(*v, "output.plots");
  return cfg;
}

}  // namespace

void RunConfig::validate() const {
  const int n = system.kind == "linear" ? static_cast<int>(system.A.rows()) : 2;
  if (data.sampler.center.size() > 0 && data.sampler.center.size() != n)
    throw ConfigError("config: data.sampler.center does not match the state dimension");
  if (mpc.present) {
    if (mpc.x0.size() > 0 && mpc.x0.size() != n)
      throw ConfigError("config: mpc.x0 does not match the state dimension");
    if (!mpc.reference.empty() && mpc.reference.values.rows() != mpc.q.size())
      throw ConfigError("config: mpc.reference.values needs one row per q entry");
  }
  if (predict.present && predict.x0.size() != n)
    throw ConfigError("config: predict.x0 does not match the state dimension");
  for (const auto& p : lift.products)
    for (const int idx : p.indices)
      if (idx < 0 || idx >= lift.n)
        throw ConfigError("config: lift.products indices must reference rows below lift.n");
}

RunConfig parse_run_config(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  check_keys(j, "config",
             {"version", "system", "data", "lift", "predictor", "mpc", "predict", "table",
              "output"});
  const json* version = find(j, "version");
  if (!version) throw ConfigError("config: missing version");
  if (get_int(*version, "version") != 1)
    throw ConfigError("config: unsupported version " + version->dump());

  RunConfig cfg;
  if (const json* v = find(j, "system")) cfg.system = parse_system(*v);
  if (const json* v = find(j, "data")) cfg.data = parse_data(*v);
  if (const json* v = find(j, "lift")) cfg.lift = parse_lift(*v);
  if (const json* v = find(j, "predictor")) cfg.predictor = parse_predictor(*v);
  if (const json* v = find(j, "mpc")) cfg.mpc = parse_mpc(*v);
  if (const json* v = find(j, "predict")) cfg.predict = parse_predict(*v);
  if (const json* v = find(j, "table")) cfg.table = parse_table(*v);
  if (const json* v = find(j, "output")) cfg.output = parse_output(*v);
  cfg.validate();
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  return parse_run_config(read_text_file(path));
}

VectorField make_system(const SystemConfig& cfg) {
  if (cfg.kind == "vanderpol") return vanderpol();
  if (cfg.kind == "duffing") return duffing();
  if (cfg.kind == "linear")
    return cfg.H.size() > 0 ? linear_control_system(cfg.A, cfg.H) : linear_system(cfg.A);
  throw ConfigError("config: unknown system kind '" + cfg.kind + "'");
}

InitialSampler make_sampler(const SamplerConfig& cfg, int state_dim) {
  RVec center = cfg.center;
  if (center.size() == 0) center = RVec::Zero(state_dim);
  if (center.size() != state_dim)
    throw ConfigError("config: sampler center does not match the state dimension");
  if (cfg.kind == "circle") return circle_sampler(cfg.radius, center);
  if (cfg.kind == "disk") return disk_sampler(cfg.radius, center);
  throw ConfigError("config: unknown sampler kind '" + cfg.kind + "'");
}

InputPolicy make_excitation(const ExcitationConfig& cfg, int input_dim) {
  if (cfg.kind == "none") return no_input();
  if (input_dim < 1) throw ConfigError("config: excitation requested for an uncontrolled system");
  if (cfg.kind == "uniform") return uniform_input(cfg.lo, cfg.hi);
  if (cfg.kind == "square")
    return signal_input(square_wave(cfg.amplitude, cfg.period, input_dim));
  if (cfg.kind == "sine") return signal_input(sine_wave(cfg.amplitude, cfg.period, input_dim));
  throw ConfigError("config: unknown excitation kind '" + cfg.kind + "'");
}

}  // namespace koopman
