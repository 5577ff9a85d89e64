#include "koopman/dynamics.hpp"

#include "koopman/io.hpp"
#include "koopman/parallel.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <utility>

namespace koopman {

VectorField vanderpol() {
  VectorField vf;
  vf.state_dim = 2;
  vf.input_dim = 1;
  vf.name = "vanderpol";
  vf.eval = [](const RVec& x, const RVec& u) {
    RVec dx(2);
    dx(0) = 2.0 * x(1);
    dx(1) = -0.8 * x(0) + 2.0 * x(1) - 10.0 * x(0) * x(0) * x(1) + (u.size() > 0 ? u(0) : 0.0);
    return dx;
  };
  return vf;
}

VectorField duffing() {
  VectorField vf;
  vf.state_dim = 2;
  vf.input_dim = 1;
  vf.name = "duffing";
  vf.eval = [](const RVec& x, const RVec& u) {
    RVec dx(2);
    dx(0) = x(1);
    dx(1) = -0.5 * x(1) - x(0) * (4.0 * x(0) * x(0) - 1.0) + 0.5 * (u.size() > 0 ? u(0) : 0.0);
    return dx;
  };
  return vf;
}

VectorField scalar_linear(double a) {
  VectorField vf;
  vf.state_dim = 1;
  vf.input_dim = 0;
  vf.name = "scalar_linear";
  vf.eval = [a](const RVec& x, const RVec&) { return RVec::Constant(1, a * x(0)); };
  return vf;
}

VectorField linear_system(const RMat& A) {
  require(A.rows() == A.cols(), "linear_system: A must be square");
  VectorField vf;
  vf.state_dim = static_cast<int>(A.rows());
  vf.input_dim = 0;
  vf.name = "linear";
  vf.eval = [A](const RVec& x, const RVec&) -> RVec { return A * x; };
  return vf;
}

VectorField linear_control_system(const RMat& A, const RMat& H) {
  require(A.rows() == A.cols(), "linear_control_system: A must be square");
  require(H.rows() == A.rows(), "linear_control_system: H row count must match A");
  VectorField vf;
  vf.state_dim = static_cast<int>(A.rows());
  vf.input_dim = static_cast<int>(H.cols());
  vf.name = "linear_control";
  // an empty u means unforced, matching the preset systems
  vf.eval = [A, H](const RVec& x, const RVec& u) -> RVec {
    return u.size() > 0 ? RVec(A * x + H * u) : RVec(A * x);
  };
  return vf;
}

VectorField inflate_state(const VectorField& vf) {
  require(vf.input_dim > 0, "inflate_state: vector field has no inputs");
  VectorField out;
  out.state_dim = vf.state_dim + vf.input_dim;
  out.input_dim = vf.input_dim;
  out.name = vf.name + "_inflated";
  const int n = vf.state_dim;
  const int m = vf.input_dim;
  out.eval = [vf, n, m](const RVec& x, const RVec& u) {
    RVec dx(n + m);
    dx.head(n) = vf.eval(x.head(n), x.tail(m));
    dx.tail(m) = u;
    return dx;
  };
  return out;
}

std::vector<RVec> integrate(const VectorField& vf, const RVec& x0, const RVec& u, double dt,
                            int steps, double substep) {
  require(x0.size() == vf.state_dim, "integrate: x0 dimension mismatch");
  require(steps >= 0, "integrate: steps must be >= 0");
  require(dt > 0.0 && substep > 0.0, "integrate: dt and substep must be positive");

  const int nsub = std::max(1, static_cast<int>(std::ceil(dt / substep - 1e-12)));
  const double h = dt / nsub;

  std::vector<RVec> out;
  out.reserve(static_cast<std::size_t>(steps) + 1);
  out.push_back(x0);
  RVec x = x0;
  for (int k = 0; k < steps; ++k) {
    for (int s = 0; s < nsub; ++s) {
      const RVec k1 = vf.eval(x, u);
      const RVec k2 = vf.eval(x + 0.5 * h * k1, u);
      const RVec k3 = vf.eval(x + 0.5 * h * k2, u);
      const RVec k4 = vf.eval(x + h * k3, u);
      x += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    if (!x.allFinite()) {
      throw NumericalError("integrate: state blew up at step " + std::to_string(k + 1) + " of " +
                           vf.name);
    }
    out.push_back(x);
  }
  return out;
}

RMat TrajectoryDataset::initial_conditions() const {
  RMat x0s(n, Mt);
  for (int j = 0; j < Mt; ++j) x0s.col(j) = state(j, 0);
  return x0s;
}

void TrajectoryDataset::validate() const {
  require(n > 0 && Mt > 0 && Ms >= 1 && Ts > 0.0, "dataset: bad shape");
  require(states.rows() == n && states.cols() == static_cast<Eigen::Index>(Mt) * (Ms + 1),
          "dataset: state array shape mismatch");
  if (m > 0) {
    require(inputs.rows() == m && inputs.cols() == static_cast<Eigen::Index>(Mt) * Ms,
            "dataset: input array shape mismatch");
  } else {
    require(inputs.size() == 0, "dataset: unexpected input array");
  }
  require_finite(states, "dataset states");
  if (m > 0) require_finite(inputs, "dataset inputs");
  for (int a = 0; a < Mt; ++a) {
    for (int b = a + 1; b < Mt; ++b) {
      if ((state(a, 0) - state(b, 0)).lpNorm<Eigen::Infinity>() <= 1e-12) {
        throw NumericalError("dataset: duplicate initial conditions at trajectories " +
                             std::to_string(a) + " and " + std::to_string(b));
      }
    }
  }
}

int InitialSampler::dim() const {
  switch (kind) {
    case Kind::Circle:
    case Kind::Disk:
      return center.size() == 0 ? 2 : static_cast<int>(center.size());
    case Kind::List:
      return points.empty() ? 0 : static_cast<int>(points.front().size());
    case Kind::Custom:
      return 0;  // caller-defined
  }
  return 0;
}

RVec InitialSampler::sample(Rng& rng, int index) const {
  switch (kind) {
    case Kind::Circle: {
      const double th = rng.uniform(0.0, 6.283185307179586476925287);
      RVec p(2);
      p << radius * std::cos(th), radius * std::sin(th);
      if (center.size() == 2) p += center;
      return p;
    }
    case Kind::Disk: {
      // Uniform over the disk: radius via sqrt of a uniform draw.
      const double th = rng.uniform(0.0, 6.283185307179586476925287);
      const double r = radius * std::sqrt(rng.uniform());
      RVec p(2);
      p << r * std::cos(th), r * std::sin(th);
      if (center.size() == 2) p += center;
      return p;
    }
    case Kind::List:
      require(!points.empty(), "sampler: empty point list");
      return points[static_cast<std::size_t>(index) % points.size()];
    case Kind::Custom:
      return custom(rng);
  }
  throw Error("sampler: unknown kind");
}

InitialSampler circle_sampler(double radius, RVec center) {
  InitialSampler s;
  s.kind = InitialSampler::Kind::Circle;
  s.radius = radius;
  s.center = std::move(center);
  return s;
}

InitialSampler disk_sampler(double radius, RVec center) {
  InitialSampler s;
  s.kind = InitialSampler::Kind::Disk;
  s.radius = radius;
  s.center = std::move(center);
  return s;
}

InitialSampler list_sampler(std::vector<RVec> points) {
  InitialSampler s;
  s.kind = InitialSampler::Kind::List;
  s.points = std::move(points);
  return s;
}

InputPolicy no_input() { return InputPolicy{}; }

InputPolicy uniform_input(double lo, double hi) {
  InputPolicy p;
  p.kind = InputPolicy::Kind::Uniform;
  p.lo = lo;
  p.hi = hi;
  return p;
}

InputPolicy signal_input(std::function<RVec(double)> u_of_t) {
  InputPolicy p;
  p.kind = InputPolicy::Kind::Signal;
  p.signal = std::move(u_of_t);
  return p;
}

std::function<RVec(double)> square_wave(double amplitude, double period, int m) {
  return [amplitude, period, m](double t) {
    const double phase = t / period - std::floor(t / period);
    return RVec::Constant(m, phase < 0.5 ? amplitude : -amplitude);
  };
}

std::function<RVec(double)> sine_wave(double amplitude, double period, int m) {
  return [amplitude, period, m](double t) {
    return RVec::Constant(m, amplitude * std::sin(6.283185307179586476925287 * t / period));
  };
}

TrajectoryDataset generate_dataset(const VectorField& vf, const InitialSampler& sampler, int Mt,
                                   double duration, double Ts, const InputPolicy& policy,
                                   std::uint64_t seed, double substep) {
  require(Mt >= 1, "generate_dataset: need at least one trajectory");
  require(Ts > 0.0, "generate_dataset: Ts must be positive");
  const double ratio = duration / Ts;
  const int Ms = static_cast<int>(std::llround(ratio));
  require(Ms >= 1 && std::abs(ratio - Ms) <= 1e-9 * std::max(1.0, ratio),
          "generate_dataset: duration must be an integer multiple of Ts");

  const bool controlled = policy.kind != InputPolicy::Kind::None;
  if (controlled) require(vf.input_dim > 0, "generate_dataset: input policy on an input-free system");
  const int m = controlled ? vf.input_dim : 0;

  TrajectoryDataset ds;
  ds.n = vf.state_dim;
  ds.m = m;
  ds.Mt = Mt;
  ds.Ms = Ms;
  ds.Ts = Ts;
  ds.states.resize(ds.n, static_cast<Eigen::Index>(Mt) * (Ms + 1));
  if (m > 0) ds.inputs.resize(m, static_cast<Eigen::Index>(Mt) * Ms);

  // Draw initial conditions sequentially so duplicate rejection is
  // deterministic; trajectory simulation then parallelizes cleanly.
  Rng root(seed);
  RMat x0s(ds.n, Mt);
  for (int j = 0; j < Mt; ++j) {
    Rng stream = root.stream(static_cast<std::uint64_t>(j));
    RVec x0 = sampler.sample(stream, j);
    require(x0.size() == ds.n, "generate_dataset: sampler dimension mismatch");
    if (sampler.kind != InitialSampler::Kind::List) {
      int attempts = 0;
      for (;;) {
        bool dup = false;
        for (int a = 0; a < j; ++a) {
          if ((x0s.col(a) - x0).lpNorm<Eigen::Infinity>() <= 1e-12) {
            dup = true;
            break;
          }
        }
        if (!dup) break;
        require(++attempts < 1000, "generate_dataset: sampler keeps returning duplicates");
        x0 = sampler.sample(stream, j);
      }
    }
    x0s.col(j) = x0;
  }

  parallel_for(Mt, [&](int j) {
    // Input draws come from a second per-trajectory stream, independent of
    // the initial-condition draws above.
    Rng ustream = root.stream(0x10000000ULL + static_cast<std::uint64_t>(j));
    RVec x = x0s.col(j);
    ds.states.col(ds.col(j, 0)) = x;
    RVec u(m);
    for (int k = 0; k < Ms; ++k) {
      if (controlled) {
        switch (policy.kind) {
          case InputPolicy::Kind::Uniform:
            for (int c = 0; c < m; ++c) u(c) = ustream.uniform(policy.lo, policy.hi);
            break;
          case InputPolicy::Kind::Signal:
            u = policy.signal(k * Ts);
            require(u.size() == m, "generate_dataset: signal dimension mismatch");
            break;
          default:
            break;
        }
        ds.inputs.col(static_cast<Eigen::Index>(j) * Ms + k) = u;
      }
      try {
        x = integrate(vf, x, u, Ts, 1, substep).back();
      } catch (const NumericalError&) {
        throw NumericalError("generate_dataset: trajectory " + std::to_string(j) +
                             " blew up near t = " + std::to_string((k + 1) * Ts));
      }
      ds.states.col(ds.col(j, k + 1)) = x;
    }
  });

  ds.validate();
  return ds;
}

void write_dataset_csv(const TrajectoryDataset& ds, const std::string& path) {
  ds.validate();
  std::ofstream out(path);
  if (!out) throw IoError("cannot open for writing: " + path);
  out << "traj,k,t";
  for (int c = 0; c < ds.n; ++c) out << ",x" << (c + 1);
  for (int c = 0; c < ds.m; ++c) out << ",u" << (c + 1);
  out << "\n";
  for (int j = 0; j < ds.Mt; ++j) {
    for (int k = 0; k <= ds.Ms; ++k) {
      out << j << ',' << k << ',' << format_double(k * ds.Ts);
      for (int c = 0; c < ds.n; ++c) out << ',' << format_double(ds.states(c, ds.col(j, k)));
      for (int c = 0; c < ds.m; ++c) {
        out << ',';
        if (k < ds.Ms) out << format_double(ds.inputs(c, static_cast<Eigen::Index>(j) * ds.Ms + k));
      }
      out << "\n";
    }
  }
  if (!out) throw IoError("write failed: " + path);
}

TrajectoryDataset read_dataset_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open: " + path);
  std::string line;
  if (!std::getline(in, line)) throw IoError("empty dataset file: " + path);
  const auto header = split_csv_line(line);
  require(header.size() >= 4 && header[0] == "traj" && header[1] == "k" && header[2] == "t",
          "dataset csv: unexpected header");
  int n = 0, m = 0;
  for (std::size_t i = 3; i < header.size(); ++i) {
    if (header[i] == "x" + std::to_string(n + 1) && m == 0) {
      ++n;
    } else if (header[i] == "u" + std::to_string(m + 1)) {
      ++m;
    } else {
      throw IoError("dataset csv: unexpected column " + header[i]);
    }
  }
  require(n > 0, "dataset csv: no state columns");

  struct Row {
    int j, k;
    double t;
    std::vector<double> x, u;
    bool has_u;
  };
  std::vector<Row> rows;
  int max_j = -1, max_k = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() != header.size()) throw IoError("dataset csv: ragged row");
    Row r;
    r.j = std::stoi(f[0]);
    r.k = std::stoi(f[1]);
    r.t = std::stod(f[2]);
    for (int c = 0; c < n; ++c) r.x.push_back(std::stod(f[3 + c]));
    r.has_u = false;
    for (int c = 0; c < m; ++c) {
      const std::string& cell = f[3 + n + c];
      if (!cell.empty()) {
        r.u.push_back(std::stod(cell));
        r.has_u = true;
      }
    }
    if (r.has_u && static_cast<int>(r.u.size()) != m) throw IoError("dataset csv: partial input row");
    max_j = std::max(max_j, r.j);
    max_k = std::max(max_k, r.k);
    rows.push_back(std::move(r));
  }

  TrajectoryDataset ds;
  ds.n = n;
  ds.m = m;
  ds.Mt = max_j + 1;
  ds.Ms = max_k;
  require(ds.Mt >= 1 && ds.Ms >= 1, "dataset csv: too few rows");
  require(static_cast<Eigen::Index>(rows.size()) ==
              static_cast<Eigen::Index>(ds.Mt) * (ds.Ms + 1),
          "dataset csv: row count does not match a full grid");
  ds.states.resize(n, static_cast<Eigen::Index>(ds.Mt) * (ds.Ms + 1));
  if (m > 0) ds.inputs.resize(m, static_cast<Eigen::Index>(ds.Mt) * ds.Ms);

  double ts = 0.0;
  for (const Row& r : rows) {
    require(r.j >= 0 && r.j < ds.Mt && r.k >= 0 && r.k <= ds.Ms, "dataset csv: index out of range");
    for (int c = 0; c < n; ++c) ds.states(c, ds.col(r.j, r.k)) = r.x[static_cast<std::size_t>(c)];
    if (r.k == 1 && ts == 0.0) ts = r.t;
    if (m > 0) {
      if (r.k < ds.Ms) {
        if (!r.has_u) throw IoError("dataset csv: missing input fields before final sample");
        for (int c = 0; c < m; ++c)
          ds.inputs(c, static_cast<Eigen::Index>(r.j) * ds.Ms + r.k) = r.u[static_cast<std::size_t>(c)];
      } else if (r.has_u) {
        throw IoError("dataset csv: input fields present on a final sample");
      }
    }
  }
  require(ts > 0.0, "dataset csv: cannot infer Ts");
  ds.Ts = ts;
  ds.validate();
  return ds;
}

}  // namespace koopman
