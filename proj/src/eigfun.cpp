#include "koopman/eigfun.hpp"

#include "koopman/io.hpp"
#include "koopman/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <unordered_map>

namespace koopman {

namespace {

constexpr double kGrowthGuard = 300.0;  // max Re(lambda) * Ms * Ts before overflow

void check_growth(const Complex& lambda, int Ms, double Ts) {
  if (lambda.real() * Ms * Ts > kGrowthGuard) {
    throw NumericalError("propagation overflow: eigenvalue " + format_complex(lambda) +
                         " grows past exp(300) over the data window");
  }
}

double tps(double r) { return r > 0.0 ? r * r * std::log(r) : 0.0; }

// Distinct columns within an absolute tolerance scaled to the cloud extent,
// via a hash grid (general dimension).
std::vector<int> dedup_columns(const RMat& pts) {
  const Eigen::Index n = pts.rows(), P = pts.cols();
  const RVec lo = pts.rowwise().minCoeff();
  const RVec hi = pts.rowwise().maxCoeff();
  const double tol = 1e-12 * std::max(1.0, (hi - lo).lpNorm<Eigen::Infinity>());
  std::unordered_map<std::int64_t, std::vector<int>> cells;
  std::vector<int> kept;
  const auto key_of = [&](const RVec& x, const std::vector<int>& shift) {
    std::int64_t key = 1469598103934665603LL;
    for (Eigen::Index a = 0; a < n; ++a) {
      const auto ia = static_cast<std::int64_t>(std::floor(x(a) / tol)) +
                      shift[static_cast<std::size_t>(a)];
      key = (key ^ ia) * 1099511628211LL;
    }
    return key;
  };
  std::vector<int> shift(static_cast<std::size_t>(n), 0);
  for (Eigen::Index c = 0; c < P; ++c) {
    const RVec x = pts.col(c);
    bool dup = false;
    // Enumerate the 3^n neighbor cells.
    const auto total = static_cast<long>(std::pow(3.0, static_cast<double>(n)));
    for (long e = 0; e < total && !dup; ++e) {
      long rem = e;
      for (Eigen::Index a = 0; a < n; ++a) {
        shift[static_cast<std::size_t>(a)] = static_cast<int>(rem % 3) - 1;
        rem /= 3;
      }
      const auto it = cells.find(key_of(x, shift));
      if (it == cells.end()) continue;
      for (const int k : it->second) {
        if ((pts.col(kept[static_cast<std::size_t>(k)]) - x).lpNorm<Eigen::Infinity>() <= tol) {
          dup = true;
          break;
        }
      }
    }
    if (dup) continue;
    std::fill(shift.begin(), shift.end(), 0);
    cells[key_of(x, shift)].push_back(static_cast<int>(kept.size()));
    kept.push_back(static_cast<int>(c));
  }
  return kept;
}

// Greedy farthest-point subset of up to cap columns, seeded at column 0.
std::vector<int> farthest_point_subset(const RMat& pts, int cap) {
  const int P = static_cast<int>(pts.cols());
  if (P <= cap) {
    std::vector<int> all(static_cast<std::size_t>(P));
    for (int i = 0; i < P; ++i) all[static_cast<std::size_t>(i)] = i;
    return all;
  }
  std::vector<int> chosen{0};
  RVec dist(P);
  for (int i = 0; i < P; ++i) dist(i) = (pts.col(i) - pts.col(0)).squaredNorm();
  while (static_cast<int>(chosen.size()) < cap) {
    int far = 0;
    dist.maxCoeff(&far);
    if (dist(far) <= 0.0) break;
    chosen.push_back(far);
    for (int i = 0; i < P; ++i)
      dist(i) = std::min(dist(i), (pts.col(i) - pts.col(far)).squaredNorm());
  }
  std::sort(chosen.begin(), chosen.end());
  return chosen;
}

RMat dataset_states(const TrajectoryDataset& ds) { return ds.states; }

// Radial design matrix: one row per point, one column per center.
RMat radial_design(const RMat& points, const RMat& centers) {
  const int P = static_cast<int>(points.cols());
  const int K = static_cast<int>(centers.cols());
  RMat Phi(P, K);
  for (int i = 0; i < P; ++i)
    for (int k = 0; k < K; ++k) Phi(i, k) = tps((points.col(i) - centers.col(k)).norm());
  return Phi;
}

RMat affine_design(const RMat& points) {
  const int P = static_cast<int>(points.cols());
  const int n = static_cast<int>(points.rows());
  RMat A(P, n + 1);
  A.col(0).setOnes();
  A.rightCols(n) = points.transpose();
  return A;
}

// Affine part first (exact on affine data), radial ridge on the remainder.
CMat rbf_fit_columns(const ExtensionGeometry& geo, const CMat& W, double delta2) {
  const RMat Aff = affine_design(geo.points);
  const RMat Phi = radial_design(geo.points, geo.centers);
  const CMat c_aff = pinv_solve(Aff.cast<Complex>().eval(), W);
  const CMat resid = W - Aff.cast<Complex>() * c_aff;
  const CMat c_rad = ridge_solve(Phi.cast<Complex>().eval(), resid, delta2);
  CMat coeffs(c_rad.rows() + c_aff.rows(), W.cols());
  coeffs.topRows(c_rad.rows()) = c_rad;
  coeffs.bottomRows(c_aff.rows()) = c_aff;
  return coeffs;
}

}  // namespace

std::string to_string(ExtensionKind k) {
  switch (k) {
    case ExtensionKind::TriangulatedLinear: return "triangulated-linear";
    case ExtensionKind::RbfRidge: return "rbf-ridge";
    case ExtensionKind::NearestNeighbor: return "nearest-neighbor";
  }
  return "unknown";
}

ExtensionKind extension_kind_from_string(const std::string& s) {
  if (s == "triangulated-linear") return ExtensionKind::TriangulatedLinear;
  if (s == "rbf-ridge") return ExtensionKind::RbfRidge;
  if (s == "nearest-neighbor") return ExtensionKind::NearestNeighbor;
  throw ConfigError("unknown extension kind: " + s);
}

std::shared_ptr<const ExtensionGeometry> build_extension_geometry(
    const TrajectoryDataset& ds, ExtensionKind& kind, std::vector<std::string>* warnings) {
  const RMat pts = dataset_states(ds);
  require(pts.cols() > 0, "extension geometry: empty dataset");
  require_finite(pts, "extension points");

  auto geo = std::make_shared<ExtensionGeometry>();
  if (kind == ExtensionKind::TriangulatedLinear) {
    if (ds.n != 2)
      throw ConfigError("triangulated-linear extension requires a 2-d state space");
    geo->tri = Triangulation::build(pts, &geo->sample_of);
    if (geo->tri.degenerate()) {
      if (warnings)
        warnings->push_back(
            "triangulated-linear: sample states are collinear; falling back to rbf-ridge");
      kind = ExtensionKind::RbfRidge;
      geo->tri = Triangulation();
      geo->sample_of.clear();
    } else {
      geo->points = geo->tri.vertices();
    }
  }
  if (geo->sample_of.empty()) {
    geo->sample_of = dedup_columns(pts);
    geo->points.resize(pts.rows(), static_cast<Eigen::Index>(geo->sample_of.size()));
    for (std::size_t i = 0; i < geo->sample_of.size(); ++i)
      geo->points.col(static_cast<Eigen::Index>(i)) =
          pts.col(geo->sample_of[static_cast<std::size_t>(i)]);
  }
  geo->nn = NnIndex::build(geo->points);
  if (kind == ExtensionKind::RbfRidge) {
    const std::vector<int> subset = farthest_point_subset(geo->points, 2000);
    geo->centers.resize(geo->points.rows(), static_cast<Eigen::Index>(subset.size()));
    for (std::size_t i = 0; i < subset.size(); ++i)
      geo->centers.col(static_cast<Eigen::Index>(i)) =
          geo->points.col(subset[static_cast<std::size_t>(i)]);
  }
  geo->bbox_lo = geo->points.rowwise().minCoeff();
  geo->bbox_hi = geo->points.rowwise().maxCoeff();
  return geo;
}

Complex ExtensionModel::evaluate(const RVec& x, int* tri_hint, bool* outside) const {
  require(fitted(), "ExtensionModel::evaluate before fit");
  if (outside) *outside = false;
  switch (kind) {
    case ExtensionKind::TriangulatedLinear: {
      std::array<double, 3> bary{};
      int local_hint = tri_hint ? *tri_hint : 0;
      const int t = geometry->tri.locate(x(0), x(1), bary, local_hint);
      if (t >= 0) {
        if (tri_hint) *tri_hint = t;
        const auto& v = geometry->tri.triangles()[static_cast<std::size_t>(t)];
        return bary[0] * point_values(v[0]) + bary[1] * point_values(v[1]) +
               bary[2] * point_values(v[2]);
      }
      if (outside) *outside = true;
      return point_values(geometry->nn.nearest(x));
    }
    case ExtensionKind::NearestNeighbor:
      return point_values(geometry->nn.nearest(x));
    case ExtensionKind::RbfRidge: {
      const int K = static_cast<int>(geometry->centers.cols());
      const int n = static_cast<int>(geometry->points.rows());
      Complex acc = coeffs(K);
      for (int a = 0; a < n; ++a) acc += coeffs(K + 1 + a) * x(a);
      for (int k = 0; k < K; ++k) acc += coeffs(k) * tps((x - geometry->centers.col(k)).norm());
      return acc;
    }
  }
  throw ConfigError("ExtensionModel: unknown kind");
}

ExtensionModel fit_extension_on(std::shared_ptr<const ExtensionGeometry> geometry,
                                ExtensionKind kind, const CVec& row_values, double delta2) {
  require(geometry != nullptr, "fit_extension_on: null geometry");
  require_finite(row_values, "extension row values");
  ExtensionModel model;
  model.kind = kind;
  model.geometry = geometry;
  model.delta2 = delta2;
  const auto P = static_cast<Eigen::Index>(geometry->sample_of.size());
  if (kind == ExtensionKind::RbfRidge) {
    CMat W(P, 1);
    for (Eigen::Index i = 0; i < P; ++i)
      W(i, 0) = row_values(geometry->sample_of[static_cast<std::size_t>(i)]);
    model.coeffs = rbf_fit_columns(*geometry, W, delta2).col(0);
  } else {
    model.point_values.resize(P);
    for (Eigen::Index i = 0; i < P; ++i)
      model.point_values(i) = row_values(geometry->sample_of[static_cast<std::size_t>(i)]);
  }
  return model;
}

ExtensionModel fit_extension(const TrajectoryDataset& ds, const CVec& row_values,
                             ExtensionKind kind, double delta1, double delta2,
                             std::vector<std::string>* warnings) {
  if (delta1 != 0.0) throw ConfigError("fit_extension: the sparsity weight delta1 must be 0");
  require(row_values.size() == ds.states.cols(),
          "fit_extension: row length must match the dataset sample count");
  ExtensionKind effective = kind;
  auto geo = build_extension_geometry(ds, effective, warnings);
  return fit_extension_on(std::move(geo), effective, row_values, delta2);
}

void EigenfunctionSet::validate() const {
  const int N = size();
  require(values.rows() == N, "EigenfunctionSet: values row count mismatch");
  require(values.cols() == static_cast<Eigen::Index>(Mt) * (Ms + 1),
          "EigenfunctionSet: values column count mismatch");
  require(static_cast<int>(products.size()) == N, "EigenfunctionSet: products size mismatch");
  require(static_cast<int>(extensions.size()) == N, "EigenfunctionSet: extensions size mismatch");
  int block_rows = 0;
  for (const auto& b : blocks) block_rows += b.size;
  require(block_rows == N, "EigenfunctionSet: block sizes must sum to the row count");
  require(partition.total() <= N, "EigenfunctionSet: partition exceeds row count");
  require_finite(values, "eigenfunction values");
  for (int r = 0; r < N; ++r) {
    for (const int b : products[static_cast<std::size_t>(r)].indices) {
      require(b >= 0 && b < N && !is_product(b),
              "EigenfunctionSet: product rows must reference primitive rows");
    }
  }
}

CVec EigenfunctionSet::evaluate(const RVec& x, int* tri_hint, int* outside_count) const {
  const int N = size();
  CVec out(N);

  // Per-geometry caches so one query locates / searches once.
  struct GeoCache {
    const ExtensionGeometry* geo = nullptr;
    int tri_index = -2;  // -2: not located yet
    std::array<double, 3> bary{};
    int nn_index = -1;
    RVec radial;  // tps basis at x (rbf)
    bool counted_outside = false;
  };
  std::vector<GeoCache> caches;
  caches.reserve(4);
  const auto cache_for = [&](const ExtensionGeometry* g) -> GeoCache& {
    for (auto& c : caches)
      if (c.geo == g) return c;
    caches.push_back({});
    caches.back().geo = g;
    return caches.back();
  };

  for (int r = 0; r < N; ++r) {
    if (is_product(r)) continue;
    const ExtensionModel& m = extensions[static_cast<std::size_t>(r)];
    require(m.fitted(), "EigenfunctionSet::evaluate before fit_extensions");
    GeoCache& c = cache_for(m.geometry.get());
    switch (m.kind) {
      case ExtensionKind::TriangulatedLinear: {
        if (c.tri_index == -2) {
          const int hint = tri_hint ? *tri_hint : 0;
          c.tri_index = c.geo->tri.locate(x(0), x(1), c.bary, hint);
          if (c.tri_index >= 0 && tri_hint) *tri_hint = c.tri_index;
          if (c.tri_index < 0) {
            c.nn_index = c.geo->nn.nearest(x);
            if (outside_count && !c.counted_outside) {
              ++*outside_count;
              c.counted_outside = true;
            }
          }
        }
        if (c.tri_index >= 0) {
          const auto& v = c.geo->tri.triangles()[static_cast<std::size_t>(c.tri_index)];
          out(r) = c.bary[0] * m.point_values(v[0]) + c.bary[1] * m.point_values(v[1]) +
                   c.bary[2] * m.point_values(v[2]);
        } else {
          out(r) = m.point_values(c.nn_index);
        }
        break;
      }
      case ExtensionKind::NearestNeighbor: {
        if (c.nn_index < 0) c.nn_index = c.geo->nn.nearest(x);
        out(r) = m.point_values(c.nn_index);
        break;
      }
      case ExtensionKind::RbfRidge: {
        const int K = static_cast<int>(c.geo->centers.cols());
        if (c.radial.size() == 0) {
          c.radial.resize(K);
          for (int k = 0; k < K; ++k) c.radial(k) = tps((x - c.geo->centers.col(k)).norm());
        }
        const int n = static_cast<int>(c.geo->points.rows());
        Complex acc = m.coeffs(K);
        for (int a = 0; a < n; ++a) acc += m.coeffs(K + 1 + a) * x(a);
        for (int k = 0; k < K; ++k) acc += m.coeffs(k) * c.radial(k);
        out(r) = acc;
        break;
      }
    }
  }

  for (int r = 0; r < N; ++r) {
    if (!is_product(r)) continue;
    const ProductSpec& p = products[static_cast<std::size_t>(r)];
    Complex acc(1.0, 0.0);
    for (std::size_t t = 0; t < p.indices.size(); ++t) {
      const Complex base = out(p.indices[t]);
      const double pw = p.powers[t];
      const double rounded = std::round(pw);
      if (std::abs(pw - rounded) <= 1e-12) {
        for (int rep = 0; rep < static_cast<int>(rounded); ++rep) acc *= base;
      } else {
        acc *= std::pow(base, pw);
      }
    }
    out(r) = acc;
  }
  return out;
}

CMat EigenfunctionSet::evaluate_many(const RMat& states, int* outside_count) const {
  require(states.rows() > 0, "evaluate_many: empty states");
  CMat out(size(), states.cols());
  int hint = 0;
  for (Eigen::Index s = 0; s < states.cols(); ++s)
    out.col(s) = evaluate(states.col(s), &hint, outside_count);
  return out;
}

EigenfunctionSet propagate_values(const BoundaryMatrix& bm, double Ts, int Ms) {
  require(Ms >= 0 && Ts > 0.0, "propagate_values: need Ms >= 0 and Ts > 0");
  require_finite(bm.G, "boundary matrix");
  const int N = static_cast<int>(bm.G.rows());
  const int Mt = static_cast<int>(bm.G.cols());
  require(bm.lambdas.size() == N, "propagate_values: eigenvalue count mismatch");

  EigenfunctionSet set;
  set.eigenvalues = bm.lambdas;
  set.partition = bm.partition;
  set.Ts = Ts;
  set.Mt = Mt;
  set.Ms = Ms;
  set.values.resize(N, static_cast<Eigen::Index>(Mt) * (Ms + 1));
  set.blocks.reserve(static_cast<std::size_t>(N));
  set.products.assign(static_cast<std::size_t>(N), {});
  set.extensions.assign(static_cast<std::size_t>(N), {});
  for (int i = 0; i < N; ++i) {
    check_growth(bm.lambdas(i), Ms, Ts);
    set.blocks.push_back(JordanBlock{bm.lambdas(i), 1});
    const Complex ratio = std::exp(bm.lambdas(i) * Ts);
    for (int j = 0; j < Mt; ++j) {
      Complex v = bm.G(i, j);
      Eigen::Index col = static_cast<Eigen::Index>(j) * (Ms + 1);
      set.values(i, col) = v;
      for (int k = 1; k <= Ms; ++k) {
        v *= ratio;
        set.values(i, col + k) = v;
      }
    }
  }
  return set;
}

CMat propagate_generalized(const JordanBlock& J, const CMat& Gblock, double Ts, int Ms) {
  require(J.size >= 1, "propagate_generalized: block size must be >= 1");
  require(Gblock.rows() == J.size, "propagate_generalized: Gblock rows must equal block size");
  require(Ms >= 0 && Ts > 0.0, "propagate_generalized: need Ms >= 0 and Ts > 0");
  require_finite(Gblock, "generalized boundary block");
  check_growth(J.lambda, Ms, Ts);

  const int sz = J.size;
  const int Mt = static_cast<int>(Gblock.cols());
  const CMat E = jordan_exp(J, Ts);
  CMat out(sz, static_cast<Eigen::Index>(Mt) * (Ms + 1));
  for (int j = 0; j < Mt; ++j) {
    CVec v = Gblock.col(j);
    const Eigen::Index col = static_cast<Eigen::Index>(j) * (Ms + 1);
    out.col(col) = v;
    for (int k = 1; k <= Ms; ++k) {
      v = (E * v).eval();
      out.col(col + k) = v;
    }
  }
  return out;
}

EigenfunctionSet propagate_blocks(const std::vector<JordanBlock>& blocks, const CMat& Gstack,
                                  const OutputPartition& partition, double Ts, int Ms) {
  int total = 0;
  for (const auto& b : blocks) total += b.size;
  require(total == Gstack.rows(), "propagate_blocks: block sizes must sum to Gstack rows");

  EigenfunctionSet set;
  set.blocks = blocks;
  set.partition = partition;
  set.Ts = Ts;
  set.Mt = static_cast<int>(Gstack.cols());
  set.Ms = Ms;
  set.eigenvalues.resize(total);
  set.values.resize(total, static_cast<Eigen::Index>(set.Mt) * (Ms + 1));
  set.products.assign(static_cast<std::size_t>(total), {});
  set.extensions.assign(static_cast<std::size_t>(total), {});
  int row = 0;
  for (const auto& b : blocks) {
    const CMat vals = propagate_generalized(b, Gstack.middleRows(row, b.size), Ts, Ms);
    set.values.middleRows(row, b.size) = vals;
    for (int i = 0; i < b.size; ++i) set.eigenvalues(row + i) = b.lambda;
    row += b.size;
  }
  return set;
}

ProductRow product_eigenfunction(const EigenfunctionSet& set, const std::vector<int>& indices,
                                 const std::vector<double>& powers) {
  require(!indices.empty(), "product_eigenfunction: empty index list");
  require(indices.size() == powers.size(), "product_eigenfunction: indices/powers length mismatch");

  ProductRow out;
  out.lambda = Complex(0, 0);
  out.values = CVec::Ones(set.values.cols());
  for (std::size_t t = 0; t < indices.size(); ++t) {
    const int idx = indices[t];
    require(idx >= 0 && idx < set.size(), "product_eigenfunction: index out of range");
    require(!set.is_product(idx), "product_eigenfunction: bases must be primitive rows");
    const double pw = powers[t];
    require(pw >= 0.0, "product_eigenfunction: powers must be nonnegative");
    out.lambda += pw * set.eigenvalues(idx);

    const double rounded = std::round(pw);
    const bool integral = std::abs(pw - rounded) <= 1e-12;
    const auto row = set.values.row(idx);
    if (integral) {
      for (int rep = 0; rep < static_cast<int>(rounded); ++rep)
        out.values.array() *= row.transpose().array();
    } else {
      // Fractional powers are only defined unambiguously away from the
      // branch cut; demand strictly positive real base values.
      for (Eigen::Index c = 0; c < row.size(); ++c) {
        const Complex v = row(c);
        if (v == Complex(0, 0))
          throw NumericalError("product_eigenfunction: zero base value under fractional power");
        if (std::abs(v.imag()) > 1e-14 * std::abs(v) || v.real() <= 0.0)
          throw NumericalError(
              "product_eigenfunction: fractional power of a non-positive-real value");
      }
      for (Eigen::Index c = 0; c < out.values.size(); ++c)
        out.values(c) *= std::pow(row(c).real(), pw);
    }
  }
  return out;
}

int append_product(EigenfunctionSet& set, const std::vector<int>& indices,
                   const std::vector<double>& powers) {
  const ProductRow pr = product_eigenfunction(set, indices, powers);
  const int row = set.size();
  set.values.conservativeResize(row + 1, Eigen::NoChange);
  set.values.row(row) = pr.values.transpose();
  set.eigenvalues.conservativeResize(row + 1);
  set.eigenvalues(row) = pr.lambda;
  set.blocks.push_back(JordanBlock{pr.lambda, 1});
  set.products.push_back(ProductSpec{indices, powers});
  set.extensions.push_back({});
  return row;
}

void fit_extensions(EigenfunctionSet& set, const TrajectoryDataset& ds, ExtensionKind kind,
                    double delta1, double delta2, std::vector<std::string>* warnings) {
  if (delta1 != 0.0) throw ConfigError("fit_extensions: the sparsity weight delta1 must be 0");
  require(set.values.cols() == ds.states.cols(),
          "fit_extensions: dataset does not match the value matrix");
  set.validate();

  ExtensionKind effective = kind;
  auto geo = build_extension_geometry(ds, effective, warnings);

  if (effective == ExtensionKind::RbfRidge) {
    // One design factorization for every primitive row.
    std::vector<int> rows;
    for (int r = 0; r < set.size(); ++r)
      if (!set.is_product(r)) rows.push_back(r);
    const auto P = static_cast<Eigen::Index>(geo->sample_of.size());
    CMat W(P, static_cast<Eigen::Index>(rows.size()));
    for (std::size_t c = 0; c < rows.size(); ++c)
      for (Eigen::Index i = 0; i < P; ++i)
        W(i, static_cast<Eigen::Index>(c)) =
            set.values(rows[c], geo->sample_of[static_cast<std::size_t>(i)]);
    const CMat coeffs = rbf_fit_columns(*geo, W, delta2);
    for (std::size_t c = 0; c < rows.size(); ++c) {
      ExtensionModel& m = set.extensions[static_cast<std::size_t>(rows[c])];
      m.kind = effective;
      m.geometry = geo;
      m.delta2 = delta2;
      m.coeffs = coeffs.col(static_cast<Eigen::Index>(c));
    }
    return;
  }

  for (int r = 0; r < set.size(); ++r) {
    if (set.is_product(r)) continue;
    set.extensions[static_cast<std::size_t>(r)] =
        fit_extension_on(geo, effective, set.values.row(r).transpose(), delta2);
  }
}

}  // namespace koopman
