#include "koopman/serialize.hpp"

#include "koopman/io.hpp"

#include "json.hpp"

#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

namespace koopman {
namespace {

using nlohmann::json;

constexpr int kFormatVersion = 1;

json dump_rmat(const RMat& m) {
  std::vector<double> data;
  data.reserve(static_cast<std::size_t>(m.size()));
  for (Eigen::Index c = 0; c < m.cols(); ++c)
    for (Eigen::Index r = 0; r < m.rows(); ++r) data.push_back(m(r, c));
  return json{{"rows", m.rows()}, {"cols", m.cols()}, {"data", std::move(data)}};
}

json dump_cmat(const CMat& m) {
  std::vector<double> re, im;
  re.reserve(static_cast<std::size_t>(m.size()));
  im.reserve(static_cast<std::size_t>(m.size()));
  for (Eigen::Index c = 0; c < m.cols(); ++c)
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      re.push_back(m(r, c).real());
      im.push_back(m(r, c).imag());
    }
  return json{{"rows", m.rows()}, {"cols", m.cols()}, {"re", std::move(re)},
              {"im", std::move(im)}};
}

json dump_cvec(const CVec& v) { return dump_cmat(v); }

RMat load_rmat(const json& j, const std::string& where) {
  const auto rows = j.at("rows").get<Eigen::Index>();
  const auto cols = j.at("cols").get<Eigen::Index>();
  const auto data = j.at("data").get<std::vector<double>>();
  if (rows < 0 || cols < 0 || static_cast<Eigen::Index>(data.size()) != rows * cols)
    throw ConfigError("model json: " + where + " has inconsistent dimensions");
  RMat m(rows, cols);
  std::size_t k = 0;
  for (Eigen::Index c = 0; c < cols; ++c)
    for (Eigen::Index r = 0; r < rows; ++r) m(r, c) = data[k++];
  return m;
}

CMat load_cmat(const json& j, const std::string& where) {
  const auto rows = j.at("rows").get<Eigen::Index>();
  const auto cols = j.at("cols").get<Eigen::Index>();
  const auto re = j.at("re").get<std::vector<double>>();
  const auto im = j.at("im").get<std::vector<double>>();
  if (rows < 0 || cols < 0 || re.size() != im.size() ||
      static_cast<Eigen::Index>(re.size()) != rows * cols)
    throw ConfigError("model json: " + where + " has inconsistent dimensions");
  CMat m(rows, cols);
  std::size_t k = 0;
  for (Eigen::Index c = 0; c < cols; ++c)
    for (Eigen::Index r = 0; r < rows; ++r, ++k) m(r, c) = Complex(re[k], im[k]);
  return m;
}

CVec load_cvec(const json& j, const std::string& where) {
  const CMat m = load_cmat(j, where);
  if (m.cols() > 1) throw ConfigError("model json: " + where + " must be a column");
  CVec v(m.rows());
  if (m.cols() == 1) v = m.col(0);
  return v;
}

json dump_geometry(const ExtensionGeometry& g) {
  json j;
  j["points"] = dump_rmat(g.points);
  j["sample_of"] = g.sample_of;
  j["triangulated"] = !g.tri.triangles().empty();
  j["centers"] = dump_rmat(g.centers);
  return j;
}

std::shared_ptr<const ExtensionGeometry> load_geometry(const json& j) {
  auto g = std::make_shared<ExtensionGeometry>();
  g->points = load_rmat(j.at("points"), "geometry points");
  if (g->points.cols() < 1) throw ConfigError("model json: geometry has no points");
  g->sample_of = j.at("sample_of").get<std::vector<int>>();
  if (static_cast<Eigen::Index>(g->sample_of.size()) != g->points.cols())
    throw ConfigError("model json: geometry sample map length mismatch");
  if (j.at("triangulated").get<bool>()) {
    // Stored points are already distinct, so the rebuild keeps every column
    // in order and reproduces the saved connectivity deterministically.
    std::vector<int> kept;
    g->tri = Triangulation::build(g->points, &kept);
    if (g->tri.degenerate() || static_cast<Eigen::Index>(kept.size()) != g->points.cols())
      throw NumericalError("model json: stored points no longer triangulate");
  }
  g->nn = NnIndex::build(g->points);
  g->centers = load_rmat(j.at("centers"), "geometry centers");
  if (g->centers.size() > 0 && g->centers.rows() != g->points.rows())
    throw ConfigError("model json: geometry center dimension mismatch");
  g->bbox_lo = g->points.rowwise().minCoeff();
  g->bbox_hi = g->points.rowwise().maxCoeff();
  return g;
}

json set_to_json_obj(const EigenfunctionSet& set) {
  set.validate();
  json j;
  j["format"] = "koopman-eigenfunction-set";
  j["version"] = kFormatVersion;
  j["ts"] = set.Ts;
  j["mt"] = set.Mt;
  j["ms"] = set.Ms;
  j["eigenvalues"] = dump_cvec(set.eigenvalues);

  json blocks = json::array();
  for (const auto& b : set.blocks)
    blocks.push_back(json{{"re", b.lambda.real()}, {"im", b.lambda.imag()}, {"size", b.size}});
  j["blocks"] = std::move(blocks);

  j["partition"] = json{{"n_h", set.partition.n_h}, {"counts", set.partition.Ni}};
  j["values"] = dump_cmat(set.values);

  json products = json::array();
  for (const auto& p : set.products)
    products.push_back(json{{"indices", p.indices}, {"powers", p.powers}});
  j["products"] = std::move(products);

  // Geometries are shared between rows; store each once, reference by index.
  std::map<const ExtensionGeometry*, int> geo_index;
  json geometries = json::array();
  json extensions = json::array();
  for (const auto& m : set.extensions) {
    if (!m.fitted()) {
      extensions.push_back(nullptr);
      continue;
    }
    const ExtensionGeometry* geo = m.geometry.get();
    auto it = geo_index.find(geo);
    if (it == geo_index.end()) {
      it = geo_index.emplace(geo, static_cast<int>(geometries.size())).first;
      geometries.push_back(dump_geometry(*geo));
    }
    json e;
    e["kind"] = to_string(m.kind);
    e["geometry"] = it->second;
    e["delta2"] = m.delta2;
    // Triangulated / nearest rows read their point values straight off the
    // value matrix through sample_of, so only rbf coefficients are stored.
    if (m.kind == ExtensionKind::RbfRidge) e["coeffs"] = dump_cvec(m.coeffs);
    extensions.push_back(std::move(e));
  }
  j["geometries"] = std::move(geometries);
  j["extensions"] = std::move(extensions);
  return j;
}

EigenfunctionSet set_from_json_obj(const json& j) {
  if (j.at("format").get<std::string>() != "koopman-eigenfunction-set")
    throw ConfigError("model json: unexpected format tag '" +
                      j.at("format").get<std::string>() + "'");
  if (j.at("version").get<int>() != kFormatVersion)
    throw ConfigError("model json: unsupported version " +
                      std::to_string(j.at("version").get<int>()));

  EigenfunctionSet set;
  set.Ts = j.at("ts").get<double>();
  set.Mt = j.at("mt").get<int>();
  set.Ms = j.at("ms").get<int>();
  set.eigenvalues = load_cvec(j.at("eigenvalues"), "eigenvalues");

  for (const auto& b : j.at("blocks")) {
    JordanBlock block;
    block.lambda = Complex(b.at("re").get<double>(), b.at("im").get<double>());
    block.size = b.at("size").get<int>();
    set.blocks.push_back(block);
  }

  set.partition.n_h = j.at("partition").at("n_h").get<int>();
  set.partition.Ni = j.at("partition").at("counts").get<std::vector<int>>();
  set.values = load_cmat(j.at("values"), "values");

  for (const auto& p : j.at("products")) {
    ProductSpec spec;
    spec.indices = p.at("indices").get<std::vector<int>>();
    spec.powers = p.at("powers").get<std::vector<double>>();
    set.products.push_back(std::move(spec));
  }

  std::vector<std::shared_ptr<const ExtensionGeometry>> geometries;
  for (const auto& g : j.at("geometries")) geometries.push_back(load_geometry(g));

  const auto& exts = j.at("extensions");
  if (static_cast<Eigen::Index>(exts.size()) != set.eigenvalues.size())
    throw ConfigError("model json: extension count does not match the row count");
  Eigen::Index row = 0;
  for (const auto& e : exts) {
    ExtensionModel m;
    if (!e.is_null()) {
      m.kind = extension_kind_from_string(e.at("kind").get<std::string>());
      const int gi = e.at("geometry").get<int>();
      if (gi < 0 || gi >= static_cast<int>(geometries.size()))
        throw ConfigError("model json: extension references a missing geometry");
      m.geometry = geometries[static_cast<std::size_t>(gi)];
      m.delta2 = e.at("delta2").get<double>();
      if (m.kind == ExtensionKind::RbfRidge) {
        m.coeffs = load_cvec(e.at("coeffs"), "rbf coefficients");
        const Eigen::Index want = m.geometry->centers.cols() + 1 + m.geometry->points.rows();
        if (m.coeffs.size() != want)
          throw ConfigError("model json: rbf coefficient length mismatch");
        if (!m.geometry->tri.triangles().empty())
          throw ConfigError("model json: rbf extension tied to a triangulated geometry");
      } else {
        if (m.kind == ExtensionKind::TriangulatedLinear && m.geometry->tri.triangles().empty())
          throw ConfigError("model json: triangulated extension lacks a triangulation");
        m.point_values.resize(static_cast<Eigen::Index>(m.geometry->sample_of.size()));
        for (Eigen::Index i = 0; i < m.point_values.size(); ++i) {
          const int col = m.geometry->sample_of[static_cast<std::size_t>(i)];
          if (col < 0 || col >= set.values.cols())
            throw ConfigError("model json: geometry sample map exceeds the value matrix");
          m.point_values(i) = set.values(row, col);
        }
      }
    }
    set.extensions.push_back(std::move(m));
    ++row;
  }

  set.validate();
  return set;
}

json parse_document(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("model json: ") + e.what());
  }
}

}  // namespace

std::string to_json(const EigenfunctionSet& set) { return set_to_json_obj(set).dump(); }

EigenfunctionSet eigenfunction_set_from_json(const std::string& text) {
  const json j = parse_document(text);
  try {
    return set_from_json_obj(j);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("model json: ") + e.what());
  }
}

std::string to_json(const LinearPredictor& pred) {
  pred.validate();
  json j;
  j["format"] = "koopman-predictor";
  j["version"] = kFormatVersion;
  j["ts"] = pred.Ts;
  j["lambdas"] = dump_cvec(pred.lambdas);
  j["b"] = dump_cmat(pred.B);
  j["c"] = dump_cmat(pred.C);
  j["ad"] = dump_cvec(pred.ad);
  j["bd"] = dump_cmat(pred.Bd);
  j["realness_checked"] = pred.realness_checked;
  j["lift"] = pred.lift ? set_to_json_obj(*pred.lift) : json(nullptr);
  return j.dump();
}

LinearPredictor predictor_from_json(const std::string& text) {
  const json j = parse_document(text);
  LinearPredictor pred;
  try {
    if (j.at("format").get<std::string>() != "koopman-predictor")
      throw ConfigError("model json: unexpected format tag '" +
                        j.at("format").get<std::string>() + "'");
    if (j.at("version").get<int>() != kFormatVersion)
      throw ConfigError("model json: unsupported version " +
                        std::to_string(j.at("version").get<int>()));
    pred.Ts = j.at("ts").get<double>();
    pred.lambdas = load_cvec(j.at("lambdas"), "lambdas");
    pred.B = load_cmat(j.at("b"), "B");
    pred.C = load_cmat(j.at("c"), "C");
    pred.ad = load_cvec(j.at("ad"), "ad");
    pred.Bd = load_cmat(j.at("bd"), "Bd");
    pred.realness_checked = j.at("realness_checked").get<bool>();
    if (!j.at("lift").is_null())
      pred.lift = std::make_shared<EigenfunctionSet>(set_from_json_obj(j.at("lift")));
  } catch (const json::exception& e) {
    throw ConfigError(std::string("model json: ") + e.what());
  }
  pred.validate();
  return pred;
}

void save_predictor(const std::string& path, const LinearPredictor& pred) {
  write_text_file(path, to_json(pred));
}

LinearPredictor load_predictor(const std::string& path) {
  return predictor_from_json(read_text_file(path));
}

}  // namespace koopman
