#include "koopman/delaunay.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <unordered_map>

namespace koopman {

namespace {

// Signed twice-area of (a, b, c); positive for counter-clockwise.
double orient(double ax, double ay, double bx, double by, double cx, double cy) {
  return (bx - ax) * (cy - ay) - (by - ay) * (cx - ax);
}

struct BuildTri {
  std::array<int, 3> v;
  std::array<int, 3> adj;  // neighbor across edge opposite v[i]; -1 = none
  bool alive = true;
  int stamp = -1;          // insertion id of the last cavity test
  bool bad = false;
};

}  // namespace

class TriangulationBuilder {
 public:
  RMat pts;  // 2 x (V + 3), super-triangle vertices appended
  int V = 0;
  std::vector<BuildTri> tris;
  int cursor = 0;  // walk hint
  int stamp = 0;

  double px(int i) const { return pts(0, i); }
  double py(int i) const { return pts(1, i); }

  bool in_circle(const BuildTri& t, double qx, double qy) const {
    const double r1x = px(t.v[0]) - qx, r1y = py(t.v[0]) - qy;
    const double r2x = px(t.v[1]) - qx, r2y = py(t.v[1]) - qy;
    const double r3x = px(t.v[2]) - qx, r3y = py(t.v[2]) - qy;
    const double z1 = r1x * r1x + r1y * r1y;
    const double z2 = r2x * r2x + r2y * r2y;
    const double z3 = r3x * r3x + r3y * r3y;
    const double det = r1x * (r2y * z3 - r3y * z2) - r1y * (r2x * z3 - r3x * z2) +
                       z1 * (r2x * r3y - r3x * r2y);
    // Tie tolerance: cocircular configurations count as outside, which keeps
    // the cavity deterministic for grid-like inputs.
    const double scale = std::sqrt((r1x * r1x + r1y * r1y + z1 * z1) *
                                   (r2x * r2x + r2y * r2y + z2 * z2)) *
                         std::sqrt(r3x * r3x + r3y * r3y + z3 * z3);
    return det > 1e-12 * scale;
  }

  // Triangle containing point q, walking across edges. Always succeeds while
  // the super-triangle is present.
  int walk(double qx, double qy) const {
    int t = cursor;
    const int cap = static_cast<int>(tris.size()) * 2 + 16;
    for (int step = 0; step < cap; ++step) {
      const BuildTri& tri = tris[static_cast<std::size_t>(t)];
      int worst = -1;
      double worst_val = 0.0;
      for (int e = 0; e < 3; ++e) {
        const int a = tri.v[(e + 1) % 3], b = tri.v[(e + 2) % 3];
        const double o = orient(px(a), py(a), px(b), py(b), qx, qy);
        if (o < worst_val) {
          worst_val = o;
          worst = e;
        }
      }
      if (worst < 0) return t;
      const int next = tri.adj[static_cast<std::size_t>(worst)];
      if (next < 0) return t;  // clipped at the super-hull; treat as containing
      t = next;
    }
    // Pathological cycle (near-degenerate geometry): brute-force scan.
    for (int i = 0; i < static_cast<int>(tris.size()); ++i) {
      const BuildTri& tri = tris[static_cast<std::size_t>(i)];
      if (!tri.alive) continue;
      bool inside = true;
      for (int e = 0; e < 3 && inside; ++e) {
        const int a = tri.v[(e + 1) % 3], b = tri.v[(e + 2) % 3];
        inside = orient(px(a), py(a), px(b), py(b), qx, qy) >= 0.0;
      }
      if (inside) return i;
    }
    return cursor;
  }

  void insert(int p) {
    const double qx = px(p), qy = py(p);
    ++stamp;

    // Collect the cavity: triangles whose circumcircle contains p, grown by
    // adjacency from the containing triangle.
    std::vector<int> cavity;
    std::vector<int> queue{walk(qx, qy)};
    tris[static_cast<std::size_t>(queue[0])].stamp = stamp;
    while (!queue.empty()) {
      const int t = queue.back();
      queue.pop_back();
      BuildTri& tri = tris[static_cast<std::size_t>(t)];
      if (!tri.alive) continue;
      tri.bad = in_circle(tri, qx, qy) || cavity.empty();
      if (!tri.bad) continue;
      cavity.push_back(t);
      for (int e = 0; e < 3; ++e) {
        const int nb = tri.adj[static_cast<std::size_t>(e)];
        if (nb < 0) continue;
        BuildTri& nbt = tris[static_cast<std::size_t>(nb)];
        if (nbt.stamp == stamp) continue;
        nbt.stamp = stamp;
        queue.push_back(nb);
      }
    }

    // Boundary edges (a, b) of the cavity, ordered so (p, a, b) is CCW, with
    // the surviving neighbor across each edge.
    struct Rim {
      int a, b, outer;
    };
    std::vector<Rim> rim;
    for (const int t : cavity) {
      const BuildTri& tri = tris[static_cast<std::size_t>(t)];
      for (int e = 0; e < 3; ++e) {
        const int nb = tri.adj[static_cast<std::size_t>(e)];
        const bool nb_bad = nb >= 0 && tris[static_cast<std::size_t>(nb)].stamp == stamp &&
                            tris[static_cast<std::size_t>(nb)].bad;
        if (nb_bad) continue;
        rim.push_back({tri.v[(e + 1) % 3], tri.v[(e + 2) % 3], nb});
      }
    }
    for (const int t : cavity) tris[static_cast<std::size_t>(t)].alive = false;

    // Fan from p; sibling adjacency is matched through the rim vertices.
    std::unordered_map<int, int> tri_starting_at, tri_ending_at;
    std::vector<int> created;
    created.reserve(rim.size());
    for (const Rim& r : rim) {
      BuildTri nt;
      nt.v = {p, r.a, r.b};
      nt.adj = {r.outer, -1, -1};
      const int id = static_cast<int>(tris.size());
      if (r.outer >= 0) {
        BuildTri& out = tris[static_cast<std::size_t>(r.outer)];
        for (int e = 0; e < 3; ++e) {
          const int oa = out.v[(e + 1) % 3], ob = out.v[(e + 2) % 3];
          if ((oa == r.b && ob == r.a) || (oa == r.a && ob == r.b))
            out.adj[static_cast<std::size_t>(e)] = id;
        }
      }
      tris.push_back(nt);
      created.push_back(id);
      tri_starting_at[r.a] = id;
      tri_ending_at[r.b] = id;
    }
    for (std::size_t i = 0; i < rim.size(); ++i) {
      BuildTri& nt = tris[static_cast<std::size_t>(created[i])];
      nt.adj[1] = tri_starting_at.count(rim[i].b) ? tri_starting_at[rim[i].b] : -1;
      nt.adj[2] = tri_ending_at.count(rim[i].a) ? tri_ending_at[rim[i].a] : -1;
    }
    if (!created.empty()) cursor = created.back();
  }
};

Triangulation Triangulation::build(const RMat& points, std::vector<int>* kept_columns) {
  require(points.rows() == 2, "Triangulation: points must be 2 x P");
  require_finite(points, "triangulation points");
  const Eigen::Index P = points.cols();

  Triangulation out;
  if (kept_columns) kept_columns->clear();
  if (P == 0) return out;

  // Merge coincident points through a hash grid.
  const RVec lo = points.rowwise().minCoeff();
  const RVec hi = points.rowwise().maxCoeff();
  const double extent = std::max({hi(0) - lo(0), hi(1) - lo(1), 0.0});
  const double tol = 1e-12 * std::max(1.0, extent);
  std::unordered_map<std::int64_t, std::vector<int>> cells;
  std::vector<int> kept;
  kept.reserve(static_cast<std::size_t>(P));
  const auto key_of = [&](double x, double y, int dx, int dy) {
    const auto ix = static_cast<std::int64_t>(std::floor(x / tol)) + dx;
    const auto iy = static_cast<std::int64_t>(std::floor(y / tol)) + dy;
    return ix * 73856093 + iy * 19349663;
  };
  std::vector<int> vert_of;  // kept-vertex slot per original column, -1 = merged
  vert_of.assign(static_cast<std::size_t>(P), -1);
  for (Eigen::Index c = 0; c < P; ++c) {
    const double x = points(0, c), y = points(1, c);
    bool dup = false;
    for (int dx = -1; dx <= 1 && !dup; ++dx)
      for (int dy = -1; dy <= 1 && !dup; ++dy) {
        const auto it = cells.find(key_of(x, y, dx, dy));
        if (it == cells.end()) continue;
        for (const int k : it->second) {
          const int col = kept[static_cast<std::size_t>(k)];
          if (std::abs(points(0, col) - x) <= tol && std::abs(points(1, col) - y) <= tol) {
            dup = true;
            break;
          }
        }
      }
    if (dup) continue;
    cells[key_of(x, y, 0, 0)].push_back(static_cast<int>(kept.size()));
    vert_of[static_cast<std::size_t>(c)] = static_cast<int>(kept.size());
    kept.push_back(static_cast<int>(c));
  }

  const int V = static_cast<int>(kept.size());
  out.points_.resize(2, V);
  for (int i = 0; i < V; ++i) out.points_.col(i) = points.col(kept[static_cast<std::size_t>(i)]);
  if (kept_columns) *kept_columns = kept;
  if (V < 3) return out;

  TriangulationBuilder b;
  b.V = V;
  b.pts.resize(2, V + 3);
  b.pts.leftCols(V) = out.points_;
  const double cx = 0.5 * (lo(0) + hi(0)), cy = 0.5 * (lo(1) + hi(1));
  const double R = 1e3 * std::max(1e-9, extent) + 1.0;
  b.pts.col(V) << cx - 16.0 * R, cy - 9.0 * R;
  b.pts.col(V + 1) << cx + 16.0 * R, cy - 9.0 * R;
  b.pts.col(V + 2) << cx, cy + 16.0 * R;

  BuildTri root;
  root.v = {V, V + 1, V + 2};
  root.adj = {-1, -1, -1};
  b.tris.push_back(root);
  for (int i = 0; i < V; ++i) b.insert(i);

  // Strip super-triangle incidences and compact.
  std::vector<int> remap(b.tris.size(), -1);
  for (std::size_t t = 0; t < b.tris.size(); ++t) {
    const BuildTri& tri = b.tris[t];
    if (!tri.alive) continue;
    if (tri.v[0] >= V || tri.v[1] >= V || tri.v[2] >= V) continue;
    remap[t] = static_cast<int>(out.tris_.size());
    out.tris_.push_back(tri.v);
  }
  out.adj_.reserve(out.tris_.size());
  for (std::size_t t = 0; t < b.tris.size(); ++t) {
    if (remap[t] < 0) continue;
    std::array<int, 3> a{-1, -1, -1};
    for (int e = 0; e < 3; ++e) {
      const int nb = b.tris[t].adj[static_cast<std::size_t>(e)];
      if (nb >= 0) a[static_cast<std::size_t>(e)] = remap[static_cast<std::size_t>(nb)];
    }
    out.adj_.push_back(a);
  }
  return out;
}

int Triangulation::locate(double x, double y, std::array<double, 3>& bary, int hint) const {
  if (tris_.empty()) return -1;
  int t = hint >= 0 && hint < static_cast<int>(tris_.size()) ? hint : 0;
  const int cap = static_cast<int>(tris_.size()) + 16;
  for (int step = 0; step < cap; ++step) {
    const auto& v = tris_[static_cast<std::size_t>(t)];
    const double ax = points_(0, v[0]), ay = points_(1, v[0]);
    const double bx = points_(0, v[1]), by = points_(1, v[1]);
    const double cx = points_(0, v[2]), cy = points_(1, v[2]);
    const double area = orient(ax, ay, bx, by, cx, cy);
    const double wa = orient(bx, by, cx, cy, x, y);
    const double wb = orient(cx, cy, ax, ay, x, y);
    const double wc = orient(ax, ay, bx, by, x, y);
    const double eps = -1e-12 * std::max(std::abs(area), 1e-300);
    if (wa >= eps && wb >= eps && wc >= eps) {
      double sa = std::max(wa, 0.0), sb = std::max(wb, 0.0), sc = std::max(wc, 0.0);
      const double s = sa + sb + sc;
      if (s <= 0.0) {
        bary = {1.0, 0.0, 0.0};
      } else {
        bary = {sa / s, sb / s, sc / s};
      }
      return t;
    }
    // Cross the most violated edge; edge opposite vertex i carries weight w_i.
    int worst = wa <= wb ? (wa <= wc ? 0 : 2) : (wb <= wc ? 1 : 2);
    const int next = adj_[static_cast<std::size_t>(t)][static_cast<std::size_t>(worst)];
    if (next < 0) return -1;
    t = next;
  }
  // Walk cycled (degenerate slivers): exhaustive fallback.
  for (int i = 0; i < static_cast<int>(tris_.size()); ++i) {
    const auto& v = tris_[static_cast<std::size_t>(i)];
    const double ax = points_(0, v[0]), ay = points_(1, v[0]);
    const double bx = points_(0, v[1]), by = points_(1, v[1]);
    const double cx = points_(0, v[2]), cy = points_(1, v[2]);
    const double area = orient(ax, ay, bx, by, cx, cy);
    const double wa = orient(bx, by, cx, cy, x, y);
    const double wb = orient(cx, cy, ax, ay, x, y);
    const double wc = orient(ax, ay, bx, by, x, y);
    const double eps = -1e-12 * std::max(std::abs(area), 1e-300);
    if (wa >= eps && wb >= eps && wc >= eps) {
      const double s = std::max(wa, 0.0) + std::max(wb, 0.0) + std::max(wc, 0.0);
      bary = s > 0.0 ? std::array<double, 3>{std::max(wa, 0.0) / s, std::max(wb, 0.0) / s,
                                             std::max(wc, 0.0) / s}
                     : std::array<double, 3>{1.0, 0.0, 0.0};
      return i;
    }
  }
  return -1;
}

bool Triangulation::in_circumcircle(int t, double qx, double qy) const {
  const auto& v = tris_[static_cast<std::size_t>(t)];
  const double r1x = points_(0, v[0]) - qx, r1y = points_(1, v[0]) - qy;
  const double r2x = points_(0, v[1]) - qx, r2y = points_(1, v[1]) - qy;
  const double r3x = points_(0, v[2]) - qx, r3y = points_(1, v[2]) - qy;
  const double z1 = r1x * r1x + r1y * r1y;
  const double z2 = r2x * r2x + r2y * r2y;
  const double z3 = r3x * r3x + r3y * r3y;
  const double det = r1x * (r2y * z3 - r3y * z2) - r1y * (r2x * z3 - r3x * z2) +
                     z1 * (r2x * r3y - r3x * r2y);
  const double scale = std::sqrt((r1x * r1x + r1y * r1y + z1 * z1) *
                                 (r2x * r2x + r2y * r2y + z2 * z2)) *
                       std::sqrt(r3x * r3x + r3y * r3y + z3 * z3);
  return det > 1e-12 * scale;
}

NnIndex NnIndex::build(const RMat& points) {
  require(points.cols() > 0, "NnIndex: empty point set");
  require_finite(points, "nn index points");
  NnIndex idx;
  idx.points_ = points;
  const int n = static_cast<int>(points.rows());
  const int P = static_cast<int>(points.cols());
  if (n > 3 || P < 16) return idx;  // linear scan

  idx.lo_ = points.rowwise().minCoeff();
  const RVec hi = points.rowwise().maxCoeff();
  const double diag = (hi - idx.lo_).norm();
  if (diag <= 0.0) return idx;
  const double per_axis = std::pow(static_cast<double>(P), 1.0 / n);
  idx.cell_ = std::max(1e-12, diag / std::max(1.0, per_axis));
  long total = 1;
  for (int a = 0; a < n; ++a) {
    const int da = std::max(
        1, std::min(1024, static_cast<int>((hi(a) - idx.lo_(a)) / idx.cell_) + 1));
    idx.dims_[static_cast<std::size_t>(a)] = da;
    total *= da;
  }
  idx.buckets_.assign(static_cast<std::size_t>(total), {});
  idx.gridded_ = true;
  for (int c = 0; c < P; ++c)
    idx.buckets_[static_cast<std::size_t>(idx.bucket_of(points.col(c)))].push_back(c);
  return idx;
}

int NnIndex::bucket_of(const RVec& q) const {
  const int n = dim();
  int id = 0;
  for (int a = 0; a < n; ++a) {
    int ia = static_cast<int>((q(a) - lo_(a)) / cell_);
    ia = std::max(0, std::min(dims_[static_cast<std::size_t>(a)] - 1, ia));
    id = id * dims_[static_cast<std::size_t>(a)] + ia;
  }
  return id;
}

int NnIndex::nearest(const RVec& q) const {
  require(q.size() == points_.rows(), "NnIndex::nearest: dimension mismatch");
  const int P = size();
  if (!gridded_) {
    int best = 0;
    double bd = (points_.col(0) - q).squaredNorm();
    for (int c = 1; c < P; ++c) {
      const double d = (points_.col(c) - q).squaredNorm();
      if (d < bd) {
        bd = d;
        best = c;
      }
    }
    return best;
  }

  const int n = dim();
  std::array<int, 3> qi{0, 0, 0};
  int max_ring = 0;
  for (int a = 0; a < n; ++a) {
    int ia = static_cast<int>(std::floor((q(a) - lo_(a)) / cell_));
    const int da = dims_[static_cast<std::size_t>(a)];
    qi[static_cast<std::size_t>(a)] = std::max(0, std::min(da - 1, ia));
    max_ring = std::max({max_ring, qi[static_cast<std::size_t>(a)] + 1,
                         da - qi[static_cast<std::size_t>(a)]});
  }

  int best = -1;
  double bd = std::numeric_limits<double>::infinity();
  const auto scan_cell = [&](const std::array<int, 3>& ci) {
    int id = 0;
    for (int a = 0; a < n; ++a) {
      const int da = dims_[static_cast<std::size_t>(a)];
      if (ci[static_cast<std::size_t>(a)] < 0 || ci[static_cast<std::size_t>(a)] >= da) return;
      id = id * da + ci[static_cast<std::size_t>(a)];
    }
    for (const int c : buckets_[static_cast<std::size_t>(id)]) {
      const double d = (points_.col(c) - q).squaredNorm();
      if (d < bd || (d == bd && c < best)) {
        bd = d;
        best = c;
      }
    }
  };

  for (int r = 0; r <= max_ring; ++r) {
    // Shell at Chebyshev radius r around the query cell.
    std::array<int, 3> ci{0, 0, 0};
    if (n == 1) {
      if (r == 0) {
        scan_cell(qi);
      } else {
        ci = qi;
        ci[0] = qi[0] - r;
        scan_cell(ci);
        ci[0] = qi[0] + r;
        scan_cell(ci);
      }
    } else if (n == 2) {
      for (int dx = -r; dx <= r; ++dx)
        for (int dy = -r; dy <= r; ++dy) {
          if (std::max(std::abs(dx), std::abs(dy)) != r) continue;
          ci = {qi[0] + dx, qi[1] + dy, 0};
          scan_cell(ci);
        }
    } else {
      for (int dx = -r; dx <= r; ++dx)
        for (int dy = -r; dy <= r; ++dy)
          for (int dz = -r; dz <= r; ++dz) {
            if (std::max({std::abs(dx), std::abs(dy), std::abs(dz)}) != r) continue;
            ci = {qi[0] + dx, qi[1] + dy, qi[2] + dz};
            scan_cell(ci);
          }
    }
    // Any point in ring > r lies at least r * cell away.
    if (best >= 0 && bd <= static_cast<double>(r) * cell_ * static_cast<double>(r) * cell_)
      break;
  }
  return best;
}

}  // namespace koopman
