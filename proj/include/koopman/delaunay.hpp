#pragma once

#include "koopman/types.hpp"

#include <array>
#include <vector>

namespace koopman {

// Delaunay triangulation of a 2-D point cloud, built incrementally
// (Bowyer-Watson with a super-triangle). Exposes walk-based point location
// returning barycentric coordinates, which makes piecewise-linear
// interpolation of per-vertex data a three-term convex combination.
class Triangulation {
 public:
  // points: 2 x P, one point per column. Coincident points (within an
  // absolute tolerance scaled to the cloud extent) are merged; kept_columns
  // receives the original column index of each surviving vertex. A cloud
  // whose distinct points are all collinear produces an empty (degenerate)
  // mesh; callers are expected to fall back to another interpolant.
  static Triangulation build(const RMat& points, std::vector<int>* kept_columns = nullptr);

  int num_vertices() const { return static_cast<int>(points_.cols()); }
  int num_triangles() const { return static_cast<int>(tris_.size()); }
  bool degenerate() const { return tris_.empty(); }
  const RMat& vertices() const { return points_; }
  const std::vector<std::array<int, 3>>& triangles() const { return tris_; }

  // Index of the triangle containing (x, y), walking from `hint` (triangle 0
  // when the hint is out of range). Returns -1 outside the convex hull. On
  // success bary holds the clipped, renormalized barycentric coordinates of
  // the query with respect to the triangle's vertices. Stateless, so spatially
  // coherent callers should thread the previous hit back in as the hint.
  int locate(double x, double y, std::array<double, 3>& bary, int hint = 0) const;

  // Delaunay test hook: true when point p strictly beats the tie tolerance
  // inside the circumcircle of triangle t.
  bool in_circumcircle(int t, double px, double py) const;

 private:
  RMat points_;                             // 2 x V
  std::vector<std::array<int, 3>> tris_;    // CCW vertex triples
  std::vector<std::array<int, 3>> adj_;     // adj_[t][i]: neighbor across the edge opposite vertex i

  friend class TriangulationBuilder;
};

// Nearest-neighbour lookup over a fixed point set via uniform grid buckets
// with an expanding ring search (n <= 3); falls back to a linear scan in
// higher dimensions. Desk-scale point counts only.
class NnIndex {
 public:
  static NnIndex build(const RMat& points);  // n x P

  int dim() const { return static_cast<int>(points_.rows()); }
  int size() const { return static_cast<int>(points_.cols()); }

  // Column index of the closest stored point (ties: lowest index).
  int nearest(const RVec& q) const;

 private:
  RMat points_;
  RVec lo_;
  double cell_ = 1.0;
  std::array<int, 3> dims_{1, 1, 1};
  std::vector<std::vector<int>> buckets_;
  bool gridded_ = false;

  int bucket_of(const RVec& q) const;
};

}  // namespace koopman
