#pragma once

#include "koopman/boundary.hpp"
#include "koopman/delaunay.hpp"
#include "koopman/types.hpp"

#include <memory>
#include <string>
#include <vector>

namespace koopman {

enum class ExtensionKind { TriangulatedLinear, RbfRidge, NearestNeighbor };

std::string to_string(ExtensionKind k);
ExtensionKind extension_kind_from_string(const std::string& s);

// Geometry shared by all extensions fitted on one dataset: merged sample
// states, a triangulation over them (2-D only), a nearest-neighbour index,
// and the RBF center subset. Immutable once built; models hold it by
// shared_ptr so a fitted set stays cheap to copy.
struct ExtensionGeometry {
  RMat points;                 // n x P distinct sample states
  std::vector<int> sample_of;  // dataset column backing each point
  Triangulation tri;           // empty unless triangulated-linear in 2-D
  NnIndex nn;
  RMat centers;                // n x K farthest-point subset (RBF only)
  RVec bbox_lo, bbox_hi;
};

// Geometry for `kind` over the dataset's sample states. A collinear cloud
// requested as triangulated-linear degrades to rbf-ridge with a warning.
std::shared_ptr<const ExtensionGeometry> build_extension_geometry(
    const TrajectoryDataset& ds, ExtensionKind& kind,
    std::vector<std::string>* warnings = nullptr);

// Continuation of one on-data value row to arbitrary states. Inside the data
// hull, triangulated-linear interpolates barycentrically; outside (and for
// the nearest-neighbor kind everywhere) the closest sample's value is used.
struct ExtensionModel {
  ExtensionKind kind = ExtensionKind::TriangulatedLinear;
  std::shared_ptr<const ExtensionGeometry> geometry;
  CVec point_values;  // value per geometry point (triangulated / nearest)
  CVec coeffs;        // rbf layout: [radial (K); constant; linear (n)]
  double delta2 = 0.0;

  bool fitted() const { return geometry != nullptr; }

  // tri_hint threads the walk start between spatially coherent queries;
  // outside is set when the query fell back to the nearest sample.
  Complex evaluate(const RVec& x, int* tri_hint = nullptr, bool* outside = nullptr) const;
};

// Fits one value row sampled on the dataset. delta1 is the (unsupported)
// sparsity weight and must be 0; delta2 is the ridge weight for rbf fits.
ExtensionModel fit_extension(const TrajectoryDataset& ds, const CVec& row_values,
                             ExtensionKind kind, double delta1, double delta2,
                             std::vector<std::string>* warnings = nullptr);

// Same, reusing a prebuilt geometry (kind must match the geometry's).
ExtensionModel fit_extension_on(std::shared_ptr<const ExtensionGeometry> geometry,
                                ExtensionKind kind, const CVec& row_values, double delta2);

// A product row is an algebraic combination of primitive rows; it owns no
// extension and is evaluated through its bases.
struct ProductSpec {
  std::vector<int> indices;
  std::vector<double> powers;
};

// Eigenfunction values on the dataset plus their off-data continuations.
// Rows are grouped by output component in partition order; consecutive rows
// may form a Jordan block (generalized eigenfunctions).
struct EigenfunctionSet {
  CVec eigenvalues;                        // per row
  std::vector<JordanBlock> blocks;         // consecutive-row grouping
  CMat values;                             // N x Mt(Ms+1), dataset sample order
  OutputPartition partition;
  double Ts = 0.0;
  int Mt = 0;
  int Ms = 0;
  std::vector<ProductSpec> products;       // per row; empty = primitive
  std::vector<ExtensionModel> extensions;  // per row; product rows stay unfitted

  int size() const { return static_cast<int>(eigenvalues.size()); }
  bool is_product(int row) const { return !products[static_cast<std::size_t>(row)].indices.empty(); }
  void validate() const;

  // Lifted state at x. Primitive rows evaluate their extensions (one point
  // location shared per geometry); product rows combine base evaluations.
  CVec evaluate(const RVec& x, int* tri_hint = nullptr, int* outside_count = nullptr) const;

  // Lift of many states (n x S), one column per state.
  CMat evaluate_many(const RMat& states, int* outside_count = nullptr) const;
};

// Fills on-data values from boundary data by the forward recursion
// value(j, k+1) = e^{lambda Ts} value(j, k), value(j, 0) = G(i, j).
EigenfunctionSet propagate_values(const BoundaryMatrix& bm, double Ts, int Ms);

// Stacked generalized propagation for one Jordan block: rows of Gblock hold
// the block's boundary values per trajectory; step k advances by the
// one-step matrix jordan_exp(J, Ts), so the block recursion is exact.
CMat propagate_generalized(const JordanBlock& J, const CMat& Gblock, double Ts, int Ms);

// Assembles a set with explicit Jordan structure from stacked boundary data;
// blocks' sizes must sum to Gstack rows.
EigenfunctionSet propagate_blocks(const std::vector<JordanBlock>& blocks, const CMat& Gstack,
                                  const OutputPartition& partition, double Ts, int Ms);

// Pointwise product of powered rows: the row values and the combined
// eigenvalue sum(powers * lambdas). Integer powers use repeated
// multiplication; non-integer powers require positive-real base values.
struct ProductRow {
  CVec values;
  Complex lambda;
};
ProductRow product_eigenfunction(const EigenfunctionSet& set, const std::vector<int>& indices,
                                 const std::vector<double>& powers);

// Appends the product as a new row (recorded for extension-free evaluation).
int append_product(EigenfunctionSet& set, const std::vector<int>& indices,
                   const std::vector<double>& powers);

// Fits extensions for every primitive row, sharing one geometry and, for rbf,
// one design factorization across rows. delta1 must be 0.
void fit_extensions(EigenfunctionSet& set, const TrajectoryDataset& ds, ExtensionKind kind,
                    double delta1, double delta2, std::vector<std::string>* warnings = nullptr);

}  // namespace koopman
