#pragma once

#include "powercell/diagram.h"
#include "powercell/types.h"

namespace pcell {

// Raw per-cell integral measures. Everything downstream (centroid, centered
// second moment, ...) derives from these five by smooth algebra.
enum Measure : int {
  kMArea = 0,
  kMPerim = 1,
  kMFirstX = 2,
  kMFirstY = 3,
  kMSecond = 4,  // second moment about the origin, tr integral of |x|^2
};
constexpr int kNumMeasures = 5;

using MeasureVec = Eigen::Matrix<T, kNumMeasures, 1>;
using MeasureGrad = Eigen::Matrix<T, 2, kNumMeasures>;  // w.r.t. one vertex

struct CellMeasures {
  T area = 0;
  T perimeter = 0;
  TV first_moment = TV::Zero();
  T second_origin = 0;

  TV centroid = TV::Zero();  // valid when has_centroid
  T second_centered = 0;     // about the centroid (parallel axis)
  bool has_centroid = false;
};

// Signed moments of the origin-joined triangle (0, a, b); the building block all
// loop integrals sum over.
struct TriangleMoments {
  T signed_area = 0;
  TV first_moment = TV::Zero();
  T second_moment = 0;  // integral of |x|^2
};
TriangleMoments triangle_moments(const TV& a, const TV& b);

// area_eps: cells with |area| below it get no centroid (transitional states).
CellMeasures cell_measures(const RestrictedDiagram& diagram, int cell, T area_eps = 0);

T diagram_total_area(const RestrictedDiagram& diagram);

// Values plus first/second derivatives of the five raw measures with respect to
// the coordinates of the cell's polygon vertices. Vertices are flattened across
// loops; hessian blocks only exist on the polygon diagonal and edges, the dense
// coupling appears later through functions of the measures.
struct CellMeasureDerivs {
  std::vector<int> verts;                      // diagram vertex ids, flattened
  std::vector<std::pair<int, int>> loop_edges; // local index pairs (a,b)
  MeasureVec value = MeasureVec::Zero();
  std::vector<MeasureGrad> vert_grad;          // per local vertex
  std::vector<std::array<TM, kNumMeasures>> diag_hess;  // d2M/dx_v2
  std::vector<std::array<TM, kNumMeasures>> edge_hess;  // per loop edge: d(grad_a)/dx_b
};

CellMeasureDerivs cell_measure_derivs(const RestrictedDiagram& diagram, int cell);

}  // namespace pcell
