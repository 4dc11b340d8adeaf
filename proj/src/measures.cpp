#include "powercell/measures.h"

#include <cmath>

namespace pcell {

namespace {

const TM kRot90 = (TM() << 0, -1, 1, 0).finished();  // perp(v) = kRot90 * v

}  // namespace

TriangleMoments triangle_moments(const TV& a, const TV& b) {
  TriangleMoments m;
  T c = cross2(a, b);
  m.signed_area = T(0.5) * c;
  m.first_moment = (c / T(6)) * (a + b);
  m.second_moment = (c / T(12)) * (a.squaredNorm() + b.squaredNorm() + a.dot(b));
  return m;
}

CellMeasures cell_measures(const RestrictedDiagram& diagram, int cell, T area_eps) {
  CellMeasures out;
  for (const auto& loop : diagram.cells[cell].loops) {
    int n = static_cast<int>(loop.verts.size());
    for (int k = 0; k < n; ++k) {
      const TV& a = diagram.verts[loop.verts[k]].position;
      const TV& b = diagram.verts[loop.verts[(k + 1) % n]].position;
      TriangleMoments tm = triangle_moments(a, b);
      out.area += tm.signed_area;
      out.perimeter += (b - a).norm();
      out.first_moment += tm.first_moment;
      out.second_origin += tm.second_moment;
    }
  }
  if (out.area > area_eps) {
    out.has_centroid = true;
    out.centroid = out.first_moment / out.area;
    out.second_centered = out.second_origin - out.area * out.centroid.squaredNorm();
  }
  return out;
}

T diagram_total_area(const RestrictedDiagram& diagram) {
  T total = 0;
  for (int c = 0; c < static_cast<int>(diagram.cells.size()); ++c) total += cell_area(diagram, c);
  return total;
}

CellMeasureDerivs cell_measure_derivs(const RestrictedDiagram& diagram, int cell) {
  CellMeasureDerivs out;
  const Cell& c = diagram.cells[cell];
  for (const auto& loop : c.loops) {
    int base = static_cast<int>(out.verts.size());
    int n = static_cast<int>(loop.verts.size());
    for (int k = 0; k < n; ++k) {
      out.verts.push_back(loop.verts[k]);
      out.loop_edges.emplace_back(base + k, base + (k + 1) % n);
    }
  }
  int nv = static_cast<int>(out.verts.size());
  out.vert_grad.assign(nv, MeasureGrad::Zero());
  out.diag_hess.assign(nv, {TM::Zero(), TM::Zero(), TM::Zero(), TM::Zero(), TM::Zero()});
  out.edge_hess.assign(out.loop_edges.size(),
                       {TM::Zero(), TM::Zero(), TM::Zero(), TM::Zero(), TM::Zero()});

  for (size_t e = 0; e < out.loop_edges.size(); ++e) {
    auto [ia, ib] = out.loop_edges[e];
    const TV a = diagram.verts[out.verts[ia]].position;
    const TV b = diagram.verts[out.verts[ib]].position;
    const TV pa = kRot90 * a, pb = kRot90 * b;
    const T cr = cross2(a, b);

    // area: 1/2 cross(a,b)
    out.value[kMArea] += T(0.5) * cr;
    out.vert_grad[ia].col(kMArea) += T(-0.5) * pb;
    out.vert_grad[ib].col(kMArea) += T(0.5) * pa;
    out.edge_hess[e][kMArea] += T(0.5) * kRot90.transpose();  // d(grad_a)/db

    // perimeter: |b - a|
    TV d = b - a;
    T len = d.norm();
    if (len > 0) {
      TV u = d / len;
      TM proj = (TM::Identity() - u * u.transpose()) / len;
      out.value[kMPerim] += len;
      out.vert_grad[ia].col(kMPerim) -= u;
      out.vert_grad[ib].col(kMPerim) += u;
      out.diag_hess[ia][kMPerim] += proj;
      out.diag_hess[ib][kMPerim] += proj;
      out.edge_hess[e][kMPerim] -= proj;
    }

    // first moment: cross(a,b)/6 * (a + b), per coordinate
    for (int axis = 0; axis < 2; ++axis) {
      int mi = axis == 0 ? kMFirstX : kMFirstY;
      TV ea = TV::Zero();
      ea[axis] = 1;
      T s = a[axis] + b[axis];
      out.value[mi] += cr / T(6) * s;
      out.vert_grad[ia].col(mi) += (-s * pb + cr * ea) / T(6);
      out.vert_grad[ib].col(mi) += (s * pa + cr * ea) / T(6);
      out.diag_hess[ia][mi] += (-pb * ea.transpose() - ea * pb.transpose()) / T(6);
      out.diag_hess[ib][mi] += (pa * ea.transpose() + ea * pa.transpose()) / T(6);
      out.edge_hess[e][mi] +=
          (-s * kRot90 - pb * ea.transpose() + ea * pa.transpose()) / T(6);
    }

    // second moment about origin: cross(a,b)/12 * (|a|^2 + |b|^2 + a.b)
    {
      T s = a.squaredNorm() + b.squaredNorm() + a.dot(b);
      TV dsa = 2 * a + b, dsb = 2 * b + a;
      out.value[kMSecond] += cr / T(12) * s;
      out.vert_grad[ia].col(kMSecond) += (-s * pb + cr * dsa) / T(12);
      out.vert_grad[ib].col(kMSecond) += (s * pa + cr * dsb) / T(12);
      out.diag_hess[ia][kMSecond] +=
          (-pb * dsa.transpose() - dsa * pb.transpose() + 2 * cr * TM::Identity()) / T(12);
      out.diag_hess[ib][kMSecond] +=
          (pa * dsb.transpose() + dsb * pa.transpose() + 2 * cr * TM::Identity()) / T(12);
      out.edge_hess[e][kMSecond] +=
          (-pb * dsb.transpose() - s * kRot90 + dsa * pa.transpose() + cr * TM::Identity()) /
          T(12);
    }
  }
  return out;
}

}  // namespace pcell
