#include "powercell/energy.h"

#include <cmath>
#include <unordered_map>

namespace pcell {

// ---------------------------------------------------------------- DofMap

DofMap DofMap::build(const std::vector<Site>& sites, int num_boundary_params) {
  DofMap m;
  m.site_dof.resize(sites.size());
  int idx = 0;
  for (size_t i = 0; i < sites.size(); ++i)
    for (int a = 0; a < kSiteAxes; ++a) m.site_dof[i][a] = sites[i].dof_active[a] ? idx++ : -1;
  if (num_boundary_params > 0) {
    m.boundary_offset = idx;
    m.num_boundary = num_boundary_params;
    idx += num_boundary_params;
  }
  m.ndofs = idx;
  return m;
}

DofMap DofMap::build_axis(int num_sites, int axis) {
  DofMap m;
  m.site_dof.assign(num_sites, {-1, -1, -1, -1});
  for (int i = 0; i < num_sites; ++i) m.site_dof[i][axis] = i;
  m.ndofs = num_sites;
  return m;
}

VectorXT DofMap::gather(const std::vector<Site>& sites, const VectorXT& bparams) const {
  VectorXT y(ndofs);
  for (size_t i = 0; i < site_dof.size(); ++i)
    for (int a = 0; a < kSiteAxes; ++a)
      if (site_dof[i][a] >= 0) y[site_dof[i][a]] = sites[i].dof(a);
  if (num_boundary > 0) y.segment(boundary_offset, num_boundary) = bparams;
  return y;
}

void DofMap::scatter(const VectorXT& y, std::vector<Site>& sites, VectorXT& bparams) const {
  for (size_t i = 0; i < site_dof.size(); ++i)
    for (int a = 0; a < kSiteAxes; ++a)
      if (site_dof[i][a] >= 0) sites[i].set_dof(a, y[site_dof[i][a]]);
  if (num_boundary > 0) bparams = y.segment(boundary_offset, num_boundary);
}

// ------------------------------------------------------- per-cell term algebra

namespace {

// Cell-local variable vector: the five raw measures, then the site position and
// the rest area. Term derivatives live in this small space; geometry chains in
// through the measure rows only.
enum ZIdx : int { kZA = 0, kZP, kZLx, kZLy, kZS, kZCx, kZCy, kZAbar, kZCount };
static_assert(int(kZA) == kMArea && int(kZP) == kMPerim && int(kZLx) == kMFirstX &&
              int(kZLy) == kMFirstY && int(kZS) == kMSecond);

using ZVec = Eigen::Matrix<T, kZCount, 1>;
using ZMat = Eigen::Matrix<T, kZCount, kZCount>;

struct ZDerivs {
  T value = 0;
  ZVec g = ZVec::Zero();
  ZMat h = ZMat::Zero();
};

// terms that divide by the cell area (meaningless for collapsed cells)
bool needs_centroid(EnergyKind k) {
  return k == EnergyKind::SecondMoment || k == EnergyKind::SiteCentroid;
}

void accumulate_term(const EnergyTerm& t, const ZVec& z, int order, ZDerivs& acc) {
  const T k = t.coeff;
  const T A = z[kZA], P = z[kZP], S = z[kZS], abar = z[kZAbar];
  const TV L(z[kZLx], z[kZLy]);
  const TV c(z[kZCx], z[kZCy]);

  switch (t.kind) {
    case EnergyKind::AreaTargetQuadratic: {
      T d = A - abar;
      acc.value += k * d * d;
      if (order >= 1) {
        acc.g[kZA] += 2 * k * d;
        acc.g[kZAbar] -= 2 * k * d;
      }
      if (order >= 2) {
        acc.h(kZA, kZA) += 2 * k;
        acc.h(kZAbar, kZAbar) += 2 * k;
        acc.h(kZA, kZAbar) -= 2 * k;
        acc.h(kZAbar, kZA) -= 2 * k;
      }
      break;
    }
    case EnergyKind::RelativeAreaQuadratic: {
      T ia = 1 / abar;
      T f = A * ia - 1;
      acc.value += k * f * f;
      if (order >= 1) {
        acc.g[kZA] += 2 * k * f * ia;
        acc.g[kZAbar] -= 2 * k * f * A * ia * ia;
      }
      if (order >= 2) {
        acc.h(kZA, kZA) += 2 * k * ia * ia;
        T mixed = -2 * k * A * ia * ia * ia - 2 * k * f * ia * ia;
        acc.h(kZA, kZAbar) += mixed;
        acc.h(kZAbar, kZA) += mixed;
        acc.h(kZAbar, kZAbar) += 2 * k * A * A * ia * ia * ia * ia + 4 * k * f * A * ia * ia * ia;
      }
      break;
    }
    case EnergyKind::Perimeter: {
      acc.value += k * P;
      if (order >= 1) acc.g[kZP] += k;
      break;
    }
    case EnergyKind::PerimeterQuadratic: {
      acc.value += k * P * P;
      if (order >= 1) acc.g[kZP] += 2 * k * P;
      if (order >= 2) acc.h(kZP, kZP) += 2 * k;
      break;
    }
    case EnergyKind::SecondMoment: {
      // f = S - |L|^2 / A, the second moment about the centroid; optionally
      // scaled by n(abar) = abar^-2 to make it dimensionless in the cell size
      T n = 1, np = 0, npp = 0;
      if (t.normalized) {
        T ia = 1 / abar;
        n = ia * ia;
        np = -2 * ia * ia * ia;
        npp = 6 * ia * ia * ia * ia;
      }
      T f = S - L.squaredNorm() / A;
      acc.value += k * n * f;
      if (order >= 1 || order >= 2) {
        ZVec df = ZVec::Zero();
        df[kZS] = 1;
        df[kZLx] = -2 * L.x() / A;
        df[kZLy] = -2 * L.y() / A;
        df[kZA] = L.squaredNorm() / (A * A);
        if (order >= 1) {
          acc.g += k * n * df;
          acc.g[kZAbar] += k * np * f;
        }
        if (order >= 2) {
          ZMat d2f = ZMat::Zero();
          d2f(kZLx, kZLx) = -2 / A;
          d2f(kZLy, kZLy) = -2 / A;
          d2f(kZLx, kZA) = d2f(kZA, kZLx) = 2 * L.x() / (A * A);
          d2f(kZLy, kZA) = d2f(kZA, kZLy) = 2 * L.y() / (A * A);
          d2f(kZA, kZA) = -2 * L.squaredNorm() / (A * A * A);
          acc.h += k * n * d2f;
          for (int zi : {kZA, kZLx, kZLy, kZS}) {
            acc.h(zi, kZAbar) += k * np * df[zi];
            acc.h(kZAbar, zi) += k * np * df[zi];
          }
          acc.h(kZAbar, kZAbar) += k * npp * f;
        }
      }
      break;
    }
    case EnergyKind::SiteCentroid: {
      T n = 1, np = 0, npp = 0;
      if (t.normalized) {
        T ia = 1 / abar;
        n = ia;
        np = -ia * ia;
        npp = 2 * ia * ia * ia;
      }
      TV u = c - L / A;
      T f = u.squaredNorm();
      acc.value += k * n * f;
      if (order >= 1 || order >= 2) {
        ZVec df = ZVec::Zero();
        df[kZCx] = 2 * u.x();
        df[kZCy] = 2 * u.y();
        df[kZLx] = -2 * u.x() / A;
        df[kZLy] = -2 * u.y() / A;
        df[kZA] = 2 * u.dot(L) / (A * A);
        if (order >= 1) {
          acc.g += k * n * df;
          acc.g[kZAbar] += k * np * f;
        }
        if (order >= 2) {
          // d2f = 2 (du^T du + u . d2u); u is linear in c, rational in L, A
          std::array<std::pair<int, TV>, 5> J = {{{kZCx, TV(1, 0)},
                                                  {kZCy, TV(0, 1)},
                                                  {kZLx, TV(-1 / A, 0)},
                                                  {kZLy, TV(0, -1 / A)},
                                                  {kZA, L / (A * A)}}};
          ZMat d2f = ZMat::Zero();
          for (const auto& [zi, di] : J)
            for (const auto& [zj, dj] : J) d2f(zi, zj) += 2 * di.dot(dj);
          d2f(kZLx, kZA) += 2 * u.x() / (A * A);
          d2f(kZA, kZLx) += 2 * u.x() / (A * A);
          d2f(kZLy, kZA) += 2 * u.y() / (A * A);
          d2f(kZA, kZLy) += 2 * u.y() / (A * A);
          d2f(kZA, kZA) += -4 * u.dot(L) / (A * A * A);
          acc.h += k * n * d2f;
          for (int zi : {kZA, kZLx, kZLy, kZCx, kZCy}) {
            acc.h(zi, kZAbar) += k * np * df[zi];
            acc.h(kZAbar, zi) += k * np * df[zi];
          }
          acc.h(kZAbar, kZAbar) += k * npp * f;
        }
      }
      break;
    }
    case EnergyKind::SiteMoment: {
      // integral |x - c|^2 dA expanded over raw measures; polynomial, no area guard
      acc.value += k * (S - 2 * c.dot(L) + A * c.squaredNorm());
      if (order >= 1) {
        acc.g[kZS] += k;
        acc.g[kZLx] += -2 * k * c.x();
        acc.g[kZLy] += -2 * k * c.y();
        acc.g[kZCx] += k * (-2 * L.x() + 2 * A * c.x());
        acc.g[kZCy] += k * (-2 * L.y() + 2 * A * c.y());
        acc.g[kZA] += k * c.squaredNorm();
      }
      if (order >= 2) {
        acc.h(kZLx, kZCx) += -2 * k;
        acc.h(kZCx, kZLx) += -2 * k;
        acc.h(kZLy, kZCy) += -2 * k;
        acc.h(kZCy, kZLy) += -2 * k;
        acc.h(kZCx, kZCx) += 2 * k * A;
        acc.h(kZCy, kZCy) += 2 * k * A;
        acc.h(kZCx, kZA) += 2 * k * c.x();
        acc.h(kZA, kZCx) += 2 * k * c.x();
        acc.h(kZCy, kZA) += 2 * k * c.y();
        acc.h(kZA, kZCy) += 2 * k * c.y();
      }
      break;
    }
    case EnergyKind::Gravity: {
      acc.value += k * z[kZLy];
      if (order >= 1) acc.g[kZLy] += k;
      break;
    }
  }
}

ZDerivs eval_cell_terms(const EnergyModel& model, const ZVec& z, bool tiny, int order,
                        bool& skipped) {
  ZDerivs acc;
  for (const EnergyTerm& t : model.terms) {
    if (tiny && needs_centroid(t.kind)) {
      skipped = true;
      continue;
    }
    accumulate_term(t, z, order, acc);
  }
  return acc;
}

T collapse_threshold(const EnergyModel& model, const RestrictedDiagram& diagram) {
  T dom = diagram.domain ? std::abs(diagram.domain->signed_area()) : T(1);
  return model.collapse_area_eps * dom;
}

struct PrimSlotHash {
  size_t operator()(const PrimSlot& s) const {
    return static_cast<size_t>(s.kind) * 1000003u + static_cast<size_t>(s.owner + 1);
  }
};

// expansion of one local primitive slot into global dof columns
struct SlotExpand {
  int n = 0;
  std::array<int, 3> yi = {-1, -1, -1};
  std::array<T, 3> w = {0, 0, 0};
  int ui = -1;  // design-parameter column (site axes only)
};

int prim_axis(Prim kind) {
  switch (kind) {
    case Prim::SiteX: return kSiteX;
    case Prim::SiteY: return kSiteY;
    case Prim::SiteW: return kSiteW;
    case Prim::SiteA: return kSiteA;
    default: return -1;
  }
}

}  // namespace

namespace {

T abar_wall_value(const EnergyModel& model, const std::vector<Site>& sites) {
  if (!(model.abar_floor > 0) || !(model.abar_floor_stiffness > 0)) return 0;
  T total = 0;
  for (const Site& s : sites) {
    T d = model.abar_floor - s.area_target;
    if (d > 0) total += model.abar_floor_stiffness * d * d;
  }
  return total;
}

}  // namespace

T cell_energies_value(const EnergyModel& model, const std::vector<Site>& sites,
                      const RestrictedDiagram& diagram, EnergyReport* report) {
  const T eps_abs = collapse_threshold(model, diagram);
  T total = abar_wall_value(model, sites);
  for (size_t i = 0; i < diagram.cells.size(); ++i) {
    ZVec z = ZVec::Zero();
    z[kZCx] = sites[i].position.x();
    z[kZCy] = sites[i].position.y();
    z[kZAbar] = sites[i].area_target;
    bool empty = diagram.cells[i].empty();
    if (!empty) {
      CellMeasures cm = cell_measures(diagram, static_cast<int>(i));
      z[kZA] = cm.area;
      z[kZP] = cm.perimeter;
      z[kZLx] = cm.first_moment.x();
      z[kZLy] = cm.first_moment.y();
      z[kZS] = cm.second_origin;
    }
    bool tiny = empty || z[kZA] <= eps_abs;
    bool skipped = false;
    total += eval_cell_terms(model, z, tiny, 0, skipped).value;
    if (report) {
      if (empty)
        report->empty_cells.push_back(static_cast<int>(i));
      else if (tiny)
        report->collapsed_cells.push_back(static_cast<int>(i));
      if (skipped) report->centroid_skipped = true;
    }
  }
  return total;
}

EnergyDerivatives assemble_cell_energies(const EnergyModel& model, const std::vector<Site>& sites,
                                         const RestrictedDiagram& diagram, const DofMap& ymap,
                                         int order, const std::vector<BVertParam>* bvp,
                                         const DofMap* umap) {
  EnergyDerivatives out;
  out.grad = VectorXT::Zero(order >= 1 ? ymap.ndofs : 0);
  const T eps_abs = collapse_threshold(model, diagram);
  const bool boundary_dofs = ymap.num_boundary > 0 && bvp != nullptr;

  // total energy gradient w.r.t. raw boundary vertex coordinates; feeds the
  // rigid-rotation curvature correction after the cell loop
  std::vector<TV> gbv;
  if (boundary_dofs && order >= 2) gbv.assign(bvp->size(), TV::Zero());

  std::unordered_map<PrimSlot, int, PrimSlotHash> slot_index;
  std::vector<PrimSlot> slots;
  auto slot_of = [&](PrimSlot s) {
    auto [it, fresh] = slot_index.try_emplace(s, static_cast<int>(slots.size()));
    if (fresh) slots.push_back(s);
    return it->second;
  };

  for (size_t ci = 0; ci < diagram.cells.size(); ++ci) {
    const int i = static_cast<int>(ci);
    const bool empty = diagram.cells[ci].empty();

    CellMeasureDerivs md;
    if (!empty) md = cell_measure_derivs(diagram, i);

    ZVec z = ZVec::Zero();
    if (!empty) z.head<kNumMeasures>() = md.value;
    z[kZCx] = sites[ci].position.x();
    z[kZCy] = sites[ci].position.y();
    z[kZAbar] = sites[ci].area_target;

    const bool tiny = empty || z[kZA] <= eps_abs;
    bool skipped = false;
    ZDerivs zd = eval_cell_terms(model, z, tiny, order, skipped);
    out.value += zd.value;
    if (empty)
      out.report.empty_cells.push_back(i);
    else if (tiny)
      out.report.collapsed_cells.push_back(i);
    if (skipped) out.report.centroid_skipped = true;
    if (order < 1) continue;

    // local primitive slot table; own site axes first so the direct z rows have
    // fixed columns, then every vertex input in flattened order
    slot_index.clear();
    slots.clear();
    slot_of({Prim::SiteX, i});
    slot_of({Prim::SiteY, i});
    slot_of({Prim::SiteA, i});
    const int nv = static_cast<int>(md.verts.size());
    std::vector<std::vector<int>> vcols(nv);
    for (int lv = 0; lv < nv; ++lv) {
      const DiagramVertex& V = diagram.verts[md.verts[lv]];
      vcols[lv].reserve(V.inputs.size());
      for (const PrimSlot& s : V.inputs) vcols[lv].push_back(slot_of(s));
    }
    const int m = static_cast<int>(slots.size());

    // d z / d slots
    MatrixXT Dz = MatrixXT::Zero(kZCount, m);
    for (int lv = 0; lv < nv; ++lv) {
      const DiagramVertex& V = diagram.verts[md.verts[lv]];
      for (size_t j = 0; j < V.inputs.size(); ++j)
        Dz.block<kNumMeasures, 1>(0, vcols[lv][j]) +=
            md.vert_grad[lv].transpose() * V.jac.col(static_cast<int>(j));
    }
    Dz(kZCx, 0) = 1;
    Dz(kZCy, 1) = 1;
    Dz(kZAbar, 2) = 1;

    VectorXT grad_loc = Dz.transpose() * zd.g;

    MatrixXT H_loc;
    if (order >= 2) {
      H_loc.noalias() = Dz.transpose() * zd.h * Dz;

      // measure curvature chained through vertex jacobians, plus the curvature
      // of the vertices themselves
      for (int lv = 0; lv < nv; ++lv) {
        const DiagramVertex& V = diagram.verts[md.verts[lv]];
        TM W2 = TM::Zero();
        for (int mi = 0; mi < kNumMeasures; ++mi) W2 += zd.g[mi] * md.diag_hess[lv][mi];
        T wx = 0, wy = 0;
        for (int mi = 0; mi < kNumMeasures; ++mi) {
          wx += zd.g[mi] * md.vert_grad[lv](0, mi);
          wy += zd.g[mi] * md.vert_grad[lv](1, mi);
        }
        const int mv = static_cast<int>(V.inputs.size());
        for (int p = 0; p < mv; ++p)
          for (int q = 0; q < mv; ++q)
            H_loc(vcols[lv][p], vcols[lv][q]) += V.jac.col(p).dot(W2 * V.jac.col(q)) +
                                                 wx * V.hess_x(p, q) + wy * V.hess_y(p, q);
      }
      for (size_t e = 0; e < md.loop_edges.size(); ++e) {
        auto [la, lb] = md.loop_edges[e];
        TM B = TM::Zero();
        for (int mi = 0; mi < kNumMeasures; ++mi) B += zd.g[mi] * md.edge_hess[e][mi];
        const DiagramVertex& Va = diagram.verts[md.verts[la]];
        const DiagramVertex& Vb = diagram.verts[md.verts[lb]];
        const int ma = static_cast<int>(Va.inputs.size());
        const int mb = static_cast<int>(Vb.inputs.size());
        for (int p = 0; p < ma; ++p)
          for (int q = 0; q < mb; ++q) {
            T v = Va.jac.col(p).dot(B * Vb.jac.col(q));
            H_loc(vcols[la][p], vcols[lb][q]) += v;
            H_loc(vcols[lb][q], vcols[la][p]) += v;
          }
      }
    }

    // expand local slots into global dof columns and scatter
    std::vector<SlotExpand> expand(m);
    for (int p = 0; p < m; ++p) {
      const PrimSlot& s = slots[p];
      SlotExpand& ex = expand[p];
      int axis = prim_axis(s.kind);
      if (axis >= 0) {
        int yi = ymap.site_index(s.owner, axis);
        if (yi >= 0) {
          ex.yi[ex.n] = yi;
          ex.w[ex.n] = 1;
          ++ex.n;
        }
        if (umap) ex.ui = umap->site_index(s.owner, axis);
      } else if (boundary_dofs) {
        const BVertParam& bp = (*bvp)[s.owner];
        int coord = s.kind == Prim::BVertX ? 0 : 1;
        for (int j = 0; j < bp.nparams; ++j) {
          ex.yi[ex.n] = ymap.boundary_index(bp.pidx[j]);
          ex.w[ex.n] = bp.jac(coord, j);
          ++ex.n;
        }
        if (order >= 2) gbv[s.owner][coord] += grad_loc[p];
      }
    }

    for (int p = 0; p < m; ++p)
      for (int a = 0; a < expand[p].n; ++a) out.grad[expand[p].yi[a]] += expand[p].w[a] * grad_loc[p];

    if (order >= 2) {
      for (int p = 0; p < m; ++p)
        for (int q = 0; q < m; ++q) {
          T v = H_loc(p, q);
          if (v == 0) continue;
          const SlotExpand& ep = expand[p];
          const SlotExpand& eq = expand[q];
          for (int a = 0; a < ep.n; ++a)
            for (int b = 0; b < eq.n; ++b)
              out.hess.emplace_back(ep.yi[a], eq.yi[b], ep.w[a] * eq.w[b] * v);
          if (eq.ui >= 0)
            for (int a = 0; a < ep.n; ++a) out.hess_yu.emplace_back(ep.yi[a], eq.ui, ep.w[a] * v);
        }
    }
  }

  if (model.abar_floor > 0 && model.abar_floor_stiffness > 0) {
    out.value += abar_wall_value(model, sites);
    if (order >= 1) {
      for (size_t i = 0; i < sites.size(); ++i) {
        T d = model.abar_floor - sites[i].area_target;
        if (d <= 0) continue;
        int yi = ymap.site_index(static_cast<int>(i), kSiteA);
        if (yi < 0) continue;
        out.grad[yi] -= 2 * model.abar_floor_stiffness * d;
        if (order >= 2) out.hess.emplace_back(yi, yi, 2 * model.abar_floor_stiffness);
      }
    }
  }

  // rigid rotations are the one nonlinear boundary parameterization: add the
  // g . d2v/dtheta2 diagonal the jacobian products above cannot see
  if (boundary_dofs && order >= 2) {
    for (size_t b = 0; b < gbv.size(); ++b) {
      const BVertParam& bp = (*bvp)[b];
      if (!bp.has_theta) continue;
      T v = gbv[b].dot(bp.d2v_dtheta2);
      if (v != 0) {
        int gi = ymap.boundary_index(bp.theta_pidx);
        out.hess.emplace_back(gi, gi, v);
      }
    }
  }

  return out;
}

}  // namespace pcell
