#include "powercell/diagram.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <set>
#include <unordered_map>

namespace pcell {

namespace {

T domain_scale_of(const DomainPolygon& domain) {
  TV lo = TV::Constant(std::numeric_limits<T>::max());
  TV hi = TV::Constant(std::numeric_limits<T>::lowest());
  for (const TV& v : domain.verts) {
    lo = lo.cwiseMin(v);
    hi = hi.cwiseMax(v);
  }
  return std::max((hi - lo).norm(), T(1e-300));
}

T loop_signed_area(const std::vector<TV>& pts) {
  T a = 0;
  for (size_t k = 0; k < pts.size(); ++k) a += cross2(pts[k], pts[(k + 1) % pts.size()]);
  return T(0.5) * a;
}

bool segments_properly_intersect(const TV& a, const TV& b, const TV& c, const TV& d) {
  auto orient = [](const TV& p, const TV& q, const TV& r) { return cross2(q - p, r - p); };
  T o1 = orient(a, b, c), o2 = orient(a, b, d), o3 = orient(c, d, a), o4 = orient(c, d, b);
  return ((o1 > 0) != (o2 > 0)) && ((o3 > 0) != (o4 > 0)) && o1 != 0 && o2 != 0 && o3 != 0 &&
         o4 != 0;
}

int winding_number(const std::vector<TV>& verts, const std::vector<int>& loop, const TV& p) {
  int wn = 0;
  for (size_t k = 0; k < loop.size(); ++k) {
    const TV& a = verts[loop[k]];
    const TV& b = verts[loop[(k + 1) % loop.size()]];
    if (a.y() <= p.y()) {
      if (b.y() > p.y() && cross2(b - a, p - a) > 0) ++wn;
    } else {
      if (b.y() <= p.y() && cross2(b - a, p - a) < 0) --wn;
    }
  }
  return wn;
}

}  // namespace

std::pair<int, int> DomainPolygon::edge_verts(int edge_id) const {
  int base = 0;
  for (size_t l = 0; l < loops.size(); ++l) {
    int n = static_cast<int>(loops[l].size());
    if (edge_id < base + n) {
      int k = edge_id - base;
      return {loops[l][k], loops[l][(k + 1) % n]};
    }
    base += n;
  }
  throw std::out_of_range("edge id");
}

T DomainPolygon::signed_area() const {
  T a = 0;
  for (const auto& loop : loops) {
    for (size_t k = 0; k < loop.size(); ++k)
      a += cross2(verts[loop[k]], verts[loop[(k + 1) % loop.size()]]);
  }
  return T(0.5) * a;
}

TV DomainPolygon::first_moment() const {
  TV m = TV::Zero();
  for (const auto& loop : loops) {
    for (size_t k = 0; k < loop.size(); ++k) {
      const TV& a = verts[loop[k]];
      const TV& b = verts[loop[(k + 1) % loop.size()]];
      m += (cross2(a, b) / T(6)) * (a + b);
    }
  }
  return m;
}

bool DomainPolygon::contains(const TV& p) const {
  int wn = 0;
  for (const auto& loop : loops) wn += winding_number(verts, loop, p);
  return wn != 0;
}

Line bisector_line(const Site& site_i, const Site& site_j, T site_tol) {
  TV d = site_j.position - site_i.position;
  if (d.norm() < site_tol)
    throw DiagramError(DiagramError::Code::CoincidentSites, "coincident sites");
  Line l;
  l.normal = d;
  l.offset = T(0.5) * (site_j.position.squaredNorm() - site_i.position.squaredNorm()) +
             T(0.5) * (site_i.weight - site_j.weight);
  return l;
}

TV vertex_solve(const Line& a, const Line& b, T det_tol) {
  T det = cross2(a.normal, b.normal);
  T scale = a.normal.norm() * b.normal.norm();
  if (std::abs(det) < det_tol * scale)
    throw DiagramError(DiagramError::Code::DegenerateIntersection, "parallel generating lines");
  return TV(a.offset * b.normal.y() - b.offset * a.normal.y(),
            b.offset * a.normal.x() - a.offset * b.normal.x()) /
         det;
}

// ---------------------------------------------------------------------------
// Closed-form vertex derivatives.
//
// A vertex is the solution of A(theta) x = b(theta) for two generating lines,
// where theta are the scalar inputs (site coordinates, weights, boundary vertex
// coordinates). The line normals are linear in theta and the offsets quadratic,
// so d2A = 0 and the first/second derivatives of x follow from
//   A dx   = db  - dA x
//   A d2x  = d2b - dA_p dx_q - dA_q dx_p .
// ---------------------------------------------------------------------------

namespace {

struct LineDerivs {
  TV n = TV::Zero();
  T o = 0;
  std::vector<TV> dn;       // per input slot
  std::vector<T> do_;       // per input slot
  std::vector<std::array<int, 3>> d2o_entries;  // (p, q, sign): d2o/dpdq = sign
};

int slot_index(const std::vector<PrimSlot>& slots, Prim kind, int owner) {
  for (size_t k = 0; k < slots.size(); ++k)
    if (slots[k].kind == kind && slots[k].owner == owner) return static_cast<int>(k);
  return -1;
}

LineDerivs bisector_derivs(const std::vector<PrimSlot>& slots, const Site& si, const Site& sj,
                           int i, int j) {
  LineDerivs ld;
  ld.n = sj.position - si.position;
  ld.o = T(0.5) * (sj.position.squaredNorm() - si.position.squaredNorm()) +
         T(0.5) * (si.weight - sj.weight);
  ld.dn.assign(slots.size(), TV::Zero());
  ld.do_.assign(slots.size(), 0);
  int ix = slot_index(slots, Prim::SiteX, i), iy = slot_index(slots, Prim::SiteY, i);
  int iw = slot_index(slots, Prim::SiteW, i);
  int jx = slot_index(slots, Prim::SiteX, j), jy = slot_index(slots, Prim::SiteY, j);
  int jw = slot_index(slots, Prim::SiteW, j);
  ld.dn[ix] = TV(-1, 0);
  ld.dn[iy] = TV(0, -1);
  ld.dn[jx] = TV(1, 0);
  ld.dn[jy] = TV(0, 1);
  ld.do_[ix] = -si.position.x();
  ld.do_[iy] = -si.position.y();
  ld.do_[jx] = sj.position.x();
  ld.do_[jy] = sj.position.y();
  ld.do_[iw] = T(0.5);
  ld.do_[jw] = T(-0.5);
  ld.d2o_entries = {{ix, ix, -1}, {iy, iy, -1}, {jx, jx, 1}, {jy, jy, 1}};
  return ld;
}

LineDerivs edge_derivs(const std::vector<PrimSlot>& slots, const TV& va, const TV& vb, int a,
                       int b) {
  LineDerivs ld;
  ld.n = perp(vb - va);
  ld.o = cross2(vb, va);
  ld.dn.assign(slots.size(), TV::Zero());
  ld.do_.assign(slots.size(), 0);
  int ax = slot_index(slots, Prim::BVertX, a), ay = slot_index(slots, Prim::BVertY, a);
  int bx = slot_index(slots, Prim::BVertX, b), by = slot_index(slots, Prim::BVertY, b);
  ld.dn[ax] = TV(0, -1);
  ld.dn[ay] = TV(1, 0);
  ld.dn[bx] = TV(0, 1);
  ld.dn[by] = TV(-1, 0);
  ld.do_[ax] = -vb.y();
  ld.do_[ay] = vb.x();
  ld.do_[bx] = va.y();
  ld.do_[by] = -va.x();
  ld.d2o_entries = {{ax, by, -1}, {by, ax, -1}, {ay, bx, 1}, {bx, ay, 1}};
  return ld;
}

void push_site_slots(std::vector<PrimSlot>& slots, int site) {
  slots.push_back({Prim::SiteX, site});
  slots.push_back({Prim::SiteY, site});
  slots.push_back({Prim::SiteW, site});
}

}  // namespace

namespace {

Line edge_line_of(const DomainPolygon& domain, int edge_id) {
  auto [a, b] = domain.edge_verts(edge_id);
  Line l;
  l.normal = perp(domain.verts[b] - domain.verts[a]);
  l.offset = cross2(domain.verts[b], domain.verts[a]);
  return l;
}

}  // namespace

TV generator_position(const GeneratorRecord& gen, const std::vector<Site>& sites,
                      const DomainPolygon& domain, T det_tol) {
  switch (gen.kind) {
    case VertexKind::BB: {
      Line l1 = bisector_line(sites[gen.sites[0]], sites[gen.sites[1]]);
      Line l2 = bisector_line(sites[gen.sites[0]], sites[gen.sites[2]]);
      return vertex_solve(l1, l2, det_tol);
    }
    case VertexKind::BE: {
      Line l1 = bisector_line(sites[gen.sites[0]], sites[gen.sites[1]]);
      Line l2 = edge_line_of(domain, gen.edges[0]);
      return vertex_solve(l1, l2, det_tol);
    }
    default: {  // EE: the shared corner of the two edges
      auto [a0, b0] = domain.edge_verts(gen.edges[0]);
      (void)a0;
      return domain.verts[b0];
    }
  }
}

DiagramVertex vertex_derivatives(const GeneratorRecord& gen, const std::vector<Site>& sites,
                                 const DomainPolygon& domain, const DiagramConfig& config) {
  DiagramVertex v;
  v.gen = gen;

  if (gen.kind == VertexKind::EE) {
    auto [a0, b0] = domain.edge_verts(gen.edges[0]);
    (void)a0;
    v.position = domain.verts[b0];
    v.inputs = {{Prim::BVertX, b0}, {Prim::BVertY, b0}};
    v.jac.resize(2, 2);
    v.jac.setIdentity();
    v.hess_x = InputMat::Zero(2, 2);
    v.hess_y = InputMat::Zero(2, 2);
    v.derivs_ready = true;
    return v;
  }

  std::vector<PrimSlot>& slots = v.inputs;
  LineDerivs l1, l2;
  if (gen.kind == VertexKind::BB) {
    push_site_slots(slots, gen.sites[0]);
    push_site_slots(slots, gen.sites[1]);
    push_site_slots(slots, gen.sites[2]);
    l1 = bisector_derivs(slots, sites[gen.sites[0]], sites[gen.sites[1]], gen.sites[0],
                         gen.sites[1]);
    l2 = bisector_derivs(slots, sites[gen.sites[0]], sites[gen.sites[2]], gen.sites[0],
                         gen.sites[2]);
  } else {  // BE
    push_site_slots(slots, gen.sites[0]);
    push_site_slots(slots, gen.sites[1]);
    auto [ea, eb] = domain.edge_verts(gen.edges[0]);
    slots.push_back({Prim::BVertX, ea});
    slots.push_back({Prim::BVertY, ea});
    slots.push_back({Prim::BVertX, eb});
    slots.push_back({Prim::BVertY, eb});
    l1 = bisector_derivs(slots, sites[gen.sites[0]], sites[gen.sites[1]], gen.sites[0],
                         gen.sites[1]);
    l2 = edge_derivs(slots, domain.verts[ea], domain.verts[eb], ea, eb);
  }

  const int m = static_cast<int>(slots.size());
  T det = cross2(l1.n, l2.n);
  T nscale = l1.n.norm() * l2.n.norm();
  if (std::abs(det) < config.det_tol * nscale)
    throw DiagramError(DiagramError::Code::DegenerateIntersection, "parallel generating lines");

  auto solve2 = [&](const TV& rhs) -> TV {
    return TV(rhs.x() * l2.n.y() - rhs.y() * l1.n.y(), rhs.y() * l1.n.x() - rhs.x() * l2.n.x()) /
           det;
  };

  v.position = solve2(TV(l1.o, l2.o));

  v.jac.resize(2, m);
  for (int p = 0; p < m; ++p) {
    TV rhs(l1.do_[p] - l1.dn[p].dot(v.position), l2.do_[p] - l2.dn[p].dot(v.position));
    v.jac.col(p) = solve2(rhs);
  }

  v.hess_x = InputMat::Zero(m, m);
  v.hess_y = InputMat::Zero(m, m);
  MatrixXT d2o1 = MatrixXT::Zero(m, m), d2o2 = MatrixXT::Zero(m, m);
  for (const auto& e : l1.d2o_entries) d2o1(e[0], e[1]) += e[2];
  for (const auto& e : l2.d2o_entries) d2o2(e[0], e[1]) += e[2];
  for (int p = 0; p < m; ++p) {
    for (int q = p; q < m; ++q) {
      TV rhs(d2o1(p, q) - l1.dn[p].dot(v.jac.col(q)) - l1.dn[q].dot(v.jac.col(p)),
             d2o2(p, q) - l2.dn[p].dot(v.jac.col(q)) - l2.dn[q].dot(v.jac.col(p)));
      TV d2x = solve2(rhs);
      v.hess_x(p, q) = v.hess_x(q, p) = d2x.x();
      v.hess_y(p, q) = v.hess_y(q, p) = d2x.y();
    }
  }
  v.derivs_ready = true;
  return v;
}

// ---------------------------------------------------------------------------
// Restricted power diagram construction.
// ---------------------------------------------------------------------------

namespace {

enum class LineKind : std::uint8_t { Bisector, BoundaryEdge, Sentinel };

struct WLine {
  Line line;  // canonical orientation
  LineKind kind;
  int a = -1, b = -1;  // bisector: sorted site pair; edge/sentinel: id in `a`
};

struct WVert {
  TV pos;
  int la, lb;  // generating line ids in the local registry
};

struct WPoly {
  std::vector<WVert> v;
  std::vector<int> eline;  // line id of edge k -> k+1
  bool empty() const { return v.empty(); }
};

struct CellClipper {
  const std::vector<Site>& sites;
  const DomainPolygon& domain;
  const DiagramConfig& config;
  T scale;
  std::vector<WLine> lines;

  CellClipper(const std::vector<Site>& s, const DomainPolygon& d, const DiagramConfig& c, T sc)
      : sites(s), domain(d), config(c), scale(sc) {}

  int add_boundary_edge_line(int edge_id) {
    WLine wl;
    wl.line = edge_line_of(domain, edge_id);
    wl.kind = LineKind::BoundaryEdge;
    wl.a = edge_id;
    lines.push_back(wl);
    return static_cast<int>(lines.size()) - 1;
  }

  int add_sentinel_line(const Line& l, int id) {
    lines.push_back({l, LineKind::Sentinel, id, -1});
    return static_cast<int>(lines.size()) - 1;
  }

  int add_bisector_line(int i, int j) {
    int lo = std::min(i, j), hi = std::max(i, j);
    WLine wl;
    wl.line = bisector_line(sites[lo], sites[hi], config.site_tol * scale);
    wl.kind = LineKind::Bisector;
    wl.a = lo;
    wl.b = hi;
    lines.push_back(wl);
    return static_cast<int>(lines.size()) - 1;
  }

  TV intersect(int la, int lb) const {
    return vertex_solve(lines[la].line, lines[lb].line, config.det_tol);
  }

  // Clip `poly` to the half-plane of line `lid` on which `cell_site` lies
  // (sign * eval <= 0). Crossing vertices are computed from the canonical line
  // pair so that adjacent cells reproduce them identically.
  void clip(WPoly& poly, int lid, T sign) {
    const Line& L = lines[lid].line;
    size_t n = poly.v.size();
    if (n == 0) return;
    WPoly out;
    out.v.reserve(n + 2);
    out.eline.reserve(n + 2);
    for (size_t k = 0; k < n; ++k) {
      const WVert& a = poly.v[k];
      const WVert& b = poly.v[(k + 1) % n];
      int la = poly.eline[k];
      T sa = sign * L.eval(a.pos), sb = sign * L.eval(b.pos);
      bool ina = sa <= 0, inb = sb <= 0;
      if (ina) {
        out.v.push_back(a);
        out.eline.push_back(la);
      }
      if (ina != inb) {
        WVert x{intersect(la, lid), la, lid};
        out.v.push_back(x);
        out.eline.push_back(ina ? lid : la);
      }
    }
    if (out.v.size() < 3) out = WPoly{};
    poly = std::move(out);
  }
};

// Pool of deduplicated diagram vertices keyed by canonical generator record.
struct VertexPool {
  std::unordered_map<GeneratorRecord, int, GeneratorRecordHash, GeneratorRecordPoolEq> index;
  RestrictedDiagram& diagram;
  const std::vector<Site>& sites;
  const DomainPolygon& domain;
  const DiagramConfig& config;

  int intern(GeneratorRecord gen) {
    if (gen.kind == VertexKind::BB) {
      std::sort(gen.sites.begin(), gen.sites.end());
    } else if (gen.kind == VertexKind::BE) {
      if (gen.sites[0] > gen.sites[1]) std::swap(gen.sites[0], gen.sites[1]);
    }
    auto it = index.find(gen);
    if (it != index.end()) return it->second;
    DiagramVertex v;
    v.gen = gen;
    v.position = generator_position(gen, sites, domain, config.det_tol);
    int id = static_cast<int>(diagram.verts.size());
    diagram.verts.push_back(std::move(v));
    index.emplace(gen, id);
    return id;
  }
};

GeneratorRecord make_record(const WLine& la, const WLine& lb, int cell_site) {
  GeneratorRecord g;
  if (la.kind == LineKind::Bisector && lb.kind == LineKind::Bisector) {
    g.kind = VertexKind::BB;
    // the two bisectors share the cell's own site; record the three distinct sites
    std::array<int, 4> ids = {la.a, la.b, lb.a, lb.b};
    std::sort(ids.begin(), ids.end());
    int w = 0;
    for (int k = 0; k < 4; ++k)
      if (k == 0 || ids[k] != ids[k - 1]) g.sites[w++] = ids[k];
    if (w != 3)
      throw DiagramError(DiagramError::Code::DegenerateIntersection,
                         "bisector pair does not span three sites");
  } else if (la.kind == LineKind::Bisector || lb.kind == LineKind::Bisector) {
    const WLine& bis = la.kind == LineKind::Bisector ? la : lb;
    const WLine& edge = la.kind == LineKind::Bisector ? lb : la;
    if (edge.kind != LineKind::BoundaryEdge)
      throw DiagramError(DiagramError::Code::DegenerateIntersection,
                         "sentinel line in a final vertex");
    g.kind = VertexKind::BE;
    g.sites = {bis.a, bis.b, -1};
    g.edges = {edge.a, -1};
  } else {
    if (la.kind != LineKind::BoundaryEdge || lb.kind != LineKind::BoundaryEdge)
      throw DiagramError(DiagramError::Code::DegenerateIntersection,
                         "sentinel line in a final vertex");
    g.kind = VertexKind::EE;
    g.sites = {cell_site, -1, -1};
    // order: incoming edge, outgoing edge (corner = shared endpoint)
    g.edges = {la.a, lb.a};
  }
  return g;
}

CellEdgeRef edge_ref_of(const WLine& l) {
  CellEdgeRef r;
  if (l.kind == LineKind::Bisector) {
    r.interface = true;
    r.site_a = l.a;
    r.site_b = l.b;
  } else {
    r.boundary_edge = l.a;
  }
  return r;
}

// --- Weiler-Atherton style intersection of the convex clipped cell with a
// possibly non-convex, possibly holed domain. ---

struct Crossing {
  TV pos;
  int dloop, dedge_local;  // domain loop and edge index within it
  int dedge_global;
  T t;       // parameter along the domain edge
  int cedge; // C edge index
  T s;       // parameter along the C edge
  bool entry;
  int line_id;  // C line registry id (the bisector crossed)
  bool used = false;
};

struct TraceResult {
  std::vector<CellLoop> loops;
};

class DomainTracer {
 public:
  DomainTracer(const CellClipper& cl, const WPoly& poly, int cell_site, VertexPool& pool)
      : cl_(cl), poly_(poly), cell_site_(cell_site), pool_(pool) {}

  std::vector<CellLoop> trace() {
    if (poly_.empty()) return {};
    build_crossings();
    std::vector<CellLoop> out;
    // components whose boundary mixes domain and cell edges
    for (size_t c0 = 0; c0 < crossings_.size(); ++c0) {
      if (crossings_[order_[c0]].used || !crossings_[order_[c0]].entry) continue;
      out.push_back(walk_from(order_[c0]));
    }
    // domain loops fully inside the cell polygon
    const auto& domain = cl_.domain;
    for (size_t l = 0; l < domain.loops.size(); ++l) {
      if (loop_has_crossing_[l]) continue;
      if (!vertex_inside_c_[domain.loops[l][0]]) continue;
      CellLoop loop;
      int n = static_cast<int>(domain.loops[l].size());
      for (int k = 0; k < n; ++k) {
        loop.verts.push_back(pool_.intern(corner_record(l, k)));
        CellEdgeRef r;
        r.boundary_edge = domain.edge_ids[l][k];
        loop.edges.push_back(r);
      }
      out.push_back(std::move(loop));
    }
    // Cell polygon fully inside the domain: no boundary crossings and a point of
    // its rim lies in the domain. (A rim point, not the centroid: the cell may
    // enclose a hole, whose loop was already emitted above.)
    if (crossings_.empty() && domain.contains(poly_.v[0].pos)) {
      CellLoop loop;
      int n = static_cast<int>(poly_.v.size());
      for (int k = 0; k < n; ++k) {
        loop.verts.push_back(intern_poly_vertex(k));
        loop.edges.push_back(edge_ref_of(cl_.lines[poly_.eline[k]]));
      }
      out.push_back(std::move(loop));
    }
    return out;
  }

 private:
  const CellClipper& cl_;
  const WPoly& poly_;
  int cell_site_;
  VertexPool& pool_;
  std::vector<Crossing> crossings_;
  std::vector<int> order_;                    // crossing ids sorted along the C boundary
  std::vector<int> rank_;                     // inverse of order_
  std::vector<std::vector<int>> edge_cross_;  // per domain (loop,edge): crossing ids by t
  std::vector<bool> loop_has_crossing_;
  std::vector<char> vertex_inside_c_;  // per domain vertex

  GeneratorRecord corner_record(int dloop, int k) const {
    const auto& domain = cl_.domain;
    int n = static_cast<int>(domain.loops[dloop].size());
    GeneratorRecord g;
    g.kind = VertexKind::EE;
    g.sites = {cell_site_, -1, -1};
    g.edges = {domain.edge_ids[dloop][(k + n - 1) % n], domain.edge_ids[dloop][k]};
    return g;
  }

  int intern_poly_vertex(int k) {
    const WVert& v = poly_.v[k];
    return pool_.intern(make_record(cl_.lines[v.la], cl_.lines[v.lb], cell_site_));
  }

  void build_crossings() {
    const auto& domain = cl_.domain;
    int nc = static_cast<int>(poly_.v.size());
    T tol = T(1e-12) * cl_.scale;

    vertex_inside_c_.assign(domain.verts.size(), 0);
    for (size_t i = 0; i < domain.verts.size(); ++i) {
      T worst = std::numeric_limits<T>::max();
      for (int k = 0; k < nc; ++k) {
        const TV& a = poly_.v[k].pos;
        const TV& b = poly_.v[(k + 1) % nc].pos;
        TV d = b - a;
        T len = d.norm();
        if (len < T(1e-300)) continue;
        worst = std::min(worst, cross2(d, domain.verts[i] - a) / len);
      }
      vertex_inside_c_[i] = worst >= -tol;
    }

    loop_has_crossing_.assign(domain.loops.size(), false);
    edge_cross_.clear();
    crossings_.clear();

    int edge_counter = 0;
    for (size_t l = 0; l < domain.loops.size(); ++l) {
      int n = static_cast<int>(domain.loops[l].size());
      for (int k = 0; k < n; ++k, ++edge_counter) {
        edge_cross_.emplace_back();
        const TV& a = domain.verts[domain.loops[l][k]];
        const TV& b = domain.verts[domain.loops[l][(k + 1) % n]];
        bool ina = vertex_inside_c_[domain.loops[l][k]];
        bool inb = vertex_inside_c_[domain.loops[l][(k + 1) % n]];
        // Liang-Barsky clip of segment a->b against the convex cell
        T t0 = 0, t1 = 1;
        int lin_in = -1, lin_out = -1;
        int ce_in = -1, ce_out = -1;
        bool gone = false;
        for (int e = 0; e < nc && !gone; ++e) {
          const TV& qa = poly_.v[e].pos;
          const TV& qb = poly_.v[(e + 1) % nc].pos;
          TV d = qb - qa;
          T fa = cross2(d, a - qa);
          T fb = cross2(d, b - qa);
          if (fa < 0 && fb < 0) gone = true;
          else if (fa < 0) {  // entering through edge e
            T t = fa / (fa - fb);
            if (t > t0) { t0 = t; lin_in = poly_.eline[e]; ce_in = e; }
          } else if (fb < 0) {  // leaving through edge e
            T t = fa / (fa - fb);
            if (t < t1) { t1 = t; lin_out = poly_.eline[e]; ce_out = e; }
          }
        }
        if (gone || t0 >= t1) continue;
        if (ina) { t0 = 0; lin_in = -1; }
        if (inb) { t1 = 1; lin_out = -1; }
        if (lin_in >= 0) add_crossing(l, k, edge_counter, t0, ce_in, lin_in, true);
        if (lin_out >= 0) add_crossing(l, k, edge_counter, t1, ce_out, lin_out, false);
      }
    }

    order_.resize(crossings_.size());
    for (size_t i = 0; i < order_.size(); ++i) order_[i] = static_cast<int>(i);
    std::sort(order_.begin(), order_.end(), [&](int x, int y) {
      const Crossing& cx = crossings_[x];
      const Crossing& cy = crossings_[y];
      if (cx.cedge != cy.cedge) return cx.cedge < cy.cedge;
      if (cx.s != cy.s) return cx.s < cy.s;
      return x < y;
    });
    rank_.assign(crossings_.size(), 0);
    for (size_t i = 0; i < order_.size(); ++i) rank_[order_[i]] = static_cast<int>(i);

    for (auto& ec : edge_cross_)
      std::sort(ec.begin(), ec.end(),
                [&](int x, int y) { return crossings_[x].t < crossings_[y].t; });
  }

  void add_crossing(int l, int k, int eg, T t, int cedge, int line_id, bool entry) {
    const auto& domain = cl_.domain;
    if (cl_.lines[line_id].kind != LineKind::Bisector)
      throw DiagramError(DiagramError::Code::DegenerateIntersection,
                         "domain boundary crossed a sentinel line");
    Crossing c;
    c.dloop = l;
    c.dedge_local = k;
    c.dedge_global = eg;
    c.t = t;
    c.cedge = cedge;
    c.line_id = line_id;
    c.entry = entry;
    // canonical position: domain edge x bisector
    int edge_id = domain.edge_ids[l][k];
    Line el = edge_line_of(domain, edge_id);
    c.pos = vertex_solve(cl_.lines[line_id].line, el, cl_.config.det_tol);
    const TV& qa = poly_.v[c.cedge].pos;
    const TV& qb = poly_.v[(c.cedge + 1) % poly_.v.size()].pos;
    TV d = qb - qa;
    c.s = d.squaredNorm() > 0 ? (c.pos - qa).dot(d) / d.squaredNorm() : 0;
    loop_has_crossing_[l] = true;
    edge_cross_[eg].push_back(static_cast<int>(crossings_.size()));
    crossings_.push_back(c);
  }

  int pool_crossing(const Crossing& c) {
    GeneratorRecord g;
    g.kind = VertexKind::BE;
    const WLine& wl = cl_.lines[c.line_id];
    g.sites = {wl.a, wl.b, -1};
    g.edges = {cl_.domain.edge_ids[c.dloop][c.dedge_local], -1};
    return pool_.intern(g);
  }

  // Follow the domain boundary from crossing `start_id` (an entry) to the next
  // exit crossing, appending corner vertices passed on the way.
  int walk_domain(int start_id, CellLoop& loop) {
    const auto& domain = cl_.domain;
    const Crossing& start = crossings_[start_id];
    int l = start.dloop;
    int n = static_cast<int>(domain.loops[l].size());
    int k = start.dedge_local;
    T t = start.t;
    int guard = 0;
    while (guard++ < 4 * n + 8) {
      int eg = first_edge_global(l) + k;
      // next crossing on this edge after t?
      int next_id = -1;
      for (int cid : edge_cross_[eg]) {
        if (crossings_[cid].t > t + T(1e-15)) { next_id = cid; break; }
      }
      CellEdgeRef r;
      r.boundary_edge = domain.edge_ids[l][k];
      loop.edges.push_back(r);
      if (next_id >= 0) {
        if (crossings_[next_id].entry)
          throw DiagramError(DiagramError::Code::DegenerateIntersection,
                             "crossing alternation broken");
        return next_id;  // an exit crossing ends this chain
      }
      // edge ends inside the cell: emit the corner and continue
      int k_next = (k + 1) % n;
      loop.verts.push_back(pool_.intern(corner_record(l, k_next)));
      k = k_next;
      t = -1;
    }
    throw DiagramError(DiagramError::Code::DegenerateIntersection,
                       "domain walk failed to terminate");
  }

  int first_edge_global(int l) const {
    int base = 0;
    for (int i = 0; i < l; ++i) base += static_cast<int>(cl_.domain.loops[i].size());
    return base;
  }

  // Follow the cell boundary CCW from crossing `from_id` to the next crossing,
  // appending the cell's own vertices passed on the way.
  int walk_cell(int from_id, CellLoop& loop) {
    int nc = static_cast<int>(poly_.v.size());
    int next_id = order_[(rank_[from_id] + 1) % static_cast<int>(order_.size())];
    const Crossing& a = crossings_[from_id];
    const Crossing& b = crossings_[next_id];
    if (!b.entry)
      throw DiagramError(DiagramError::Code::DegenerateIntersection,
                         "crossing alternation broken");
    int e = a.cedge;
    loop.edges.push_back(edge_ref_of(cl_.lines[poly_.eline[e]]));
    bool ahead = b.cedge == e &&
                 (b.s > a.s || (b.s == a.s && rank_[next_id] == rank_[from_id] + 1));
    int guard = 0;
    while (!ahead) {
      int v = (e + 1) % nc;
      loop.verts.push_back(intern_poly_vertex(v));
      e = v;
      loop.edges.push_back(edge_ref_of(cl_.lines[poly_.eline[e]]));
      ahead = b.cedge == e;
      if (guard++ > nc + 1)
        throw DiagramError(DiagramError::Code::DegenerateIntersection,
                           "cell walk failed to terminate");
    }
    return next_id;
  }

  CellLoop walk_from(int start_id) {
    CellLoop loop;
    int cur = start_id;
    int guard = 0;
    do {
      Crossing& c = crossings_[cur];
      c.used = true;
      loop.verts.push_back(pool_crossing(c));
      int exit_id = walk_domain(cur, loop);
      crossings_[exit_id].used = true;
      loop.verts.push_back(pool_crossing(crossings_[exit_id]));
      cur = walk_cell(exit_id, loop);
      if (guard++ > static_cast<int>(crossings_.size()) + 4)
        throw DiagramError(DiagramError::Code::DegenerateIntersection,
                           "cell trace failed to terminate");
    } while (cur != start_id);
    return loop;
  }
};

bool domain_is_convex(const DomainPolygon& domain, T scale) {
  if (domain.loops.size() != 1) return false;
  const auto& loop = domain.loops[0];
  int n = static_cast<int>(loop.size());
  for (int k = 0; k < n; ++k) {
    const TV& a = domain.verts[loop[k]];
    const TV& b = domain.verts[loop[(k + 1) % n]];
    const TV& c = domain.verts[loop[(k + 2) % n]];
    if (cross2(b - a, c - b) < -T(1e-12) * scale * scale) return false;
  }
  return true;
}

void validate_boundary(const DomainPolygon& domain, T scale) {
  if (domain.loops.empty())
    throw DiagramError(DiagramError::Code::InvalidBoundary, "no boundary loops");
  for (size_t l = 0; l < domain.loops.size(); ++l) {
    if (domain.loops[l].size() < 3)
      throw DiagramError(DiagramError::Code::InvalidBoundary, "loop with fewer than 3 vertices");
    std::vector<TV> pts;
    for (int vid : domain.loops[l]) pts.push_back(domain.verts[vid]);
    T area = loop_signed_area(pts);
    if (l == 0 && area <= 0)
      throw DiagramError(DiagramError::Code::InvalidBoundary, "outer loop must be CCW");
    if (l > 0 && area >= 0)
      throw DiagramError(DiagramError::Code::InvalidBoundary, "hole loops must be CW");
  }
  // pairwise proper-intersection test over all edges
  struct Seg { TV a, b; int loop; int idx; };
  std::vector<Seg> segs;
  for (size_t l = 0; l < domain.loops.size(); ++l) {
    int n = static_cast<int>(domain.loops[l].size());
    for (int k = 0; k < n; ++k)
      segs.push_back({domain.verts[domain.loops[l][k]],
                      domain.verts[domain.loops[l][(k + 1) % n]], static_cast<int>(l), k});
  }
  for (size_t i = 0; i < segs.size(); ++i) {
    for (size_t j = i + 1; j < segs.size(); ++j) {
      bool adjacent = segs[i].loop == segs[j].loop &&
                      (std::abs(segs[i].idx - segs[j].idx) == 1 ||
                       std::abs(segs[i].idx - segs[j].idx) ==
                           static_cast<int>(domain.loops[segs[i].loop].size()) - 1);
      if (adjacent) continue;
      if (segments_properly_intersect(segs[i].a, segs[i].b, segs[j].a, segs[j].b))
        throw DiagramError(DiagramError::Code::InvalidBoundary, "self-intersecting boundary");
    }
  }
  (void)scale;
}

// Uniform bucket grid over site positions, for neighbor candidates in roughly
// increasing distance.
struct SiteGrid {
  TV lo, hi;
  int nx = 1, ny = 1;
  T cw = 1, ch = 1;
  std::vector<std::vector<int>> buckets;

  explicit SiteGrid(const std::vector<Site>& sites) {
    lo = TV::Constant(std::numeric_limits<T>::max());
    hi = TV::Constant(std::numeric_limits<T>::lowest());
    for (const auto& s : sites) {
      lo = lo.cwiseMin(s.position);
      hi = hi.cwiseMax(s.position);
    }
    TV ext = (hi - lo).cwiseMax(T(1e-12));
    int g = std::max(1, static_cast<int>(std::floor(std::sqrt(T(sites.size())))));
    nx = ny = g;
    cw = ext.x() / nx;
    ch = ext.y() / ny;
    buckets.resize(static_cast<size_t>(nx) * ny);
    for (size_t i = 0; i < sites.size(); ++i) buckets[bucket_of(sites[i].position)].push_back(i);
  }

  int clampi(int v, int n) const { return std::min(std::max(v, 0), n - 1); }
  size_t bucket_of(const TV& p) const {
    int bx = clampi(static_cast<int>((p.x() - lo.x()) / cw), nx);
    int by = clampi(static_cast<int>((p.y() - lo.y()) / ch), ny);
    return static_cast<size_t>(by) * nx + bx;
  }

  // min distance from p to any point of ring r around p's bucket
  T ring_min_dist(int r) const { return r <= 0 ? 0 : (r - 1) * std::min(cw, ch); }

  template <typename F>
  void visit_ring(const TV& p, int r, F&& f) const {
    int bx = clampi(static_cast<int>((p.x() - lo.x()) / cw), nx);
    int by = clampi(static_cast<int>((p.y() - lo.y()) / ch), ny);
    for (int y = by - r; y <= by + r; ++y) {
      if (y < 0 || y >= ny) continue;
      for (int x = bx - r; x <= bx + r; ++x) {
        if (x < 0 || x >= nx) continue;
        if (std::max(std::abs(x - bx), std::abs(y - by)) != r) continue;
        for (int id : buckets[static_cast<size_t>(y) * nx + x]) f(id);
      }
    }
  }
  int max_ring() const { return std::max(nx, ny); }
};

}  // namespace

RestrictedDiagram build_restricted_diagram(const std::vector<Site>& sites,
                                           const DomainPolygon& domain,
                                           const DiagramConfig& config) {
  if (sites.empty())
    throw DiagramError(DiagramError::Code::InvalidBoundary, "diagram needs at least one site");
  T scale = domain_scale_of(domain);
  if (config.validate_boundary) validate_boundary(domain, scale);

  RestrictedDiagram diagram;
  diagram.domain = &domain;
  diagram.domain_scale = scale;
  diagram.cells.resize(sites.size());

  const int n = static_cast<int>(sites.size());
  bool convex = domain_is_convex(domain, scale);
  T w_max = std::numeric_limits<T>::lowest();
  for (const auto& s : sites) w_max = std::max(w_max, s.weight);

  std::optional<SiteGrid> grid;
  if (!config.brute_force && n > 8) grid.emplace(sites);

  // coincident-site guard
  if (grid) {
    T tol2 = config.site_tol * scale;
    tol2 *= tol2;
    for (int i = 0; i < n; ++i) {
      grid->visit_ring(sites[i].position, 0, [&](int j) {
        if (j != i && (sites[j].position - sites[i].position).squaredNorm() < tol2)
          throw DiagramError(DiagramError::Code::CoincidentSites, "coincident sites");
      });
      grid->visit_ring(sites[i].position, 1, [&](int j) {
        if ((sites[j].position - sites[i].position).squaredNorm() < tol2)
          throw DiagramError(DiagramError::Code::CoincidentSites, "coincident sites");
      });
    }
  } else {
    T tol2 = config.site_tol * scale;
    tol2 *= tol2;
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j)
        if ((sites[j].position - sites[i].position).squaredNorm() < tol2)
          throw DiagramError(DiagramError::Code::CoincidentSites, "coincident sites");
  }

  VertexPool pool{{}, diagram, sites, domain, config};

  // inflated bounding box for the non-convex path
  TV blo = TV::Constant(std::numeric_limits<T>::max());
  TV bhi = TV::Constant(std::numeric_limits<T>::lowest());
  for (const TV& v : domain.verts) {
    blo = blo.cwiseMin(v);
    bhi = bhi.cwiseMax(v);
  }
  for (const auto& s : sites) {
    blo = blo.cwiseMin(s.position);
    bhi = bhi.cwiseMax(s.position);
  }
  T margin = T(0.03125) * scale + T(1e-9);
  blo -= TV::Constant(margin);
  bhi += TV::Constant(margin);

  std::set<std::pair<int, int>> neighbor_set;

  for (int i = 0; i < n; ++i) {
    CellClipper cl(sites, domain, config, scale);
    WPoly poly;

    if (convex) {
      const auto& loop = domain.loops[0];
      int m = static_cast<int>(loop.size());
      std::vector<int> elids(m);
      for (int k = 0; k < m; ++k) elids[k] = cl.add_boundary_edge_line(domain.edge_ids[0][k]);
      for (int k = 0; k < m; ++k) {
        poly.v.push_back({domain.verts[loop[k]], elids[(k + m - 1) % m], elids[k]});
        poly.eline.push_back(elids[k]);
      }
    } else {
      std::array<TV, 4> corners = {TV(blo.x(), blo.y()), TV(bhi.x(), blo.y()),
                                   TV(bhi.x(), bhi.y()), TV(blo.x(), bhi.y())};
      std::array<int, 4> elids;
      for (int k = 0; k < 4; ++k) {
        Line l;
        l.normal = perp(corners[(k + 1) % 4] - corners[k]);
        l.offset = cross2(corners[(k + 1) % 4], corners[k]);
        elids[k] = cl.add_sentinel_line(l, k);
      }
      for (int k = 0; k < 4; ++k) {
        poly.v.push_back({corners[k], elids[(k + 3) % 4], elids[k]});
        poly.eline.push_back(elids[k]);
      }
    }

    auto dist_to_poly_max = [&]() {
      T r2 = 0;
      for (const auto& v : poly.v) r2 = std::max(r2, (v.pos - sites[i].position).squaredNorm());
      return std::sqrt(r2);
    };

    auto clip_site = [&](int j) {
      int lid = cl.add_bisector_line(i, j);
      T sign = i < j ? T(1) : T(-1);
      cl.clip(poly, lid, sign);
    };

    if (!grid) {
      std::vector<int> others;
      for (int j = 0; j < n; ++j)
        if (j != i) others.push_back(j);
      std::sort(others.begin(), others.end(), [&](int a, int b) {
        T pa = (sites[a].position - sites[i].position).squaredNorm() - sites[a].weight;
        T pb = (sites[b].position - sites[i].position).squaredNorm() - sites[b].weight;
        if (pa != pb) return pa < pb;
        return a < b;
      });
      if (config.brute_force) {
        for (int j : others) {
          clip_site(j);
          if (poly.empty()) break;
        }
      } else {
        for (int j : others) {
          if (poly.empty()) break;
          T R = dist_to_poly_max();
          T stop = R + std::sqrt(std::max(T(0), R * R + w_max - sites[i].weight));
          T d = (sites[j].position - sites[i].position).norm();
          if (d > stop) break;
          clip_site(j);
        }
      }
    } else {
      struct Cand {
        int id;
        T d, pw;
      };
      auto by_power = [](const Cand& a, const Cand& b) {
        if (a.pw != b.pw) return a.pw < b.pw;
        return a.id < b.id;
      };
      std::vector<Cand> pending;  // unclipped candidates, sorted by power distance
      int ring = 0;
      while (!poly.empty()) {
        T R = dist_to_poly_max();
        T stop = R + std::sqrt(std::max(T(0), R * R + w_max - sites[i].weight));
        bool grew = false;
        while (ring <= grid->max_ring() && grid->ring_min_dist(ring) <= stop) {
          grid->visit_ring(sites[i].position, ring, [&](int j) {
            if (j == i) return;
            T d = (sites[j].position - sites[i].position).norm();
            pending.push_back({j, d, d * d - sites[j].weight});
            grew = true;
          });
          ++ring;
        }
        if (grew) std::sort(pending.begin(), pending.end(), by_power);
        size_t pick = pending.size();
        for (size_t k = 0; k < pending.size(); ++k)
          if (pending[k].d <= stop) {
            pick = k;
            break;
          }
        if (pick == pending.size()) break;  // all remaining candidates are pruned
        clip_site(pending[pick].id);
        pending.erase(pending.begin() + static_cast<long>(pick));
      }
    }

    // restrict to the domain
    Cell& cell = diagram.cells[i];
    if (!poly.empty()) {
      if (convex) {
        CellLoop loop;
        int m = static_cast<int>(poly.v.size());
        for (int k = 0; k < m; ++k) {
          loop.verts.push_back(
              pool.intern(make_record(cl.lines[poly.v[k].la], cl.lines[poly.v[k].lb], i)));
          loop.edges.push_back(edge_ref_of(cl.lines[poly.eline[k]]));
        }
        cell.loops.push_back(std::move(loop));
      } else {
        DomainTracer tracer(cl, poly, i, pool);
        cell.loops = tracer.trace();
      }
    }

    T adj_tol = T(1e-12) * scale;
    for (const auto& loop : cell.loops) {
      int m = static_cast<int>(loop.verts.size());
      for (int k = 0; k < m; ++k) {
        const CellEdgeRef& r = loop.edges[k];
        if (!r.interface) continue;
        const TV& a = diagram.verts[loop.verts[k]].position;
        const TV& b = diagram.verts[loop.verts[(k + 1) % m]].position;
        if ((b - a).norm() > adj_tol) neighbor_set.insert({r.site_a, r.site_b});
      }
    }
  }

  diagram.neighbor_pairs.assign(neighbor_set.begin(), neighbor_set.end());

  if (config.eager_derivatives) ensure_vertex_derivatives(diagram, sites, domain, config);
  return diagram;
}

void ensure_vertex_derivatives(RestrictedDiagram& diagram, const std::vector<Site>& sites,
                               const DomainPolygon& domain, const DiagramConfig& config) {
  for (auto& v : diagram.verts) {
    if (v.derivs_ready) continue;
    DiagramVertex full = vertex_derivatives(v.gen, sites, domain, config);
    full.position = v.position;  // identical expression; keep the pooled value
    v = std::move(full);
  }
}

T cell_area(const RestrictedDiagram& diagram, int cell) {
  T a = 0;
  for (const auto& loop : diagram.cells[cell].loops) {
    int m = static_cast<int>(loop.verts.size());
    for (int k = 0; k < m; ++k)
      a += cross2(diagram.verts[loop.verts[k]].position,
                  diagram.verts[loop.verts[(k + 1) % m]].position);
  }
  return T(0.5) * a;
}

}  // namespace pcell
