#pragma once

#include "powercell/boundary.h"
#include "powercell/site.h"
#include "powercell/types.h"

#include <array>
#include <optional>
#include <vector>

namespace pcell {

// Oriented line normal . x = offset.
struct Line {
  TV normal = TV::Zero();
  T offset = 0.0;

  T eval(const TV& p) const { return normal.dot(p) - offset; }
};

enum class VertexKind : std::uint8_t { BB, BE, EE };

// Minimal set of generating inputs of a diagram vertex. Determines both the
// closed-form position expression and the derivative sparsity.
//   BB: intersection of bisectors (s0,s1) and (s0,s2), site ids sorted.
//   BE: bisector (s0,s1) with boundary edge e0, site ids sorted.
//   EE: boundary corner between edges e0,e1; s0 is the owning cell.
struct GeneratorRecord {
  VertexKind kind = VertexKind::BB;
  std::array<int, 3> sites = {-1, -1, -1};
  std::array<int, 2> edges = {-1, -1};

  bool operator==(const GeneratorRecord& o) const {
    return kind == o.kind && sites == o.sites && edges == o.edges;
  }
};

struct GeneratorRecordHash {
  size_t operator()(const GeneratorRecord& g) const {
    size_t h = static_cast<size_t>(g.kind);
    auto mix = [&h](int v) { h = h * 1000003u + static_cast<size_t>(v + 2); };
    // EE corners are pooled by their edge pair; the owner is bookkeeping only.
    if (g.kind != VertexKind::EE) { mix(g.sites[0]); mix(g.sites[1]); mix(g.sites[2]); }
    mix(g.edges[0]); mix(g.edges[1]);
    return h;
  }
};
struct GeneratorRecordPoolEq {
  bool operator()(const GeneratorRecord& a, const GeneratorRecord& b) const {
    if (a.kind != b.kind || a.edges != b.edges) return false;
    return a.kind == VertexKind::EE || a.sites == b.sites;
  }
};

struct DiagramVertex {
  TV position = TV::Zero();
  GeneratorRecord gen;

  // Derivative cache with respect to the generating inputs listed in `inputs`
  // (site coordinates/weights and boundary vertex coordinates). Blocks for
  // non-generating inputs are identically zero and not stored.
  std::vector<PrimSlot> inputs;
  VertexJac jac;            // 2 x m
  InputMat hess_x, hess_y;  // m x m second derivatives of each coordinate
  bool derivs_ready = false;
};

// Provenance of one polygon edge of a clipped cell.
struct CellEdgeRef {
  bool interface = false;  // true: power bisector between `site_a` and `site_b`
  int site_a = -1, site_b = -1;
  int boundary_edge = -1;  // valid when !interface
};

struct CellLoop {
  std::vector<int> verts;         // indices into RestrictedDiagram::verts, CCW (holes CW)
  std::vector<CellEdgeRef> edges; // edge k runs verts[k] -> verts[k+1 mod n]
};

struct Cell {
  std::vector<CellLoop> loops;  // empty when the power cell vanishes
  bool empty() const { return loops.empty(); }
};

struct RestrictedDiagram {
  std::vector<DiagramVertex> verts;
  std::vector<Cell> cells;  // one per site
  std::vector<std::pair<int, int>> neighbor_pairs;  // sorted (i<j), unique

  const DomainPolygon* domain = nullptr;  // the polygon the diagram was clipped to
  T domain_scale = 1.0;
};

struct DiagramConfig {
  bool brute_force = false;       // clip against every site, no pruning
  bool eager_derivatives = true;  // fill every vertex derivative cache at build
  T det_tol = 1e-12;              // relative: |det| >= det_tol * |n1||n2|
  T site_tol = 1e-12;             // coincident-site distance, relative to domain scale
  T resid_tol = 1e-9;             // vertex-on-line residual, relative to domain scale
  bool validate_boundary = true;
};

// Power bisector of two sites: points p with normal.p < offset are power-closer
// to site i. Throws CoincidentSites when the sites are closer than tolerance.
Line bisector_line(const Site& site_i, const Site& site_j, T site_tol = 1e-12);

// Intersection of two lines via Cramer's rule. Throws DegenerateIntersection when
// the determinant falls below det_tol * |n1||n2|.
TV vertex_solve(const Line& a, const Line& b, T det_tol = 1e-12);

// Closed-form position and first/second derivatives for a vertex generated by a
// record, evaluated from the current sites and domain polygon.
DiagramVertex vertex_derivatives(const GeneratorRecord& gen, const std::vector<Site>& sites,
                                 const DomainPolygon& domain, const DiagramConfig& config = {});

// Position only (same closed form); usable for generator records whose vertex no
// longer exists in the tessellation.
TV generator_position(const GeneratorRecord& gen, const std::vector<Site>& sites,
                      const DomainPolygon& domain, T det_tol = 1e-12);

RestrictedDiagram build_restricted_diagram(const std::vector<Site>& sites,
                                           const DomainPolygon& domain,
                                           const DiagramConfig& config = {});

void ensure_vertex_derivatives(RestrictedDiagram& diagram, const std::vector<Site>& sites,
                               const DomainPolygon& domain, const DiagramConfig& config = {});

T cell_area(const RestrictedDiagram& diagram, int cell);

}  // namespace pcell
