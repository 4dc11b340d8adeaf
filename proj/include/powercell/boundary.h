#pragma once

#include "powercell/types.h"

#include <vector>

namespace pcell {

enum class BoundaryMode { Fixed, Rigid, Deformable };

// One independently parameterized group of polygon loops. A scene's domain is
// typically one Fixed piece (outer box, maybe with holes); a propelled body adds a
// Rigid piece; membrane scenarios use a Deformable piece.
struct BoundaryPiece {
  std::vector<std::vector<TV>> rest_loops;  // outer loops CCW, holes CW
  BoundaryMode mode = BoundaryMode::Fixed;

  // Rigid: params are (tx, ty, theta); v(p) = R(theta) (v0 - pivot) + pivot + t.
  TV pivot = TV::Zero();
  TV ext_force = TV::Zero();  // external potential -ext_force . t
  T ext_torque = 0.0;         // external potential -ext_torque * theta
  std::array<T, 3> rigid_mass = {0, 0, 0};
  std::array<T, 3> rigid_viscosity = {0, 0, 0};

  // Deformable: params are the coordinates of every non-anchored vertex.
  T edge_stiffness = 0.0;  // membrane edge energy k * length^2
  std::vector<bool> anchored;  // per vertex (flattened over loops); empty = none
  T vert_mass = 0.0;
  T vert_viscosity = 0.0;

  int num_vertices() const {
    int n = 0;
    for (const auto& l : rest_loops) n += static_cast<int>(l.size());
    return n;
  }
};

// Realized polygonal domain at the current boundary parameters: flattened vertex
// array plus loops of vertex ids. Edge k of a loop runs v[loop[k]] -> v[loop[k+1]].
struct DomainPolygon {
  std::vector<TV> verts;
  std::vector<std::vector<int>> loops;     // vertex ids
  std::vector<std::vector<int>> edge_ids;  // global edge id per loop edge

  int num_edges() const {
    int n = 0;
    for (const auto& l : loops) n += static_cast<int>(l.size());
    return n;
  }
  // endpoints (a, b) of a global edge id
  std::pair<int, int> edge_verts(int edge_id) const;
  T signed_area() const;
  TV first_moment() const;  // integral of x dA over the domain
  bool contains(const TV& p) const;
};

// How one boundary vertex depends on the boundary parameter vector p.
struct BVertParam {
  int nparams = 0;                  // 0 (fixed/anchored), 2 (deformable) or 3 (rigid)
  std::array<int, 3> pidx = {-1, -1, -1};
  Eigen::Matrix<T, 2, 3> jac = Eigen::Matrix<T, 2, 3>::Zero();  // dv/dp columns
  bool has_theta = false;
  int theta_pidx = -1;
  TV d2v_dtheta2 = TV::Zero();
};

class BoundaryModel {
 public:
  std::vector<BoundaryPiece> pieces;

  void finalize();  // builds index tables; call after editing pieces

  int num_vertices() const { return nverts_; }
  int num_edges() const { return nverts_; }  // closed loops: one edge per vertex
  int num_params() const { return nparams_; }

  VectorXT rest_params() const;  // p at the rest configuration

  // Realized polygon at parameters p. Loop/vertex/edge ids are stable across p.
  DomainPolygon realize(const VectorXT& p) const;

  // Parameterization jacobian d v(p) / dp for every boundary vertex, at p.
  std::vector<BVertParam> vertex_params(const VectorXT& p) const;

  // F_B(p): membrane edge energies plus rigid external potentials.
  T energy(const VectorXT& p) const;
  void energy_grad(const VectorXT& p, VectorXT& grad) const;
  void energy_hess(const VectorXT& p, std::vector<Triplet>& trips) const;

  // per-param mass / viscosity diagonals
  void param_mass_viscosity(VectorXT& mass, VectorXT& visc) const;

  int piece_of_vertex(int bvert) const { return vert_piece_[bvert]; }
  int param_offset(int piece) const { return piece_param_offset_[piece]; }

 private:
  int nverts_ = 0;
  int nparams_ = 0;
  std::vector<int> piece_vert_offset_;
  std::vector<int> piece_param_offset_;
  std::vector<int> vert_piece_;

  template <typename F>
  void for_each_edge(F&& f) const;  // f(piece, global_vid_a, global_vid_b)
};

// Convenience builders.
BoundaryModel make_rect_boundary(T width, T height, TV origin = TV::Zero());
BoundaryModel make_polygon_boundary(const std::vector<TV>& loop);
std::vector<TV> regular_polygon(const TV& center, T radius, int segments);

}  // namespace pcell
