#include "powercell/boundary.h"

#include <cmath>

namespace pcell {

namespace {

TM rotation(T theta) {
  TM r;
  r << std::cos(theta), -std::sin(theta), std::sin(theta), std::cos(theta);
  return r;
}

TM rotation_dtheta(T theta) {
  TM r;
  r << -std::sin(theta), -std::cos(theta), std::cos(theta), -std::sin(theta);
  return r;
}

int piece_param_count(const BoundaryPiece& piece) {
  switch (piece.mode) {
    case BoundaryMode::Fixed:
      return 0;
    case BoundaryMode::Rigid:
      return 3;
    case BoundaryMode::Deformable: {
      int n = 0;
      int v = 0;
      for (const auto& loop : piece.rest_loops)
        for (size_t k = 0; k < loop.size(); ++k, ++v)
          if (piece.anchored.empty() || !piece.anchored[v]) n += 2;
      return n;
    }
  }
  return 0;
}

bool vertex_anchored(const BoundaryPiece& piece, int local_v) {
  return !piece.anchored.empty() && piece.anchored[local_v];
}

}  // namespace

void BoundaryModel::finalize() {
  nverts_ = 0;
  nparams_ = 0;
  piece_vert_offset_.clear();
  piece_param_offset_.clear();
  vert_piece_.clear();
  for (size_t pi = 0; pi < pieces.size(); ++pi) {
    piece_vert_offset_.push_back(nverts_);
    piece_param_offset_.push_back(nparams_);
    for (const auto& loop : pieces[pi].rest_loops) {
      for (size_t k = 0; k < loop.size(); ++k) {
        vert_piece_.push_back(static_cast<int>(pi));
        ++nverts_;
      }
    }
    nparams_ += piece_param_count(pieces[pi]);
  }
}

VectorXT BoundaryModel::rest_params() const {
  VectorXT p = VectorXT::Zero(nparams_);
  for (size_t pi = 0; pi < pieces.size(); ++pi) {
    const BoundaryPiece& piece = pieces[pi];
    if (piece.mode != BoundaryMode::Deformable) continue;  // rigid rest = (0,0,0)
    int off = piece_param_offset_[pi];
    int v = 0;
    for (const auto& loop : piece.rest_loops) {
      for (const TV& pos : loop) {
        if (!vertex_anchored(piece, v)) {
          p[off++] = pos.x();
          p[off++] = pos.y();
        }
        ++v;
      }
    }
  }
  return p;
}

DomainPolygon BoundaryModel::realize(const VectorXT& p) const {
  DomainPolygon poly;
  poly.verts.reserve(nverts_);
  int gvid = 0;
  int edge_id = 0;
  for (size_t pi = 0; pi < pieces.size(); ++pi) {
    const BoundaryPiece& piece = pieces[pi];
    int off = piece_param_offset_[pi];
    TM rot = TM::Identity();
    TV trans = TV::Zero();
    if (piece.mode == BoundaryMode::Rigid) {
      trans = TV(p[off], p[off + 1]);
      rot = rotation(p[off + 2]);
    }
    int local_v = 0;
    int local_off = off;
    for (const auto& loop : piece.rest_loops) {
      poly.loops.emplace_back();
      poly.edge_ids.emplace_back();
      for (size_t k = 0; k < loop.size(); ++k, ++local_v, ++gvid) {
        TV pos = loop[k];
        switch (piece.mode) {
          case BoundaryMode::Fixed:
            break;
          case BoundaryMode::Rigid:
            pos = rot * (pos - piece.pivot) + piece.pivot + trans;
            break;
          case BoundaryMode::Deformable:
            if (!vertex_anchored(piece, local_v)) {
              pos = TV(p[local_off], p[local_off + 1]);
              local_off += 2;
            }
            break;
        }
        poly.verts.push_back(pos);
        poly.loops.back().push_back(gvid);
        poly.edge_ids.back().push_back(edge_id++);
      }
    }
  }
  return poly;
}

std::vector<BVertParam> BoundaryModel::vertex_params(const VectorXT& p) const {
  std::vector<BVertParam> out(nverts_);
  int gvid = 0;
  for (size_t pi = 0; pi < pieces.size(); ++pi) {
    const BoundaryPiece& piece = pieces[pi];
    int off = piece_param_offset_[pi];
    int local_v = 0;
    int local_off = off;
    for (const auto& loop : piece.rest_loops) {
      for (size_t k = 0; k < loop.size(); ++k, ++local_v, ++gvid) {
        BVertParam& bp = out[gvid];
        switch (piece.mode) {
          case BoundaryMode::Fixed:
            break;
          case BoundaryMode::Rigid: {
            T theta = p[off + 2];
            TV arm = loop[k] - piece.pivot;
            bp.nparams = 3;
            bp.pidx = {off, off + 1, off + 2};
            bp.jac.setZero();
            bp.jac(0, 0) = 1;
            bp.jac(1, 1) = 1;
            bp.jac.col(2) = rotation_dtheta(theta) * arm;
            bp.has_theta = true;
            bp.theta_pidx = off + 2;
            bp.d2v_dtheta2 = -(rotation(theta) * arm);
            break;
          }
          case BoundaryMode::Deformable:
            if (!vertex_anchored(piece, local_v)) {
              bp.nparams = 2;
              bp.pidx = {local_off, local_off + 1, -1};
              bp.jac.setZero();
              bp.jac(0, 0) = 1;
              bp.jac(1, 1) = 1;
              local_off += 2;
            }
            break;
        }
      }
    }
  }
  return out;
}

template <typename F>
void BoundaryModel::for_each_edge(F&& f) const {
  int gvid = 0;
  for (size_t pi = 0; pi < pieces.size(); ++pi) {
    for (const auto& loop : pieces[pi].rest_loops) {
      int n = static_cast<int>(loop.size());
      for (int k = 0; k < n; ++k)
        f(static_cast<int>(pi), gvid + k, gvid + (k + 1) % n);
      gvid += n;
    }
  }
}

T BoundaryModel::energy(const VectorXT& p) const {
  T e = 0;
  DomainPolygon poly = realize(p);
  for_each_edge([&](int pi, int a, int b) {
    const BoundaryPiece& piece = pieces[pi];
    if (piece.mode != BoundaryMode::Deformable || piece.edge_stiffness == 0) return;
    e += piece.edge_stiffness * (poly.verts[b] - poly.verts[a]).squaredNorm();
  });
  for (size_t pi = 0; pi < pieces.size(); ++pi) {
    const BoundaryPiece& piece = pieces[pi];
    if (piece.mode != BoundaryMode::Rigid) continue;
    int off = piece_param_offset_[pi];
    e -= piece.ext_force.x() * p[off] + piece.ext_force.y() * p[off + 1] +
         piece.ext_torque * p[off + 2];
  }
  return e;
}

void BoundaryModel::energy_grad(const VectorXT& p, VectorXT& grad) const {
  grad = VectorXT::Zero(nparams_);
  DomainPolygon poly = realize(p);
  std::vector<BVertParam> params = vertex_params(p);
  for_each_edge([&](int pi, int a, int b) {
    const BoundaryPiece& piece = pieces[pi];
    if (piece.mode != BoundaryMode::Deformable || piece.edge_stiffness == 0) return;
    TV d = 2 * piece.edge_stiffness * (poly.verts[b] - poly.verts[a]);
    if (params[a].nparams == 2) {
      grad[params[a].pidx[0]] -= d.x();
      grad[params[a].pidx[1]] -= d.y();
    }
    if (params[b].nparams == 2) {
      grad[params[b].pidx[0]] += d.x();
      grad[params[b].pidx[1]] += d.y();
    }
  });
  for (size_t pi = 0; pi < pieces.size(); ++pi) {
    const BoundaryPiece& piece = pieces[pi];
    if (piece.mode != BoundaryMode::Rigid) continue;
    int off = piece_param_offset_[pi];
    grad[off] -= piece.ext_force.x();
    grad[off + 1] -= piece.ext_force.y();
    grad[off + 2] -= piece.ext_torque;
  }
}

void BoundaryModel::energy_hess(const VectorXT& p, std::vector<Triplet>& trips) const {
  std::vector<BVertParam> params = vertex_params(p);
  for_each_edge([&](int pi, int a, int b) {
    const BoundaryPiece& piece = pieces[pi];
    if (piece.mode != BoundaryMode::Deformable || piece.edge_stiffness == 0) return;
    T k2 = 2 * piece.edge_stiffness;
    auto add = [&](const BVertParam& pa, const BVertParam& pb, T sign) {
      if (pa.nparams != 2 || pb.nparams != 2) return;
      for (int c = 0; c < 2; ++c)
        trips.emplace_back(pa.pidx[c], pb.pidx[c], sign * k2);
    };
    add(params[a], params[a], 1);
    add(params[b], params[b], 1);
    add(params[a], params[b], -1);
    add(params[b], params[a], -1);
  });
}

void BoundaryModel::param_mass_viscosity(VectorXT& mass, VectorXT& visc) const {
  mass = VectorXT::Zero(nparams_);
  visc = VectorXT::Zero(nparams_);
  for (size_t pi = 0; pi < pieces.size(); ++pi) {
    const BoundaryPiece& piece = pieces[pi];
    int off = piece_param_offset_[pi];
    if (piece.mode == BoundaryMode::Rigid) {
      for (int k = 0; k < 3; ++k) {
        mass[off + k] = piece.rigid_mass[k];
        visc[off + k] = piece.rigid_viscosity[k];
      }
    } else if (piece.mode == BoundaryMode::Deformable) {
      int local_off = off;
      int v = 0;
      for (const auto& loop : piece.rest_loops) {
        for (size_t k = 0; k < loop.size(); ++k, ++v) {
          if (vertex_anchored(piece, v)) continue;
          mass[local_off] = mass[local_off + 1] = piece.vert_mass;
          visc[local_off] = visc[local_off + 1] = piece.vert_viscosity;
          local_off += 2;
        }
      }
    }
  }
}

BoundaryModel make_rect_boundary(T width, T height, TV origin) {
  BoundaryModel model;
  BoundaryPiece piece;
  piece.rest_loops = {{origin, origin + TV(width, 0), origin + TV(width, height),
                       origin + TV(0, height)}};
  model.pieces.push_back(std::move(piece));
  model.finalize();
  return model;
}

BoundaryModel make_polygon_boundary(const std::vector<TV>& loop) {
  BoundaryModel model;
  BoundaryPiece piece;
  piece.rest_loops = {loop};
  model.pieces.push_back(std::move(piece));
  model.finalize();
  return model;
}

std::vector<TV> regular_polygon(const TV& center, T radius, int segments) {
  std::vector<TV> pts;
  pts.reserve(segments);
  for (int k = 0; k < segments; ++k) {
    T ang = 2 * M_PI * k / segments;
    pts.push_back(center + radius * TV(std::cos(ang), std::sin(ang)));
  }
  return pts;
}

}  // namespace pcell
