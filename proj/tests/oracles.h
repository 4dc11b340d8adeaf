#pragma once

// Shared independent oracles for the test suites: finite differences, pixel
// rasterization, and randomized scene sampling. Everything here is deliberately
// naive — these implementations double-check the analytic code paths.

#include "powercell/boundary.h"
#include "powercell/diagram.h"
#include "powercell/measures.h"

#include <functional>
#include <random>
#include <vector>

namespace oracle {

using pcell::DomainPolygon;
using pcell::Site;
using pcell::T;
using pcell::TV;
using pcell::VectorXT;

inline T fd_first(const std::function<T(T)>& f, T x, T h) {
  return (f(x + h) - f(x - h)) / (2 * h);
}

inline VectorXT fd_gradient(const std::function<T(const VectorXT&)>& f, const VectorXT& x, T h) {
  VectorXT g(x.size());
  for (int i = 0; i < x.size(); ++i) {
    VectorXT xp = x, xm = x;
    xp[i] += h;
    xm[i] -= h;
    g[i] = (f(xp) - f(xm)) / (2 * h);
  }
  return g;
}

inline pcell::MatrixXT fd_jacobian(const std::function<VectorXT(const VectorXT&)>& f,
                                   const VectorXT& x, T h) {
  VectorXT f0 = f(x);
  pcell::MatrixXT J(f0.size(), x.size());
  for (int i = 0; i < x.size(); ++i) {
    VectorXT xp = x, xm = x;
    xp[i] += h;
    xm[i] -= h;
    J.col(i) = (f(xp) - f(xm)) / (2 * h);
  }
  return J;
}

// mixed absolute/relative agreement test
inline bool close(T got, T want, T tol, T floor = T(1)) {
  return std::abs(got - want) <= tol * std::max({floor, std::abs(got), std::abs(want)});
}

// Per-cell areas by brute-force pixel membership: each pixel center inside the
// domain is assigned to its power-nearest site. res x res grid over the domain
// bounding box.
inline std::vector<T> raster_cell_areas(const std::vector<Site>& sites,
                                        const DomainPolygon& domain, int res) {
  TV lo = TV::Constant(std::numeric_limits<T>::max());
  TV hi = TV::Constant(std::numeric_limits<T>::lowest());
  for (const TV& v : domain.verts) {
    lo = lo.cwiseMin(v);
    hi = hi.cwiseMax(v);
  }
  TV ext = hi - lo;
  T px = ext.x() / res, py = ext.y() / res;
  std::vector<T> areas(sites.size(), 0);
  for (int iy = 0; iy < res; ++iy) {
    for (int ix = 0; ix < res; ++ix) {
      TV p = lo + TV((ix + T(0.5)) * px, (iy + T(0.5)) * py);
      if (!domain.contains(p)) continue;
      int best = -1;
      T best_pw = std::numeric_limits<T>::max();
      for (size_t s = 0; s < sites.size(); ++s) {
        T pw = (p - sites[s].position).squaredNorm() - sites[s].weight;
        if (pw < best_pw) {
          best_pw = pw;
          best = static_cast<int>(s);
        }
      }
      areas[best] += px * py;
    }
  }
  return areas;
}

// nearest power site of a point (for interface-distance checks)
inline int nearest_power_site(const std::vector<Site>& sites, const TV& p) {
  int best = -1;
  T best_pw = std::numeric_limits<T>::max();
  for (size_t s = 0; s < sites.size(); ++s) {
    T pw = (p - sites[s].position).squaredNorm() - sites[s].weight;
    if (pw < best_pw) {
      best_pw = pw;
      best = static_cast<int>(s);
    }
  }
  return best;
}

inline T dist_to_boundary(const DomainPolygon& domain, const TV& p) {
  T best = std::numeric_limits<T>::max();
  for (int e = 0; e < domain.num_edges(); ++e) {
    auto [ia, ib] = domain.edge_verts(e);
    TV a = domain.verts[ia], b = domain.verts[ib];
    TV d = b - a;
    T t = d.squaredNorm() > 0 ? std::clamp((p - a).dot(d) / d.squaredNorm(), T(0), T(1)) : 0;
    best = std::min(best, (p - (a + t * d)).norm());
  }
  return best;
}

// Rejection-sample sites inside the domain, keeping a margin from the boundary
// and a minimum pairwise separation.
inline std::vector<Site> random_sites(std::mt19937_64& rng, const DomainPolygon& domain, int count,
                                      T margin, T min_sep, T weight_span = 0) {
  TV lo = TV::Constant(std::numeric_limits<T>::max());
  TV hi = TV::Constant(std::numeric_limits<T>::lowest());
  for (const TV& v : domain.verts) {
    lo = lo.cwiseMin(v);
    hi = hi.cwiseMax(v);
  }
  std::uniform_real_distribution<T> ux(lo.x(), hi.x()), uy(lo.y(), hi.y());
  std::uniform_real_distribution<T> uw(-weight_span, weight_span);
  std::vector<Site> sites;
  int guard = 0;
  while (static_cast<int>(sites.size()) < count && guard++ < 100000) {
    TV p(ux(rng), uy(rng));
    if (!domain.contains(p)) continue;
    if (margin > 0 && dist_to_boundary(domain, p) < margin) continue;
    bool ok = true;
    for (const Site& s : sites)
      if ((s.position - p).norm() < min_sep) ok = false;
    if (!ok) continue;
    Site s;
    s.position = p;
    if (weight_span > 0) s.weight = uw(rng);
    sites.push_back(s);
  }
  return sites;
}

// Simple non-convex test domains.
inline pcell::BoundaryModel l_shape_boundary() {
  return pcell::make_polygon_boundary(
      {TV(0, 0), TV(2, 0), TV(2, 1), TV(1, 1), TV(1, 2), TV(0, 2)});
}

inline pcell::BoundaryModel holed_square_boundary() {
  pcell::BoundaryModel model;
  pcell::BoundaryPiece piece;
  piece.rest_loops = {
      {TV(0, 0), TV(3, 0), TV(3, 3), TV(0, 3)},
      {TV(1.2, 1.2), TV(1.2, 1.8), TV(1.8, 1.8), TV(1.8, 1.2)}  // CW hole
  };
  model.pieces.push_back(std::move(piece));
  model.finalize();
  return model;
}

}  // namespace oracle
