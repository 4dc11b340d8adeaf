#include "powercell/scene.h"

#include <algorithm>
#include <cassert>
#include <chrono>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <unordered_set>

namespace pcell {

std::array<Site, 2> divide(const Site& parent, const TV& normal, const DivisionRule& rule,
                           T now) {
  TV offset = rule.beta * std::sqrt(parent.area_target) * normal;
  std::array<Site, 2> kids = {parent, parent};
  kids[0].position = parent.position + offset;
  kids[1].position = parent.position - offset;
  for (Site& kid : kids) {
    kid.area_target = parent.area_target / 2;
    kid.generation = parent.generation + 1;
    if (rule.has_ramp()) {
      kid.growth_t0 = now;
      kid.growth_t1 = now + rule.tau;
      kid.growth_from = kid.area_target;
      kid.growth_to = rule.gamma * parent.area_target;
    } else {
      kid.growth_t0 = kid.growth_t1 = -1;
    }
  }
  return kids;
}

TV division_normal(const Site& site, const DivisionRule& rule, std::mt19937_64& rng) {
  if (site.generation < rule.orthogonal_first)
    return site.generation % 2 == 0 ? TV(TV::UnitX()) : TV(TV::UnitY());
  std::uniform_real_distribution<T> angle(0, 2 * std::numbers::pi_v<T>);
  T a = angle(rng);
  return TV(std::cos(a), std::sin(a));
}

void apply_growth(std::vector<Site>& sites, T now) {
  for (Site& s : sites) {
    if (s.growth_t0 < 0) continue;
    T u = s.growth_t1 > s.growth_t0
              ? std::clamp((now - s.growth_t0) / (s.growth_t1 - s.growth_t0), T(0), T(1))
              : T(1);
    s.area_target = s.growth_from + u * (s.growth_to - s.growth_from);
    if (u >= 1) s.growth_t0 = s.growth_t1 = -1;
  }
}

namespace {

// Rebuild every stored trajectory after the site list changed. new_from_old[s]
// names the old site the new slot s inherits from; position rows are shifted by
// shift[s] and the rest-area row scaled by abar_scale[s] so daughters carry the
// parent's motion without a velocity kick.
void remap_history(DynamicsHistory& history, const DofMap& omap, const DofMap& nmap,
                   const std::vector<int>& new_from_old, const std::vector<TV>& shift,
                   const std::vector<T>& abar_scale) {
  if (history.empty()) return;
  history.remap([&](const VectorXT& yo) {
    VectorXT yn = VectorXT::Zero(nmap.ndofs);
    for (int s = 0; s < static_cast<int>(new_from_old.size()); ++s) {
      int o = new_from_old[s];
      for (int ax = 0; ax < kSiteAxes; ++ax) {
        int ni = nmap.site_index(s, ax);
        if (ni < 0) continue;
        int oi = omap.site_index(o, ax);
        if (oi < 0) continue;
        T v = yo[oi];
        if (ax == kSiteX) v += shift[s].x();
        if (ax == kSiteY) v += shift[s].y();
        if (ax == kSiteA) v *= abar_scale[s];
        yn[ni] = v;
      }
    }
    for (int k = 0; k < nmap.num_boundary; ++k)
      yn[nmap.boundary_index(k)] = yo[omap.boundary_index(k)];
    return yn;
  });
}

}  // namespace

int apply_divisions(System& sys, DynamicsHistory& history, const std::vector<DivisionEvent>& events,
                    const DivisionRule& rule, T now) {
  if (events.empty()) return 0;
  const int n_old = static_cast<int>(sys.sites.size());
  DofMap omap = sys.ymap;

  std::vector<int> new_from_old(n_old);
  std::vector<TV> shift(n_old, TV::Zero());
  std::vector<T> abar_scale(n_old, 1);
  for (int s = 0; s < n_old; ++s) new_from_old[s] = s;

#ifndef NDEBUG
  std::unordered_set<int> seen;
#endif
  for (const DivisionEvent& e : events) {
    assert(e.site >= 0 && e.site < n_old && seen.insert(e.site).second);
    const Site parent = sys.sites[e.site];  // copied: the slot is overwritten
    std::array<Site, 2> kids = divide(parent, e.normal, rule, now);
    sys.sites[e.site] = kids[0];
    sys.sites.push_back(kids[1]);
    shift[e.site] = kids[0].position - parent.position;
    abar_scale[e.site] = 0.5;
    new_from_old.push_back(e.site);
    shift.push_back(kids[1].position - parent.position);
    abar_scale.push_back(0.5);
  }

  sys.finalize();
  remap_history(history, omap, sys.ymap, new_from_old, shift, abar_scale);
  return static_cast<int>(events.size());
}

CollapseLog collapse_sweep(System& sys, DynamicsHistory& history, T eps_collapse,
                           T abar_floor) {
  CollapseLog log;
  DomainPolygon dom = sys.realize_domain();
  DiagramConfig cfg = sys.diagram_config;
  cfg.eager_derivatives = false;
  RestrictedDiagram dia = build_restricted_diagram(sys.sites, dom, cfg);

  const T threshold = eps_collapse * std::abs(dom.signed_area());
  for (int i = 0; i < static_cast<int>(sys.sites.size()); ++i) {
    if (cell_area(dia, i) < threshold ||
        (abar_floor > 0 && sys.sites[i].area_target <= abar_floor)) {
      log.removed.push_back(i);
      log.removed_rest_area += sys.sites[i].area_target;
    }
  }
  if (log.removed.empty()) return log;

  DofMap omap = sys.ymap;
  std::vector<Site> kept;
  std::vector<int> new_from_old;
  kept.reserve(sys.sites.size() - log.removed.size());
  size_t r = 0;
  for (int i = 0; i < static_cast<int>(sys.sites.size()); ++i) {
    if (r < log.removed.size() && log.removed[r] == i) {
      ++r;
      continue;
    }
    kept.push_back(sys.sites[i]);
    new_from_old.push_back(i);
  }
  sys.sites = std::move(kept);
  sys.finalize();
  remap_history(history, omap, sys.ymap, new_from_old,
                std::vector<TV>(new_from_old.size(), TV::Zero()),
                std::vector<T>(new_from_old.size(), 1));
  return log;
}

std::vector<Site> seed_sites(const DomainPolygon& domain, int count, T abar, std::uint64_t seed,
                             T jitter) {
  std::vector<Site> out;
  if (count <= 0 || domain.verts.empty()) return out;

  TV lo = domain.verts[0], hi = domain.verts[0];
  for (const TV& v : domain.verts) {
    lo = lo.cwiseMin(v);
    hi = hi.cwiseMax(v);
  }
  TV ext = hi - lo;

  // grid matched to the bounding-box aspect, slightly over-provisioned so that
  // non-convex domains still reach the requested count
  T aspect = ext.y() > 0 ? ext.x() / ext.y() : T(1);
  int ny = std::max(1, static_cast<int>(std::ceil(std::sqrt(count / std::max(aspect, T(1e-12))))));
  int nx = std::max(1, static_cast<int>(std::ceil(T(count) / ny)));

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<T> sym(-1, 1), uni(0, 1);

  std::vector<TV> pts;
  for (int gy = 0; gy < ny; ++gy) {
    for (int gx = 0; gx < nx; ++gx) {
      TV cellsz(ext.x() / nx, ext.y() / ny);
      TV p = lo + TV((gx + T(0.5) + jitter * sym(rng)) * cellsz.x(),
                     (gy + T(0.5) + jitter * sym(rng)) * cellsz.y());
      if (domain.contains(p)) pts.push_back(p);
    }
  }
  for (int tries = 0; static_cast<int>(pts.size()) < count && tries < 100000; ++tries) {
    TV p = lo + TV(uni(rng) * ext.x(), uni(rng) * ext.y());
    if (domain.contains(p)) pts.push_back(p);
  }
  if (static_cast<int>(pts.size()) < count)
    throw std::runtime_error("seed_sites: domain interior too small for requested count");

  out.reserve(count);
  for (int i = 0; i < count; ++i) {
    // even stride through the scan order keeps the selection spatially uniform
    const TV& p = pts[static_cast<size_t>(i) * pts.size() / count];
    Site s;
    s.position = p;
    s.area_target = abar;
    out.push_back(s);
  }
  return out;
}

bool audit_scene(const System& sys, const DynamicsHistory& history, T tiling_rtol,
                 std::string* why) {
  auto fail = [&](const std::string& msg) {
    if (why) *why = msg;
    return false;
  };

  DofMap expect = DofMap::build(sys.sites, sys.boundary.num_params());
  if (expect.ndofs != sys.ymap.ndofs || expect.site_dof != sys.ymap.site_dof ||
      expect.boundary_offset != sys.ymap.boundary_offset ||
      expect.num_boundary != sys.ymap.num_boundary)
    return fail("stale dof layout (finalize missing after a topology edit)");
  if (sys.bparams.size() != sys.boundary.num_params())
    return fail("boundary parameter vector length does not match the boundary model");
  for (const VectorXT& s : history.states)
    if (s.size() != sys.ymap.ndofs) return fail("history state length does not match dof layout");

  for (const Site& s : sys.sites) {
    if (!s.position.allFinite() || !std::isfinite(s.weight) || !std::isfinite(s.area_target))
      return fail("non-finite site state");
    if (!(s.area_target > 0)) return fail("non-positive rest area");
  }

  DomainPolygon dom = sys.realize_domain();
  DiagramConfig cfg = sys.diagram_config;
  cfg.eager_derivatives = false;
  T domain_area = std::abs(dom.signed_area());
  try {
    RestrictedDiagram dia = build_restricted_diagram(sys.sites, dom, cfg);
    T sum = 0;
    for (int i = 0; i < static_cast<int>(sys.sites.size()); ++i) sum += cell_area(dia, i);
    if (std::abs(sum - domain_area) > tiling_rtol * std::max(domain_area, T(1)))
      return fail("cells do not tile the domain: sum " + std::to_string(sum) + " vs " +
                  std::to_string(domain_area));
  } catch (const DiagramError& e) {
    return fail(std::string("diagram build failed: ") + e.what());
  }
  if (why) why->clear();
  return true;
}

RunResult run_scenario(Scenario& sc, const FrameSink& sink) {
  RunResult rr;
  System& sys = sc.sys;
  DynamicsHistory history;
  std::mt19937_64 rng(sc.seed ^ 0xd1f5eb1aull);

  // squeeze driver state: original first-piece geometry and its x extent
  std::vector<std::vector<TV>> base_loops;
  T base_x0 = 0, base_w = 1;
  if (sc.squeeze_to != 1) {
    if (sc.solver.scheme != Scheme::QuasiStatic)
      throw std::invalid_argument("squeeze driving requires the quasi-static scheme");
    if (sys.boundary.pieces.empty())
      throw std::invalid_argument("squeeze driving requires a boundary piece");
    base_loops = sys.boundary.pieces[0].rest_loops;
    T xmin = base_loops[0][0].x(), xmax = xmin;
    for (const auto& loop : base_loops)
      for (const TV& v : loop) {
        xmin = std::min(xmin, v.x());
        xmax = std::max(xmax, v.x());
      }
    base_x0 = xmin;
    base_w = xmax - xmin;
  }

  T time = 0;
  for (int f = 0; f < sc.frames; ++f) {
    auto t_start = std::chrono::steady_clock::now();
    FrameStats st;
    st.frame = f;

    if (sc.squeeze_to != 1) {
      T s = 1 + (sc.squeeze_to - 1) * T(f + 1) / T(sc.frames);
      auto& loops = sys.boundary.pieces[0].rest_loops;
      loops = base_loops;
      for (auto& loop : loops)
        for (TV& v : loop) v.x() = base_x0 + (v.x() - base_x0) * s;
      sys.finalize();
      // keep sites strictly inside the advancing wall
      T margin = T(0.02) * base_w * s;
      T xcap = base_x0 + base_w * s - margin;
      for (Site& site : sys.sites) site.position.x() = std::min(site.position.x(), xcap);
    }

    if (sc.collapse_enabled) {
      CollapseLog lg = collapse_sweep(sys, history, sc.collapse_eps, sc.collapse_abar_floor);
      st.collapses = static_cast<int>(lg.removed.size());
      st.removed_rest_area = lg.removed_rest_area;
    }

    if (sc.division_enabled) {
      std::vector<DivisionEvent> events;
      const int live = static_cast<int>(sys.sites.size());
      if (sc.division.mode == DivisionRule::Mode::Scheduled) {
        if (f > 0 && sc.division.every_frames > 0 && f % sc.division.every_frames == 0)
          for (int i = 0; i < live; ++i)
            events.push_back({i, division_normal(sys.sites[i], sc.division, rng)});
      } else {
        T h_now = sc.adaptive_h ? sc.h_ref / std::max(1, live) : sc.solver.h;
        std::uniform_real_distribution<T> uni(0, 1);
        for (int i = 0; i < live; ++i) {
          T p = std::clamp(sc.division.alpha * sys.sites[i].area_target * h_now, T(0), T(1));
          if (uni(rng) < p) events.push_back({i, division_normal(sys.sites[i], sc.division, rng)});
        }
      }
      st.divisions = apply_divisions(sys, history, events, sc.division, time);
    }

    SolverConfig cfg = sc.solver;
    if (sc.adaptive_h) cfg.h = sc.h_ref / std::max(1, static_cast<int>(sys.sites.size()));
    st.h = cfg.h;
    apply_growth(sys.sites, time + cfg.h);

    MinimizeResult res = advance(sys, history, cfg);
    time += cfg.h;
    st.time = time;
    st.num_sites = static_cast<int>(sys.sites.size());
    st.newton_iterations = res.iterations;
    st.converged = res.converged;
    st.stalled = res.stalled;
    st.grad_norm = res.grad_norm;

    if (res.eval_failed || (!res.converged && !res.stalled)) {
      rr.ok = false;
      rr.failed_frame = f;
      rr.error = res.eval_failed ? "objective evaluation failed at an accepted state"
                                 : "newton did not converge within the iteration budget";
      rr.frames.push_back(st);
      break;
    }

    DomainPolygon dom = sys.realize_domain();
    DiagramConfig dcfg = sys.diagram_config;
    dcfg.eager_derivatives = false;
    RestrictedDiagram dia;
    try {
      dia = build_restricted_diagram(sys.sites, dom, dcfg);
    } catch (const DiagramError& e) {
      rr.ok = false;
      rr.failed_frame = f;
      rr.error = std::string("diagram build failed at accepted state: ") + e.what();
      rr.frames.push_back(st);
      break;
    }
    st.domain_area = std::abs(dom.signed_area());
    for (int i = 0; i < st.num_sites; ++i) st.cell_area_sum += cell_area(dia, i);
    for (const Site& s : sys.sites) st.rest_area_sum += s.area_target;
    st.energy = cell_energies_value(sys.energy, sys.sites, dia) + sys.boundary.energy(sys.bparams);

    if (sc.audit_every_frame) {
      std::string why;
      if (!audit_scene(sys, history, sc.tiling_rtol, &why)) {
        rr.ok = false;
        rr.failed_frame = f;
        rr.error = "audit: " + why;
        rr.frames.push_back(st);
        break;
      }
    }

    st.wall_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t_start)
            .count();
    rr.frames.push_back(st);
    if (sink) sink(sc, dia, st);
  }
  return rr;
}

// ------------------------------------------------------------------- presets

namespace {

void set_site_dynamics(std::vector<Site>& sites, std::array<bool, kSiteAxes> dofs,
                       std::array<T, kSiteAxes> visc, std::array<T, kSiteAxes> mass) {
  for (Site& s : sites) {
    s.dof_active = dofs;
    s.viscosity = visc;
    s.mass = mass;
  }
}

}  // namespace

Scenario preset_two_cells() {
  Scenario sc;
  sc.name = "two_cells";
  sc.description = "two equal cells in a unit box relaxing to the symmetric split";
  sc.sys.boundary = make_rect_boundary(1, 1);
  Site a;
  a.position = TV(0.31, 0.52);
  a.area_target = 0.5;
  Site b;
  b.position = TV(0.68, 0.47);
  b.area_target = 0.5;
  sc.sys.sites = {a, b};
  sc.sys.energy.terms = {{EnergyKind::AreaTargetQuadratic, 1.0, false},
                         {EnergyKind::SiteCentroid, 0.1, false}};
  sc.sys.finalize();
  sc.solver.scheme = Scheme::QuasiStatic;
  sc.frames = 2;
  return sc;
}

Scenario preset_squeeze(int cells, int frames, T squeeze_to, std::uint64_t seed) {
  Scenario sc;
  sc.name = "squeeze" + std::to_string(cells);
  sc.description = "quasi-static foam compressed to " + std::to_string(squeeze_to) +
                   " of its width by a moving wall";
  sc.sys.boundary = make_rect_boundary(1, 1);
  sc.sys.finalize();
  sc.sys.sites = seed_sites(sc.sys.realize_domain(), cells, T(1) / cells, seed);
  sc.sys.energy.terms = {{EnergyKind::AreaTargetQuadratic, 1.0, false},
                         {EnergyKind::SiteCentroid, 0.05, false}};
  sc.sys.finalize();
  sc.solver.scheme = Scheme::QuasiStatic;
  sc.solver.grad_tol = 1e-7;
  sc.frames = frames;
  sc.seed = seed;
  sc.squeeze_to = squeeze_to;
  return sc;
}

Scenario preset_coarsening(int cells, std::uint64_t seed) {
  Scenario sc;
  sc.name = "coarsen2d_" + std::to_string(cells);
  sc.description = "dry-foam coarsening: perimeter-driven, rest areas relax as slow dofs, "
                   "vanished cells are removed";
  sc.sys.boundary = make_rect_boundary(2, 2);
  sc.sys.finalize();
  sc.sys.sites = seed_sites(sc.sys.realize_domain(), cells, T(4) / cells, seed);

  // settle the raw seeding with the smooth terms first so the run starts from a
  // near-centroidal state instead of spending frame 0 on a huge relaxation
  sc.sys.energy.terms = {{EnergyKind::RelativeAreaQuadratic, 0.002, false},
                         {EnergyKind::SiteCentroid, 0.1, false}};
  sc.sys.finalize();
  SolverConfig relax;
  relax.grad_tol = 1e-8;
  solve_equilibrium(sc.sys, relax);

  set_site_dynamics(sc.sys.sites, {true, true, true, true}, {1e-4, 1e-4, 1e-4, 1.0},
                    {0, 0, 0, 0});
  // perimeter drive pinned just under the dead-cell area penalty: a vanishing
  // cell then has to wait for its rest area to relax, which paces the
  // coarsening instead of letting the first frame cull the population
  T abar0 = T(4) / cells;
  sc.sys.energy.terms.push_back(
      {EnergyKind::Perimeter, T(0.9) * 0.002 / (4 * std::sqrt(abar0)), false});
  // terminal shrinkage runs (A, abar) -> 0 together; wall off the relative-area
  // singularity and have the sweep take cells once they sit on the wall
  sc.sys.energy.abar_floor = 0.05 * abar0;
  sc.sys.energy.abar_floor_stiffness = 0.002 / (sc.sys.energy.abar_floor * sc.sys.energy.abar_floor);
  sc.collapse_abar_floor = 1.05 * sc.sys.energy.abar_floor;
  sc.sys.finalize();
  sc.solver.scheme = Scheme::MomentumlessBDF1;
  sc.solver.grad_tol = 1e-6;
  sc.frames = 3800;
  sc.seed = seed;
  sc.adaptive_h = true;
  sc.h_ref = 1.0;
  sc.collapse_enabled = true;
  sc.collapse_eps = 1e-6;
  return sc;
}

Scenario preset_navigation(int cells, int frames, bool symmetric_body, std::uint64_t seed) {
  Scenario sc;
  sc.name = symmetric_body ? "rigid_body_symmetric" : "rigid_body";
  sc.description = "rigid body pushed through a confluent tissue by a constant force";

  sc.sys.boundary = make_rect_boundary(4, 2);
  BoundaryPiece body;
  body.mode = BoundaryMode::Rigid;
  std::vector<TV> outline;
  if (symmetric_body) {
    // mirror-exact slender octagon. No vertex on the axis — an on-axis vertex
    // would sit exactly on the bisector of every mirrored site pair and
    // degenerate the clipping there. Elongated along the push direction so the
    // aligned orientation is the stable one.
    const std::vector<TV> bottom = {{0.72, 0.98}, {0.85, 0.92}, {1.15, 0.92}, {1.28, 0.98}};
    outline = bottom;
    for (auto it = bottom.rbegin(); it != bottom.rend(); ++it)
      outline.push_back(TV(it->x(), 2.0 - it->y()));
  } else {
    // blunt nose up front, slanted tail: breaks the up-down symmetry
    outline = {{0.72, 0.95}, {1.04, 0.88}, {1.28, 1.0}, {1.04, 1.06}, {0.72, 1.03}};
  }
  std::reverse(outline.begin(), outline.end());  // hole loops wind clockwise
  body.rest_loops = {outline};
  TV pivot = TV::Zero();
  for (const TV& v : outline) pivot += v;
  body.pivot = pivot / static_cast<T>(outline.size());
  body.ext_force = TV(0.035, 0);
  body.rigid_mass = {0.0003, 0.0003, 3e-5};
  body.rigid_viscosity = {0.003, 0.003, 3e-4};
  sc.sys.boundary.pieces.push_back(body);
  sc.sys.finalize();

  DomainPolygon dom = sc.sys.realize_domain();
  T abar = std::abs(dom.signed_area()) / cells;
  if (symmetric_body) {
    // seed the lower half-strip and reflect about y = 1 so the population is
    // exactly mirror-symmetric; seeds under the body are dropped pairwise
    DomainPolygon half;
    half.verts = {TV(0, 0), TV(4, 0), TV(4, 1), TV(0, 1)};
    half.loops = {{0, 1, 2, 3}};
    half.edge_ids = {{0, 1, 2, 3}};
    std::vector<Site> lower = seed_sites(half, cells / 2, abar, seed);
    std::vector<Site> all;
    for (const Site& s : lower) {
      Site m = s;
      m.position.y() = 2.0 - s.position.y();
      if (!dom.contains(s.position) || !dom.contains(m.position)) continue;
      all.push_back(s);
      all.push_back(m);
    }
    // an exactly mirrored population is degenerate: wherever a mirrored pair
    // meets a third cell on the axis, the junction is equidistant from four
    // sites at once. A deterministic sub-resolution jitter splits those ties
    // while keeping the asymmetry orders of magnitude below the cell scale.
    std::mt19937_64 jrng(seed ^ 0x9e3779b97f4a7c15ull);
    std::uniform_real_distribution<T> uni(-1, 1);
    for (Site& s : all) s.position += TV(uni(jrng), uni(jrng)) * 1e-7;
    sc.sys.sites = all;
  } else {
    sc.sys.sites = seed_sites(dom, cells, abar, seed);
  }
  for (Site& s : sc.sys.sites) s.area_target = abar;
  set_site_dynamics(sc.sys.sites, {true, true, false, false}, {0.0003, 0.0003, 0, 0},
                    {0.0003, 0.0003, 0, 0});
  sc.sys.energy.terms = {{EnergyKind::AreaTargetQuadratic, 0.05, false},
                         {EnergyKind::SecondMoment, 100.0, false},
                         {EnergyKind::SiteCentroid, 1.0, false}};
  sc.sys.finalize();

  sc.solver.scheme = Scheme::BDF2;
  sc.solver.h = 0.01;
  sc.solver.grad_tol = 1e-7;
  sc.frames = frames;
  sc.seed = seed;
  return sc;
}

Scenario preset_convergence(Scheme scheme, bool with_perimeter, T h) {
  Scenario sc;
  sc.name = "convergence";
  sc.description = "four inertial cells relaxing through one neighbor exchange";
  sc.sys.boundary = make_rect_boundary(1, 1);
  const std::array<TV, 4> pos = {TV(0.24, 0.46), TV(0.46, 0.22), TV(0.56, 0.74),
                                 TV(0.78, 0.52)};
  for (const TV& p : pos) {
    Site s;
    s.position = p;
    s.area_target = 0.25;
    sc.sys.sites.push_back(s);
  }
  set_site_dynamics(sc.sys.sites, {true, true, false, false}, {0.0005, 0.0005, 0, 0},
                    {0.001, 0.001, 0, 0});
  sc.sys.energy.terms = {{EnergyKind::AreaTargetQuadratic, 0.5, false},
                         {EnergyKind::SiteCentroid, 0.2, false}};
  if (with_perimeter) sc.sys.energy.terms.push_back({EnergyKind::Perimeter, 0.02, false});
  sc.sys.finalize();
  sc.solver.scheme = scheme;
  sc.solver.h = h;
  sc.solver.grad_tol = 1e-9;
  // the quartet is underdamped: ending at t = 0.2 captures exactly one neighbor
  // exchange (t ~ 0.123) and stops the probe mid-motion, before the swing back
  sc.frames = static_cast<int>(std::lround(0.2 / h));
  return sc;
}

Scenario preset_membrane_growth(int doublings, int division_period) {
  Scenario sc;
  sc.name = "membrane_growth";
  sc.description = "one cell inside an elastic membrane dividing to " +
                   std::to_string(1 << doublings) + " cells, rest area conserved";
  BoundaryPiece membrane;
  membrane.mode = BoundaryMode::Deformable;
  membrane.rest_loops = {regular_polygon(TV(0, 0), 0.6, 24)};
  membrane.edge_stiffness = 0.5;
  membrane.vert_viscosity = 0.01;
  sc.sys.boundary.pieces = {membrane};

  Site seed;
  seed.position = TV(0.013, -0.007);  // slight offset keeps cleavage planes generic
  seed.area_target = 1.1;
  sc.sys.sites = {seed};
  set_site_dynamics(sc.sys.sites, {true, true, false, false}, {0.01, 0.01, 0, 0}, {0, 0, 0, 0});
  sc.sys.energy.terms = {{EnergyKind::RelativeAreaQuadratic, 1.0, false},
                         {EnergyKind::SecondMoment, 0.2, true},
                         {EnergyKind::SiteCentroid, 0.1, true}};
  sc.sys.finalize();

  sc.solver.scheme = Scheme::MomentumlessBDF1;
  sc.solver.h = 0.01;
  sc.solver.grad_tol = 1e-6;
  sc.division_enabled = true;
  sc.division.mode = DivisionRule::Mode::Scheduled;
  sc.division.every_frames = division_period;
  sc.division.beta = 0.1;
  sc.division.gamma = 0.5;  // pure cleavage: total rest area is conserved
  sc.division.orthogonal_first = 2;
  sc.frames = division_period * (doublings + 1);
  return sc;
}

Scenario preset_proliferation(int frames, std::uint64_t seed) {
  Scenario sc;
  sc.name = "proliferation";
  sc.description = "stochastically dividing colony under gravity in a closed box";
  sc.sys.boundary = make_rect_boundary(2.0, 1.0);
  sc.sys.finalize();
  sc.sys.sites = seed_sites(sc.sys.realize_domain(), 4, 0.08, seed);
  // weights as dofs: crowded cells shrink through the power radius instead of
  // degenerating into slivers, and the sweep removes the fully crushed ones
  set_site_dynamics(sc.sys.sites, {true, true, true, false}, {0.01, 0.01, 0.01, 0},
                    {0, 0, 0, 0});
  sc.sys.energy.terms = {{EnergyKind::RelativeAreaQuadratic, 1.0, false},
                         {EnergyKind::SiteCentroid, 0.1, true},
                         {EnergyKind::Gravity, 0.15, false}};
  sc.sys.finalize();

  sc.solver.scheme = Scheme::MomentumlessBDF1;
  sc.solver.h = 0.01;
  sc.solver.grad_tol = 1e-6;
  sc.division_enabled = true;
  sc.division.mode = DivisionRule::Mode::Probabilistic;
  sc.division.alpha = 30.0;
  sc.division.beta = 0.1;
  sc.division.gamma = 0.75;  // daughters grow back to 3/4 of the parent rest area
  sc.division.tau = 0.11;
  sc.division.orthogonal_first = 2;
  sc.collapse_enabled = true;
  sc.collapse_eps = 1e-7;
  sc.frames = frames;
  sc.seed = seed;
  return sc;
}

Scenario make_preset(const std::string& name) {
  if (name == "two_cells") return preset_two_cells();
  if (name == "squeeze30") return preset_squeeze();
  if (name == "coarsen2d_200") return preset_coarsening();
  if (name == "convergence_bdf1") return preset_convergence(Scheme::BDF1, false, 0.005);
  if (name == "convergence_bdf2") return preset_convergence(Scheme::BDF2, false, 0.005);
  if (name == "convergence_bdf2_perimeter")
    return preset_convergence(Scheme::BDF2, true, 0.005);
  if (name == "rigid_body") return preset_navigation();
  if (name == "rigid_body_symmetric") return preset_navigation(420, 60, true, 3);
  if (name == "membrane_growth") return preset_membrane_growth();
  if (name == "proliferation") return preset_proliferation();
  throw std::invalid_argument("unknown preset: " + name);
}

std::vector<std::string> preset_names() {
  return {"two_cells",         "squeeze30",        "coarsen2d_200",
          "convergence_bdf1",  "convergence_bdf2", "convergence_bdf2_perimeter",
          "rigid_body",        "rigid_body_symmetric", "membrane_growth",
          "proliferation"};
}

}  // namespace pcell
