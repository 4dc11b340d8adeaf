#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "powercell/scene.h"

#include "oracles.h"

#include <cmath>

using namespace pcell;

TEST_CASE("division places daughters at +-beta sqrt(abar) n and halves the rest area") {
  Site parent;
  parent.position = TV(0, 0);
  parent.area_target = 1.0;
  parent.weight = 0.37;
  DivisionRule rule;
  rule.beta = 0.1;

  auto kids = divide(parent, TV(1, 0), rule);
  CHECK(oracle::close(kids[0].position.x(), 0.1, 1e-15));
  CHECK(kids[0].position.y() == 0.0);
  CHECK(oracle::close(kids[1].position.x(), -0.1, 1e-15));
  CHECK(kids[0].area_target == 0.5);
  CHECK(kids[1].area_target == 0.5);
  CHECK(kids[0].area_target + kids[1].area_target == parent.area_target);  // exact
  CHECK(kids[0].weight == parent.weight);
  CHECK(kids[0].generation == 1);

  parent.area_target = 4.0;
  kids = divide(parent, TV(0, 1), rule);
  CHECK(kids[0].position.x() == 0.0);
  CHECK(oracle::close(kids[0].position.y(), 0.2, 1e-15));
  CHECK(oracle::close(kids[1].position.y(), -0.2, 1e-15));
  CHECK(kids[0].area_target + kids[1].area_target == parent.area_target);
}

TEST_CASE("cleavage normals cycle the axes first, then randomize") {
  DivisionRule rule;
  rule.orthogonal_first = 2;
  std::mt19937_64 rng(7);

  Site s;
  s.generation = 0;
  CHECK(division_normal(s, rule, rng) == TV::UnitX());
  s.generation = 1;
  CHECK(division_normal(s, rule, rng) == TV::UnitY());

  s.generation = 2;
  TV n1 = division_normal(s, rule, rng);
  CHECK(oracle::close(n1.norm(), 1.0, 1e-14));
  std::mt19937_64 rng2(7);
  s.generation = 0;
  division_normal(s, rule, rng2);
  s.generation = 1;
  division_normal(s, rule, rng2);
  s.generation = 2;
  CHECK(division_normal(s, rule, rng2) == n1);  // deterministic in the rng state
}

TEST_CASE("growth ramp rises linearly from half to gamma of the parent rest area") {
  Site parent;
  parent.area_target = 0.2;
  DivisionRule rule;
  rule.gamma = 0.75;
  rule.tau = 0.11;
  REQUIRE(rule.has_ramp());

  auto kids = divide(parent, TV(1, 0), rule, /*now=*/3.0);
  Site kid = kids[0];
  CHECK(kid.growth_t0 == 3.0);
  CHECK(oracle::close(kid.growth_t1, 3.11, 1e-15));
  CHECK(kid.growth_from == 0.1);
  CHECK(oracle::close(kid.growth_to, 0.15, 1e-15));

  std::vector<Site> sites = {kid};
  apply_growth(sites, 3.0);
  CHECK(oracle::close(sites[0].area_target, 0.1, 1e-15));
  apply_growth(sites, 3.0 + 0.055);
  CHECK(oracle::close(sites[0].area_target, 0.125, 1e-12));
  apply_growth(sites, 4.0);
  CHECK(oracle::close(sites[0].area_target, 0.15, 1e-15));
  CHECK(sites[0].growth_t0 < 0);  // ramp retired

  // no ramp configured: daughters carry no growth state
  DivisionRule flat;
  auto flat_kids = divide(parent, TV(1, 0), flat, 3.0);
  CHECK(flat_kids[0].growth_t0 < 0);
}

namespace {

System three_cell_box() {
  System sys;
  sys.boundary = make_rect_boundary(1, 1);
  const std::array<TV, 3> pos = {TV(0.25, 0.3), TV(0.6, 0.6), TV(0.75, 0.25)};
  for (const TV& p : pos) {
    Site s;
    s.position = p;
    s.area_target = 1.0 / 3;
    sys.sites.push_back(s);
  }
  sys.energy.terms = {{EnergyKind::AreaTargetQuadratic, 1.0, false},
                      {EnergyKind::SiteCentroid, 0.1, false}};
  sys.finalize();
  return sys;
}

}  // namespace

TEST_CASE("batched division rebuilds the layout and remaps history without velocity kicks") {
  System sys = three_cell_box();
  DynamicsHistory history;
  VectorXT y0 = sys.state();
  VectorXT y1 = y0 + 0.01 * VectorXT::Ones(y0.size());  // uniform drift
  history.push(y1);
  history.push(y0);  // most recent first: state(0) == y0

  DivisionRule rule;
  rule.beta = 0.1;
  int n = apply_divisions(sys, history, {{1, TV(0, 1)}}, rule, 0.0);
  CHECK(n == 1);
  REQUIRE(sys.sites.size() == 4);
  CHECK(sys.ymap.ndofs == 8);

  T off = 0.1 * std::sqrt(1.0 / 3);
  CHECK(oracle::close(sys.sites[1].position.y(), 0.6 + off, 1e-14));
  CHECK(oracle::close(sys.sites[3].position.y(), 0.6 - off, 1e-14));
  CHECK(sys.sites[1].area_target == sys.sites[3].area_target);
  CHECK(sys.sites[1].area_target * 2 == T(1.0 / 3));

  // daughters inherit the parent trajectory: per-dof velocity is preserved
  REQUIRE(history.states.size() == 2);
  VectorXT v = history.state(0) - history.state(1);
  for (int i = 0; i < v.size(); ++i) CHECK(oracle::close(v[i], -0.01, 1e-14));
  // and the current row matches the freshly placed daughters
  CHECK(oracle::close(history.state(0)[sys.ymap.site_index(3, kSiteY)],
                      sys.sites[3].position.y(), 1e-14));
}

TEST_CASE("collapse sweep removes empty cells and keeps the tiling") {
  System sys = three_cell_box();
  sys.sites[2].weight = -10.0;  // pushed out of the tessellation entirely
  sys.finalize();
  DynamicsHistory history;
  history.push(sys.state());

  CollapseLog lg = collapse_sweep(sys, history, 1e-9);
  REQUIRE(lg.removed == std::vector<int>{2});
  CHECK(lg.removed_rest_area == T(1.0 / 3));
  CHECK(sys.sites.size() == 2);
  CHECK(history.state(0).size() == sys.ymap.ndofs);

  std::string why;
  CHECK(audit_scene(sys, history, 1e-9, &why));
  CHECK(why.empty());

  // healthy configuration: nothing to remove
  System ok = three_cell_box();
  DynamicsHistory h2;
  CollapseLog none = collapse_sweep(ok, h2, 1e-9);
  CHECK(none.removed.empty());
  CHECK(ok.sites.size() == 3);
}

TEST_CASE("rest-area wall: value/gradient consistent, pinned cells swept") {
  System sys = three_cell_box();
  for (Site& s : sys.sites) s.dof_active = {true, true, false, true};
  sys.sites[1].area_target = 0.02;
  sys.finalize();
  VectorXT y = sys.state();

  T e_off;
  REQUIRE(sys.eval(y, 0, e_off));
  sys.energy.abar_floor = 0.05;
  sys.energy.abar_floor_stiffness = 100.0;
  T e_on;
  VectorXT g;
  REQUIRE(sys.eval(y, 1, e_on, &g));
  CHECK(oracle::close(e_on - e_off, 100.0 * 0.03 * 0.03, 1e-12));

  auto f = [&](const VectorXT& x) {
    T v;
    REQUIRE(sys.eval(x, 0, v));
    return v;
  };
  VectorXT gfd = oracle::fd_gradient(f, y, 1e-6);
  for (int i = 0; i < y.size(); ++i) CHECK(oracle::close(g[i], gfd[i], 1e-5));

  DynamicsHistory hist;
  CollapseLog lg = collapse_sweep(sys, hist, 1e-9, 0.05);
  CHECK(lg.removed == std::vector<int>{1});
  CHECK(sys.sites.size() == 2);
}

TEST_CASE("seeding is deterministic, in-domain and hits the requested count") {
  BoundaryModel box = make_rect_boundary(2, 1);
  box.finalize();
  DomainPolygon dom = box.realize(box.rest_params());

  auto a = seed_sites(dom, 37, 0.05, 11);
  auto b = seed_sites(dom, 37, 0.05, 11);
  auto c = seed_sites(dom, 37, 0.05, 12);
  REQUIRE(a.size() == 37);
  bool same = true, diff = false;
  for (size_t i = 0; i < a.size(); ++i) {
    same = same && a[i].position == b[i].position;
    diff = diff || a[i].position != c[i].position;
    CHECK(dom.contains(a[i].position));
    CHECK(a[i].area_target == 0.05);
  }
  CHECK(same);
  CHECK(diff);
}

TEST_CASE("audit flags a stale dof layout") {
  System sys = three_cell_box();
  DynamicsHistory history;
  std::string why;
  CHECK(audit_scene(sys, history, 1e-9, &why));

  sys.sites.push_back(sys.sites[0]);  // edited without finalize
  CHECK_FALSE(audit_scene(sys, history, 1e-9, &why));
  CHECK(why.find("stale") != std::string::npos);
}

TEST_CASE("two relaxed cells settle on the symmetric split") {
  Scenario sc = preset_two_cells();
  RunResult rr = run_scenario(sc);
  REQUIRE(rr.ok);
  REQUIRE(rr.frames.size() == 2);
  for (const FrameStats& st : rr.frames) {
    CHECK(st.converged);
    CHECK(oracle::close(st.cell_area_sum, st.domain_area, 1e-9));
  }
  CHECK(oracle::close(sc.sys.sites[0].position.x(), 0.25, 1e-5));
  CHECK(oracle::close(sc.sys.sites[1].position.x(), 0.75, 1e-5));
  CHECK(oracle::close(sc.sys.sites[0].position.y(), 0.5, 1e-5));
}

TEST_CASE("squeeze run keeps the tiling while the wall advances") {
  Scenario sc = preset_squeeze(12, 20, 0.9, 1);
  RunResult rr = run_scenario(sc);
  REQUIRE_MESSAGE(rr.ok, rr.error);
  REQUIRE(rr.frames.size() == 20);
  CHECK(oracle::close(rr.frames.back().domain_area, 0.9, 1e-12));
  for (const FrameStats& st : rr.frames) CHECK(st.num_sites == 12);
}

TEST_CASE("membrane growth reaches the scheduled population and conserves rest area") {
  Scenario sc = preset_membrane_growth(3, 8);
  T abar0 = sc.sys.sites[0].area_target;
  RunResult rr = run_scenario(sc);
  REQUIRE_MESSAGE(rr.ok, rr.error);
  REQUIRE(static_cast<int>(rr.frames.size()) == sc.frames);
  CHECK(rr.frames.back().num_sites == 8);

  int doublings_seen = 0;
  for (const FrameStats& st : rr.frames) {
    CHECK(oracle::close(st.rest_area_sum, abar0, 1e-13));
    if (st.divisions > 0) ++doublings_seen;
  }
  CHECK(doublings_seen == 3);
}

TEST_CASE("probabilistic proliferation is reproducible for a fixed seed") {
  Scenario a = preset_proliferation(25, 5);
  Scenario b = preset_proliferation(25, 5);
  RunResult ra = run_scenario(a);
  RunResult rb = run_scenario(b);
  REQUIRE_MESSAGE(ra.ok, ra.error);
  REQUIRE(ra.frames.size() == rb.frames.size());
  for (size_t f = 0; f < ra.frames.size(); ++f) {
    CHECK(ra.frames[f].num_sites == rb.frames[f].num_sites);
    CHECK(ra.frames[f].divisions == rb.frames[f].divisions);
    CHECK(ra.frames[f].energy == rb.frames[f].energy);
  }
}

TEST_CASE("small coarsening run: population never grows, audits stay green") {
  Scenario sc = preset_coarsening(30, 2);
  sc.frames = 60;
  RunResult rr = run_scenario(sc);
  REQUIRE_MESSAGE(rr.ok, rr.error);
  int prev = 1 << 30;
  for (const FrameStats& st : rr.frames) {
    CHECK(st.num_sites <= prev);
    prev = st.num_sites;
  }
}

TEST_CASE("asymmetric body curves off axis, symmetric body holds it") {
  // same tissue, same force, 20 frames: the cambered body must show a clear
  // lateral deflection while the mirror-symmetric one stays on the axis
  Scenario asym = preset_navigation(420, 20, false, 3);
  RunResult ra = run_scenario(asym);
  REQUIRE_MESSAGE(ra.ok, ra.error);
  CHECK(asym.sys.bparams[0] > 0.1);                  // it did travel
  CHECK(std::abs(asym.sys.bparams[1]) > 1e-2);       // and deflected
  CHECK(std::abs(asym.sys.bparams[2]) > 5e-2);

  Scenario sym = preset_navigation(420, 20, true, 3);
  T ty_max = 0, th_max = 0;
  RunResult rs = run_scenario(sym, [&](const Scenario& s, const RestrictedDiagram&,
                                       const FrameStats&) {
    ty_max = std::max(ty_max, std::abs(s.sys.bparams[1]));
    th_max = std::max(th_max, std::abs(s.sys.bparams[2]));
  });
  REQUIRE_MESSAGE(rs.ok, rs.error);
  CHECK(sym.sys.bparams[0] > 0.1);
  CHECK(ty_max < 5e-3);
  CHECK(th_max < 2e-2);
}
