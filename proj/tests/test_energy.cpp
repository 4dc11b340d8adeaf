#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"
#include "oracles.h"
#include "powercell/energy.h"
#include "powercell/measures.h"

#include <random>

using namespace pcell;

namespace {

DomainPolygon unit_square() { return make_rect_boundary(1, 1).realize(VectorXT()); }

Site site_at(T x, T y, T w = 0, T abar = 1) {
  Site s;
  s.position = TV(x, y);
  s.weight = w;
  s.area_target = abar;
  return s;
}

EnergyModel one_term(EnergyKind kind, T coeff, bool normalized = false) {
  EnergyModel m;
  m.terms.push_back({kind, coeff, normalized});
  return m;
}

T value_of(const EnergyModel& model, const std::vector<Site>& sites, const DomainPolygon& dom) {
  auto dia = build_restricted_diagram(sites, dom);
  return cell_energies_value(model, sites, dia);
}

// total cell energy as a function of the flat dof vector, diagram rebuilt from
// scratch every call — the reference the analytic chain is checked against
T value_at_y(const EnergyModel& model, std::vector<Site> sites, const BoundaryModel* bm,
             VectorXT bparams, const DomainPolygon* fixed_dom, const DofMap& ymap,
             const VectorXT& y) {
  ymap.scatter(y, sites, bparams);
  DomainPolygon dom = bm ? bm->realize(bparams) : *fixed_dom;
  auto dia = build_restricted_diagram(sites, dom);
  return cell_energies_value(model, sites, dia);
}

VectorXT grad_at_y(const EnergyModel& model, std::vector<Site> sites, const BoundaryModel* bm,
                   VectorXT bparams, const DomainPolygon* fixed_dom, const DofMap& ymap,
                   const VectorXT& y) {
  ymap.scatter(y, sites, bparams);
  DomainPolygon dom = bm ? bm->realize(bparams) : *fixed_dom;
  auto dia = build_restricted_diagram(sites, dom);
  std::vector<BVertParam> bvp;
  if (bm) bvp = bm->vertex_params(bparams);
  auto d = assemble_cell_energies(model, sites, dia, ymap, 1, bm ? &bvp : nullptr);
  return d.grad;
}

MatrixXT dense_hess(const EnergyDerivatives& d, int n) {
  StiffnessMatrix H(n, n);
  H.setFromTriplets(d.hess.begin(), d.hess.end());
  return MatrixXT(H);
}

}  // namespace

TEST_CASE("single cell pinned energies") {
  DomainPolygon square = unit_square();
  std::vector<Site> sites = {site_at(0.4, 0.55)};

  CHECK(value_of(one_term(EnergyKind::AreaTargetQuadratic, 1), sites, square) ==
        doctest::Approx(0.0).epsilon(1e-12));
  sites[0].area_target = 0.5;
  CHECK(value_of(one_term(EnergyKind::AreaTargetQuadratic, 1), sites, square) ==
        doctest::Approx(0.25));
  CHECK(value_of(one_term(EnergyKind::RelativeAreaQuadratic, 2), sites, square) ==
        doctest::Approx(2.0));  // (1/0.5 - 1)^2 * 2
  sites[0].area_target = 1;

  CHECK(value_of(one_term(EnergyKind::Perimeter, 1.5), sites, square) == doctest::Approx(6.0));
  CHECK(value_of(one_term(EnergyKind::PerimeterQuadratic, 1), sites, square) ==
        doctest::Approx(16.0));
  CHECK(value_of(one_term(EnergyKind::Gravity, 3), sites, square) == doctest::Approx(1.5));

  // integral |x-c|^2 over the unit square, site at (0.4, 0.55)
  T want = (1.0 / 12 + 0.1 * 0.1) + (1.0 / 12 + 0.05 * 0.05);
  CHECK(value_of(one_term(EnergyKind::SiteMoment, 1), sites, square) == doctest::Approx(want));

  CHECK(value_of(one_term(EnergyKind::SiteCentroid, 1), sites, square) ==
        doctest::Approx(0.01 + 0.0025));
  sites[0].area_target = 2;
  CHECK(value_of(one_term(EnergyKind::SiteCentroid, 1, true), sites, square) ==
        doctest::Approx(0.0125 / 2));
  CHECK(value_of(one_term(EnergyKind::SecondMoment, 1, true), sites, square) ==
        doctest::Approx((1.0 / 6) / 4));
  sites[0].area_target = 1;
  CHECK(value_of(one_term(EnergyKind::SecondMoment, 1), sites, square) ==
        doctest::Approx(1.0 / 6));
}

TEST_CASE("two symmetric cells: perimeter counts the interface once per cell") {
  DomainPolygon square = unit_square();
  std::vector<Site> sites = {site_at(0.25, 0.5, 0, 0.5), site_at(0.75, 0.5, 0, 0.5)};
  CHECK(value_of(one_term(EnergyKind::Perimeter, 1), sites, square) == doctest::Approx(6.0));
  CHECK(value_of(one_term(EnergyKind::AreaTargetQuadratic, 1), sites, square) ==
        doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("value path and assembled order-0 agree, reports match") {
  DomainPolygon square = unit_square();
  std::vector<Site> sites = {site_at(0.3, 0.4), site_at(0.7, 0.6, -10.0)};  // second cell empty
  EnergyModel model;
  model.terms.push_back({EnergyKind::AreaTargetQuadratic, 1.0, false});
  model.terms.push_back({EnergyKind::SiteCentroid, 0.5, false});

  auto dia = build_restricted_diagram(sites, square);
  EnergyReport rep;
  T v = cell_energies_value(model, sites, dia, &rep);
  REQUIRE(rep.empty_cells == std::vector<int>{1});
  CHECK(rep.centroid_skipped);

  auto ymap = DofMap::build(sites);
  auto d = assemble_cell_energies(model, sites, dia, ymap, 0);
  CHECK(d.value == doctest::Approx(v).epsilon(1e-14));
  CHECK(d.report.empty_cells == rep.empty_cells);

  // the empty cell still pulls on its rest area: d/dabar (0 - abar)^2 = 2 abar
  std::vector<Site> s2 = sites;
  for (auto& s : s2) s.dof_active = {true, true, true, true};
  auto ymap2 = DofMap::build(s2);
  auto d2 = assemble_cell_energies(model, s2, dia, ymap2, 2);
  int ia = ymap2.site_index(1, kSiteA);
  CHECK(d2.grad[ia] == doctest::Approx(2.0 * s2[1].area_target));
  CHECK(d2.grad[ymap2.site_index(1, kSiteX)] == doctest::Approx(0.0));
  CHECK(d2.grad[ymap2.site_index(1, kSiteW)] == doctest::Approx(0.0));
  MatrixXT H = dense_hess(d2, ymap2.ndofs);
  CHECK(H(ia, ia) == doctest::Approx(2.0));
}

TEST_CASE("symmetric two-site split has symmetric gradient") {
  DomainPolygon square = unit_square();
  std::vector<Site> sites = {site_at(0.25, 0.5, 0, 0.5), site_at(0.75, 0.5, 0, 0.5)};
  EnergyModel model;
  model.terms.push_back({EnergyKind::AreaTargetQuadratic, 1.0, false});
  model.terms.push_back({EnergyKind::PerimeterQuadratic, 0.3, false});
  model.terms.push_back({EnergyKind::SiteCentroid, 0.7, false});

  auto dia = build_restricted_diagram(sites, square);
  auto ymap = DofMap::build(sites);
  auto d = assemble_cell_energies(model, sites, dia, ymap, 1);
  // mirror symmetry about y = 0.5 kills the y components; x components oppose
  CHECK(std::abs(d.grad[ymap.site_index(0, kSiteY)]) < 1e-12);
  CHECK(std::abs(d.grad[ymap.site_index(1, kSiteY)]) < 1e-12);
  CHECK(d.grad[ymap.site_index(0, kSiteX)] ==
        doctest::Approx(-d.grad[ymap.site_index(1, kSiteX)]).epsilon(1e-10));
}

TEST_CASE("site-moment gradient reproduces the classical centroidal identity") {
  // For unweighted diagrams, d/dc_i of sum_j integral |x - c_j|^2 dA collapses to
  // 2 A_i (c_i - centroid_i): every vertex-motion term cancels. The assembled
  // gradient runs through the full vertex chain, so agreement is a strong,
  // independent check of the whole pipeline.
  DomainPolygon square = unit_square();
  std::mt19937_64 rng(71);
  for (int trial = 0; trial < 5; ++trial) {
    auto sites = oracle::random_sites(rng, square, 9, 0.02, 0.04, 0.0);
    auto dia = build_restricted_diagram(sites, square);
    auto ymap = DofMap::build(sites);  // positions only by default
    auto d = assemble_cell_energies(one_term(EnergyKind::SiteMoment, 1), sites, dia, ymap, 1);
    for (size_t i = 0; i < sites.size(); ++i) {
      auto cm = cell_measures(dia, static_cast<int>(i));
      REQUIRE(cm.has_centroid);
      TV want = 2 * cm.area * (sites[i].position - cm.centroid);
      CHECK(oracle::close(d.grad[ymap.site_index(static_cast<int>(i), kSiteX)], want.x(), 1e-8,
                          1e-3));
      CHECK(oracle::close(d.grad[ymap.site_index(static_cast<int>(i), kSiteY)], want.y(), 1e-8,
                          1e-3));
    }
  }
}

TEST_CASE("gradients and hessians match finite differences over site dofs") {
  DomainPolygon square = unit_square();
  std::mt19937_64 rng(123);

  EnergyModel model;
  model.terms.push_back({EnergyKind::AreaTargetQuadratic, 1.0, false});
  model.terms.push_back({EnergyKind::PerimeterQuadratic, 0.05, false});
  model.terms.push_back({EnergyKind::SecondMoment, 0.4, true});
  model.terms.push_back({EnergyKind::SiteCentroid, 0.6, true});
  model.terms.push_back({EnergyKind::Gravity, 0.2, false});
  model.terms.push_back({EnergyKind::RelativeAreaQuadratic, 0.3, false});

  const T h = 1e-6;
  for (int trial = 0; trial < 3; ++trial) {
    auto sites = oracle::random_sites(rng, square, 6, 0.05, 0.08, 0.01);
    for (size_t i = 0; i < sites.size(); ++i) {
      sites[i].area_target = 1.0 / 6 + 0.02 * static_cast<int>(i % 3);
      sites[i].dof_active = {true, true, i % 2 == 0, i % 3 == 0};
    }
    auto ymap = DofMap::build(sites);
    VectorXT y0 = ymap.gather(sites, VectorXT());

    auto dia = build_restricted_diagram(sites, square);
    auto d = assemble_cell_energies(model, sites, dia, ymap, 2);
    REQUIRE(d.report.empty_cells.empty());

    auto f = [&](const VectorXT& y) {
      return value_at_y(model, sites, nullptr, VectorXT(), &square, ymap, y);
    };
    VectorXT g_fd = oracle::fd_gradient(f, y0, h);
    for (int k = 0; k < ymap.ndofs; ++k) CHECK(oracle::close(d.grad[k], g_fd[k], 1e-5, 1e-3));

    MatrixXT H = dense_hess(d, ymap.ndofs);
    CHECK((H - H.transpose()).cwiseAbs().maxCoeff() < 1e-10);
    for (int k = 0; k < ymap.ndofs; ++k) {
      VectorXT yp = y0, ym = y0;
      yp[k] += h;
      ym[k] -= h;
      VectorXT col = (grad_at_y(model, sites, nullptr, VectorXT(), &square, ymap, yp) -
                      grad_at_y(model, sites, nullptr, VectorXT(), &square, ymap, ym)) /
                     (2 * h);
      for (int r = 0; r < ymap.ndofs; ++r) CHECK(oracle::close(H(r, k), col[r], 1e-4, 1e-3));
    }
  }
}

TEST_CASE("rigid boundary dofs: gradient, hessian, and the rotation curvature term") {
  BoundaryModel bm = make_rect_boundary(1, 1);
  bm.pieces[0].mode = BoundaryMode::Rigid;
  bm.pieces[0].pivot = TV(0.5, 0.5);
  bm.finalize();
  REQUIRE(bm.num_params() == 3);

  VectorXT p0(3);
  p0 << 0.03, -0.02, 0.15;  // bent pose so the theta curvature actually matters

  std::vector<Site> sites = {site_at(0.42, 0.45, 0, 0.3), site_at(0.58, 0.52, 0.01, 0.3),
                             site_at(0.5, 0.62, 0, 0.3)};
  EnergyModel model;
  model.terms.push_back({EnergyKind::AreaTargetQuadratic, 1.0, false});
  model.terms.push_back({EnergyKind::PerimeterQuadratic, 0.02, false});
  model.terms.push_back({EnergyKind::SiteCentroid, 0.5, false});

  auto ymap = DofMap::build(sites, 3);
  VectorXT y0 = ymap.gather(sites, p0);

  DomainPolygon dom = bm.realize(p0);
  auto dia = build_restricted_diagram(sites, dom);
  auto bvp = bm.vertex_params(p0);
  auto d = assemble_cell_energies(model, sites, dia, ymap, 2, &bvp);

  const T h = 1e-6;
  auto f = [&](const VectorXT& y) {
    return value_at_y(model, sites, &bm, p0, nullptr, ymap, y);
  };
  VectorXT g_fd = oracle::fd_gradient(f, y0, h);
  for (int k = 0; k < ymap.ndofs; ++k) CHECK(oracle::close(d.grad[k], g_fd[k], 1e-5, 1e-3));

  MatrixXT H = dense_hess(d, ymap.ndofs);
  int it = ymap.boundary_index(2);  // theta
  for (int k = 0; k < ymap.ndofs; ++k) {
    VectorXT yp = y0, ym = y0;
    yp[k] += h;
    ym[k] -= h;
    VectorXT col = (grad_at_y(model, sites, &bm, p0, nullptr, ymap, yp) -
                    grad_at_y(model, sites, &bm, p0, nullptr, ymap, ym)) /
                   (2 * h);
    for (int r = 0; r < ymap.ndofs; ++r) CHECK(oracle::close(H(r, k), col[r], 1e-4, 1e-3));
    if (k == it) {
      // dropping the d2v/dtheta2 curvature must break the theta diagonal
      auto bvp_flat = bvp;
      for (auto& b : bvp_flat) b.d2v_dtheta2 = TV::Zero();
      auto d_flat = assemble_cell_energies(model, sites, dia, ymap, 2, &bvp_flat);
      MatrixXT H_flat = dense_hess(d_flat, ymap.ndofs);
      CHECK(!oracle::close(H_flat(it, it), col[it], 1e-4, 1e-3));
    }
  }
}

TEST_CASE("deformable boundary dofs match finite differences") {
  BoundaryModel bm = make_rect_boundary(1, 1);
  bm.pieces[0].mode = BoundaryMode::Deformable;
  bm.pieces[0].edge_stiffness = 0.0;
  bm.finalize();
  REQUIRE(bm.num_params() == 8);

  VectorXT p0 = bm.rest_params();
  p0[0] -= 0.04;  // nudge two corners so the pose is not special
  p0[5] += 0.03;

  std::vector<Site> sites = {site_at(0.35, 0.4, 0, 0.4), site_at(0.6, 0.55, 0, 0.4)};
  EnergyModel model;
  model.terms.push_back({EnergyKind::AreaTargetQuadratic, 1.0, false});
  model.terms.push_back({EnergyKind::Perimeter, 0.1, false});

  auto ymap = DofMap::build(sites, 8);
  VectorXT y0 = ymap.gather(sites, p0);
  DomainPolygon dom = bm.realize(p0);
  auto dia = build_restricted_diagram(sites, dom);
  auto bvp = bm.vertex_params(p0);
  auto d = assemble_cell_energies(model, sites, dia, ymap, 2, &bvp);

  const T h = 1e-6;
  auto f = [&](const VectorXT& y) { return value_at_y(model, sites, &bm, p0, nullptr, ymap, y); };
  VectorXT g_fd = oracle::fd_gradient(f, y0, h);
  for (int k = 0; k < ymap.ndofs; ++k) CHECK(oracle::close(d.grad[k], g_fd[k], 1e-5, 1e-3));

  MatrixXT H = dense_hess(d, ymap.ndofs);
  for (int k = 0; k < ymap.ndofs; ++k) {
    VectorXT yp = y0, ym = y0;
    yp[k] += h;
    ym[k] -= h;
    VectorXT col = (grad_at_y(model, sites, &bm, p0, nullptr, ymap, yp) -
                    grad_at_y(model, sites, &bm, p0, nullptr, ymap, ym)) /
                   (2 * h);
    for (int r = 0; r < ymap.ndofs; ++r) CHECK(oracle::close(H(r, k), col[r], 1e-4, 1e-3));
  }
}

TEST_CASE("boundary model energies match finite differences") {
  // membrane edge energy on a deformable piece plus external potential on a rigid one
  BoundaryModel bm;
  BoundaryPiece box;
  box.rest_loops = {{TV(0, 0), TV(3, 0), TV(3, 3), TV(0, 3)}};
  box.mode = BoundaryMode::Deformable;
  box.edge_stiffness = 2.5;
  bm.pieces.push_back(box);

  BoundaryPiece body;
  body.rest_loops = {{TV(1.4, 1.4), TV(1.6, 1.4), TV(1.6, 1.6), TV(1.4, 1.6)}};
  std::reverse(body.rest_loops[0].begin(), body.rest_loops[0].end());  // hole: CW
  body.mode = BoundaryMode::Rigid;
  body.pivot = TV(1.5, 1.5);
  body.ext_force = TV(0.3, -0.2);
  body.ext_torque = 0.05;
  bm.pieces.push_back(body);
  bm.finalize();
  REQUIRE(bm.num_params() == 8 + 3);

  VectorXT p = bm.rest_params();
  p[1] += 0.07;
  p[6] -= 0.05;
  p[8] = 0.02;
  p[9] = -0.03;
  p[10] = 0.2;

  auto f = [&](const VectorXT& q) { return bm.energy(q); };
  VectorXT g;
  bm.energy_grad(p, g);
  VectorXT g_fd = oracle::fd_gradient(f, p, 1e-6);
  for (int k = 0; k < p.size(); ++k) CHECK(oracle::close(g[k], g_fd[k], 1e-6, 1e-3));

  std::vector<Triplet> trips;
  bm.energy_hess(p, trips);
  StiffnessMatrix H(p.size(), p.size());
  H.setFromTriplets(trips.begin(), trips.end());
  MatrixXT Hd(H);
  for (int k = 0; k < p.size(); ++k) {
    VectorXT pp = p, pm = p;
    pp[k] += 1e-6;
    pm[k] -= 1e-6;
    VectorXT gp, gm;
    bm.energy_grad(pp, gp);
    bm.energy_grad(pm, gm);
    VectorXT col = (gp - gm) / 2e-6;
    for (int r = 0; r < p.size(); ++r) CHECK(oracle::close(Hd(r, k), col[r], 1e-5, 1e-3));
  }
}

TEST_CASE("uniform weight shift changes nothing") {
  DomainPolygon square = unit_square();
  std::mt19937_64 rng(9);
  auto sites = oracle::random_sites(rng, square, 7, 0.03, 0.06, 0.02);
  for (auto& s : sites) s.area_target = 0.14;

  EnergyModel model;
  model.terms.push_back({EnergyKind::AreaTargetQuadratic, 1.0, false});
  model.terms.push_back({EnergyKind::PerimeterQuadratic, 0.1, false});
  model.terms.push_back({EnergyKind::SiteCentroid, 0.4, true});

  auto ymap = DofMap::build(sites);
  auto dia = build_restricted_diagram(sites, square);
  auto d = assemble_cell_energies(model, sites, dia, ymap, 1);

  auto shifted = sites;
  for (auto& s : shifted) s.weight += 0.37;
  auto dia2 = build_restricted_diagram(shifted, square);
  auto d2 = assemble_cell_energies(model, shifted, dia2, ymap, 1);

  CHECK(d2.value == doctest::Approx(d.value).epsilon(1e-10));
  CHECK((d2.grad - d.grad).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("mixed derivative columns for design parameters") {
  DomainPolygon square = unit_square();
  std::mt19937_64 rng(31);
  auto sites = oracle::random_sites(rng, square, 5, 0.05, 0.1, 0.0);
  for (size_t i = 0; i < sites.size(); ++i) sites[i].area_target = 0.2 + 0.01 * static_cast<int>(i);

  EnergyModel model;
  model.terms.push_back({EnergyKind::AreaTargetQuadratic, 1.0, false});
  model.terms.push_back({EnergyKind::SecondMoment, 0.3, true});

  auto ymap = DofMap::build(sites);  // positions
  auto umap = DofMap::build_axis(static_cast<int>(sites.size()), kSiteA);
  auto dia = build_restricted_diagram(sites, square);
  auto d = assemble_cell_energies(model, sites, dia, ymap, 2, nullptr, &umap);

  StiffnessMatrix Hyu(ymap.ndofs, umap.ndofs);
  Hyu.setFromTriplets(d.hess_yu.begin(), d.hess_yu.end());
  MatrixXT Hd(Hyu);

  VectorXT y0 = ymap.gather(sites, VectorXT());
  const T h = 1e-6;
  for (int j = 0; j < umap.ndofs; ++j) {
    auto sp = sites, sm = sites;
    sp[j].area_target += h;
    sm[j].area_target -= h;
    VectorXT col = (grad_at_y(model, sp, nullptr, VectorXT(), &square, ymap, y0) -
                    grad_at_y(model, sm, nullptr, VectorXT(), &square, ymap, y0)) /
                   (2 * h);
    for (int r = 0; r < ymap.ndofs; ++r) CHECK(oracle::close(Hd(r, j), col[r], 1e-5, 1e-3));
  }
}
