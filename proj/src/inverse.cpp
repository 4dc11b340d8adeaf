#include "powercell/inverse.h"

#include <json.hpp>

#include <Eigen/SparseCholesky>

#include <cassert>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace pcell {

// has to add up: the design axis cannot simultaneously be a state dof
void FitProblem::finalize() {
  assert(sys);
  for (const Site& s : sys->sites) {
    (void)s;
    assert(!s.dof_active[param_axis]);
  }
  umap = DofMap::build_axis(static_cast<int>(sys->sites.size()), param_axis);
}

VectorXT FitProblem::params() const {
  VectorXT u(umap.ndofs);
  for (size_t i = 0; i < sys->sites.size(); ++i)
    u[umap.site_index(static_cast<int>(i), param_axis)] = sys->sites[i].dof(param_axis);
  return u;
}

void FitProblem::set_params(const VectorXT& u) {
  for (size_t i = 0; i < sys->sites.size(); ++i)
    sys->sites[i].set_dof(param_axis, u[umap.site_index(static_cast<int>(i), param_axis)]);
}

namespace {

// Factorization with the same regularization ladder as the forward solver:
// lambda = 0 first, then reg_init * mean|diag| growing geometrically. Solutions
// get one refinement pass and must meet the relative residual bound.
struct HessianSolver {
  Eigen::SimplicialLDLT<StiffnessMatrix> ldlt;
  StiffnessMatrix H;  // regularized operator actually factorized
  T reg_used = 0;
  bool ok = false;

  void factorize(const StiffnessMatrix& hess, const SensitivityOptions& opts) {
    T mean_diag = 0;
    for (int i = 0; i < hess.rows(); ++i) mean_diag += std::abs(hess.coeff(i, i));
    mean_diag = hess.rows() > 0 ? mean_diag / hess.rows() : 1;
    if (!(mean_diag > 0)) mean_diag = 1;

    StiffnessMatrix id(hess.rows(), hess.cols());
    id.setIdentity();
    T reg = 0;
    for (int attempt = 0; attempt <= opts.reg_max_tries; ++attempt) {
      H = hess;
      if (reg > 0) H += reg * id;
      ldlt.compute(H);
      if (ldlt.info() == Eigen::Success) {
        reg_used = reg;
        ok = true;
        return;
      }
      reg = reg == 0 ? opts.reg_init * mean_diag : reg * opts.reg_growth;
    }
    ok = false;
  }

  template <typename Rhs>
  bool solve(const Rhs& b, MatrixXT& x, T lin_rtol) const {
    x = ldlt.solve(b);
    MatrixXT r = b - H * x;
    x += ldlt.solve(r).eval();
    r = b - H * x;
    T bn = b.norm();
    return r.norm() <= lin_rtol * (bn > 0 ? bn : 1) && x.allFinite();
  }
};

}  // namespace

SensitivityResult sensitivity_gradient(FitProblem& problem, const VectorXT& ystar,
                                       const VectorXT& u, const SensitivityOptions& opts) {
  System& sys = *problem.sys;
  problem.set_params(u);
  sys.set_state(ystar);

  SensitivityResult res;
  T evalue = 0;
  StiffnessMatrix hess, hess_yu;
  if (!sys.eval_mixed(ystar, problem.umap, evalue, nullptr, &hess, &hess_yu)) return res;

  res.value = problem.objective.value(sys, ystar, u);
  VectorXT gy = problem.objective.grad_y(sys, ystar, u);
  VectorXT gu = problem.objective.grad_u ? problem.objective.grad_u(sys, ystar, u)
                                         : VectorXT::Zero(problem.umap.ndofs);

  if (gy.lpNorm<Eigen::Infinity>() == 0) {
    // L does not feel the state; no linear solve involved
    res.grad = gu;
    res.ok = true;
    return res;
  }

  HessianSolver solver;
  solver.factorize(hess, opts);
  if (!solver.ok) return res;
  res.reg_used = solver.reg_used;

  if (opts.direct) {
    MatrixXT dydu;  // equilibrium-state derivatives, one column per parameter
    if (!solver.solve(MatrixXT(-hess_yu), dydu, opts.lin_rtol)) return res;
    res.grad = dydu.transpose() * gy + gu;
  } else {
    MatrixXT lambda;
    if (!solver.solve(MatrixXT(gy), lambda, opts.lin_rtol)) return res;
    res.grad = -hess_yu.transpose() * lambda.col(0) + gu;
  }
  res.ok = true;
  return res;
}

// ------------------------------------------------------------------- fitting

namespace {

struct LbfgsMemory {
  std::deque<VectorXT> s, g;  // parameter and gradient differences
  std::deque<T> rho;

  void push(const VectorXT& ds, const VectorXT& dg, int cap) {
    T sy = ds.dot(dg);
    if (!(sy > 1e-12 * ds.norm() * dg.norm())) return;  // curvature too weak
    s.push_back(ds);
    g.push_back(dg);
    rho.push_back(1 / sy);
    while (static_cast<int>(s.size()) > cap) {
      s.pop_front();
      g.pop_front();
      rho.pop_front();
    }
  }

  void clear() {
    s.clear();
    g.clear();
    rho.clear();
  }

  VectorXT direction(const VectorXT& grad) const {
    VectorXT q = -grad;
    if (s.empty()) return q;
    int m = static_cast<int>(s.size());
    std::vector<T> alpha(m);
    for (int i = m - 1; i >= 0; --i) {
      alpha[i] = rho[i] * s[i].dot(q);
      q -= alpha[i] * g[i];
    }
    q *= s.back().dot(g.back()) / g.back().squaredNorm();
    for (int i = 0; i < m; ++i) {
      T beta = rho[i] * g[i].dot(q);
      q += (alpha[i] - beta) * s[i];
    }
    return q;
  }
};

}  // namespace

FitResult fit(FitProblem& problem, const VectorXT& u0, const FitConfig& config) {
  System& sys = *problem.sys;
  if (problem.umap.ndofs == 0) problem.finalize();

  FitResult res;
  res.u = u0;

  problem.set_params(u0);
  MinimizeResult eq = solve_equilibrium(sys, problem.equilibrium);
  ++res.resolves;
  if (!eq.converged) {
    res.equilibrium_failed = true;
    problem.set_params(u0);
    return res;
  }

  VectorXT u = u0;
  VectorXT y = sys.state();
  SensitivityResult sens = sensitivity_gradient(problem, y, u, config.sensitivity);
  if (!sens.ok) {
    res.equilibrium_failed = true;
    return res;
  }
  T L = sens.value;
  VectorXT g = sens.grad;
  res.history.push_back({L, g.lpNorm<Eigen::Infinity>(), u});

  LbfgsMemory mem;
  for (int iter = 0; iter < config.max_iters; ++iter) {
    if (g.lpNorm<Eigen::Infinity>() <= config.grad_tol) {
      res.converged = true;
      break;
    }

    VectorXT d = mem.direction(g);
    T gd = g.dot(d);
    if (!(gd < 0)) {  // defective memory; restart from steepest descent
      mem.clear();
      d = -g;
      gd = g.dot(d);
    }

    bool accepted = false;
    T t = 1;
    VectorXT u_new, y_new;
    T L_new = 0;
    for (int ls = 0; ls <= config.ls_max_shrinks; ++ls, t *= config.ls_shrink) {
      u_new = u + t * d;
      problem.set_params(u_new);
      MinimizeResult tr = solve_equilibrium(sys, problem.equilibrium);
      ++res.resolves;
      bool ok = tr.converged;
      if (ok) {
        try {
          y_new = sys.state();
          L_new = problem.objective.value(sys, y_new, u_new);
          ok = std::isfinite(L_new) && L_new <= L + config.ls_armijo * t * gd;
        } catch (const DiagramError&) {
          ok = false;
        }
      }
      if (ok) {
        accepted = true;
        break;
      }
      problem.set_params(u);
      sys.set_state(y);
    }
    if (!accepted) break;

    sens = sensitivity_gradient(problem, y_new, u_new, config.sensitivity);
    if (!sens.ok) break;

    mem.push(u_new - u, sens.grad - g, config.memory);
    u = u_new;
    y = y_new;
    L = L_new;
    g = sens.grad;
    ++res.iterations;
    res.history.push_back({L, g.lpNorm<Eigen::Infinity>(), u});
  }

  problem.set_params(u);
  sys.set_state(y);
  res.u = u;
  res.y = y;
  res.objective = L;
  res.grad_norm = g.lpNorm<Eigen::Infinity>();
  if (res.grad_norm <= config.grad_tol) res.converged = true;
  return res;
}

// ---------------------------------------------------------------- annotation

const Annotation::Vertex* Annotation::find_vertex(int id) const {
  for (const Vertex& v : vertices)
    if (v.id == id) return &v;
  return nullptr;
}

std::vector<TV> Annotation::cell_polygon(int cell_index) const {
  std::vector<TV> poly;
  for (int vid : cells[cell_index].loop) {
    const Vertex* v = find_vertex(vid);
    if (!v) throw std::out_of_range("annotation references unknown vertex id");
    poly.push_back(to_model(v->pos));
  }
  return poly;
}

T Annotation::cell_area(int cell_index) const {
  std::vector<TV> poly = cell_polygon(cell_index);
  T a2 = 0;
  for (size_t i = 0; i < poly.size(); ++i) a2 += cross2(poly[i], poly[(i + 1) % poly.size()]);
  return std::abs(a2) / 2;
}

TV Annotation::cell_centroid(int cell_index) const {
  std::vector<TV> poly = cell_polygon(cell_index);
  T a2 = 0;
  TV m = TV::Zero();
  for (size_t i = 0; i < poly.size(); ++i) {
    T c = cross2(poly[i], poly[(i + 1) % poly.size()]);
    a2 += c;
    m += c * (poly[i] + poly[(i + 1) % poly.size()]);
  }
  if (a2 == 0) return poly.empty() ? TV::Zero() : poly[0];
  return m / (3 * a2);
}

namespace {

bool segments_cross(const TV& a, const TV& b, const TV& c, const TV& d) {
  auto side = [](const TV& p, const TV& q, const TV& r) {
    return cross2(TV(q - p), TV(r - p));
  };
  T s1 = side(a, b, c), s2 = side(a, b, d), s3 = side(c, d, a), s4 = side(c, d, b);
  return ((s1 > 0) != (s2 > 0)) && ((s3 > 0) != (s4 > 0));
}

}  // namespace

bool Annotation::valid(std::string* why) const {
  auto fail = [&](const std::string& msg) {
    if (why) *why = msg;
    return false;
  };
  for (size_t c = 0; c < cells.size(); ++c) {
    const auto& loop = cells[c].loop;
    if (loop.size() < 3) return fail("cell loop with fewer than 3 vertices");
    for (int vid : loop)
      if (!find_vertex(vid)) return fail("cell references unknown vertex id");
    for (size_t i = 0; i < loop.size(); ++i)
      for (size_t j = i + 1; j < loop.size(); ++j)
        if (loop[i] == loop[j]) return fail("cell loop repeats a vertex");
    std::vector<TV> poly = cell_polygon(static_cast<int>(c));
    size_t n = poly.size();
    for (size_t i = 0; i < n; ++i)
      for (size_t j = i + 1; j < n; ++j) {
        if (j == i + 1 || (i == 0 && j == n - 1)) continue;  // shared endpoint
        if (segments_cross(poly[i], poly[(i + 1) % n], poly[j], poly[(j + 1) % n]))
          return fail("cell loop self-intersects");
      }
  }
  return true;
}

Annotation parse_annotation(const std::string& json_text) {
  nlohmann::json j = nlohmann::json::parse(json_text);
  Annotation ann;
  for (const auto& v : j.at("vertices")) {
    Annotation::Vertex av;
    av.id = v.at("id").get<int>();
    av.pos = TV(v.at("x").get<T>(), v.at("y").get<T>());
    ann.vertices.push_back(av);
  }
  for (const auto& c : j.at("cells")) {
    Annotation::Cell ac;
    ac.id = c.at("id").get<int>();
    for (const auto& vid : c.at("loop")) ac.loop.push_back(vid.get<int>());
    ann.cells.push_back(ac);
  }
  if (j.contains("scale")) ann.scale = j["scale"].get<T>();
  if (j.contains("offset")) ann.offset = TV(j["offset"][0].get<T>(), j["offset"][1].get<T>());
  std::string why;
  if (!ann.valid(&why)) throw std::runtime_error("invalid annotation: " + why);
  return ann;
}

Annotation load_annotation(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open annotation file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_annotation(ss.str());
}

// ------------------------------------------------------------- image fitting

std::vector<VertexCorrespondence> freeze_correspondence(const std::vector<TV>& targets,
                                                        const RestrictedDiagram& diagram) {
  std::vector<VertexCorrespondence> corr;
  corr.reserve(targets.size());
  for (const TV& t : targets) {
    int best = -1;
    T best_d = std::numeric_limits<T>::infinity();
    for (size_t k = 0; k < diagram.verts.size(); ++k) {
      T d = (diagram.verts[k].position - t).squaredNorm();
      if (d < best_d) {
        best_d = d;
        best = static_cast<int>(k);
      }
    }
    if (best < 0) throw std::runtime_error("correspondence: diagram has no vertices");
    corr.push_back({diagram.verts[best].gen, t});
  }
  return corr;
}

std::vector<VertexCorrespondence> freeze_correspondence(const Annotation& annotation,
                                                        const RestrictedDiagram& diagram) {
  std::vector<TV> targets;
  targets.reserve(annotation.vertices.size());
  for (const auto& v : annotation.vertices) targets.push_back(annotation.to_model(v.pos));
  return freeze_correspondence(targets, diagram);
}

FitObjective image_match_objective(std::vector<VertexCorrespondence> correspondence) {
  auto corr = std::make_shared<std::vector<VertexCorrespondence>>(std::move(correspondence));

  FitObjective obj;
  obj.value = [corr](const System& sys, const VectorXT&, const VectorXT&) -> T {
    DomainPolygon dom = sys.realize_domain();
    T sum = 0;
    for (const VertexCorrespondence& c : *corr)
      sum += (generator_position(c.gen, sys.sites, dom, sys.diagram_config.det_tol) - c.target)
                 .squaredNorm();
    return sum;
  };
  obj.grad_y = [corr](const System& sys, const VectorXT&, const VectorXT&) -> VectorXT {
    DomainPolygon dom = sys.realize_domain();
    std::vector<BVertParam> bvp;
    if (sys.ymap.num_boundary > 0) bvp = sys.boundary.vertex_params(sys.bparams);

    VectorXT g = VectorXT::Zero(sys.ymap.ndofs);
    for (const VertexCorrespondence& c : *corr) {
      DiagramVertex v = vertex_derivatives(c.gen, sys.sites, dom, sys.diagram_config);
      TV r = 2 * (v.position - c.target);
      for (size_t j = 0; j < v.inputs.size(); ++j) {
        const PrimSlot& ps = v.inputs[j];
        T val = r.dot(v.jac.col(static_cast<int>(j)));
        switch (ps.kind) {
          case Prim::SiteX:
          case Prim::SiteY:
          case Prim::SiteW: {
            int axis = ps.kind == Prim::SiteX ? kSiteX : (ps.kind == Prim::SiteY ? kSiteY : kSiteW);
            int gi = sys.ymap.site_index(ps.owner, axis);
            if (gi >= 0) g[gi] += val;
            break;
          }
          case Prim::BVertX:
          case Prim::BVertY: {
            if (bvp.empty()) break;
            const BVertParam& bp = bvp[ps.owner];
            int coord = ps.kind == Prim::BVertX ? 0 : 1;
            for (int k = 0; k < bp.nparams; ++k)
              g[sys.ymap.boundary_index(bp.pidx[k])] += val * bp.jac(coord, k);
            break;
          }
          case Prim::SiteA:
            break;  // generator expressions never involve rest areas
        }
      }
    }
    return g;
  };
  // no explicit u dependence
  return obj;
}

}  // namespace pcell
