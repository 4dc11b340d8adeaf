#include "powercell/solve.h"

#include <Eigen/SparseCholesky>

#include <algorithm>
#include <cmath>
#include <memory>
#include <random>

namespace pcell {

// ----------------------------------------------------------------- System

void System::finalize() {
  boundary.finalize();
  if (bparams.size() != boundary.num_params()) bparams = boundary.rest_params();
  ymap = DofMap::build(sites, boundary.num_params());

  DomainPolygon dom = boundary.realize(bparams);
  if (!dom.verts.empty()) {
    TV lo = dom.verts[0], hi = dom.verts[0];
    for (const TV& v : dom.verts) {
      lo = lo.cwiseMin(v);
      hi = hi.cwiseMax(v);
    }
    scale_ = (hi - lo).norm();
  }
  if (!(scale_ > 0)) scale_ = 1;
}

bool System::eval(const VectorXT& y, int order, T& value, VectorXT* grad, StiffnessMatrix* hess,
                  EnergyReport* report) const {
  std::vector<Site> s = sites;
  VectorXT bp = bparams;
  ymap.scatter(y, s, bp);
  DomainPolygon dom = boundary.realize(bp);

  DiagramConfig cfg = diagram_config;
  cfg.eager_derivatives = order >= 1;
  RestrictedDiagram dia;
  try {
    dia = build_restricted_diagram(s, dom, cfg);
  } catch (const DiagramError&) {
    return false;
  }

  if (order == 0) {
    value = cell_energies_value(energy, s, dia, report);
  } else {
    std::vector<BVertParam> bvp = boundary.vertex_params(bp);
    EnergyDerivatives d = assemble_cell_energies(energy, s, dia, ymap, order, &bvp);
    value = d.value;
    if (grad) *grad = std::move(d.grad);
    if (order >= 2 && hess) {
      std::vector<Triplet> trips = std::move(d.hess);
      if (ymap.num_boundary > 0) {
        std::vector<Triplet> bt;
        boundary.energy_hess(bp, bt);
        for (const Triplet& t : bt)
          trips.emplace_back(ymap.boundary_index(t.row()), ymap.boundary_index(t.col()),
                             t.value());
      }
      hess->resize(ymap.ndofs, ymap.ndofs);
      hess->setFromTriplets(trips.begin(), trips.end());
    }
    if (report) *report = std::move(d.report);
  }

  value += boundary.energy(bp);
  if (order >= 1 && grad && ymap.num_boundary > 0) {
    VectorXT bg;
    boundary.energy_grad(bp, bg);
    grad->segment(ymap.boundary_offset, ymap.num_boundary) += bg;
  }
  return true;
}

bool System::eval_mixed(const VectorXT& y, const DofMap& umap, T& value, VectorXT* grad,
                        StiffnessMatrix* hess, StiffnessMatrix* hess_yu,
                        EnergyReport* report) const {
  std::vector<Site> s = sites;
  VectorXT bp = bparams;
  ymap.scatter(y, s, bp);
  DomainPolygon dom = boundary.realize(bp);

  DiagramConfig cfg = diagram_config;
  cfg.eager_derivatives = true;
  RestrictedDiagram dia;
  try {
    dia = build_restricted_diagram(s, dom, cfg);
  } catch (const DiagramError&) {
    return false;
  }

  std::vector<BVertParam> bvp = boundary.vertex_params(bp);
  EnergyDerivatives d = assemble_cell_energies(energy, s, dia, ymap, 2, &bvp, &umap);
  value = d.value + boundary.energy(bp);
  if (grad) {
    *grad = std::move(d.grad);
    if (ymap.num_boundary > 0) {
      VectorXT bg;
      boundary.energy_grad(bp, bg);
      grad->segment(ymap.boundary_offset, ymap.num_boundary) += bg;
    }
  }
  if (hess) {
    std::vector<Triplet> trips = std::move(d.hess);
    if (ymap.num_boundary > 0) {
      std::vector<Triplet> bt;
      boundary.energy_hess(bp, bt);
      for (const Triplet& t : bt)
        trips.emplace_back(ymap.boundary_index(t.row()), ymap.boundary_index(t.col()), t.value());
    }
    hess->resize(ymap.ndofs, ymap.ndofs);
    hess->setFromTriplets(trips.begin(), trips.end());
  }
  if (hess_yu) {
    // boundary self-energy never touches site design parameters
    hess_yu->resize(ymap.ndofs, umap.ndofs);
    hess_yu->setFromTriplets(d.hess_yu.begin(), d.hess_yu.end());
  }
  if (report) *report = std::move(d.report);
  return true;
}

VectorXT System::mass_diag() const {
  VectorXT m = VectorXT::Zero(ymap.ndofs);
  for (size_t i = 0; i < sites.size(); ++i)
    for (int a = 0; a < kSiteAxes; ++a) {
      int k = ymap.site_index(static_cast<int>(i), a);
      if (k >= 0) m[k] = sites[i].mass[a];
    }
  if (ymap.num_boundary > 0) {
    VectorXT bm, bv;
    boundary.param_mass_viscosity(bm, bv);
    m.segment(ymap.boundary_offset, ymap.num_boundary) = bm;
  }
  return m;
}

VectorXT System::viscosity_diag() const {
  VectorXT v = VectorXT::Zero(ymap.ndofs);
  for (size_t i = 0; i < sites.size(); ++i)
    for (int a = 0; a < kSiteAxes; ++a) {
      int k = ymap.site_index(static_cast<int>(i), a);
      if (k >= 0) v[k] = sites[i].viscosity[a];
    }
  if (ymap.num_boundary > 0) {
    VectorXT bm, bv;
    boundary.param_mass_viscosity(bm, bv);
    v.segment(ymap.boundary_offset, ymap.num_boundary) = bv;
  }
  return v;
}

// ---------------------------------------------------------------- history

void DynamicsHistory::push(const VectorXT& y, int keep) {
  states.push_front(y);
  while (static_cast<int>(states.size()) > keep) states.pop_back();
}

const VectorXT& DynamicsHistory::state(int age) const {
  int last = static_cast<int>(states.size()) - 1;
  return states[std::min(age, last)];
}

void DynamicsHistory::remap(const std::function<VectorXT(const VectorXT&)>& f) {
  for (VectorXT& s : states) s = f(s);
}

// --------------------------------------------------------------- stencils

SchemeStencil make_stencil(Scheme scheme, const DynamicsHistory& history, T h) {
  // During startup the stored history is shorter than the stencil reach. Padding
  // with the oldest state would mis-scale the difference operators (it encodes a
  // zero-velocity start), so instead each stencil degrades to the highest-order
  // variant the real history supports: one first-order step costs O(h^2) once,
  // which preserves the second-order global error.
  SchemeStencil st;
  const int avail = static_cast<int>(history.states.size());
  const VectorXT& y0 = history.state(0);

  auto velocity_bdf1 = [&] {
    st.has_velocity = true;
    st.alpha1 = 1 / h;
    st.yhat1 = y0;
  };
  auto velocity_bdf2 = [&] {
    st.has_velocity = true;
    st.alpha1 = 3 / (2 * h);
    st.yhat1 = (4 * y0 - history.state(1)) / 3;
  };
  auto accel_central = [&] {
    st.has_acceleration = true;
    if (avail >= 2) {
      st.alpha2 = 1 / (h * h);
      st.yhat2 = 2 * y0 - history.state(1);
    } else {
      // from-rest start: y(h) = y0 + (h^2/2) a + O(h^4), so the first step
      // needs the half coefficient or it injects an O(h) velocity error
      st.alpha2 = 2 / (h * h);
      st.yhat2 = y0;
    }
  };
  auto accel_bdf2sq = [&] {
    // second-order backward differencing applied twice; reaches back four states
    st.has_acceleration = true;
    st.alpha2 = 9 / (4 * h * h);
    st.yhat2 = (24 * y0 - 22 * history.state(1) + 8 * history.state(2) - history.state(3)) / 9;
  };

  switch (scheme) {
    case Scheme::QuasiStatic:
      break;
    case Scheme::BDF1:
      velocity_bdf1();
      accel_central();
      break;
    case Scheme::BDF2:
      if (avail >= 2) velocity_bdf2(); else velocity_bdf1();
      if (avail >= 4) accel_bdf2sq(); else accel_central();
      break;
    case Scheme::MomentumlessBDF1:
      velocity_bdf1();
      break;
    case Scheme::MomentumlessBDF2:
      if (avail >= 2) velocity_bdf2(); else velocity_bdf1();
      break;
  }
  return st;
}

namespace {

struct ProxData {
  SchemeStencil st;
  VectorXT mass, visc;
  StiffnessMatrix diag;  // alpha2 M + alpha1 eta, as a sparse diagonal
};

T prox_value(const ProxData& d, const VectorXT& y) {
  // the quadratic is normalized so its gradient is exactly M yddot + eta ydot
  T v = 0;
  if (d.st.has_acceleration) v += T(0.5) * d.st.alpha2 * (y - d.st.yhat2).cwiseAbs2().dot(d.mass);
  if (d.st.has_velocity) v += T(0.5) * d.st.alpha1 * (y - d.st.yhat1).cwiseAbs2().dot(d.visc);
  return v;
}

void prox_grad(const ProxData& d, const VectorXT& y, VectorXT& g) {
  if (d.st.has_acceleration) g += d.st.alpha2 * d.mass.cwiseProduct(y - d.st.yhat2);
  if (d.st.has_velocity) g += d.st.alpha1 * d.visc.cwiseProduct(y - d.st.yhat1);
}

}  // namespace

Objective incremental_objective(Objective energy, const SchemeStencil& stencil, VectorXT mass,
                                VectorXT viscosity) {
  if (!stencil.has_velocity && !stencil.has_acceleration) return energy;

  auto d = std::make_shared<ProxData>();
  d->st = stencil;
  d->mass = std::move(mass);
  d->visc = std::move(viscosity);
  int n = static_cast<int>(d->mass.size());
  std::vector<Triplet> dt;
  for (int i = 0; i < n; ++i) {
    T v = (d->st.has_acceleration ? d->st.alpha2 * d->mass[i] : 0) +
          (d->st.has_velocity ? d->st.alpha1 * d->visc[i] : 0);
    if (v != 0) dt.emplace_back(i, i, v);
  }
  d->diag.resize(n, n);
  d->diag.setFromTriplets(dt.begin(), dt.end());

  Objective out;
  out.value = [e = energy.value, d](const VectorXT& y, T& v) {
    if (!e(y, v)) return false;
    v += prox_value(*d, y);
    return true;
  };
  out.value_grad = [e = energy.value_grad, d](const VectorXT& y, T& v, VectorXT& g) {
    if (!e(y, v, g)) return false;
    v += prox_value(*d, y);
    prox_grad(*d, y, g);
    return true;
  };
  out.value_grad_hess = [e = energy.value_grad_hess, d](const VectorXT& y, T& v, VectorXT& g,
                                                        StiffnessMatrix& H) {
    if (!e(y, v, g, H)) return false;
    v += prox_value(*d, y);
    prox_grad(*d, y, g);
    H = H + d->diag;
    return true;
  };
  return out;
}

Objective system_objective(const System& sys) {
  const System* s = &sys;
  Objective obj;
  obj.value = [s](const VectorXT& y, T& v) { return s->eval(y, 0, v); };
  obj.value_grad = [s](const VectorXT& y, T& v, VectorXT& g) { return s->eval(y, 1, v, &g); };
  obj.value_grad_hess = [s](const VectorXT& y, T& v, VectorXT& g, StiffnessMatrix& H) {
    return s->eval(y, 2, v, &g, &H);
  };
  return obj;
}

Objective dynamics_objective(const System& sys, const DynamicsHistory& history,
                             const SolverConfig& config) {
  Objective energy = system_objective(sys);
  if (config.scheme == Scheme::QuasiStatic) return energy;
  SchemeStencil st = make_stencil(config.scheme, history, config.h);
  return incremental_objective(std::move(energy), st, sys.mass_diag(), sys.viscosity_diag());
}

// ----------------------------------------------------------------- newton

MinimizeResult minimize(const Objective& objective, const VectorXT& y0,
                        const SolverConfig& config) {
  MinimizeResult res;
  res.y = y0;
  const int n = static_cast<int>(y0.size());

  T f;
  VectorXT g;
  StiffnessMatrix H;
  if (!objective.value_grad_hess(res.y, f, g, H)) {
    res.eval_failed = true;
    return res;
  }
  if (config.value_trace) config.value_trace->push_back(f);

  StiffnessMatrix Id(n, n);
  Id.setIdentity();
  Eigen::SimplicialLDLT<StiffnessMatrix> ldlt;

  int weak_run = 0;
  for (;;) {
    res.value = f;
    res.grad_norm = g.lpNorm<Eigen::Infinity>();
    if (res.grad_norm <= config.grad_tol) {
      res.converged = true;
      return res;
    }
    if (weak_run >= config.stall_patience) {
      res.stalled = true;
      return res;
    }
    if (res.iterations >= config.max_iters) return res;

    // newton system with a growing diagonal shift until the factorization
    // succeeds, the solve is accurate, and the direction descends
    T diag_scale = H.diagonal().cwiseAbs().sum() / std::max(1, n);
    if (!(diag_scale > 0)) diag_scale = 1;
    T lambda = 0;
    VectorXT dir;
    bool have_dir = false;
    for (int attempt = 0; attempt <= config.reg_max_tries; ++attempt) {
      StiffnessMatrix Hreg = lambda > 0 ? StiffnessMatrix(H + lambda * Id) : H;
      ldlt.compute(Hreg);
      if (ldlt.info() == Eigen::Success) {
        dir = ldlt.solve(-g);
        VectorXT r = Hreg * dir + g;
        if (!(r.norm() <= config.lin_rtol * g.norm())) {
          dir -= ldlt.solve(r);
          r = Hreg * dir + g;
        }
        if (r.norm() <= config.lin_rtol * g.norm() && g.dot(dir) < 0) {
          have_dir = true;
          res.reg_used = lambda;
          break;
        }
      }
      lambda = lambda == 0 ? config.reg_init * diag_scale : lambda * config.reg_growth;
      if (!(lambda > 0)) lambda = config.reg_init;
    }
    if (!have_dir) {
      res.stalled = true;
      return res;
    }

    // armijo backtracking; invalid trial states count as rejections. If no step
    // satisfies the slope condition but some step still decreases f, take the
    // best of those; a line search with no decrease at all is a stall (C0 kink).
    T gd = g.dot(dir);
    T step = 1;
    bool accepted = false;
    T best_f = f, best_step = 0;
    for (int s = 0; s <= config.ls_max_shrinks; ++s) {
      T ft;
      if (objective.value(res.y + step * dir, ft)) {
        if (ft <= f + config.ls_armijo * step * gd) {
          accepted = true;
          break;
        }
        if (ft < best_f) {
          best_f = ft;
          best_step = step;
        }
      }
      step *= config.ls_shrink;
    }
    if (!accepted) {
      T ynorm = std::max(T(1), res.y.lpNorm<Eigen::Infinity>());
      T fmag = std::max(T(1), std::abs(f));
      bool micro_step = step * dir.lpNorm<Eigen::Infinity>() <= config.stall_step * ynorm;
      bool micro_gain = f - best_f <= config.stall_decrease * fmag;
      if (best_step > 0 && !micro_gain) {
        step = best_step;  // weak progress without the slope condition
      } else {
        res.stalled = micro_step || micro_gain;
        return res;
      }
    }

    VectorXT y_new = res.y + step * dir;
    T f_prev = f;
    if (!objective.value_grad_hess(y_new, f, g, H)) {
      res.eval_failed = true;
      return res;
    }
    bool weak = f_prev - f <= config.stall_decrease_rel * std::max(T(1), std::abs(f_prev)) &&
                step * dir.lpNorm<Eigen::Infinity>() <=
                    config.stall_step_rel * std::max(T(1), res.y.lpNorm<Eigen::Infinity>());
    weak_run = weak ? weak_run + 1 : 0;
    res.y = std::move(y_new);
    ++res.iterations;
    if (config.value_trace) config.value_trace->push_back(f);
  }
}

MinimizeResult solve_equilibrium(System& sys, const SolverConfig& config) {
  Objective obj = system_objective(sys);
  MinimizeResult res = minimize(obj, sys.state(), config);
  if (!res.eval_failed) sys.set_state(res.y);
  return res;
}

MinimizeResult advance(System& sys, DynamicsHistory& history, const SolverConfig& config) {
  if (history.empty()) history.push(sys.state());
  VectorXT yk = history.state(0);
  Objective obj = dynamics_objective(sys, history, config);

  VectorXT y0 = yk;
  bool extrapolated = false;
  if (config.warm_start && config.scheme != Scheme::QuasiStatic && history.states.size() >= 2) {
    VectorXT yx = 2 * yk - history.state(1);
    // only start from the extrapolation when it is valid and not uphill of the
    // current state (division/collapse frames can make it overshoot badly)
    T fx, fk;
    if (obj.value(yx, fx) && (!obj.value(yk, fk) || fx <= fk)) {
      y0 = std::move(yx);
      extrapolated = true;
    }
  }

  std::mt19937_64 rng(config.jitter_seed);
  std::uniform_real_distribution<T> uni(-1, 1);
  MinimizeResult res;
  for (int attempt = 0;; ++attempt) {
    T probe;
    if (obj.value(y0, probe)) {
      res = minimize(obj, y0, config);
      if (!res.eval_failed) break;
    }
    if (extrapolated) {
      y0 = yk;  // drop the extrapolation before resorting to noise
      extrapolated = false;
      continue;
    }
    if (attempt >= config.jitter_tries) {
      res = MinimizeResult{};
      res.y = yk;
      res.eval_failed = true;
      return res;
    }
    y0 = yk;
    for (int i = 0; i < y0.size(); ++i)
      y0[i] += uni(rng) * config.jitter_scale * sys.domain_scale();
  }

  sys.set_state(res.y);
  history.push(res.y);
  return res;
}

}  // namespace pcell
