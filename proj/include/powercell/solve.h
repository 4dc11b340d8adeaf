#pragma once

#include "powercell/energy.h"

#include <deque>
#include <functional>

namespace pcell {

enum class Scheme { QuasiStatic, BDF1, BDF2, MomentumlessBDF1, MomentumlessBDF2 };

struct SolverConfig {
  T grad_tol = 1e-7;
  int max_iters = 200;

  T ls_armijo = 1e-4;
  T ls_shrink = 0.5;
  int ls_max_shrinks = 40;

  // hessian regularization ladder: lambda_0 = reg_init * mean|diag|, then *growth
  T reg_init = 1e-8;
  T reg_growth = 10.0;
  int reg_max_tries = 60;
  T lin_rtol = 1e-10;  // required ||H d + g|| / ||g|| after the solve

  T h = 0.01;  // time step
  Scheme scheme = Scheme::QuasiStatic;
  bool warm_start = true;  // extrapolate 2 y_k - y_{k-1} (dynamic schemes only)

  // stall guard: a failed line search counts as frame convergence when the step
  // and the best decrease both underflow (C0 perimeter kinks)
  T stall_step = 1e-14;
  T stall_decrease = 1e-14;

  // weak-progress guard: this many consecutive accepted steps with negligible
  // length and decrease end the solve as stalled — the iterate is wedged at a
  // non-smooth minimum where the gradient cannot vanish
  int stall_patience = 6;
  T stall_step_rel = 1e-8;
  T stall_decrease_rel = 1e-10;

  // recovery from an invalid accepted state: seeded perturbation, retried
  std::uint64_t jitter_seed = 0x9e3779b97f4a7c15ull;
  T jitter_scale = 1e-9;  // relative to the domain scale
  int jitter_tries = 3;

  std::vector<T>* value_trace = nullptr;  // accepted objective values, if set
};

// Objective the newton loop minimizes. Evaluations return false when the state
// is invalid (diagram failure); trial points then count as line-search
// rejections, failures at accepted states abort the solve.
struct Objective {
  std::function<bool(const VectorXT&, T&)> value;
  std::function<bool(const VectorXT&, T&, VectorXT&)> value_grad;
  std::function<bool(const VectorXT&, T&, VectorXT&, StiffnessMatrix&)> value_grad_hess;
};

struct MinimizeResult {
  VectorXT y;
  T value = 0;
  T grad_norm = 0;  // infinity norm at y
  int iterations = 0;
  bool converged = false;
  bool stalled = false;      // stall guard tripped with gradient above tolerance
  bool eval_failed = false;  // objective invalid at an accepted state
  T reg_used = 0;            // regularization of the last newton system
};

MinimizeResult minimize(const Objective& objective, const VectorXT& y0,
                        const SolverConfig& config);

// A simulatable system: sites + boundary + energy model with a dof layout.
struct System {
  std::vector<Site> sites;
  BoundaryModel boundary;
  EnergyModel energy;
  DiagramConfig diagram_config;
  VectorXT bparams;  // current boundary parameters
  DofMap ymap;

  void finalize();  // call after editing sites/boundary; rebuilds layout

  VectorXT state() const { return ymap.gather(sites, bparams); }
  void set_state(const VectorXT& y) { ymap.scatter(y, sites, bparams); }
  T domain_scale() const { return scale_; }

  DomainPolygon realize_domain() const { return boundary.realize(bparams); }

  // E(y) = cell energies + boundary energy, diagram rebuilt from scratch.
  // order 0: value only. Returns false on diagram failure.
  bool eval(const VectorXT& y, int order, T& value, VectorXT* grad = nullptr,
            StiffnessMatrix* hess = nullptr, EnergyReport* report = nullptr) const;

  // Second-order evaluation that also produces the mixed derivatives
  // d2E/dy du against a design-parameter layout (sensitivity analysis).
  bool eval_mixed(const VectorXT& y, const DofMap& umap, T& value, VectorXT* grad,
                  StiffnessMatrix* hess, StiffnessMatrix* hess_yu,
                  EnergyReport* report = nullptr) const;

  VectorXT mass_diag() const;
  VectorXT viscosity_diag() const;

 private:
  T scale_ = 1.0;
};

// Rolling window of accepted states, most recent first. Reads past the stored
// range replicate the oldest entry (a from-rest start).
struct DynamicsHistory {
  std::deque<VectorXT> states;

  bool empty() const { return states.empty(); }
  void push(const VectorXT& y, int keep = 4);
  const VectorXT& state(int age) const;  // age 0 = y_k, 1 = y_{k-1}, ...
  void remap(const std::function<VectorXT(const VectorXT&)>& f);  // topology events
};

// One-sided difference stencils written as d/dt^k y ~ alpha (y_{k+1} - yhat).
struct SchemeStencil {
  bool has_velocity = false, has_acceleration = false;
  T alpha1 = 0, alpha2 = 0;
  VectorXT yhat1, yhat2;
};
SchemeStencil make_stencil(Scheme scheme, const DynamicsHistory& history, T h);

// Incremental potential whose gradient is exactly M yddot + eta ydot + grad E.
Objective incremental_objective(Objective energy, const SchemeStencil& stencil, VectorXT mass,
                                VectorXT viscosity);

Objective system_objective(const System& sys);  // plain E(y)
Objective dynamics_objective(const System& sys, const DynamicsHistory& history,
                             const SolverConfig& config);

// Minimize E from the current state and write the result back.
MinimizeResult solve_equilibrium(System& sys, const SolverConfig& config);

// Advance one frame: build the scheme objective from history (seeding it with
// the current state if empty), warm start, minimize, push the accepted state.
MinimizeResult advance(System& sys, DynamicsHistory& history, const SolverConfig& config);

}  // namespace pcell
