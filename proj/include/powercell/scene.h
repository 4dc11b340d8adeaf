#pragma once

#include "powercell/solve.h"

#include <array>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

namespace pcell {

// Cell division control. Daughters appear at c +- beta * sqrt(abar) * n with the
// parent's weight and half its rest area; if a growth ramp is configured the
// daughters' rest area then rises linearly to gamma * abar_parent over tau.
struct DivisionRule {
  enum class Mode { Scheduled, Probabilistic };
  Mode mode = Mode::Scheduled;

  int every_frames = 60;  // Scheduled: divide every k-th frame
  T alpha = 30.0;         // Probabilistic: p = alpha * abar * h, clamped to [0,1]

  T beta = 0.1;
  T gamma = 0.5;  // ramp target as a fraction of the parent rest area; 0.5 = no ramp
  T tau = 0.0;    // ramp duration in simulation time

  // lineage policy: the first k cleavage normals cycle the coordinate axes,
  // afterwards normals are drawn uniformly at random
  int orthogonal_first = 2;

  bool has_ramp() const { return gamma > 0.5 && tau > 0; }
};

// Split one site into two daughters; `now` stamps the growth ramp start.
std::array<Site, 2> divide(const Site& parent, const TV& normal, const DivisionRule& rule,
                           T now = 0);

// Cleavage normal for a site under the rule's policy.
TV division_normal(const Site& site, const DivisionRule& rule, std::mt19937_64& rng);

// Advance all growth ramps to simulation time `now`.
void apply_growth(std::vector<Site>& sites, T now);

struct DivisionEvent {
  int site = -1;
  TV normal = TV::UnitX();
};

// Apply a batch of divisions: daughter A replaces the parent slot, daughter B is
// appended (in event order). The dof layout is rebuilt and every stored history
// state is remapped — daughters inherit the parent's trajectory shifted by their
// placement offsets, so division introduces no spurious velocities.
int apply_divisions(System& sys, DynamicsHistory& history, const std::vector<DivisionEvent>& events,
                    const DivisionRule& rule, T now);

struct CollapseLog {
  std::vector<int> removed;  // site indices before removal, ascending
  T removed_rest_area = 0;
};

// Remove sites whose restricted cell area fell below eps * |domain area| (empty
// cells count as zero area), plus, when abar_floor > 0, sites whose rest area is
// pinned at or below it (terminal shrinkage). Dof layout and history rows are
// remapped; call between frames only.
CollapseLog collapse_sweep(System& sys, DynamicsHistory& history, T eps_collapse,
                           T abar_floor = 0);

// Stratified jittered seeding: approximately uniform, deterministic in `seed`,
// exactly `count` sites inside the domain.
std::vector<Site> seed_sites(const DomainPolygon& domain, int count, T abar, std::uint64_t seed,
                             T jitter = 0.25);

// ------------------------------------------------------------------ scenarios

struct Scenario {
  std::string name = "unnamed";
  std::string description;
  System sys;
  SolverConfig solver;
  int frames = 100;
  std::uint64_t seed = 0;

  bool collapse_enabled = false;
  T collapse_eps = 1e-9;       // of domain area
  T collapse_abar_floor = 0;   // absolute rest-area removal threshold, 0 = off

  bool division_enabled = false;
  DivisionRule division;

  bool adaptive_h = false;  // h = h_ref / (live cell count), adapted every frame
  T h_ref = 1.0;

  // != 1: scale the first boundary piece's width linearly to this factor of its
  // initial extent over the run (quasi-static scheme required)
  T squeeze_to = 1.0;

  bool audit_every_frame = true;
  T tiling_rtol = 1e-9;
};

struct FrameStats {
  int frame = -1;
  T time = 0;
  T h = 0;
  int num_sites = 0;
  int newton_iterations = 0;
  bool converged = false;
  bool stalled = false;
  T energy = 0;
  T grad_norm = 0;
  T cell_area_sum = 0;
  T domain_area = 0;
  int divisions = 0;
  int collapses = 0;
  T removed_rest_area = 0;
  T rest_area_sum = 0;
  double wall_ms = 0;
};

struct RunResult {
  std::vector<FrameStats> frames;
  bool ok = true;
  int failed_frame = -1;
  std::string error;
};

// Per-frame observer; receives the freshly built diagram of the accepted state.
using FrameSink =
    std::function<void(const Scenario&, const RestrictedDiagram&, const FrameStats&)>;

// Frame loop: growth ramps, collapse sweep, divisions, one solver step, audit.
// Stops at the first solver failure or audit violation.
RunResult run_scenario(Scenario& scenario, const FrameSink& sink = {});

// Layout/history consistency and tiling audit (empty message = pass).
bool audit_scene(const System& sys, const DynamicsHistory& history, T tiling_rtol,
                 std::string* why = nullptr);

// ------------------------------------------------------------------- presets

// Named builders mirroring the shipped preset files; every scenario is a
// 2D-scale analog of the corresponding large experiment.
Scenario preset_two_cells();
Scenario preset_squeeze(int cells = 30, int frames = 100, T squeeze_to = 0.8,
                        std::uint64_t seed = 1);
Scenario preset_coarsening(int cells = 200, std::uint64_t seed = 2);
Scenario preset_navigation(int cells = 420, int frames = 60, bool symmetric_body = false,
                           std::uint64_t seed = 3);
Scenario preset_convergence(Scheme scheme, bool with_perimeter, T h);
Scenario preset_membrane_growth(int doublings = 6, int division_period = 12);
Scenario preset_proliferation(int frames = 120, std::uint64_t seed = 5);

// Lookup by name ("two_cells", "squeeze30", "coarsen2d_200", "convergence_bdf1",
// "convergence_bdf2", "convergence_bdf2_perimeter", "rigid_body",
// "rigid_body_symmetric", "membrane_growth", "proliferation"); throws
// std::invalid_argument for unknown names.
Scenario make_preset(const std::string& name);
std::vector<std::string> preset_names();

}  // namespace pcell
