#pragma once

#include "powercell/solve.h"

#include <deque>
#include <functional>
#include <string>
#include <vector>

namespace pcell {

// Scalar objective L(y, u) over the equilibrium state y and design parameters u.
// Callbacks see the system with y already applied to it. grad_u may be left
// empty when L has no explicit dependence on u.
struct FitObjective {
  std::function<T(const System&, const VectorXT& y, const VectorXT& u)> value;
  std::function<VectorXT(const System&, const VectorXT& y, const VectorXT& u)> grad_y;
  std::function<VectorXT(const System&, const VectorXT& y, const VectorXT& u)> grad_u;
};

// minimize L(y, u) subject to dE/dy = 0, where u is one site axis across all
// sites (rest areas by default: per-cell pressure-like controls). The axis must
// not be part of the state layout at the same time.
struct FitProblem {
  System* sys = nullptr;
  int param_axis = kSiteA;
  FitObjective objective;
  SolverConfig equilibrium;  // inner solver settings

  DofMap umap;  // one dof per site on param_axis; built by finalize()

  void finalize();
  int num_params() const { return umap.ndofs; }
  VectorXT params() const;
  void set_params(const VectorXT& u);
};

struct SensitivityOptions {
  // The equilibrium hessian factorization reuses the regularization ladder of
  // the forward solver; reg > 0 perturbs the reported gradient, so it is only
  // engaged when the unmodified factorization fails.
  T reg_init = 1e-10;
  T reg_growth = 10.0;
  int reg_max_tries = 40;
  T lin_rtol = 1e-10;

  bool direct = false;  // form dy/du explicitly instead of the adjoint solve
};

struct SensitivityResult {
  T value = 0;     // L at (y*, u)
  VectorXT grad;   // dL/du
  T reg_used = 0;
  bool ok = false;  // false: hessian solve failed at every regularization level
};

// Total objective derivative at an equilibrium state: solves the adjoint system
// H lambda = dL/dy and returns -lambda^T d2E/dydu + dL/du (or the same product
// through explicit equilibrium-state derivatives in direct mode).
SensitivityResult sensitivity_gradient(FitProblem& problem, const VectorXT& ystar,
                                       const VectorXT& u, const SensitivityOptions& opts = {});

struct FitConfig {
  T grad_tol = 1e-8;  // infinity norm of dL/du
  int max_iters = 100;
  int memory = 10;  // quasi-newton history pairs

  T ls_armijo = 1e-4;
  T ls_shrink = 0.5;
  int ls_max_shrinks = 30;

  SensitivityOptions sensitivity;
};

struct FitIterate {
  T objective = 0;
  T grad_norm = 0;
  VectorXT u;
};

struct FitResult {
  VectorXT u;
  VectorXT y;  // equilibrium state at u
  T objective = 0;
  T grad_norm = 0;
  int iterations = 0;  // accepted steps
  int resolves = 0;    // inner equilibrium solves, including rejected trials
  bool converged = false;
  bool equilibrium_failed = false;  // could not equilibrate at u0
  std::vector<FitIterate> history;  // u0 first, then one entry per accepted step
};

// Quasi-newton outer loop: limited-memory BFGS directions with a backtracking
// line search on the re-solved objective. Every trial u re-equilibrates the
// system, warm-started from the previous accepted state; failed equilibria are
// line-search rejections. Accepted objective values decrease monotonically.
FitResult fit(FitProblem& problem, const VectorXT& u0, const FitConfig& config = {});

// ------------------------------------------------------------- image fitting

// Hand-traced tessellation of an image: vertex positions in pixels plus cell
// loops over vertex ids. model = scale * px + offset maps into world units.
struct Annotation {
  struct Vertex {
    int id = -1;
    TV pos = TV::Zero();  // pixels
  };
  struct Cell {
    int id = -1;
    std::vector<int> loop;  // vertex ids, ordered along the cell outline
  };

  std::vector<Vertex> vertices;
  std::vector<Cell> cells;
  T scale = 1.0;
  TV offset = TV::Zero();

  TV to_model(const TV& px) const { return scale * px + offset; }
  const Vertex* find_vertex(int id) const;
  std::vector<TV> cell_polygon(int cell_index) const;  // model units
  T cell_area(int cell_index) const;                   // absolute
  TV cell_centroid(int cell_index) const;
  // every referenced vertex id exists, every loop has >= 3 distinct vertices
  // and does not self-intersect
  bool valid(std::string* why = nullptr) const;
};

Annotation parse_annotation(const std::string& json_text);
Annotation load_annotation(const std::string& path);

// One target vertex tied to the frozen generating inputs of a diagram vertex.
// The generating expression stays evaluable even if the vertex later leaves the
// tessellation.
struct VertexCorrespondence {
  GeneratorRecord gen;
  TV target = TV::Zero();
};

// Match each annotation vertex to the nearest vertex of the diagram and keep
// that record for the whole fit; the objective is then smooth in u.
std::vector<VertexCorrespondence> freeze_correspondence(const Annotation& annotation,
                                                        const RestrictedDiagram& diagram);
std::vector<VertexCorrespondence> freeze_correspondence(const std::vector<TV>& targets,
                                                        const RestrictedDiagram& diagram);

// Sum of squared distances between generated and target vertex positions.
FitObjective image_match_objective(std::vector<VertexCorrespondence> correspondence);

}  // namespace pcell
