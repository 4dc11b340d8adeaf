#pragma once

#include "powercell/boundary.h"
#include "powercell/diagram.h"
#include "powercell/measures.h"
#include "powercell/site.h"

#include <vector>

namespace pcell {

// Per-cell energy densities, all smooth functions of the raw cell measures, the
// owning site position c and the rest area abar. Coefficients multiply.
enum class EnergyKind {
  AreaTargetQuadratic,    // (A - abar)^2
  RelativeAreaQuadratic,  // (A/abar - 1)^2
  Perimeter,              // P
  PerimeterQuadratic,     // P^2
  SecondMoment,           // integral |x - centroid|^2 dA    [/ abar^2 if normalized]
  SiteCentroid,           // |c - centroid|^2                [/ abar if normalized]
  SiteMoment,             // integral |x - c|^2 dA
  Gravity,                // integral y dA (coeff = rho g)
};

struct EnergyTerm {
  EnergyKind kind;
  T coeff = 1.0;
  bool normalized = false;
};

struct EnergyModel {
  std::vector<EnergyTerm> terms;
  // cells with area below eps * domain_area lose centroid-based terms for the
  // evaluation (transitional states; collapse handling removes them for good)
  T collapse_area_eps = 1e-9;

  // optional quadratic wall k (floor - abar)^2 below abar_floor: keeps shrinking
  // rest areas off the RelativeAreaQuadratic abar -> 0 singularity until the
  // collapse sweep removes the cell
  T abar_floor = 0;
  T abar_floor_stiffness = 0;
};

// Maps site dof axes and boundary parameters to a flat dof vector.
struct DofMap {
  std::vector<std::array<int, kSiteAxes>> site_dof;  // -1: not a dof
  int boundary_offset = -1;  // first boundary-parameter dof, -1 if none
  int num_boundary = 0;
  int ndofs = 0;

  // dofs ordered: per site in axis order (only active axes), then boundary params
  static DofMap build(const std::vector<Site>& sites, int num_boundary_params = 0);
  // single-axis map over all sites (used for design-parameter columns)
  static DofMap build_axis(int num_sites, int axis);

  int site_index(int site, int axis) const { return site_dof[site][axis]; }
  int boundary_index(int k) const { return boundary_offset + k; }

  VectorXT gather(const std::vector<Site>& sites, const VectorXT& bparams) const;
  void scatter(const VectorXT& y, std::vector<Site>& sites, VectorXT& bparams) const;
};

struct EnergyReport {
  std::vector<int> empty_cells;      // cells with no geometry at this state
  std::vector<int> collapsed_cells;  // nonempty but area below threshold
  bool centroid_skipped = false;     // a centroid-based term was dropped somewhere
};

struct EnergyDerivatives {
  T value = 0;
  VectorXT grad;                   // over ymap dofs
  std::vector<Triplet> hess;       // ymap x ymap
  std::vector<Triplet> hess_yu;    // ymap x umap, only if a umap was given
  EnergyReport report;
};

// Value-only evaluation (cheap path for line searches).
T cell_energies_value(const EnergyModel& model, const std::vector<Site>& sites,
                      const RestrictedDiagram& diagram, EnergyReport* report = nullptr);

// Full assembly. order: 0 value, 1 +gradient, 2 +hessian. bvp supplies the
// boundary-vertex parameterization chain (required when ymap has boundary dofs);
// umap adds mixed second-derivative columns for design parameters.
EnergyDerivatives assemble_cell_energies(const EnergyModel& model,
                                         const std::vector<Site>& sites,
                                         const RestrictedDiagram& diagram, const DofMap& ymap,
                                         int order,
                                         const std::vector<BVertParam>* bvp = nullptr,
                                         const DofMap* umap = nullptr);

}  // namespace pcell
