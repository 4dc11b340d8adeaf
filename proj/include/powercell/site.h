#pragma once

#include "powercell/types.h"

#include <array>

namespace pcell {

// Per-site dof axes, in layout order.
enum SiteAxis : int { kSiteX = 0, kSiteY = 1, kSiteW = 2, kSiteA = 3 };
constexpr int kSiteAxes = 4;

// Power diagram generator. The weight is an absolute power weight (may be negative);
// area_target is the rest area used by target-area energies and, in coarsening-style
// scenarios, an additional dof.
struct Site {
  TV position = TV::Zero();
  T weight = 0.0;
  T area_target = 1.0;

  std::array<bool, kSiteAxes> dof_active = {true, true, false, false};
  std::array<T, kSiteAxes> viscosity = {0, 0, 0, 0};
  std::array<T, kSiteAxes> mass = {0, 0, 0, 0};

  // division bookkeeping (see scene): generation counts completed divisions up the
  // ancestry, growth_* drive the daughter rest-area ramp after a division.
  int generation = 0;
  T growth_t0 = -1.0;       // simulation time of last division, <0 if none pending
  T growth_t1 = -1.0;       // simulation time the ramp completes
  T growth_from = 0.0;      // rest area at division
  T growth_to = 0.0;        // rest area at end of ramp

  T dof(int axis) const {
    switch (axis) {
      case kSiteX: return position.x();
      case kSiteY: return position.y();
      case kSiteW: return weight;
      default: return area_target;
    }
  }
  void set_dof(int axis, T v) {
    switch (axis) {
      case kSiteX: position.x() = v; break;
      case kSiteY: position.y() = v; break;
      case kSiteW: weight = v; break;
      default: area_target = v; break;
    }
  }
};

}  // namespace pcell
