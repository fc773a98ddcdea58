#pragma once

#include "hexfleet/geo.hpp"

namespace hexfleet {

// Relocation command for one vehicle and one step: a fraction of the
// maximum dispatch radius and an initial bearing.
struct Action {
  double dis_norm = 0.0;  // [0, 1]
  double deg = 0.0;       // [0, 360)

  Action() = default;
  Action(double dis_norm, double deg);  // validates ranges

  double distance_km(double r_max_km) const { return dis_norm * r_max_km; }
  friend bool operator==(const Action&, const Action&) = default;
};

// Action that moves from `from` to `to`, distance normalized by r_max and
// clipped to 1. A zero move keeps `fallback_deg` as its heading.
Action action_between(const geo::GeoPoint& from, const geo::GeoPoint& to, double r_max_km, double fallback_deg = 0.0);

// Distance in km between the targets two actions reach from `from`.
double action_error_km(const Action& pred, const Action& truth, const geo::GeoPoint& from, double r_max_km);

}  // namespace hexfleet
