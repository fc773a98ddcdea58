#include "hexfleet/action.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <fmt/format.h>

namespace hexfleet {

Action::Action(double dis_norm_, double deg_) : dis_norm(dis_norm_), deg(deg_) {
  if (!(dis_norm >= 0.0 && dis_norm <= 1.0) || !(deg >= 0.0 && deg < 360.0)) {
    throw std::invalid_argument(fmt::format("action ({}, {}) out of range", dis_norm, deg));
  }
}

Action action_between(const geo::GeoPoint& from, const geo::GeoPoint& to, double r_max_km, double fallback_deg) {
  if (!(r_max_km > 0.0)) throw std::invalid_argument("r_max must be positive");
  double d = geo::haversine_km(from, to);
  if (d == 0.0) return Action(0.0, fallback_deg);
  return Action(std::min(1.0, d / r_max_km), geo::azimuth_deg(from, to));
}

double action_error_km(const Action& pred, const Action& truth, const geo::GeoPoint& from, double r_max_km) {
  auto a = geo::displace(from, pred.distance_km(r_max_km), pred.deg);
  auto b = geo::displace(from, truth.distance_km(r_max_km), truth.deg);
  return geo::haversine_km(a, b);
}

}  // namespace hexfleet
