#pragma once

#include <optional>
#include <vector>

#include "hexfleet/geo.hpp"

namespace hexfleet {

enum class VehicleStatus : int { empty = 0, occupied = 1 };

// What one vehicle looks like at a tick, as seen by the feature extractor.
struct VehicleObservation {
  int id = 0;
  geo::GeoPoint position;
  std::optional<geo::GeoPoint> previous_position;
  VehicleStatus status = VehicleStatus::empty;
  double speed_kmh = 0.0;
  std::optional<double> heading_deg;
  std::optional<double> previous_heading_deg;
};

struct TripObservation {
  geo::GeoPoint dropoff;
  double travel_time_s = 0.0;
  double end_time_s = 0.0;
  double fare = 0.0;
};

struct SimSnapshot {
  double time_s = 0.0;
  double dt_s = 30.0;
  double free_flow_kmh = 40.0;
  double travel_time_window_s = 3600.0;
  std::vector<VehicleObservation> vehicles;
  std::vector<TripObservation> completed_trips;
};

}  // namespace hexfleet
