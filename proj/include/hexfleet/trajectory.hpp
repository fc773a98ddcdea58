#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "hexfleet/geo.hpp"
#include "hexfleet/snapshot.hpp"

namespace hexfleet {

inline constexpr const char* kTrajectoryHeader = "vehicle_id,timestamp_s,lat,lon,status,fare";

struct TrajectoryRecord {
  std::string vehicle_id;
  std::int64_t timestamp_s = 0;
  geo::GeoPoint position;
  VehicleStatus status = VehicleStatus::empty;
  double fare = 0.0;  // booked on the drop-off row, otherwise 0

  friend bool operator==(const TrajectoryRecord&, const TrajectoryRecord&) = default;
};

// Records of one vehicle, strictly increasing in time.
struct Trajectory {
  std::string vehicle_id;
  std::vector<TrajectoryRecord> records;
};

// Vehicles in id order.
using TrajectorySet = std::vector<Trajectory>;

void write_trajectories(std::ostream& out, std::span<const TrajectoryRecord> records);
void save_trajectories(const std::string& path, std::span<const TrajectoryRecord> records);

// Parses the CSV. Malformed rows throw ParseError naming the line; a vehicle
// whose timestamps do not strictly increase throws ParseError naming the
// vehicle and line. Empty and header-only input give an empty set.
TrajectorySet read_trajectories(std::istream& in);
TrajectorySet load_trajectories(const std::string& path);

TrajectorySet group_by_vehicle(std::span<const TrajectoryRecord> records);
std::vector<TrajectoryRecord> flatten(const TrajectorySet& set);

}  // namespace hexfleet
