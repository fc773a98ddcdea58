#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "hexfleet/trajectory.hpp"

namespace hexfleet {

// Road speed limit in km/h at a point.
using SpeedLimit = std::function<double(const geo::GeoPoint&)>;
inline constexpr double kDefaultSpeedLimitKmh = 60.0;
inline constexpr double kSpeedTolerance = 1.2;

// Walks one vehicle's time-sorted records and drops every point whose
// average speed from the last kept point exceeds 1.2 x the limit at that
// point. Dropping moves the comparison forward, so a single bad fix costs
// exactly one point.
std::vector<TrajectoryRecord> speed_filter(std::span<const TrajectoryRecord> records, const SpeedLimit& limit);
std::vector<TrajectoryRecord> speed_filter(std::span<const TrajectoryRecord> records,
                                           double limit_kmh = kDefaultSpeedLimitKmh);

struct FilterReport {
  TrajectorySet kept;
  std::size_t removed = 0;
};
FilterReport speed_filter(const TrajectorySet& set, const SpeedLimit& limit);

// A contiguous window [begin, begin + records.size()) of one trajectory.
struct Segment {
  std::string vehicle_id;
  std::size_t trajectory = 0;  // index into the source set
  std::size_t begin = 0;
  std::vector<TrajectoryRecord> records;

  std::int64_t start_time() const { return records.front().timestamp_s; }
};

struct SegmentReport {
  std::vector<Segment> segments;
  std::size_t skipped = 0;  // trajectories with fewer than 2 records
};

// n_samples windows: trajectory uniform over those with >= 2 records, length
// uniform in [2, min(leng, size)], start uniform over valid offsets.
SegmentReport segment_trajectories(const TrajectorySet& set, std::size_t leng, std::size_t n_samples,
                                   std::uint64_t seed);

struct Split {
  std::vector<Segment> train;
  std::vector<Segment> validation;
  std::vector<Segment> test;
};

// Sorts by start time (ties by vehicle, then offset) and cuts by count:
// floor of each share for train and validation, the rest to test.
// ConfigError below 10 segments.
Split chronological_split(std::vector<Segment> segments, const std::array<std::size_t, 3>& ratio = {6, 3, 1});

}  // namespace hexfleet
