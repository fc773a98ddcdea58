#include "hexfleet/preprocess.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <random>

#include "hexfleet/errors.hpp"

namespace hexfleet {

std::vector<TrajectoryRecord> speed_filter(std::span<const TrajectoryRecord> records, const SpeedLimit& limit) {
  std::vector<TrajectoryRecord> kept;
  kept.reserve(records.size());
  for (const auto& r : records) {
    if (kept.empty()) {
      kept.push_back(r);
      continue;
    }
    const auto& last = kept.back();
    auto dt = static_cast<double>(r.timestamp_s - last.timestamp_s);
    double km = geo::haversine_km(last.position, r.position);
    // Time-sorted input has dt > 0; a repeated stamp only survives if it
    // does not move.
    double kmh = dt > 0.0 ? km / dt * 3600.0 : (km > 0.0 ? INFINITY : 0.0);
    if (kmh > kSpeedTolerance * limit(r.position)) continue;
    kept.push_back(r);
  }
  return kept;
}

std::vector<TrajectoryRecord> speed_filter(std::span<const TrajectoryRecord> records, double limit_kmh) {
  return speed_filter(records, [limit_kmh](const geo::GeoPoint&) { return limit_kmh; });
}

FilterReport speed_filter(const TrajectorySet& set, const SpeedLimit& limit) {
  FilterReport out;
  for (const auto& t : set) {
    Trajectory kept{t.vehicle_id, speed_filter(t.records, limit)};
    out.removed += t.records.size() - kept.records.size();
    out.kept.push_back(std::move(kept));
  }
  return out;
}

SegmentReport segment_trajectories(const TrajectorySet& set, std::size_t leng, std::size_t n_samples,
                                   std::uint64_t seed) {
  if (leng < 2) throw ConfigError("leng must be at least 2");
  SegmentReport out;
  std::vector<std::size_t> eligible;
  for (std::size_t i = 0; i < set.size(); ++i) {
    if (set[i].records.size() >= 2) {
      eligible.push_back(i);
    } else {
      ++out.skipped;
    }
  }
  if (out.skipped > 0) spdlog::warn("segmenting skipped {} trajectories shorter than 2 points", out.skipped);
  if (eligible.empty()) return out;

  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> which(0, eligible.size() - 1);
  out.segments.reserve(n_samples);
  for (std::size_t s = 0; s < n_samples; ++s) {
    std::size_t ti = eligible[which(rng)];
    const auto& recs = set[ti].records;
    std::size_t max_len = std::min(leng, recs.size());
    std::size_t len = std::uniform_int_distribution<std::size_t>(2, max_len)(rng);
    std::size_t begin = std::uniform_int_distribution<std::size_t>(0, recs.size() - len)(rng);
    Segment seg;
    seg.vehicle_id = set[ti].vehicle_id;
    seg.trajectory = ti;
    seg.begin = begin;
    seg.records.assign(recs.begin() + static_cast<std::ptrdiff_t>(begin),
                       recs.begin() + static_cast<std::ptrdiff_t>(begin + len));
    out.segments.push_back(std::move(seg));
  }
  return out;
}

Split chronological_split(std::vector<Segment> segments, const std::array<std::size_t, 3>& ratio) {
  if (segments.size() < 10) {
    throw ConfigError(fmt::format("need at least 10 segments to split, got {}", segments.size()));
  }
  std::size_t parts = ratio[0] + ratio[1] + ratio[2];
  if (parts == 0) throw ConfigError("split ratio sums to zero");
  std::stable_sort(segments.begin(), segments.end(), [](const Segment& a, const Segment& b) {
    if (a.start_time() != b.start_time()) return a.start_time() < b.start_time();
    if (a.vehicle_id != b.vehicle_id) return a.vehicle_id < b.vehicle_id;
    return a.begin < b.begin;
  });
  std::size_t n = segments.size();
  std::size_t n_train = n * ratio[0] / parts;
  std::size_t n_val = n * ratio[1] / parts;
  Split out;
  auto it = std::make_move_iterator(segments.begin());
  out.train.assign(it, it + static_cast<std::ptrdiff_t>(n_train));
  out.validation.assign(it + static_cast<std::ptrdiff_t>(n_train), it + static_cast<std::ptrdiff_t>(n_train + n_val));
  out.test.assign(it + static_cast<std::ptrdiff_t>(n_train + n_val), std::make_move_iterator(segments.end()));
  return out;
}

}  // namespace hexfleet
