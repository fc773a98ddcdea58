#include "hexfleet/trajectory.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "hexfleet/errors.hpp"

namespace hexfleet {
namespace {

std::vector<std::string_view> split(std::string_view line, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    auto pos = line.find(sep, start);
    out.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

template <typename T>
T parse_number(std::string_view field, const char* what, std::size_t line) {
  T value{};
  auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), value);
  if (ec != std::errc() || ptr != field.data() + field.size()) {
    throw ParseError(fmt::format("line {}: invalid {} '{}'", line, what, field));
  }
  return value;
}

}  // namespace

void write_trajectories(std::ostream& out, std::span<const TrajectoryRecord> records) {
  out << kTrajectoryHeader << '\n';
  for (const auto& r : records) {
    out << fmt::format("{},{},{:.7f},{:.7f},{},{:.4f}\n", r.vehicle_id, r.timestamp_s, r.position.lat(),
                       r.position.lon(), static_cast<int>(r.status), r.fare);
  }
}

void save_trajectories(const std::string& path, std::span<const TrajectoryRecord> records) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error(fmt::format("cannot write {}", path));
  write_trajectories(out, records);
}

TrajectorySet read_trajectories(std::istream& in) {
  std::vector<TrajectoryRecord> records;
  std::map<std::string, std::pair<std::int64_t, std::size_t>> last_seen;
  std::string line;
  std::size_t line_no = 0;
  bool saw_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!saw_header) {
      if (line.empty()) continue;
      if (line != kTrajectoryHeader) {
        throw ParseError(fmt::format("line {}: expected header '{}'", line_no, kTrajectoryHeader));
      }
      saw_header = true;
      continue;
    }
    if (line.empty()) continue;
    auto f = split(line, ',');
    if (f.size() != 6) throw ParseError(fmt::format("line {}: expected 6 fields, got {}", line_no, f.size()));
    if (f[0].empty()) throw ParseError(fmt::format("line {}: empty vehicle_id", line_no));
    TrajectoryRecord r;
    r.vehicle_id = std::string(f[0]);
    r.timestamp_s = parse_number<std::int64_t>(f[1], "timestamp_s", line_no);
    double lat = parse_number<double>(f[2], "lat", line_no);
    double lon = parse_number<double>(f[3], "lon", line_no);
    try {
      r.position = geo::GeoPoint(lat, lon);
    } catch (const std::exception& e) {
      throw ParseError(fmt::format("line {}: {}", line_no, e.what()));
    }
    int status = parse_number<int>(f[4], "status", line_no);
    if (status != 0 && status != 1) throw ParseError(fmt::format("line {}: status must be 0 or 1", line_no));
    r.status = static_cast<VehicleStatus>(status);
    r.fare = parse_number<double>(f[5], "fare", line_no);
    if (!std::isfinite(r.fare) || r.fare < 0.0) throw ParseError(fmt::format("line {}: invalid fare", line_no));

    auto it = last_seen.find(r.vehicle_id);
    if (it != last_seen.end() && r.timestamp_s <= it->second.first) {
      throw ParseError(fmt::format("line {}: timestamps of vehicle '{}' not increasing ({} after {} on line {})",
                                   line_no, r.vehicle_id, r.timestamp_s, it->second.first, it->second.second));
    }
    last_seen[r.vehicle_id] = {r.timestamp_s, line_no};
    records.push_back(std::move(r));
  }
  if (!saw_header) spdlog::warn("trajectory input is empty");
  return group_by_vehicle(records);
}

TrajectorySet load_trajectories(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error(fmt::format("cannot read {}", path));
  return read_trajectories(in);
}

TrajectorySet group_by_vehicle(std::span<const TrajectoryRecord> records) {
  std::map<std::string, Trajectory> by_id;
  for (const auto& r : records) {
    auto& t = by_id[r.vehicle_id];
    t.vehicle_id = r.vehicle_id;
    t.records.push_back(r);
  }
  TrajectorySet out;
  for (auto& [id, t] : by_id) {
    std::stable_sort(t.records.begin(), t.records.end(),
                     [](const auto& a, const auto& b) { return a.timestamp_s < b.timestamp_s; });
    out.push_back(std::move(t));
  }
  return out;
}

std::vector<TrajectoryRecord> flatten(const TrajectorySet& set) {
  std::vector<TrajectoryRecord> out;
  for (const auto& t : set) out.insert(out.end(), t.records.begin(), t.records.end());
  return out;
}

}  // namespace hexfleet
