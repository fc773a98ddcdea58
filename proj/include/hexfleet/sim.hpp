#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "hexfleet/action.hpp"
#include "hexfleet/hexgraph.hpp"
#include "hexfleet/snapshot.hpp"
#include "hexfleet/trajectory.hpp"

namespace hexfleet::sim {

struct Hotspot {
  geo::GeoPoint center;
  double sigma_km = 1.0;
  double weight = 1.0;
};

struct CityConfig {
  hex::BoundingBox bbox;
  std::array<double, 3> diameters_km{2.0, 5.0, 10.0};
  std::size_t n_vehicles = 20;
  // Arrivals form a Poisson process conditioned on n_orders events in the
  // spawn window, i.e. i.i.d. uniform creation times.
  std::size_t n_orders = 200;
  double spawn_window_s = 3600.0;
  // Share of arrivals drawn uniformly over the bbox when hotspots exist.
  double background_share = 0.3;
  std::vector<Hotspot> hotspots;
  double cruise_kmh = 40.0;
  double dt_s = 30.0;
  double r_max_km = 5.0;
  double fare_base = 2.5;
  double fare_per_km = 1.5;
  double pickup_window_s = 600.0;
  double fare_window_s = 3600.0;
  // Familiarity: Gaussian bumps of width sigma around a contiguous cluster
  // of micro cells; with familiarity_on_hotspots the cluster grows from the
  // micro cell of a randomly chosen hotspot.
  std::size_t familiarity_cluster = 4;
  double familiarity_sigma_km = 3.0;
  double familiarity_floor = 1e-3;
  bool familiarity_on_hotspots = false;
  // Speed of any vehicle is cruise / (1 + c * other vehicles in its micro cell).
  double congestion_per_vehicle = 0.0;

  void validate() const;
};

// 16 x 16 km city with two demand hotspots and hotspot-centred familiarity.
CityConfig two_hotspot_city();
// The same two hotspots inside a 48 x 48 km metro area with tighter
// familiarity, so pickup reach keeps improving with fleet size.
CityConfig metro_city();

enum class OrderState { scheduled, waiting, assigned, completed, expired };
enum class Leg { none, to_pickup, to_dropoff };

struct Order {
  std::size_t id = 0;
  geo::GeoPoint origin;
  geo::GeoPoint destination;
  double fare = 0.0;
  double created_at = 0.0;
  double deadline = 0.0;
  OrderState state = OrderState::scheduled;
  std::optional<std::size_t> vehicle;
  std::optional<double> assigned_at;
  std::optional<double> pickup_time;
  std::optional<double> dropoff_time;
};

struct Vehicle {
  std::size_t id = 0;
  std::string name;
  geo::GeoPoint position;
  std::optional<geo::GeoPoint> previous_position;
  VehicleStatus status = VehicleStatus::empty;
  std::vector<double> familiarity;  // over micro cells, sums to 1
  double idle_s = 0.0;  // seconds without a passenger on board

  double total_s = 0.0;
  std::optional<std::size_t> order;
  Leg leg = Leg::none;
  double speed_kmh = 0.0;
  std::optional<double> heading_deg;
  std::optional<double> previous_heading_deg;
};

class World {
 public:
  static World generate(const CityConfig& config, std::uint64_t seed);

  const CityConfig& config() const { return config_; }
  const hex::MultiviewGraph& graph() const { return graph_; }
  const hex::HexGrid& micro() const { return graph_.view(hex::ViewLevel::micro); }
  double time_s() const { return time_s_; }
  std::uint64_t seed() const { return seed_; }

  std::vector<Vehicle>& vehicles() { return vehicles_; }
  const std::vector<Vehicle>& vehicles() const { return vehicles_; }
  std::vector<Order>& orders() { return orders_; }
  const std::vector<Order>& orders() const { return orders_; }
  const std::vector<TrajectoryRecord>& records() const { return records_; }

  // Orders created so far (state other than scheduled).
  std::vector<const Order*> created_orders() const;
  std::size_t open_orders() const;

  // Current speed available to a vehicle at p, after congestion.
  double local_speed_kmh(std::size_t vehicle) const;

  // Median fare of orders picked up in p's micro cell and completed within
  // the trailing fare window; falls back to the city-wide median, then 0.
  double regional_median_fare(const geo::GeoPoint& p) const;

  SimSnapshot snapshot() const;

 private:
  friend void step(World&, const std::map<std::size_t, Action>&);
  friend std::vector<std::pair<std::size_t, std::size_t>> greedy_assign(World&);

  void log_tick(const std::map<std::size_t, double>& fares);
  void spawn_and_expire();

  CityConfig config_;
  hex::MultiviewGraph graph_;
  std::vector<Vehicle> vehicles_;
  std::vector<Order> orders_;
  std::vector<TrajectoryRecord> records_;
  // Trips as they appear in the log: from the first occupied record of a
  // run to the record that books the fare.
  std::vector<TripObservation> trips_;
  std::vector<std::optional<std::int64_t>> run_start_;
  std::vector<std::size_t> micro_counts_;
  double time_s_ = 0.0;
  std::uint64_t seed_ = 0;
};

// Advances the world by one tick of config().dt_s. Empty vehicles move by
// their action (capped at local speed * dt, clamped to the bbox); a missing
// action keeps the vehicle in place. Actions for occupied vehicles are
// ignored with a warning.
void step(World& world, const std::map<std::size_t, Action>& actions);

// Matches waiting orders in creation order to the nearest empty vehicle
// (ties to the lower id) and returns (order id, vehicle id) pairs.
std::vector<std::pair<std::size_t, std::size_t>> greedy_assign(World& world);

double error_metric(const Action& pred, const Action& truth, const geo::GeoPoint& from, double r_max_km);

// Sum of idle seconds over sum of running seconds. MetricError when no
// vehicle has run.
double empty_loaded_rate(std::span<const Vehicle> vehicles);
double empty_loaded_rate(const World& world);

// Share of orders picked up by their deadline. MetricError with no orders.
double order_acceptance_rate(std::span<const Order* const> orders);
double order_acceptance_rate(const World& world);

// Chooses relocation actions for the empty vehicles of a world.
class Dispatcher {
 public:
  virtual ~Dispatcher() = default;
  virtual std::map<std::size_t, Action> decide(const World& world) = 0;
};

// Ground-truth cruising: each empty vehicle picks its own micro cell or a
// neighbour with probability proportional to its familiarity and heads for
// that cell's centre at its local speed.
class GroundTruthDriver : public Dispatcher {
 public:
  explicit GroundTruthDriver(std::uint64_t seed) : rng_(seed) {}
  std::map<std::size_t, Action> decide(const World& world) override;
  Action act(const World& world, const Vehicle& v);

 private:
  std::mt19937_64 rng_;
  std::map<std::size_t, std::size_t> target_;  // micro cell per vehicle id
};

// Uniformly random actions, for controls.
class RandomDispatcher : public Dispatcher {
 public:
  explicit RandomDispatcher(std::uint64_t seed) : rng_(seed) {}
  std::map<std::size_t, Action> decide(const World& world) override;

 private:
  std::mt19937_64 rng_;
};

struct TickRow {
  std::int64_t tick = 0;
  std::size_t open_orders = 0;
  double empty_loaded_rate = 0.0;
  double acceptance_rate = 0.0;
};
inline constexpr const char* kTickHeader = "tick,open_orders,empty_loaded_rate,acceptance_rate";

struct Metrics {
  double error_km = std::numeric_limits<double>::quiet_NaN();
  std::size_t decisions = 0;
  double empty_loaded_rate = 0.0;
  double order_acceptance_rate = 0.0;
  std::size_t orders = 0;
};

struct EpisodeOptions {
  // Defaults to spawn window + pickup window.
  std::optional<double> duration_s;
  // When set, each decision is scored against this dispatcher's action for
  // the same vehicle and tick.
  Dispatcher* reference = nullptr;
  std::function<void(const World&, const TickRow&)> on_tick;
};

// Tick loop: assign, decide, step.
Metrics run_episode(World& world, Dispatcher& dispatcher, const EpisodeOptions& options = {});

struct RatioRow {
  std::string ratio;
  std::size_t vehicles = 0;
  std::size_t orders = 0;
  double empty_loaded_rate = 0.0;
  double order_acceptance_rate = 0.0;
};

// Car:order ratios from 1:10 to 10:1.
const std::vector<std::string>& default_ratios();
double parse_ratio(const std::string& ratio);

// One ground-truth episode per ratio with the order count of the template
// and n_vehicles = ratio * n_orders.
std::vector<RatioRow> ratio_sweep(const CityConfig& city, std::span<const std::string> ratios, std::uint64_t seed);

double spearman(std::span<const double> a, std::span<const double> b);

}  // namespace hexfleet::sim
