#include "hexfleet/sim.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "hexfleet/errors.hpp"

namespace hexfleet::sim {
namespace {

std::mt19937_64 stream(std::uint64_t seed, std::uint64_t salt) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(salt)};
  return std::mt19937_64(seq);
}

geo::GeoPoint uniform_point(const hex::BoundingBox& b, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> lat(b.south_west.lat(), b.north_east.lat());
  std::uniform_real_distribution<double> lon(b.south_west.lon(), b.north_east.lon());
  double la = lat(rng);
  return geo::GeoPoint(la, lon(rng));
}

geo::GeoPoint hotspot_point(const hex::BoundingBox& b, const Hotspot& h, std::mt19937_64& rng) {
  hex::LocalProjection proj(h.center);
  std::normal_distribution<double> n(0.0, h.sigma_km);
  for (int attempt = 0; attempt < 100; ++attempt) {
    double x = n(rng);
    auto p = proj.unproject({x, n(rng)});
    if (b.contains(p)) return p;
  }
  return b.clamp(h.center);
}

std::vector<double> make_familiarity(const CityConfig& c, const hex::HexGrid& micro, std::mt19937_64& rng) {
  std::size_t seed_cell;
  if (c.familiarity_on_hotspots && !c.hotspots.empty()) {
    auto h = std::uniform_int_distribution<std::size_t>(0, c.hotspots.size() - 1)(rng);
    seed_cell = micro.locate(c.bbox.clamp(c.hotspots[h].center));
  } else {
    seed_cell = std::uniform_int_distribution<std::size_t>(0, micro.size() - 1)(rng);
  }
  // Random contiguous growth from the seed cell.
  std::vector<std::size_t> cluster{seed_cell};
  std::set<std::size_t> in_cluster{seed_cell};
  while (cluster.size() < std::min(c.familiarity_cluster, micro.size())) {
    std::vector<std::size_t> frontier;
    for (auto i : cluster) {
      for (auto j : micro.neighbors(i)) {
        if (!in_cluster.count(j)) frontier.push_back(j);
      }
    }
    if (frontier.empty()) break;
    std::sort(frontier.begin(), frontier.end());
    frontier.erase(std::unique(frontier.begin(), frontier.end()), frontier.end());
    auto pick = frontier[std::uniform_int_distribution<std::size_t>(0, frontier.size() - 1)(rng)];
    cluster.push_back(pick);
    in_cluster.insert(pick);
  }
  std::vector<double> w(micro.size(), c.familiarity_floor);
  double two_s2 = 2.0 * c.familiarity_sigma_km * c.familiarity_sigma_km;
  for (std::size_t i = 0; i < micro.size(); ++i) {
    for (auto k : cluster) {
      double d = geo::haversine_km(micro.cells()[i].center, micro.cells()[k].center);
      w[i] += std::exp(-d * d / two_s2);
    }
  }
  double total = std::accumulate(w.begin(), w.end(), 0.0);
  for (auto& v : w) v /= total;
  return w;
}

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

void CityConfig::validate() const {
  if (n_vehicles < 1) throw std::invalid_argument("a city needs at least one vehicle");
  if (!(dt_s > 0.0) || !(cruise_kmh > 0.0) || !(r_max_km > 0.0)) {
    throw std::invalid_argument("dt, cruise speed and r_max must be positive");
  }
  if (!(spawn_window_s > 0.0) || !(pickup_window_s > 0.0)) throw std::invalid_argument("windows must be positive");
  if (!(background_share >= 0.0 && background_share <= 1.0)) {
    throw std::invalid_argument("background_share must be in [0, 1]");
  }
  if (fare_base <= 0.0 || fare_per_km < 0.0) throw std::invalid_argument("fares must be positive");
  if (congestion_per_vehicle < 0.0) throw std::invalid_argument("congestion must be non-negative");
  for (const auto& h : hotspots) {
    if (!(h.sigma_km > 0.0) || !(h.weight > 0.0)) throw std::invalid_argument("hotspot sigma and weight must be > 0");
  }
}

CityConfig two_hotspot_city() {
  CityConfig c;
  geo::GeoPoint center(30.25, 120.15);
  hex::LocalProjection proj(center);
  c.bbox = hex::BoundingBox(proj.unproject({-8.0, -8.0}), proj.unproject({8.0, 8.0}));
  c.hotspots = {{proj.unproject({-4.0, -3.0}), 1.2, 1.0}, {proj.unproject({4.0, 3.0}), 1.2, 1.0}};
  c.background_share = 0.2;
  c.familiarity_on_hotspots = true;
  return c;
}

CityConfig metro_city() {
  CityConfig c = two_hotspot_city();
  hex::LocalProjection proj(c.bbox.center());
  c.bbox = hex::BoundingBox(proj.unproject({-24.0, -24.0}), proj.unproject({24.0, 24.0}));
  c.background_share = 0.3;
  c.familiarity_sigma_km = 2.0;
  c.familiarity_floor = 1e-5;
  return c;
}

World World::generate(const CityConfig& config, std::uint64_t seed) {
  config.validate();
  World w;
  w.config_ = config;
  w.seed_ = seed;
  w.graph_ = hex::MultiviewGraph::build(config.bbox, config.diameters_km);

  auto vrng = stream(seed, 1);
  for (std::size_t i = 0; i < config.n_vehicles; ++i) {
    Vehicle v;
    v.id = i;
    v.name = fmt::format("v{:04d}", i);
    v.position = uniform_point(config.bbox, vrng);
    v.familiarity = make_familiarity(config, w.micro(), vrng);
    w.vehicles_.push_back(std::move(v));
  }

  auto orng = stream(seed, 2);
  std::uniform_real_distribution<double> when(0.0, config.spawn_window_s);
  std::vector<double> times(config.n_orders);
  for (auto& t : times) t = when(orng);
  std::sort(times.begin(), times.end());
  std::vector<double> weights;
  for (const auto& h : config.hotspots) weights.push_back(h.weight);
  std::bernoulli_distribution background(config.background_share);
  for (std::size_t i = 0; i < config.n_orders; ++i) {
    Order o;
    o.id = i;
    o.created_at = times[i];
    o.deadline = o.created_at + config.pickup_window_s;
    if (config.hotspots.empty() || background(orng)) {
      o.origin = uniform_point(config.bbox, orng);
    } else {
      std::discrete_distribution<std::size_t> pick(weights.begin(), weights.end());
      o.origin = hotspot_point(config.bbox, config.hotspots[pick(orng)], orng);
    }
    o.destination = uniform_point(config.bbox, orng);
    o.fare = config.fare_base + config.fare_per_km * geo::haversine_km(o.origin, o.destination);
    w.orders_.push_back(o);
  }
  w.spawn_and_expire();
  w.micro_counts_.assign(w.micro().size(), 0);
  for (const auto& v : w.vehicles_) ++w.micro_counts_[w.micro().locate(v.position)];
  w.log_tick({});
  return w;
}

std::vector<const Order*> World::created_orders() const {
  std::vector<const Order*> out;
  for (const auto& o : orders_) {
    if (o.state != OrderState::scheduled) out.push_back(&o);
  }
  return out;
}

std::size_t World::open_orders() const {
  return static_cast<std::size_t>(
      std::count_if(orders_.begin(), orders_.end(), [](const Order& o) { return o.state == OrderState::waiting; }));
}

double World::local_speed_kmh(std::size_t vehicle) const {
  const auto& v = vehicles_.at(vehicle);
  auto others = static_cast<double>(micro_counts_[micro().locate(v.position)]) - 1.0;
  return config_.cruise_kmh / (1.0 + config_.congestion_per_vehicle * std::max(0.0, others));
}

double World::regional_median_fare(const geo::GeoPoint& p) const {
  auto cell = micro().locate(config_.bbox.clamp(p));
  std::vector<double> local, all;
  for (const auto& o : orders_) {
    if (o.state != OrderState::completed || !o.dropoff_time) continue;
    if (*o.dropoff_time > time_s_ || *o.dropoff_time <= time_s_ - config_.fare_window_s) continue;
    all.push_back(o.fare);
    if (micro().locate(o.origin) == cell) local.push_back(o.fare);
  }
  return local.empty() ? median(all) : median(local);
}

SimSnapshot World::snapshot() const {
  SimSnapshot s;
  s.time_s = time_s_;
  s.dt_s = config_.dt_s;
  s.free_flow_kmh = config_.cruise_kmh;
  s.travel_time_window_s = config_.fare_window_s;
  for (const auto& v : vehicles_) {
    VehicleObservation o;
    o.id = static_cast<int>(v.id);
    o.position = v.position;
    o.previous_position = v.previous_position;
    o.status = v.status;
    o.speed_kmh = v.speed_kmh;
    o.heading_deg = v.heading_deg;
    o.previous_heading_deg = v.previous_heading_deg;
    s.vehicles.push_back(o);
  }
  s.completed_trips = trips_;
  return s;
}

void World::spawn_and_expire() {
  for (auto& o : orders_) {
    if (o.state == OrderState::scheduled && o.created_at <= time_s_) o.state = OrderState::waiting;
    if (o.state == OrderState::waiting && o.deadline < time_s_) o.state = OrderState::expired;
  }
}

void World::log_tick(const std::map<std::size_t, double>& fares) {
  auto ts = static_cast<std::int64_t>(std::llround(time_s_));
  run_start_.resize(vehicles_.size());
  for (const auto& v : vehicles_) {
    auto it = fares.find(v.id);
    double fare = it == fares.end() ? 0.0 : it->second;
    records_.push_back({v.name, ts, v.position, v.status, fare});
    auto& start = run_start_[v.id];
    if (v.status == VehicleStatus::occupied && !start) start = ts;
    if (fare > 0.0) {
      trips_.push_back({v.position, static_cast<double>(ts - start.value_or(ts)), static_cast<double>(ts), fare});
      start.reset();
      if (v.status == VehicleStatus::occupied) start = ts;
    }
  }
}

void step(World& world, const std::map<std::size_t, Action>& actions) {
  const auto& c = world.config_;
  double dt = c.dt_s;
  std::map<std::size_t, double> fares;
  std::vector<double> speeds(world.vehicles_.size());
  for (std::size_t i = 0; i < speeds.size(); ++i) speeds[i] = world.local_speed_kmh(i);

  for (auto& v : world.vehicles_) {
    bool was_empty = v.status == VehicleStatus::empty;
    v.total_s += dt;
    // Idle means no passenger on board, so pickup legs count as idle.
    double loaded_s = 0.0;
    auto old = v.position;
    double speed = speeds[v.id];
    double budget = speed * dt / 3600.0;
    auto act = actions.find(v.id);
    if (was_empty) {
      if (act != actions.end()) {
        double d = std::min(act->second.distance_km(c.r_max_km), budget);
        if (d > 0.0) v.position = c.bbox.clamp(geo::displace(old, d, act->second.deg));
      }
    } else {
      if (act != actions.end()) spdlog::warn("ignoring action for occupied vehicle {}", v.name);
      double spent = 0.0;
      while (budget > 0.0 && v.order) {
        auto& o = world.orders_[*v.order];
        const auto& target = v.leg == Leg::to_pickup ? o.origin : o.destination;
        double dist = geo::haversine_km(v.position, target);
        if (dist <= budget) {
          v.position = target;
          budget -= dist;
          spent += dist;
          double event = world.time_s_ + spent / speed * 3600.0;
          if (v.leg == Leg::to_dropoff) loaded_s += dist / speed * 3600.0;
          if (v.leg == Leg::to_pickup) {
            o.pickup_time = event;
            v.leg = Leg::to_dropoff;
          } else {
            o.dropoff_time = event;
            o.state = OrderState::completed;
            fares[v.id] += o.fare;
            v.status = VehicleStatus::empty;
            v.order.reset();
            v.leg = Leg::none;
          }
        } else {
          v.position = geo::displace(v.position, budget, geo::azimuth_deg(v.position, target));
          if (v.leg == Leg::to_dropoff) loaded_s += budget / speed * 3600.0;
          spent += budget;
          budget = 0.0;
        }
      }
    }
    v.idle_s += std::max(0.0, dt - loaded_s);
    double moved = geo::haversine_km(old, v.position);
    v.previous_position = old;
    v.speed_kmh = moved / dt * 3600.0;
    v.previous_heading_deg = v.heading_deg;
    if (moved > 0.0) v.heading_deg = geo::azimuth_deg(old, v.position);
  }
  world.time_s_ += dt;
  world.spawn_and_expire();
  std::fill(world.micro_counts_.begin(), world.micro_counts_.end(), 0);
  for (const auto& v : world.vehicles_) ++world.micro_counts_[world.micro().locate(v.position)];
  world.log_tick(fares);
}

std::vector<std::pair<std::size_t, std::size_t>> greedy_assign(World& world) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (auto& o : world.orders_) {  // ids follow creation order
    if (o.state != OrderState::waiting) continue;
    std::optional<std::size_t> best;
    double best_d = 0.0;
    for (const auto& v : world.vehicles_) {
      if (v.status != VehicleStatus::empty || v.order) continue;
      double d = geo::haversine_km(v.position, o.origin);
      if (!best || d < best_d) {
        best = v.id;
        best_d = d;
      }
    }
    if (!best) break;
    auto& v = world.vehicles_[*best];
    v.status = VehicleStatus::occupied;
    v.order = o.id;
    v.leg = Leg::to_pickup;
    o.state = OrderState::assigned;
    o.vehicle = v.id;
    o.assigned_at = world.time_s_;
    out.emplace_back(o.id, v.id);
  }
  return out;
}

double error_metric(const Action& pred, const Action& truth, const geo::GeoPoint& from, double r_max_km) {
  return action_error_km(pred, truth, from, r_max_km);
}

double empty_loaded_rate(std::span<const Vehicle> vehicles) {
  double idle = 0.0, total = 0.0;
  for (const auto& v : vehicles) {
    idle += v.idle_s;
    total += v.total_s;
  }
  if (total <= 0.0) throw MetricError("empty-loaded rate undefined: no running time");
  return idle / total;
}

double empty_loaded_rate(const World& world) { return empty_loaded_rate(world.vehicles()); }

double order_acceptance_rate(std::span<const Order* const> orders) {
  if (orders.empty()) throw MetricError("acceptance rate undefined: no orders");
  std::size_t ok = 0;
  for (const auto* o : orders) {
    if (o->pickup_time && *o->pickup_time <= o->deadline) ++ok;
  }
  return static_cast<double>(ok) / static_cast<double>(orders.size());
}

double order_acceptance_rate(const World& world) { return order_acceptance_rate(world.created_orders()); }

Action GroundTruthDriver::act(const World& world, const Vehicle& v) {
  const auto& micro = world.micro();
  auto cell = micro.locate(v.position);
  std::vector<std::size_t> options{cell};
  for (auto j : micro.neighbors(cell)) options.push_back(j);
  // Keep heading for the chosen cell until arriving there or drifting out
  // of its neighbourhood, then pick the next one by familiarity.
  auto it = target_.find(v.id);
  bool replan = it == target_.end() || std::find(options.begin(), options.end(), it->second) == options.end() ||
                geo::haversine_km(v.position, world.config().bbox.clamp(micro.cells()[it->second].center)) < 1e-9;
  if (replan) {
    std::vector<double> w;
    for (auto j : options) w.push_back(v.familiarity[j]);
    std::discrete_distribution<std::size_t> pick(w.begin(), w.end());
    it = target_.insert_or_assign(v.id, options[pick(rng_)]).first;
  }
  auto target = world.config().bbox.clamp(micro.cells()[it->second].center);
  double dist = geo::haversine_km(v.position, target);
  double r_max = world.config().r_max_km;
  if (dist < 1e-9) return Action(0.0, v.heading_deg.value_or(0.0));
  double reach = std::min(dist, world.local_speed_kmh(v.id) * world.config().dt_s / 3600.0);
  return Action(std::min(1.0, reach / r_max), geo::azimuth_deg(v.position, target));
}

std::map<std::size_t, Action> GroundTruthDriver::decide(const World& world) {
  std::map<std::size_t, Action> out;
  for (const auto& v : world.vehicles()) {
    if (v.status == VehicleStatus::empty) {
      out[v.id] = act(world, v);
    } else {
      target_.erase(v.id);
    }
  }
  return out;
}

std::map<std::size_t, Action> RandomDispatcher::decide(const World& world) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::map<std::size_t, Action> out;
  for (const auto& v : world.vehicles()) {
    if (v.status != VehicleStatus::empty) continue;
    double d = u(rng_);
    out[v.id] = Action(d, std::fmod(360.0 * u(rng_), 360.0));
  }
  return out;
}

Metrics run_episode(World& world, Dispatcher& dispatcher, const EpisodeOptions& options) {
  const auto& c = world.config();
  double duration = options.duration_s.value_or(c.spawn_window_s + c.pickup_window_s);
  auto ticks = static_cast<std::int64_t>(std::ceil(duration / c.dt_s - 1e-9));
  Metrics m;
  double err = 0.0;
  for (std::int64_t tick = 1; tick <= ticks; ++tick) {
    greedy_assign(world);
    auto actions = dispatcher.decide(world);
    if (options.reference) {
      auto ref = options.reference->decide(world);
      for (const auto& [id, a] : actions) {
        auto it = ref.find(id);
        if (it == ref.end()) continue;
        err += error_metric(a, it->second, world.vehicles()[id].position, c.r_max_km);
        ++m.decisions;
      }
    }
    step(world, actions);
    if (options.on_tick) {
      auto created = world.created_orders();
      TickRow row{tick, world.open_orders(), empty_loaded_rate(world),
                  created.empty() ? 0.0 : order_acceptance_rate(created)};
      options.on_tick(world, row);
    }
  }
  if (m.decisions > 0) m.error_km = err / static_cast<double>(m.decisions);
  m.empty_loaded_rate = empty_loaded_rate(world);
  auto created = world.created_orders();
  m.orders = created.size();
  m.order_acceptance_rate = order_acceptance_rate(created);
  return m;
}

const std::vector<std::string>& default_ratios() {
  static const std::vector<std::string> r{"1:10", "1:8", "1:6", "1:4", "1:2", "1:1",
                                          "2:1",  "4:1", "6:1", "8:1", "10:1"};
  return r;
}

double parse_ratio(const std::string& ratio) {
  auto colon = ratio.find(':');
  try {
    if (colon == std::string::npos) throw std::invalid_argument("missing ':'");
    double a = std::stod(ratio.substr(0, colon));
    double b = std::stod(ratio.substr(colon + 1));
    if (!(a > 0.0) || !(b > 0.0)) throw std::invalid_argument("non-positive");
    return a / b;
  } catch (const std::exception&) {
    throw ConfigError(fmt::format("invalid car:order ratio '{}'", ratio));
  }
}

std::vector<RatioRow> ratio_sweep(const CityConfig& city, std::span<const std::string> ratios, std::uint64_t seed) {
  std::vector<RatioRow> rows;
  for (const auto& r : ratios) {
    CityConfig c = city;
    c.n_vehicles = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(parse_ratio(r) * c.n_orders)));
    auto world = World::generate(c, seed);
    GroundTruthDriver driver(seed + 1);
    auto m = run_episode(world, driver);
    rows.push_back({r, c.n_vehicles, m.orders, m.empty_loaded_rate, m.order_acceptance_rate});
  }
  return rows;
}

namespace {

std::vector<double> ranks(std::span<const double> v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](auto a, auto b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j < idx.size() && v[idx[j]] == v[idx[i]]) ++j;
    for (std::size_t k = i; k < j; ++k) r[idx[k]] = 0.5 * static_cast<double>(i + j - 1) + 1.0;
    i = j;
  }
  return r;
}

}  // namespace

double spearman(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.size() < 2) throw std::invalid_argument("spearman needs two equal series of >= 2");
  auto ra = ranks(a), rb = ranks(b);
  double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / static_cast<double>(ra.size());
  double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / static_cast<double>(rb.size());
  double num = 0, da = 0, db = 0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    num += (ra[i] - ma) * (rb[i] - mb);
    da += (ra[i] - ma) * (ra[i] - ma);
    db += (rb[i] - mb) * (rb[i] - mb);
  }
  if (da == 0.0 || db == 0.0) return 0.0;
  return num / std::sqrt(da * db);
}

}  // namespace hexfleet::sim
