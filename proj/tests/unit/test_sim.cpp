#include <cmath>
#include <random>
#include <set>

#include "doctest.h"
#include "hexfleet/errors.hpp"
#include "hexfleet/sim.hpp"

using namespace hexfleet;
using namespace hexfleet::sim;

namespace {

CityConfig plain_city(std::size_t vehicles, std::size_t orders) {
  CityConfig c;
  geo::GeoPoint center(30.25, 120.15);
  hex::LocalProjection proj(center);
  c.bbox = hex::BoundingBox(proj.unproject({-6.0, -6.0}), proj.unproject({6.0, 6.0}));
  c.n_vehicles = vehicles;
  c.n_orders = orders;
  return c;
}

// Removes all orders so a world only contains what the test adds.
World bare_world(std::size_t vehicles) {
  auto w = World::generate(plain_city(vehicles, 0), 1);
  return w;
}

Order make_order(std::size_t id, geo::GeoPoint origin, geo::GeoPoint dest, double created) {
  Order o;
  o.id = id;
  o.origin = origin;
  o.destination = dest;
  o.fare = 2.5 + 1.5 * geo::haversine_km(origin, dest);
  o.created_at = created;
  o.deadline = created + 600.0;
  o.state = OrderState::waiting;
  return o;
}

}  // namespace

TEST_CASE("generate_city is deterministic and well formed") {
  auto c = two_hotspot_city();
  auto a = World::generate(c, 42);
  auto b = World::generate(c, 42);
  REQUIRE(a.vehicles().size() == 20);
  REQUIRE(a.orders().size() == 200);
  for (std::size_t i = 0; i < a.vehicles().size(); ++i) {
    CHECK(a.vehicles()[i].position == b.vehicles()[i].position);
    CHECK(a.vehicles()[i].familiarity == b.vehicles()[i].familiarity);
    double sum = 0;
    for (double f : a.vehicles()[i].familiarity) {
      CHECK(f >= 0.0);
      sum += f;
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(c.bbox.contains(a.vehicles()[i].position));
  }
  for (std::size_t i = 0; i < a.orders().size(); ++i) {
    const auto& o = a.orders()[i];
    CHECK(o.origin == b.orders()[i].origin);
    CHECK(o.fare > 0.0);
    CHECK(o.deadline == o.created_at + 600.0);
    if (i > 0) CHECK(o.created_at >= a.orders()[i - 1].created_at);
  }
  CHECK(a.records() == b.records());
  CHECK_FALSE(World::generate(c, 43).vehicles()[0].position == a.vehicles()[0].position);

  auto bad = c;
  bad.n_vehicles = 0;
  CHECK_THROWS_AS(World::generate(bad, 1), std::invalid_argument);
  CHECK_THROWS_AS(hex::BoundingBox(geo::GeoPoint(30, 120), geo::GeoPoint(30, 120)), std::invalid_argument);
}

TEST_CASE("zero hotspots give spatially uniform arrivals (chi-square, 0.01)") {
  auto c = plain_city(1, 10000);
  auto w = World::generate(c, 7);
  const int bins = 10;
  std::vector<double> counts(bins * bins, 0.0);
  double lat0 = c.bbox.south_west.lat(), lat1 = c.bbox.north_east.lat();
  double lon0 = c.bbox.south_west.lon(), lon1 = c.bbox.north_east.lon();
  for (const auto& o : w.orders()) {
    int i = std::min(bins - 1, static_cast<int>((o.origin.lat() - lat0) / (lat1 - lat0) * bins));
    int j = std::min(bins - 1, static_cast<int>((o.origin.lon() - lon0) / (lon1 - lon0) * bins));
    counts[i * bins + j] += 1;
  }
  double expected = 10000.0 / (bins * bins), chi2 = 0;
  for (double n : counts) chi2 += (n - expected) * (n - expected) / expected;
  // Upper 1% point of chi-square with 99 degrees of freedom.
  CHECK(chi2 < 134.642);
}

TEST_CASE("step kinematics and odometers") {
  auto w = bare_world(3);
  auto& vs = w.vehicles();
  auto center = w.config().bbox.center();
  for (auto& v : vs) v.position = center;
  auto start = vs[0].position;
  std::map<std::size_t, Action> actions{{0, Action(0.0, 90.0)}, {1, Action(0.02, 45.0)}, {2, Action(0.9, 200.0)}};
  step(w, actions);
  CHECK(vs[0].position == start);
  CHECK(vs[0].idle_s == 30.0);
  CHECK(vs[0].total_s == 30.0);
  // 0.02 * 5 km = 0.1 km, below 40 km/h * 30 s = 0.333 km.
  CHECK(std::abs(geo::haversine_km(start, vs[1].position) - 0.1) < 1e-9);
  CHECK(std::abs(geo::haversine_km(start, vs[2].position) - 40.0 * 30.0 / 3600.0) < 1e-9);
  CHECK(w.time_s() == 30.0);
  CHECK(w.records().size() == 6);
}

TEST_CASE("congestion slows vehicles in crowded cells") {
  auto c = plain_city(3, 0);
  c.congestion_per_vehicle = 0.5;
  auto w = World::generate(c, 1);
  auto center = c.bbox.center();
  for (auto& v : w.vehicles()) v.position = center;
  step(w, {});  // refresh cell counts
  CHECK(w.local_speed_kmh(0) == doctest::Approx(40.0 / 2.0));
  auto before = w.vehicles()[0].position;
  step(w, {{0, Action(1.0, 0.0)}});
  CHECK(std::abs(geo::haversine_km(before, w.vehicles()[0].position) - 20.0 * 30.0 / 3600.0) < 1e-9);
}

TEST_CASE("trips: pickup, drop-off, fare booking, ignored actions") {
  auto w = bare_world(1);
  auto& v = w.vehicles()[0];
  auto center = w.config().bbox.center();
  v.position = center;
  auto dest = geo::displace(center, 0.5, 90.0);
  w.orders().push_back(make_order(0, geo::displace(center, 0.1, 0.0), dest, 0.0));
  auto assigned = greedy_assign(w);
  REQUIRE(assigned.size() == 1);
  CHECK(v.status == VehicleStatus::occupied);
  // Action for an occupied vehicle is ignored; the trip continues.
  step(w, {{0, Action(1.0, 270.0)}});
  CHECK(v.status == VehicleStatus::occupied);
  CHECK(w.orders()[0].pickup_time.has_value());
  CHECK(v.idle_s == doctest::Approx(0.1 / 40.0 * 3600.0));
  for (int i = 0; i < 5 && v.status == VehicleStatus::occupied; ++i) step(w, {});
  CHECK(v.status == VehicleStatus::empty);
  CHECK(w.orders()[0].state == OrderState::completed);
  CHECK(geo::haversine_km(v.position, dest) < 1e-9);
  double booked = 0;
  for (const auto& r : w.records()) booked += r.fare;
  CHECK(booked == doctest::Approx(w.orders()[0].fare));
  CHECK(order_acceptance_rate(w) == 1.0);
  CHECK(w.regional_median_fare(w.orders()[0].origin) == doctest::Approx(w.orders()[0].fare));
}

TEST_CASE("greedy_assign rules") {
  {
    auto w = bare_world(1);
    w.orders().push_back(make_order(0, w.vehicles()[0].position, w.config().bbox.center(), 0.0));
    CHECK(greedy_assign(w).size() == 1);
  }
  {
    auto w = bare_world(1);
    auto p = w.config().bbox.center();
    w.orders().push_back(make_order(0, geo::displace(p, 3.0, 0.0), p, 5.0));
    w.orders().push_back(make_order(1, geo::displace(p, 0.1, 0.0), p, 10.0));
    w.vehicles()[0].position = p;
    auto a = greedy_assign(w);
    REQUIRE(a.size() == 1);
    CHECK(a[0].first == 0);
  }
  {
    // Equidistant vehicles: the lower id wins.
    auto w = bare_world(2);
    auto p = w.config().bbox.center();
    w.vehicles()[0].position = geo::displace(p, 1.0, 90.0);
    w.vehicles()[1].position = geo::displace(p, 1.0, 90.0);
    w.orders().push_back(make_order(0, p, p, 0.0));
    CHECK(greedy_assign(w)[0].second == 0);
  }
}

TEST_CASE("greedy_assign matches a brute-force sequential-nearest oracle") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    auto w = bare_world(50);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const auto& b = w.config().bbox;
    auto rand_point = [&] {
      return geo::GeoPoint(b.south_west.lat() + u(rng) * (b.north_east.lat() - b.south_west.lat()),
                           b.south_west.lon() + u(rng) * (b.north_east.lon() - b.south_west.lon()));
    };
    for (auto& v : w.vehicles()) {
      v.position = rand_point();
      if (u(rng) < 0.3) v.status = VehicleStatus::occupied;
    }
    for (std::size_t i = 0; i < 50; ++i) w.orders().push_back(make_order(i, rand_point(), rand_point(), i * 1.0));

    // Oracle on plain copies.
    std::vector<bool> busy;
    for (const auto& v : w.vehicles()) busy.push_back(v.status != VehicleStatus::empty);
    std::vector<std::pair<std::size_t, std::size_t>> expect;
    for (const auto& o : w.orders()) {
      double best = 1e18;
      std::size_t who = SIZE_MAX;
      for (std::size_t k = 0; k < busy.size(); ++k) {
        if (busy[k]) continue;
        double d = geo::haversine_km(w.vehicles()[k].position, o.origin);
        if (d < best || (d == best && k < who)) {
          best = d;
          who = k;
        }
      }
      if (who == SIZE_MAX) break;
      busy[who] = true;
      expect.emplace_back(o.id, who);
    }
    std::vector<bool> was_empty;
    for (const auto& v : w.vehicles()) was_empty.push_back(v.status == VehicleStatus::empty);
    auto got = greedy_assign(w);
    CHECK(got == expect);
    std::set<std::size_t> used;
    for (auto [o, v] : got) {
      CHECK(was_empty[v]);
      CHECK(used.insert(v).second);
    }
  }
}

TEST_CASE("metric examples") {
  geo::GeoPoint from(30.25, 120.15);
  CHECK(error_metric(Action(0.2, 10.0), Action(0.2, 10.0), from, 5.0) == 0.0);
  CHECK(std::abs(error_metric(Action(0.2, 0.0), Action(0.2, 180.0), from, 5.0) - 2.0) < 1e-3);
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.0, 0.999);
  for (int i = 0; i < 100; ++i) {
    Action a(u(rng), 360 * u(rng)), b(u(rng), 360 * u(rng));
    CHECK(error_metric(a, b, from, 5.0) == doctest::Approx(error_metric(b, a, from, 5.0)).epsilon(1e-9));
  }

  std::vector<Vehicle> vs(2);
  CHECK_THROWS_AS(empty_loaded_rate(vs), MetricError);
  vs[0].total_s = vs[0].idle_s = 100;
  vs[1].total_s = vs[1].idle_s = 50;
  CHECK(empty_loaded_rate(vs) == 1.0);
  vs[0].idle_s = vs[1].idle_s = 0;
  CHECK(empty_loaded_rate(vs) == 0.0);
  std::vector<Vehicle> one(1);
  one[0].total_s = 120;
  one[0].idle_s = 30;
  CHECK(empty_loaded_rate(one) == 0.25);

  std::vector<Order> orders(4);
  for (auto& o : orders) o.deadline = 600;
  std::vector<const Order*> ptrs;
  for (auto& o : orders) ptrs.push_back(&o);
  CHECK(order_acceptance_rate(ptrs) == 0.0);
  orders[0].pickup_time = 10;
  orders[1].pickup_time = 600;
  orders[2].pickup_time = 100;
  orders[3].pickup_time = 601;
  CHECK(order_acceptance_rate(ptrs) == 0.75);
  for (auto& o : orders) o.pickup_time = 0;
  CHECK(order_acceptance_rate(ptrs) == 1.0);
  std::vector<const Order*> none;
  CHECK_THROWS_AS(order_acceptance_rate(none), MetricError);
}

TEST_CASE("episodes: conservation and determinism") {
  auto c = two_hotspot_city();
  auto run = [&](std::vector<TickRow>& rows) {
    auto w = World::generate(c, 3);
    GroundTruthDriver driver(4);
    EpisodeOptions opt;
    opt.on_tick = [&](const World& world, const TickRow& row) {
      rows.push_back(row);
      CHECK(world.vehicles().size() == 20);
      std::size_t busy = 0, assigned = 0;
      for (const auto& v : world.vehicles()) {
        if (v.order) ++busy;
        CHECK(v.idle_s <= v.total_s);
        CHECK((v.status == VehicleStatus::occupied) == v.order.has_value());
      }
      for (const auto& o : world.orders()) {
        if (o.state == OrderState::assigned) ++assigned;
      }
      CHECK(busy == assigned);
    };
    auto m = run_episode(w, driver, opt);
    return std::make_pair(m, w.records());
  };
  std::vector<TickRow> r1, r2;
  auto [m1, rec1] = run(r1);
  auto [m2, rec2] = run(r2);
  CHECK(rec1 == rec2);
  CHECK(m1.empty_loaded_rate == m2.empty_loaded_rate);
  CHECK(m1.order_acceptance_rate == m2.order_acceptance_rate);
  CHECK(m1.orders == 200);
  CHECK(r1.size() == 140);
  MESSAGE("ground truth: empty-loaded " << m1.empty_loaded_rate << ", acceptance " << m1.order_acceptance_rate);
}

TEST_CASE("ratio sweep trends") {
  auto c = metro_city();
  auto rows = ratio_sweep(c, default_ratios(), 11);
  REQUIRE(rows.size() == 11);
  std::vector<double> ratio, elr, acc;
  for (const auto& r : rows) {
    ratio.push_back(parse_ratio(r.ratio));
    elr.push_back(r.empty_loaded_rate);
    acc.push_back(r.order_acceptance_rate);
    MESSAGE(r.ratio << " vehicles " << r.vehicles << " elr " << r.empty_loaded_rate << " acc "
                    << r.order_acceptance_rate);
  }
  CHECK(spearman(ratio, elr) > 0.9);
  CHECK(spearman(ratio, acc) > 0.9);
  CHECK(rows.back().order_acceptance_rate >= 0.95);
  CHECK(rows.front().vehicles == 20);
  CHECK_THROWS_AS(parse_ratio("3"), ConfigError);
  CHECK(parse_ratio("1:4") == 0.25);
}

TEST_CASE("spearman") {
  std::vector<double> a{1, 2, 3, 4}, b{10, 20, 30, 40}, c{4, 3, 2, 1};
  CHECK(spearman(a, b) == doctest::Approx(1.0));
  CHECK(spearman(a, c) == doctest::Approx(-1.0));
}
