#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

#include "doctest.h"
#include "hexfleet/errors.hpp"
#include "hexfleet/hexgraph.hpp"
#include "support/oracles.hpp"

using namespace hexfleet;
using namespace hexfleet::hex;
using namespace hexfleet::oracle;

namespace {

SimSnapshot one_vehicle_snapshot(const geo::GeoPoint& at, double speed, double free_flow) {
  SimSnapshot s;
  s.free_flow_kmh = free_flow;
  VehicleObservation v;
  v.id = 0;
  v.position = at;
  v.speed_kmh = speed;
  s.vehicles.push_back(v);
  return s;
}

}  // namespace

TEST_CASE("view spec radius bands") {
  CHECK_NOTHROW(ViewSpec::make(ViewLevel::micro, 2.0));
  CHECK_NOTHROW(ViewSpec::make(ViewLevel::meso, 5.0));
  CHECK_NOTHROW(ViewSpec::make(ViewLevel::macro, 10.0));
  CHECK_THROWS_AS(ViewSpec::make(ViewLevel::micro, 2.5), std::invalid_argument);
  CHECK_THROWS_AS(ViewSpec::make(ViewLevel::meso, 2.0), std::invalid_argument);
  CHECK_THROWS_AS(ViewSpec::make(ViewLevel::macro, 9.0), std::invalid_argument);
  CHECK_THROWS_AS(ViewSpec::make(ViewLevel::micro, 0.0), std::invalid_argument);
  CHECK(ViewSpec::make(ViewLevel::meso, 5.0).feature_dim == 4);
  CHECK(ViewSpec::make(ViewLevel::macro, 10.0).feature_dim == 3);
}

TEST_CASE("bbox inside one cell gives a single node") {
  // circumradius 1 km: the central 1.7 x 0.99 km rectangle lies inside cell (0, 0)
  auto grid = HexGrid::build(km_box(1.7, 0.99), ViewSpec::make(ViewLevel::micro, 2.0));
  CHECK(grid.size() == 1);
  CHECK(grid.edge_count() == 0);
  auto tiny = HexGrid::build(km_box(0.01, 0.01), ViewSpec::make(ViewLevel::macro, 10.0));
  CHECK(tiny.size() == 1);
  CHECK_THROWS_AS(BoundingBox(kOrigin, kOrigin), std::invalid_argument);
}

TEST_CASE("node counts match brute-force enumeration") {
  struct Case {
    double w, h, dx, dy, diameter;
    ViewLevel level;
  };
  for (auto c : {Case{10, 10, 0, 0, 2, ViewLevel::micro}, Case{10, 10, 0.37, -0.21, 2, ViewLevel::micro},
                 Case{23.3, 17.1, 1.1, 2.9, 5, ViewLevel::meso}, Case{41.7, 33.2, -3.3, 0.7, 10, ViewLevel::macro}}) {
    auto bbox = km_box(c.w, c.h, c.dx, c.dy);
    auto grid = HexGrid::build(bbox, ViewSpec::make(c.level, c.diameter));
    CHECK(grid.size() == brute_force_cell_count(bbox, c.diameter));
  }
}

TEST_CASE("adjacency is symmetric with degree <= 6 and interior degree 6") {
  auto bbox = km_box(20, 14, 0.3, 0.1);
  auto grid = HexGrid::build(bbox, ViewSpec::make(ViewLevel::micro, 2.0));
  auto a = grid.adjacency(false);
  auto lo = grid.projection().project(bbox.south_west), hi = grid.projection().project(bbox.north_east);
  std::size_t interior = 0;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    CHECK(a(i, i) == 0.0);
    double deg = 0;
    for (std::size_t j = 0; j < grid.size(); ++j) {
      CHECK(a(i, j) == a(j, i));
      deg += a(i, j);
    }
    CHECK(deg <= 6);
    auto hex = grid.layout().corners({grid.cells()[i].q, grid.cells()[i].r});
    bool inside = std::all_of(hex.begin(), hex.end(), [&](const Planar& p) { return strictly_in_rect(p, lo, hi); });
    if (inside) {
      ++interior;
      CHECK(deg == 6);
    }
  }
  CHECK(interior > 10);
  auto with_loops = grid.adjacency(true);
  for (std::size_t i = 0; i < grid.size(); ++i) CHECK(with_loops(i, i) == 1.0);
}

TEST_CASE("point_to_cell partitions the bbox") {
  auto bbox = km_box(12, 9, 0.13, -0.4);
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(0, 1);
  for (auto [level, diameter] : {std::pair{ViewLevel::micro, 2.0}, std::pair{ViewLevel::meso, 5.0},
                                 std::pair{ViewLevel::macro, 10.0}}) {
    auto grid = HexGrid::build(bbox, ViewSpec::make(level, diameter));
    for (const auto& c : grid.cells()) {
      if (bbox.contains(c.center)) {
        auto hit = grid.point_to_cell(c.center);
        CHECK((hit.q == c.q && hit.r == c.r));
      }
    }
    for (int i = 0; i < 10000; ++i) {
      geo::GeoPoint p(bbox.south_west.lat() + u(rng) * (bbox.north_east.lat() - bbox.south_west.lat()),
                      bbox.south_west.lon() + u(rng) * (bbox.north_east.lon() - bbox.south_west.lon()));
      auto xy = grid.projection().project(p);
      // oracle: smallest (q, r) among all cells whose hexagon contains p
      std::optional<Axial> expected;
      for (const auto& c : grid.cells()) {
        if (in_hexagon(grid.layout().corners({c.q, c.r}), xy, 1e-9)) {
          if (!expected || Axial{c.q, c.r} < *expected) expected = Axial{c.q, c.r};
        }
      }
      REQUIRE(expected.has_value());
      auto got = grid.point_to_cell(p);
      REQUIRE(got.q == expected->q);
      REQUIRE(got.r == expected->r);
    }
  }
  auto grid = HexGrid::build(bbox, ViewSpec::make(ViewLevel::micro, 2.0));
  CHECK_THROWS_AS(grid.point_to_cell(geo::GeoPoint(0, 0)), DomainError);
}

TEST_CASE("shared boundary resolves toward the smaller axial coordinate") {
  auto grid = HexGrid::build(km_box(10, 10), ViewSpec::make(ViewLevel::micro, 2.0));
  // midpoint of the edge shared by (0,0) and (1,0)
  auto a = grid.layout().center({0, 0}), b = grid.layout().center({1, 0});
  auto p = grid.projection().unproject({(a.x + b.x) / 2, (a.y + b.y) / 2});
  auto c = grid.point_to_cell(p);
  CHECK(c.q == 0);
  CHECK(c.r == 0);
}

TEST_CASE("features") {
  auto graph = MultiviewGraph::build(km_box(30, 30), {2.0, 5.0, 10.0});
  const auto& micro = graph.view(ViewLevel::micro);
  auto at = micro.cells()[micro.size() / 2].center;

  auto empty = compute_features(graph, SimSnapshot{}, ViewLevel::micro);
  CHECK(empty.rows() == micro.size());
  CHECK(empty.cols() == 3);
  for (std::size_t i = 0; i < micro.size(); ++i) {
    CHECK(empty(i, 0) == 0.0);
    CHECK(empty(i, 1) == 0.0);
    CHECK(empty(i, 2) == 1.0);
  }

  auto snap = one_vehicle_snapshot(at, 30.0, 60.0);
  auto x = compute_features(graph, snap, ViewLevel::micro);
  auto c = micro.locate(at);
  CHECK(x(c, 0) == 1.0);
  CHECK(x(c, 1) == 30.0);
  CHECK(x(c, 2) == 0.5);

  auto meso = compute_features(graph, snap, ViewLevel::meso);
  CHECK(meso.cols() == 4);
  auto mc = graph.view(ViewLevel::meso).locate(at);
  CHECK(meso(mc, 0) == 1.0);  // no previous position: counts as entering
  CHECK(meso(mc, 1) == 30.0);
  CHECK(meso(mc, 3) == 1.0);  // empty status is idle

  auto macro = compute_features(graph, snap, ViewLevel::macro);
  const auto& mg = graph.view(ViewLevel::macro);
  for (std::size_t i = 0; i < mg.size(); ++i) {
    CHECK(macro(i, 1) == doctest::Approx(mg.neighbors(i).size() / 6.0));
    if (mg.neighbors(i).size() == 6) CHECK(macro(i, 1) == 1.0);
  }
  for (auto level : kViewLevels) {
    auto f = compute_features(graph, snap, level);
    CHECK(f.rows() == graph.view(level).size());
    CHECK(f.cols() == static_cast<std::size_t>(feature_dim(level)));
    for (double v : f.values()) CHECK(std::isfinite(v));
  }
}

TEST_CASE("meso turning share and macro travel time") {
  auto graph = MultiviewGraph::build(km_box(30, 30), {2.0, 5.0, 10.0});
  const auto& meso = graph.view(ViewLevel::meso);
  auto at = meso.cells()[meso.size() / 2].center;
  SimSnapshot s;
  s.time_s = 1000;
  for (int i = 0; i < 4; ++i) {
    VehicleObservation v;
    v.id = i;
    v.position = at;
    v.previous_position = at;
    v.heading_deg = 10.0;
    v.previous_heading_deg = i == 0 ? 300.0 : 20.0;  // 70 degree turn vs 10
    v.status = i < 2 ? VehicleStatus::occupied : VehicleStatus::empty;
    s.vehicles.push_back(v);
  }
  s.completed_trips.push_back({at, 600.0, 900.0, 10.0});
  s.completed_trips.push_back({at, 300.0, 950.0, 10.0});
  s.completed_trips.push_back({at, 9000.0, -5000.0, 10.0});  // outside the window
  auto x = compute_features(graph, s, ViewLevel::meso);
  auto c = meso.locate(at);
  CHECK(x(c, 0) == 0.0);
  CHECK(x(c, 2) == 0.25);
  CHECK(x(c, 3) == 2.0);
  auto m = compute_features(graph, s, ViewLevel::macro);
  CHECK(m(graph.view(ViewLevel::macro).locate(at), 0) == 450.0);
}

TEST_CASE("normalizer") {
  FeatureNormalizer norm;
  std::vector<ad::Tensor> raw{ad::Tensor::from_rows({{1, 10, 5}, {3, 10, 7}})};
  norm.fit(ViewLevel::micro, raw);
  auto z = norm.apply(ViewLevel::micro, raw[0]);
  CHECK(z(0, 0) == doctest::Approx(-1.0));
  CHECK(z(1, 0) == doctest::Approx(1.0));
  CHECK(z(0, 1) == 0.0);  // constant column keeps unit scale
}

TEST_CASE("hop visibility") {
  HopVisibility defaults;
  CHECK(defaults.max_hops() == 5);

  auto grid = HexGrid::build(km_box(90, 8), ViewSpec::make(ViewLevel::micro, 2.0));
  std::size_t ego = grid.locate(grid.bbox().center());
  auto hops = grid.hop_distances(ego);
  CHECK(*std::max_element(hops.begin(), hops.end()) >= 21);

  HopVisibility slowest{200.0, 200.0, 1000.0};
  HopVisibility fastest{50.0, 50.0, 1000.0};
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto worst = visible_cells(grid, ego, slowest, seed);
    auto best = visible_cells(grid, ego, fastest, seed);
    auto random = visible_cells(grid, ego, defaults, seed);
    for (std::size_t i = 0; i < grid.size(); ++i) {
      if (hops[i] <= 5) CHECK(worst[i]);
      if (hops[i] >= 21) {
        CHECK_FALSE(best[i]);
        CHECK_FALSE(random[i]);
      }
      if (hops[i] <= 5) CHECK(random[i]);
    }
    CHECK(random[ego]);
  }

  // raising the budget never hides a visible cell
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto small = visible_cells(grid, ego, HopVisibility{50, 200, 600}, seed);
    auto large = visible_cells(grid, ego, HopVisibility{50, 200, 1400}, seed);
    for (std::size_t i = 0; i < grid.size(); ++i)
      if (small[i]) CHECK(large[i]);
  }

  ad::Tensor ones = ad::Tensor::matrix(grid.size(), 3, 7.0);
  auto masked = restrict_by_hops(grid, ones, ego, fastest, 1);
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (hops[i] >= 21) {
      CHECK(masked(i, 0) == 0.0);
      CHECK(masked(i, 2) == 1.0);
    } else if (hops[i] <= 5) {
      CHECK(masked(i, 0) == 7.0);
    }
  }
}

TEST_CASE("grid file round trip") {
  auto grid = HexGrid::build(km_box(12, 8), ViewSpec::make(ViewLevel::meso, 5.0));
  std::stringstream ss;
  write_grid(ss, grid);
  auto file = read_grid(ss);
  CHECK(file.level == ViewLevel::meso);
  CHECK(file.cell_diameter_km == 5.0);
  CHECK(file.cells.size() == grid.size());
  CHECK(file.edges.size() == grid.edge_count());
  for (std::size_t i = 0; i < grid.size(); ++i) {
    CHECK(file.cells[i].q == grid.cells()[i].q);
    CHECK(file.cells[i].center == grid.cells()[i].center);
  }
  std::stringstream bad("hexfleet-grid 1\nview mega\n");
  CHECK_THROWS_AS(read_grid(bad), ParseError);
}
