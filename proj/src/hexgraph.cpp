#include "hexfleet/hexgraph.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <fstream>
#include <limits>
#include <numbers>
#include <random>
#include <sstream>

#include <fmt/format.h>

#include "hexfleet/errors.hpp"

namespace hexfleet::hex {
namespace {

constexpr double kSqrt3 = 1.7320508075688772;

struct Interval {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();
  void add(double v) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
};

// Separating-axis test between a hexagon and an axis-aligned rectangle;
// touching at an edge or corner does not count as overlap.
bool hexagon_overlaps_rect(const std::array<Planar, 6>& hex, const Planar& lo, const Planar& hi, double eps) {
  const std::array<Planar, 4> rect{lo, Planar{hi.x, lo.y}, hi, Planar{lo.x, hi.y}};
  const std::array<Planar, 4> axes{Planar{1.0, 0.0}, Planar{0.0, 1.0}, Planar{0.5, kSqrt3 / 2},
                                   Planar{-0.5, kSqrt3 / 2}};
  for (const auto& ax : axes) {
    Interval a, b;
    for (const auto& p : hex) a.add(p.x * ax.x + p.y * ax.y);
    for (const auto& p : rect) b.add(p.x * ax.x + p.y * ax.y);
    if (std::min(a.hi, b.hi) - std::max(a.lo, b.lo) <= eps) return false;
  }
  return true;
}

double angle_diff_deg(double a, double b) {
  double d = std::fmod(std::abs(a - b), 360.0);
  return d > 180.0 ? 360.0 - d : d;
}

}  // namespace

std::string_view to_string(ViewLevel level) {
  switch (level) {
    case ViewLevel::micro: return "micro";
    case ViewLevel::meso: return "meso";
    case ViewLevel::macro: return "macro";
  }
  return "?";
}

ViewLevel parse_view_level(std::string_view text) {
  if (text == "micro") return ViewLevel::micro;
  if (text == "meso") return ViewLevel::meso;
  if (text == "macro") return ViewLevel::macro;
  throw ParseError(fmt::format("unknown view level '{}'", text));
}

int feature_dim(ViewLevel level) { return level == ViewLevel::meso ? 4 : 3; }

ViewSpec ViewSpec::make(ViewLevel level, double cell_diameter_km) {
  if (!(cell_diameter_km > 0.0) || !std::isfinite(cell_diameter_km)) {
    throw std::invalid_argument(fmt::format("cell diameter {} km must be positive", cell_diameter_km));
  }
  double radius = cell_diameter_km / 2.0;
  bool ok = (level == ViewLevel::micro && radius <= 1.0) ||
            (level == ViewLevel::meso && radius > 1.0 && radius < 5.0) ||
            (level == ViewLevel::macro && radius >= 5.0);
  if (!ok) {
    throw std::invalid_argument(
        fmt::format("{} km cells (radius {} km) are outside the {} band", cell_diameter_km, radius, to_string(level)));
  }
  return ViewSpec{level, cell_diameter_km, hex::feature_dim(level)};
}

BoundingBox::BoundingBox(geo::GeoPoint sw, geo::GeoPoint ne) : south_west(sw), north_east(ne) {
  if (!(sw.lat() < ne.lat()) || !(sw.lon() < ne.lon())) {
    throw std::invalid_argument(fmt::format("degenerate bbox ({}, {}) - ({}, {})", sw.lat(), sw.lon(), ne.lat(), ne.lon()));
  }
}

bool BoundingBox::contains(const geo::GeoPoint& p) const {
  return p.lat() >= south_west.lat() && p.lat() <= north_east.lat() && p.lon() >= south_west.lon() &&
         p.lon() <= north_east.lon();
}

geo::GeoPoint BoundingBox::center() const {
  return {0.5 * (south_west.lat() + north_east.lat()), 0.5 * (south_west.lon() + north_east.lon())};
}

geo::GeoPoint BoundingBox::clamp(const geo::GeoPoint& p) const {
  return {std::clamp(p.lat(), south_west.lat(), north_east.lat()),
          std::clamp(p.lon(), south_west.lon(), north_east.lon())};
}

LocalProjection::LocalProjection(const geo::GeoPoint& origin) : origin_(origin) {
  km_per_deg_lat_ = geo::kEarthRadiusKm * std::numbers::pi / 180.0;
  km_per_deg_lon_ = km_per_deg_lat_ * std::cos(origin.lat() * std::numbers::pi / 180.0);
}

Planar LocalProjection::project(const geo::GeoPoint& p) const {
  return {(p.lon() - origin_.lon()) * km_per_deg_lon_, (p.lat() - origin_.lat()) * km_per_deg_lat_};
}

geo::GeoPoint LocalProjection::unproject(const Planar& p) const {
  return {std::clamp(origin_.lat() + p.y / km_per_deg_lat_, -90.0, 90.0),
          std::clamp(origin_.lon() + p.x / km_per_deg_lon_, -180.0, 180.0)};
}

Planar HexLayout::center(Axial a) const {
  return {size * kSqrt3 * (a.q + a.r / 2.0), size * 1.5 * a.r};
}

std::array<Planar, 6> HexLayout::corners(Axial a) const {
  Planar c = center(a);
  std::array<Planar, 6> out;
  for (int i = 0; i < 6; ++i) {
    double ang = std::numbers::pi / 180.0 * (60.0 * i - 30.0);
    out[static_cast<std::size_t>(i)] = {c.x + size * std::cos(ang), c.y + size * std::sin(ang)};
  }
  return out;
}

Axial HexLayout::round(const Planar& p) const {
  double fq = (kSqrt3 / 3.0 * p.x - p.y / 3.0) / size;
  double fr = (2.0 / 3.0 * p.y) / size;
  double fs = -fq - fr;
  double q = std::round(fq), r = std::round(fr), s = std::round(fs);
  double dq = std::abs(q - fq), dr = std::abs(r - fr), ds = std::abs(s - fs);
  if (dq > dr && dq > ds) {
    q = -r - s;
  } else if (dr > ds) {
    r = -q - s;
  }
  return {static_cast<int>(q), static_cast<int>(r)};
}

HexGrid HexGrid::build(const BoundingBox& bbox, const ViewSpec& spec) {
  HexGrid g;
  g.spec_ = spec;
  g.bbox_ = bbox;
  g.layout_ = HexLayout{spec.cell_diameter_km / 2.0};
  g.projection_ = LocalProjection(bbox.center());
  Planar lo = g.projection_.project(bbox.south_west);
  Planar hi = g.projection_.project(bbox.north_east);
  double s = g.layout_.size;
  double eps = 1e-9 * s;
  int r_lo = static_cast<int>(std::floor(lo.y / (1.5 * s))) - 2;
  int r_hi = static_cast<int>(std::ceil(hi.y / (1.5 * s))) + 2;
  for (int r = r_lo; r <= r_hi; ++r) {
    int q_lo = static_cast<int>(std::floor(lo.x / (s * kSqrt3) - r / 2.0)) - 2;
    int q_hi = static_cast<int>(std::ceil(hi.x / (s * kSqrt3) - r / 2.0)) + 2;
    for (int q = q_lo; q <= q_hi; ++q) {
      Axial a{q, r};
      if (!hexagon_overlaps_rect(g.layout_.corners(a), lo, hi, eps)) continue;
      g.cells_.push_back(HexCell{spec.level, q, r, g.projection_.unproject(g.layout_.center(a))});
    }
  }
  std::sort(g.cells_.begin(), g.cells_.end(),
            [](const HexCell& a, const HexCell& b) { return Axial{a.q, a.r} < Axial{b.q, b.r}; });
  for (std::size_t i = 0; i < g.cells_.size(); ++i) g.index_[Axial{g.cells_[i].q, g.cells_[i].r}] = i;
  g.neighbors_.resize(g.cells_.size());
  for (std::size_t i = 0; i < g.cells_.size(); ++i) {
    for (const auto& d : kAxialDirections) {
      if (auto j = g.index_of(Axial{g.cells_[i].q + d.q, g.cells_[i].r + d.r})) g.neighbors_[i].push_back(*j);
    }
    std::sort(g.neighbors_[i].begin(), g.neighbors_[i].end());
  }
  return g;
}

std::size_t HexGrid::edge_count() const {
  std::size_t n = 0;
  for (const auto& nb : neighbors_) n += nb.size();
  return n / 2;
}

std::optional<std::size_t> HexGrid::index_of(Axial a) const {
  auto it = index_.find(a);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

ad::Tensor HexGrid::adjacency(bool self_loops) const {
  std::size_t n = cells_.size();
  ad::Tensor a = ad::Tensor::matrix(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j : neighbors_[i]) a(i, j) = 1.0;
    if (self_loops) a(i, i) = 1.0;
  }
  return a;
}

std::size_t HexGrid::locate(const geo::GeoPoint& p) const {
  if (!bbox_.contains(p)) {
    throw DomainError(fmt::format("point ({}, {}) outside the {} grid bbox", p.lat(), p.lon(), to_string(spec_.level)));
  }
  Planar xy = projection_.project(p);
  Axial guess = layout_.round(xy);
  struct Candidate {
    double dist;
    Axial a;
  };
  std::vector<Candidate> cands;
  auto consider = [&](Axial a) {
    Planar c = layout_.center(a);
    cands.push_back({std::hypot(xy.x - c.x, xy.y - c.y), a});
  };
  consider(guess);
  for (const auto& d : kAxialDirections) consider(Axial{guess.q + d.q, guess.r + d.r});
  double best = std::numeric_limits<double>::infinity();
  for (const auto& c : cands) best = std::min(best, c.dist);
  double tol = 1e-9 * layout_.size;
  std::optional<std::size_t> chosen;
  Axial chosen_axial{};
  for (const auto& c : cands) {
    if (c.dist > best + tol) continue;
    auto idx = index_of(c.a);
    if (!idx) continue;
    if (!chosen || c.a < chosen_axial) {
      chosen = idx;
      chosen_axial = c.a;
    }
  }
  if (chosen) return *chosen;
  // Only reachable through rounding at the bbox rim: fall back to the
  // nearest grid cell.
  std::size_t best_i = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < cells_.size(); ++i) {
    Planar c = layout_.center(Axial{cells_[i].q, cells_[i].r});
    double d = std::hypot(xy.x - c.x, xy.y - c.y);
    if (d < best_d) {
      best_d = d;
      best_i = i;
    }
  }
  return best_i;
}

std::vector<int> HexGrid::hop_distances(std::size_t from) const {
  std::vector<int> dist(cells_.size(), -1);
  std::deque<std::size_t> queue{from};
  dist[from] = 0;
  while (!queue.empty()) {
    auto u = queue.front();
    queue.pop_front();
    for (auto v : neighbors_[u]) {
      if (dist[v] < 0) {
        dist[v] = dist[u] + 1;
        queue.push_back(v);
      }
    }
  }
  return dist;
}

MultiviewGraph MultiviewGraph::build(const BoundingBox& bbox, const std::array<double, 3>& diameters_km) {
  MultiviewGraph g;
  g.bbox_ = bbox;
  for (auto level : kViewLevels) {
    auto i = static_cast<std::size_t>(level);
    g.views_[i] = HexGrid::build(bbox, ViewSpec::make(level, diameters_km[i]));
  }
  const auto& micro = g.view(ViewLevel::micro);
  const auto& macro = g.view(ViewLevel::macro);
  for (const auto& cell : micro.cells()) g.micro_to_macro_.push_back(macro.locate(bbox.clamp(cell.center)));
  return g;
}

std::vector<double> empty_cell_row(const HexGrid& grid, std::size_t cell) {
  switch (grid.spec().level) {
    case ViewLevel::micro: return {0.0, 0.0, 1.0};
    case ViewLevel::meso: return {0.0, 0.0, 0.0, 0.0};
    case ViewLevel::macro: return {0.0, static_cast<double>(grid.neighbors(cell).size()) / 6.0, 1.0};
  }
  return {};
}

ad::Tensor compute_features(const MultiviewGraph& graph, const SimSnapshot& snapshot, ViewLevel level) {
  const HexGrid& grid = graph.view(level);
  std::size_t n = grid.size();
  auto dim = static_cast<std::size_t>(feature_dim(level));
  ad::Tensor x = ad::Tensor::matrix(n, dim);

  // Per-cell vehicle tallies for the requested grid (micro tallies are also
  // needed by macro's congestion column).
  struct Tally {
    double count = 0, speed_sum = 0, entering = 0, turning = 0, turn_known = 0, idle = 0;
  };
  auto tally_on = [&](const HexGrid& g) {
    std::vector<Tally> t(g.size());
    for (const auto& v : snapshot.vehicles) {
      if (!g.bbox().contains(v.position)) continue;
      auto c = g.locate(v.position);
      auto& cell = t[c];
      cell.count += 1;
      cell.speed_sum += v.speed_kmh;
      if (!v.previous_position || !g.bbox().contains(*v.previous_position) || g.locate(*v.previous_position) != c) {
        cell.entering += 1;
      }
      if (v.heading_deg && v.previous_heading_deg) {
        cell.turn_known += 1;
        if (angle_diff_deg(*v.heading_deg, *v.previous_heading_deg) >= 45.0) cell.turning += 1;
      }
      if (v.status == VehicleStatus::empty) cell.idle += 1;
    }
    return t;
  };
  auto congestion = [&](const Tally& t) {
    if (t.count == 0) return 1.0;
    return (t.speed_sum / t.count) / snapshot.free_flow_kmh;
  };

  switch (level) {
    case ViewLevel::micro: {
      auto t = tally_on(grid);
      for (std::size_t i = 0; i < n; ++i) {
        x(i, 0) = t[i].count;
        x(i, 1) = t[i].count > 0 ? t[i].speed_sum / t[i].count : 0.0;
        x(i, 2) = congestion(t[i]);
      }
      break;
    }
    case ViewLevel::meso: {
      auto t = tally_on(grid);
      for (std::size_t i = 0; i < n; ++i) {
        x(i, 0) = t[i].entering;
        x(i, 1) = t[i].count > 0 ? t[i].speed_sum / t[i].count : 0.0;
        x(i, 2) = t[i].turn_known > 0 ? t[i].turning / t[i].turn_known : 0.0;
        x(i, 3) = t[i].idle;
      }
      break;
    }
    case ViewLevel::macro: {
      std::vector<double> tt_sum(n, 0.0), tt_count(n, 0.0);
      for (const auto& trip : snapshot.completed_trips) {
        if (trip.end_time_s > snapshot.time_s || trip.end_time_s <= snapshot.time_s - snapshot.travel_time_window_s) {
          continue;
        }
        if (!grid.bbox().contains(trip.dropoff)) continue;
        auto c = grid.locate(trip.dropoff);
        tt_sum[c] += trip.travel_time_s;
        tt_count[c] += 1;
      }
      const auto& micro = graph.view(ViewLevel::micro);
      auto mt = tally_on(micro);
      std::vector<double> cong_sum(n, 0.0), cong_count(n, 0.0);
      for (std::size_t m = 0; m < micro.size(); ++m) {
        auto parent = graph.micro_to_macro()[m];
        cong_sum[parent] += congestion(mt[m]);
        cong_count[parent] += 1;
      }
      for (std::size_t i = 0; i < n; ++i) {
        x(i, 0) = tt_count[i] > 0 ? tt_sum[i] / tt_count[i] : 0.0;
        x(i, 1) = static_cast<double>(grid.neighbors(i).size()) / 6.0;
        x(i, 2) = cong_count[i] > 0 ? cong_sum[i] / cong_count[i] : 1.0;
      }
      break;
    }
  }
  return x;
}

void FeatureNormalizer::fit(ViewLevel level, const std::vector<ad::Tensor>& raw) {
  auto dim = static_cast<std::size_t>(feature_dim(level));
  std::vector<double> mean(dim, 0.0), var(dim, 0.0);
  double rows = 0;
  for (const auto& x : raw) {
    if (x.cols() != dim) throw ShapeError(fmt::format("feature matrix {} has wrong width", x.shape_string()));
    for (std::size_t i = 0; i < x.rows(); ++i) {
      for (std::size_t j = 0; j < dim; ++j) mean[j] += x(i, j);
      rows += 1;
    }
  }
  if (rows == 0) throw std::invalid_argument("cannot fit a normalizer on zero rows");
  for (auto& m : mean) m /= rows;
  for (const auto& x : raw)
    for (std::size_t i = 0; i < x.rows(); ++i)
      for (std::size_t j = 0; j < dim; ++j) var[j] += (x(i, j) - mean[j]) * (x(i, j) - mean[j]);
  std::vector<double> sd(dim);
  for (std::size_t j = 0; j < dim; ++j) {
    sd[j] = std::sqrt(var[j] / rows);
    if (sd[j] < 1e-8) sd[j] = 1.0;
  }
  set(level, std::move(mean), std::move(sd));
}

void FeatureNormalizer::set(ViewLevel level, std::vector<double> mean, std::vector<double> stddev) {
  auto i = static_cast<std::size_t>(level);
  if (mean.size() != static_cast<std::size_t>(feature_dim(level)) || stddev.size() != mean.size()) {
    throw ShapeError(fmt::format("{} normalizer needs {} columns", to_string(level), feature_dim(level)));
  }
  mean_[i] = std::move(mean);
  std_[i] = std::move(stddev);
}

ad::Tensor FeatureNormalizer::apply(ViewLevel level, const ad::Tensor& raw) const {
  auto i = static_cast<std::size_t>(level);
  if (mean_[i].empty()) return raw;
  if (raw.cols() != mean_[i].size()) throw ShapeError(fmt::format("feature matrix {} has wrong width", raw.shape_string()));
  ad::Tensor out = raw;
  for (std::size_t r = 0; r < out.rows(); ++r)
    for (std::size_t c = 0; c < out.cols(); ++c) out(r, c) = std::clamp((out(r, c) - mean_[i][c]) / std_[i][c], -kClip, kClip);
  return out;
}

int HopVisibility::max_hops() const { return static_cast<int>(std::floor(budget_ms / max_delay_ms)); }

std::vector<bool> visible_cells(const HexGrid& grid, std::size_t ego, const HopVisibility& vis, std::uint64_t seed) {
  std::size_t n = grid.size();
  if (ego >= n) throw DomainError(fmt::format("ego cell {} not in a grid of {} cells", ego, n));
  // Delay per undirected edge, drawn in a fixed (i < j) order.
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> delay(vis.min_delay_ms, vis.max_delay_ms);
  std::map<std::pair<std::size_t, std::size_t>, double> edge_delay;
  for (std::size_t i = 0; i < n; ++i)
    for (auto j : grid.neighbors(i))
      if (i < j) edge_delay[{i, j}] = delay(rng);

  std::vector<double> cum(n, std::numeric_limits<double>::infinity());
  std::deque<std::size_t> queue{ego};
  cum[ego] = 0.0;
  std::vector<bool> seen(n, false);
  seen[ego] = true;
  while (!queue.empty()) {
    auto u = queue.front();
    queue.pop_front();
    for (auto v : grid.neighbors(u)) {
      if (seen[v]) continue;
      seen[v] = true;
      cum[v] = cum[u] + edge_delay.at({std::min(u, v), std::max(u, v)});
      queue.push_back(v);
    }
  }
  std::vector<bool> visible(n);
  for (std::size_t i = 0; i < n; ++i) visible[i] = (i == ego) || cum[i] <= vis.budget_ms;
  return visible;
}

ad::Tensor restrict_by_hops(const HexGrid& grid, const ad::Tensor& raw_features, std::size_t ego,
                            const HopVisibility& vis, std::uint64_t seed) {
  if (raw_features.rows() != grid.size()) {
    throw ShapeError(fmt::format("features {} do not match a grid of {} cells", raw_features.shape_string(), grid.size()));
  }
  auto visible = visible_cells(grid, ego, vis, seed);
  ad::Tensor out = raw_features;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (visible[i]) continue;
    auto row = empty_cell_row(grid, i);
    for (std::size_t c = 0; c < out.cols(); ++c) out(i, c) = row[c];
  }
  return out;
}

void write_grid(std::ostream& out, const HexGrid& grid) {
  const auto& b = grid.bbox();
  out << "hexfleet-grid 1\n";
  out << fmt::format("view {}\n", to_string(grid.spec().level));
  out << fmt::format("diameter_km {:.17g}\n", grid.spec().cell_diameter_km);
  out << fmt::format("bbox {:.17g} {:.17g} {:.17g} {:.17g}\n", b.south_west.lat(), b.south_west.lon(),
                     b.north_east.lat(), b.north_east.lon());
  out << fmt::format("cells {}\n", grid.size());
  for (const auto& c : grid.cells()) {
    out << fmt::format("{} {} {:.17g} {:.17g}\n", c.q, c.r, c.center.lat(), c.center.lon());
  }
  out << fmt::format("edges {}\n", grid.edge_count());
  for (std::size_t i = 0; i < grid.size(); ++i)
    for (auto j : grid.neighbors(i))
      if (i < j) out << fmt::format("{} {}\n", i, j);
}

void save_grid(const std::filesystem::path& path, const HexGrid& grid) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error(fmt::format("cannot write {}", path.string()));
  write_grid(f, grid);
}

GridFile read_grid(std::istream& in) {
  auto expect = [&](std::string_view key) {
    std::string word;
    if (!(in >> word) || word != key) throw ParseError(fmt::format("grid file: expected '{}', got '{}'", key, word));
  };
  GridFile g;
  int version = 0;
  expect("hexfleet-grid");
  if (!(in >> version) || version != 1) throw ParseError("grid file: unsupported version");
  std::string level;
  expect("view");
  in >> level;
  g.level = parse_view_level(level);
  expect("diameter_km");
  in >> g.cell_diameter_km;
  expect("bbox");
  double a, b, c, d;
  if (!(in >> a >> b >> c >> d)) throw ParseError("grid file: bad bbox");
  g.bbox = BoundingBox({a, b}, {c, d});
  std::size_t n = 0, m = 0;
  expect("cells");
  in >> n;
  for (std::size_t i = 0; i < n; ++i) {
    int q, r;
    double lat, lon;
    if (!(in >> q >> r >> lat >> lon)) throw ParseError(fmt::format("grid file: bad cell row {}", i));
    g.cells.push_back(HexCell{g.level, q, r, geo::GeoPoint(lat, lon)});
  }
  expect("edges");
  in >> m;
  for (std::size_t k = 0; k < m; ++k) {
    std::size_t i, j;
    if (!(in >> i >> j) || i >= n || j >= n) throw ParseError(fmt::format("grid file: bad edge row {}", k));
    g.edges.emplace_back(i, j);
  }
  return g;
}

}  // namespace hexfleet::hex
