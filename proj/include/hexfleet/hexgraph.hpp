#pragma once

#include <array>
#include <compare>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "hexfleet/geo.hpp"
#include "hexfleet/snapshot.hpp"
#include "hexfleet/tensor.hpp"

namespace hexfleet::hex {

enum class ViewLevel : int { micro = 0, meso = 1, macro = 2 };
inline constexpr std::array<ViewLevel, 3> kViewLevels{ViewLevel::micro, ViewLevel::meso, ViewLevel::macro};

std::string_view to_string(ViewLevel level);
ViewLevel parse_view_level(std::string_view text);
// Columns of X^i for a level: micro 3, meso 4, macro 3.
int feature_dim(ViewLevel level);

struct ViewSpec {
  ViewLevel level = ViewLevel::micro;
  double cell_diameter_km = 2.0;
  int feature_dim = 3;

  // Validates the radius band of the level (radius = diameter / 2):
  // micro <= 1 km, meso in (1, 5) km, macro >= 5 km.
  static ViewSpec make(ViewLevel level, double cell_diameter_km);
};

struct BoundingBox {
  geo::GeoPoint south_west;
  geo::GeoPoint north_east;

  BoundingBox() = default;
  BoundingBox(geo::GeoPoint sw, geo::GeoPoint ne);
  bool contains(const geo::GeoPoint& p) const;
  geo::GeoPoint center() const;
  geo::GeoPoint clamp(const geo::GeoPoint& p) const;
};

struct Axial {
  int q = 0;
  int r = 0;
  auto operator<=>(const Axial&) const = default;
};

struct HexCell {
  ViewLevel view = ViewLevel::micro;
  int q = 0;
  int r = 0;
  geo::GeoPoint center;
};

struct Planar {
  double x = 0.0;  // km east of the bbox center
  double y = 0.0;  // km north of the bbox center
};

// Equirectangular tangent plane anchored at a bbox center.
class LocalProjection {
 public:
  LocalProjection() = default;
  explicit LocalProjection(const geo::GeoPoint& origin);
  Planar project(const geo::GeoPoint& p) const;
  geo::GeoPoint unproject(const Planar& p) const;

 private:
  geo::GeoPoint origin_;
  double km_per_deg_lat_ = 0.0;
  double km_per_deg_lon_ = 0.0;
};

// Pointy-top hexagon geometry with circumradius `size` km and cell (0, 0)
// centered on the plane origin.
struct HexLayout {
  double size = 1.0;

  Planar center(Axial a) const;
  std::array<Planar, 6> corners(Axial a) const;
  Axial round(const Planar& p) const;  // cube rounding of the fractional cell
};

inline constexpr std::array<Axial, 6> kAxialDirections{Axial{1, 0}, Axial{1, -1}, Axial{0, -1},
                                                       Axial{-1, 0}, Axial{-1, 1}, Axial{0, 1}};

// One view of the multiview honeycomb graph: every pointy-top hexagon whose
// area overlaps the bbox, ordered by (q, r), with side-sharing adjacency.
class HexGrid {
 public:
  HexGrid() = default;
  static HexGrid build(const BoundingBox& bbox, const ViewSpec& spec);

  const ViewSpec& spec() const { return spec_; }
  const BoundingBox& bbox() const { return bbox_; }
  const HexLayout& layout() const { return layout_; }
  const LocalProjection& projection() const { return projection_; }
  const std::vector<HexCell>& cells() const { return cells_; }
  std::size_t size() const { return cells_.size(); }
  const std::vector<std::size_t>& neighbors(std::size_t i) const { return neighbors_[i]; }
  std::size_t edge_count() const;
  std::optional<std::size_t> index_of(Axial a) const;

  // Symmetric 0/1 matrix, optionally with ones on the diagonal.
  ad::Tensor adjacency(bool self_loops) const;

  // Index of the cell whose hexagon contains p; on a shared boundary the
  // smaller (q, r) wins. Throws DomainError when p is outside the bbox.
  std::size_t locate(const geo::GeoPoint& p) const;
  HexCell point_to_cell(const geo::GeoPoint& p) const { return cells_[locate(p)]; }

  // Hop distance from `from` to every cell (-1 when unreachable).
  std::vector<int> hop_distances(std::size_t from) const;

 private:
  ViewSpec spec_;
  BoundingBox bbox_;
  HexLayout layout_;
  LocalProjection projection_;
  std::vector<HexCell> cells_;
  std::vector<std::vector<std::size_t>> neighbors_;
  std::map<Axial, std::size_t> index_;
};

class MultiviewGraph {
 public:
  MultiviewGraph() = default;
  // Diameters in micro, meso, macro order.
  static MultiviewGraph build(const BoundingBox& bbox, const std::array<double, 3>& diameters_km);

  const BoundingBox& bbox() const { return bbox_; }
  const HexGrid& view(ViewLevel level) const { return views_[static_cast<std::size_t>(level)]; }
  // Macro cell containing each micro cell center.
  const std::vector<std::size_t>& micro_to_macro() const { return micro_to_macro_; }

 private:
  BoundingBox bbox_;
  std::array<HexGrid, 3> views_;
  std::vector<std::size_t> micro_to_macro_;
};

// Row a cell takes when it has no traffic (or is hidden by hop visibility).
std::vector<double> empty_cell_row(const HexGrid& grid, std::size_t cell);

// Raw (un-normalized) feature matrix X^i_t of shape |V^i| x m^i.
//   micro: vehicle count, mean speed km/h, mean speed / free-flow speed
//   meso:  vehicles entering this tick, mean speed, share of vehicles turning
//          >= 45 degrees, idle (empty-status) vehicle count
//   macro: mean travel time of trips ending here in the trailing window (s),
//          degree / 6, mean micro congestion ratio of contained micro cells
ad::Tensor compute_features(const MultiviewGraph& graph, const SimSnapshot& snapshot, ViewLevel level);

// Per-column z-normalization fitted on training snapshots.
// Per-column z-scores with training statistics, clamped to +-kClip. Sparse
// count columns have small spreads, so a busy cell can otherwise score in
// the tens and saturate everything downstream.
class FeatureNormalizer {
 public:
  static constexpr double kClip = 5.0;

  void fit(ViewLevel level, const std::vector<ad::Tensor>& raw);
  ad::Tensor apply(ViewLevel level, const ad::Tensor& raw) const;
  bool fitted(ViewLevel level) const { return !mean_[static_cast<std::size_t>(level)].empty(); }

  const std::vector<double>& mean(ViewLevel level) const { return mean_[static_cast<std::size_t>(level)]; }
  const std::vector<double>& stddev(ViewLevel level) const { return std_[static_cast<std::size_t>(level)]; }
  void set(ViewLevel level, std::vector<double> mean, std::vector<double> stddev);

 private:
  std::array<std::vector<double>, 3> mean_;
  std::array<std::vector<double>, 3> std_;
};

struct HopVisibility {
  double min_delay_ms = 50.0;
  double max_delay_ms = 200.0;
  double budget_ms = 1000.0;

  int max_hops() const;
};

// Whether each cell's traffic reaches the ego cell within the latency
// budget. Per-edge delays are drawn uniformly from [min, max] with the given
// seed; a cell's delay is the sum along its BFS shortest-hop path.
std::vector<bool> visible_cells(const HexGrid& grid, std::size_t ego, const HopVisibility& vis,
                                std::uint64_t seed);

// Replaces rows of invisible cells with empty_cell_row; the ego row is kept.
ad::Tensor restrict_by_hops(const HexGrid& grid, const ad::Tensor& raw_features, std::size_t ego,
                            const HopVisibility& vis, std::uint64_t seed);

// Plain-text grid file (documented in the README).
void write_grid(std::ostream& out, const HexGrid& grid);
void save_grid(const std::filesystem::path& path, const HexGrid& grid);

struct GridFile {
  ViewLevel level = ViewLevel::micro;
  double cell_diameter_km = 0.0;
  BoundingBox bbox;
  std::vector<HexCell> cells;
  std::vector<std::pair<std::size_t, std::size_t>> edges;
};
GridFile read_grid(std::istream& in);

}  // namespace hexfleet::hex
