#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "hexfleet/behavior.hpp"
#include "hexfleet/hexgraph.hpp"
#include "hexfleet/optim.hpp"
#include "hexfleet/policy.hpp"
#include "hexfleet/represent.hpp"
#include "hexfleet/sim.hpp"

namespace hexfleet {

// Every knob of a pipeline run. Files use flat `key = value` lines, `#`
// starts a comment, and unknown keys are errors. The keys are listed in
// the README.
struct RunConfig {
  std::uint64_t seed = 7;

  // city
  std::string city = "two_hotspot";  // two_hotspot | metro
  std::size_t n_vehicles = 20;
  std::size_t n_orders = 200;
  double spawn_window_s = 7200.0;
  double dt_s = 30.0;
  double cruise_kmh = 40.0;
  double congestion_per_vehicle = 0.0;
  // gen-data: the same fleet over a longer day with its own order stream
  double corpus_spawn_window_s = 28800.0;
  std::size_t corpus_orders = 200;

  // representation
  std::array<double, 3> diameters_km{2.0, 5.0, 10.0};
  std::size_t d_g = 128;
  int geohash_precision = geo::kDefaultGeohashPrecision;
  bool gcn_self_loops = true;
  std::size_t gcn_layers = 1;
  represent::ViewMask views = represent::kAllViews;
  double gcn_dropout = 0.0;
  hex::HopVisibility hops{};

  // behavior and reward
  double alpha = behavior::kDefaultAlpha;
  double gamma = 0.99;  // parsed, not used by the reward
  behavior::LossMode behavior_loss = behavior::LossMode::bce;
  int behavior_epochs = 10;
  std::size_t behavior_batch = 16;
  double behavior_lr = 0.01;
  bool fare_weight_train = true;

  // policy
  std::size_t d_model = 64;
  std::size_t layers = 2;
  double dropout = 0.5;
  policy::ContextMode context = policy::ContextMode::sequence;
  policy::GeoLossMode geo_loss = policy::GeoLossMode::symmetric;
  double angle_weight = 1.0;
  ad::AdamConfig adam{};
  int epochs = 10;
  std::size_t batch_episodes = 8;
  double r_max_km = 5.0;

  // data
  std::size_t leng = policy::kMaxSequenceLength;
  std::size_t n_samples = 1000;
  std::array<std::size_t, 3> split{6, 3, 1};
  double speed_limit_kmh = 60.0;

  // harnesses
  std::size_t ablation_reps = 5;

  // City template with the fleet, demand and clock of this config.
  sim::CityConfig city_config() const;
  // The gen-data day: same city, corpus_spawn_window_s and corpus_orders.
  sim::CityConfig corpus_city_config() const;
  policy::PolicyConfig policy_config() const;

  // One `key = value` line per key in a fixed order.
  std::string canonical() const;
  // FNV-1a 64 of canonical(), as 16 hex digits.
  std::string hash() const;

  // Sets one key from its text form; ConfigError on an unknown key or a
  // value out of range.
  void set(const std::string& key, const std::string& value);
  void validate() const;

  static std::vector<std::string> keys();
};

RunConfig parse_config(std::istream& in);
RunConfig load_config(const std::filesystem::path& path);

std::uint64_t fnv1a(std::string_view bytes);

}  // namespace hexfleet
