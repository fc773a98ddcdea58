// Runs the ten acceptance checks and prints one PASS/FAIL line each.
// Usage: acceptance [--config-dir DIR] [--work DIR] [N ...]
// With no numbers every criterion runs. Exit status is 0 unless a check
// crashed; failing criteria are reported, not hidden.

#include <fmt/format.h>
#include <fmt/ranges.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <sstream>

#include "hexfleet/behavior.hpp"
#include "hexfleet/gradsuite.hpp"
#include "hexfleet/pipeline.hpp"
#include "hexfleet/policy.hpp"
#include "support/oracles.hpp"

namespace fs = std::filesystem;
using namespace hexfleet;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

double mean(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size()); }

struct Outcome {
  bool pass = false;
  std::string detail;
};

fs::path g_config_dir = HEXFLEET_CONFIG_DIR;
fs::path g_work;

RunConfig desk_config() { return load_config((g_config_dir / "desk.cfg").string()); }

// Desk config with shorter stage-2 training for the many-model sweeps.
RunConfig sweep_config() {
  auto c = desk_config();
  c.n_samples = 300;
  c.epochs = 4;
  c.behavior_epochs = 3;
  return c;
}

fs::path fresh_dir(const std::string& name) {
  auto p = g_work / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

// ---------------------------------------------------------------- 1

Outcome gradient_suite() {
  auto t0 = Clock::now();
  auto rows = run_gradient_suite(1, 3);
  double secs = seconds_since(t0);
  std::size_t failed = 0;
  double worst = 0.0;
  for (const auto& r : rows) {
    failed += !r.passed;
    worst = std::max(worst, r.max_relative_error);
  }
  return {failed == 0 && secs < 60.0,
          fmt::format("{} blocks, {} failed, worst rel err {:.2e}, {:.1f} s", rows.size(), failed, worst, secs)};
}

// ---------------------------------------------------------------- 2

Outcome geo_loss_exactness() {
  using policy::GeoLossMode;
  using policy::geo_loss;
  Action a(0.4, 1.0), b(0.4, 359.0);
  bool literal = geo_loss(a, b, GeoLossMode::literal) == 4.0;
  bool sym = geo_loss(a, b, GeoLossMode::symmetric) == 4.0 && geo_loss(b, a, GeoLossMode::symmetric) == 4.0;

  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_int_distribution<int> whole(0, 359);
  std::size_t negative = 0, zero_mismatch = 0;
  for (int i = 0; i < 100000; ++i) {
    // Whole degrees half the time so exact angular ties actually occur.
    bool ints = i % 2 == 0;
    double dp = ints ? whole(rng) : 360.0 * u(rng) * 0.9999999;
    double dt = ints ? whole(rng) : 360.0 * u(rng) * 0.9999999;
    double np = u(rng), nt = i % 3 == 0 ? np : u(rng);
    Action p(np, dp), t(nt, dt);
    for (auto mode : {GeoLossMode::literal, GeoLossMode::symmetric}) {
      double l = geo_loss(p, t, mode);
      negative += l < 0.0;
    }
    bool equal = np == nt && std::fmod(dp - dt + 360.0, 360.0) == 0.0;
    zero_mismatch += (geo_loss(p, t, GeoLossMode::symmetric) == 0.0) != equal;
  }
  return {literal && sym && negative == 0 && zero_mismatch == 0,
          fmt::format("literal {} symmetric {} / {}, negatives {}, zero-iff-equal violations {}",
                      geo_loss(a, b, GeoLossMode::literal), geo_loss(a, b, GeoLossMode::symmetric),
                      geo_loss(b, a, GeoLossMode::symmetric), negative, zero_mismatch)};
}

// ---------------------------------------------------------------- 3

Outcome geohash() {
  auto ours = geo::geohash_encode({57.64911, 10.40744}, 11).code();
  auto ref = oracle::reference_geohash(57.64911, 10.40744, 11);
  bool vector_ok = ours == "u4pruydqqvj" && ref == ours;
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> lat(-90, 90), lon(-180, 180);
  std::size_t bad = 0;
  for (int i = 0; i < 10000; ++i) {
    geo::GeoPoint p(lat(rng), lon(rng));
    for (int k = 1; k <= 12; ++k) {
      auto code = geo::geohash_encode(p, k);
      bad += !geo::geohash_decode(code).contains(p) || code.code() != oracle::reference_geohash(p.lat(), p.lon(), k);
    }
  }
  return {vector_ok && bad == 0, fmt::format("reference \"{}\", {} of 120000 round trips failed", ours, bad)};
}

// ---------------------------------------------------------------- 4

Outcome hex_graph() {
  using namespace hex;
  using oracle::km_box;
  // Interior degree.
  auto bbox = km_box(20, 14, 0.3, 0.1);
  auto grid = HexGrid::build(bbox, ViewSpec::make(ViewLevel::micro, 2.0));
  auto lo = grid.projection().project(bbox.south_west), hi = grid.projection().project(bbox.north_east);
  std::size_t interior = 0, wrong_degree = 0;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    auto hex = grid.layout().corners({grid.cells()[i].q, grid.cells()[i].r});
    bool inside = std::all_of(hex.begin(), hex.end(), [&](const Planar& p) { return oracle::strictly_in_rect(p, lo, hi); });
    if (!inside) continue;
    ++interior;
    wrong_degree += grid.neighbors(i).size() != 6;
  }

  // Partition.
  auto box = km_box(12, 9, 0.13, -0.4);
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0, 1);
  std::size_t misplaced = 0;
  for (auto [level, d] : {std::pair{ViewLevel::micro, 2.0}, std::pair{ViewLevel::meso, 5.0},
                          std::pair{ViewLevel::macro, 10.0}}) {
    auto g = HexGrid::build(box, ViewSpec::make(level, d));
    for (int i = 0; i < 10000; ++i) {
      geo::GeoPoint p(box.south_west.lat() + u(rng) * (box.north_east.lat() - box.south_west.lat()),
                      box.south_west.lon() + u(rng) * (box.north_east.lon() - box.south_west.lon()));
      auto xy = g.projection().project(p);
      std::optional<Axial> expected;
      for (const auto& c : g.cells()) {
        if (oracle::in_hexagon(g.layout().corners({c.q, c.r}), xy, 1e-9) && (!expected || Axial{c.q, c.r} < *expected)) {
          expected = Axial{c.q, c.r};
        }
      }
      auto got = g.point_to_cell(p);
      misplaced += !expected || got.q != expected->q || got.r != expected->r;
    }
  }

  // Node counts.
  struct Case {
    double w, h, dx, dy, d;
    ViewLevel level;
  };
  std::size_t count_mismatch = 0;
  std::vector<std::string> counts;
  for (auto c : {Case{10, 10, 0.37, -0.21, 2, ViewLevel::micro}, Case{23.3, 17.1, 1.1, 2.9, 5, ViewLevel::meso},
                 Case{41.7, 33.2, -3.3, 0.7, 10, ViewLevel::macro}}) {
    auto b = km_box(c.w, c.h, c.dx, c.dy);
    auto n = HexGrid::build(b, ViewSpec::make(c.level, c.d)).size();
    auto want = oracle::brute_force_cell_count(b, c.d);
    count_mismatch += n != want;
    counts.push_back(fmt::format("{}/{}", n, want));
  }
  return {interior > 0 && wrong_degree == 0 && misplaced == 0 && count_mismatch == 0,
          fmt::format("{} interior cells ({} not degree 6), {} of 30000 points misplaced, node counts {}", interior,
                      wrong_degree, misplaced, fmt::join(counts, " "))};
}

// ---------------------------------------------------------------- 5

Outcome behavior_learning() {
  auto t0 = Clock::now();
  auto train = behavior::two_driver_corpus(200, 8, 10);
  auto test = behavior::two_driver_corpus(50, 8, 11);
  behavior::PretrainOptions opt;
  opt.epochs = 10;
  opt.adam.lr = 0.01;
  opt.seed = 5;
  auto fit = [&](bool shuffled) {
    std::mt19937_64 rng(3);
    ad::ParameterSet params;
    behavior::init_gru_params(params, 40, rng);
    auto o = opt;
    o.shuffle_labels = shuffled;
    behavior::pretrain_behavior(train, params, o);
    return behavior::held_out_auc(params, test, 99);
  };
  double auc = fit(false);
  double control = fit(true);
  double secs = seconds_since(t0);
  return {auc >= 0.9 && std::abs(control - 0.5) <= 0.1 && secs <= 300.0,
          fmt::format("held-out AUC {:.3f}, shuffled-label AUC {:.3f}, {:.1f} s", auc, control, secs)};
}

// ---------------------------------------------------------------- 6

Outcome end_to_end() {
  auto t0 = Clock::now();
  auto cfg = desk_config();
  auto dir = fresh_dir("end_to_end");
  auto raw = group_by_vehicle(pipeline::generate_corpus(cfg, cfg.seed));
  auto result = pipeline::run_training(cfg, raw, pipeline::Stage::both, dir);
  auto& trained = result.stage2->model;
  auto random = pipeline::random_model(pipeline::prepare_corpus(raw, cfg), cfg);

  std::vector<double> err_t, err_r, elr_t, elr_r;
  for (std::uint64_t s = 7; s <= 11; ++s) {
    auto run = [&](pipeline::Model& m) {
      auto world = sim::World::generate(cfg.city_config(), s);
      return pipeline::run_inference(m, world, s + 1).metrics;
    };
    auto a = run(trained);
    auto b = run(random);
    err_t.push_back(a.error_km);
    err_r.push_back(b.error_km);
    elr_t.push_back(a.empty_loaded_rate);
    elr_r.push_back(b.empty_loaded_rate);
  }
  double secs = seconds_since(t0);
  double reduction = 1.0 - mean(err_t) / mean(err_r);
  return {reduction >= 0.3 && mean(elr_t) < mean(elr_r) && secs <= 900.0,
          fmt::format("Error {:.3f} vs {:.3f} km ({:.0f}% lower), empty-loaded {:.4f} vs {:.4f}, {:.0f} s", mean(err_t),
                      mean(err_r), 100.0 * reduction, mean(elr_t), mean(elr_r), secs)};
}

// ---------------------------------------------------------------- 7

Outcome alpha_sweep() {
  auto cfg = sweep_config();
  auto raw = group_by_vehicle(pipeline::generate_corpus(cfg, cfg.seed));
  auto corpus = pipeline::prepare_corpus(raw, cfg);
  auto s1 = pipeline::run_stage1(corpus, cfg);
  auto episodes = pipeline::build_episodes(corpus, s1.params, cfg);
  auto alphas = pipeline::default_alphas();
  auto rows = pipeline::alpha_sweep(episodes, s1.params, cfg, alphas);
  auto best = std::min_element(rows.begin(), rows.end(),
                               [](const auto& x, const auto& y) { return x.test_error_km < y.test_error_km; });
  std::vector<std::string> curve;
  for (const auto& r : rows) curve.push_back(fmt::format("{:.1f}:{:.4f}", r.alpha, r.test_error_km));
  return {best->alpha >= 0.4 - 1e-9 && best->alpha <= 0.7 + 1e-9,
          fmt::format("minimum at alpha {:.1f}; test Error {}", best->alpha, fmt::join(curve, " "))};
}

// ---------------------------------------------------------------- 8

Outcome ratio_sweep() {
  auto cfg = desk_config();
  cfg.city = "metro";
  const auto& ratios = sim::default_ratios();
  auto rows = sim::ratio_sweep(cfg.city_config(), ratios, cfg.seed);
  std::vector<double> r, e, a;
  for (const auto& row : rows) {
    r.push_back(sim::parse_ratio(row.ratio));
    e.push_back(row.empty_loaded_rate);
    a.push_back(row.order_acceptance_rate);
  }
  double rho_e = sim::spearman(r, e), rho_a = sim::spearman(r, a);
  return {rho_e > 0.9 && rho_a > 0.9,
          fmt::format("{} ratios {}..{}, spearman empty-loaded {:.3f}, acceptance {:.3f} (acceptance {:.3f}..{:.3f})",
                      rows.size(), rows.front().ratio, rows.back().ratio, rho_e, rho_a, a.front(), a.back())};
}

// ---------------------------------------------------------------- 9

Outcome view_ablation() {
  auto cfg = sweep_config();
  auto raw = group_by_vehicle(pipeline::generate_corpus(cfg, cfg.seed));
  auto rows = pipeline::view_ablation(raw, cfg);
  std::map<std::size_t, double> multi;
  for (const auto& row : rows) {
    if (row.views == "micro,meso,macro") multi[row.rep] = row.test_error_km;
  }
  bool pass = true;
  std::vector<std::string> parts;
  for (const char* view : {"micro", "meso", "macro"}) {
    std::size_t wins = 0, n = 0;
    std::vector<double> single_err, multi_err;
    for (const auto& row : rows) {
      if (row.views != view) continue;
      ++n;
      wins += row.test_error_km >= multi[row.rep];
      single_err.push_back(row.test_error_km);
      multi_err.push_back(multi[row.rep]);
    }
    double p = pipeline::sign_test_p(wins, n);
    pass = pass && p <= 0.05;
    parts.push_back(fmt::format("{} {:.4f} vs {:.4f} ({}/{} p={:.3f})", view, mean(single_err), mean(multi_err), wins, n, p));
  }
  return {pass, fmt::format("{}", fmt::join(parts, ", "))};
}

// ---------------------------------------------------------------- 10

Outcome determinism() {
  std::istringstream in(
      "seed = 3\nn_vehicles = 6\nn_orders = 30\ncorpus_spawn_window_s = 5400\ncorpus_orders = 40\n"
      "d_g = 4\nd_model = 8\nlayers = 1\nleng = 12\nn_samples = 40\nepochs = 2\nbatch_episodes = 4\n"
      "behavior_epochs = 2\nbehavior_batch = 4\n");
  auto cfg = parse_config(in);
  auto raw = group_by_vehicle(pipeline::generate_corpus(cfg, cfg.seed));
  auto a = fresh_dir("determinism_a"), b = fresh_dir("determinism_b");
  pipeline::run_training(cfg, raw, pipeline::Stage::both, a);
  pipeline::run_training(cfg, raw, pipeline::Stage::both, b);
  bool same = slurp(a / "stage1.ckpt") == slurp(b / "stage1.ckpt") && slurp(a / "model.ckpt") == slurp(b / "model.ckpt");
  auto bytes = slurp(a / "model.ckpt");
  auto model = pipeline::model_from_tensors(ad::deserialize_checkpoint(bytes), cfg);
  bool round = ad::serialize_checkpoint(pipeline::model_tensors(model)) == bytes;
  return {same && round, fmt::format("rerun identical: {}, save/load/save identical: {} ({} bytes)", same, round,
                                     bytes.size())};
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> selected;
  g_work = fs::temp_directory_path() / "hexfleet_acceptance";
  for (int i = 1; i < argc; ++i) {
    std::string arg = argv[i];
    if (arg == "--config-dir" && i + 1 < argc) {
      g_config_dir = argv[++i];
    } else if (arg == "--work" && i + 1 < argc) {
      g_work = argv[++i];
    } else {
      selected.insert(std::stoi(arg));
    }
  }
  spdlog::set_level(spdlog::level::warn);
  fs::create_directories(g_work);

  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"gradient suite", gradient_suite},
      {"GeoLoss exactness", geo_loss_exactness},
      {"GeoHash", geohash},
      {"hex graph", hex_graph},
      {"behavior learning", behavior_learning},
      {"end-to-end learning signal", end_to_end},
      {"alpha sweep minimum in [0.4, 0.7]", alpha_sweep},
      {"ratio sweep monotone", ratio_sweep},
      {"multiview ablation", view_ablation},
      {"determinism and serialization", determinism},
  };
  int crashed = 0, passed = 0, run = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    int id = static_cast<int>(i + 1);
    if (!selected.empty() && !selected.count(id)) continue;
    ++run;
    auto t0 = Clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      ++crashed;
      o = {false, fmt::format("error: {}", e.what())};
    }
    passed += o.pass;
    fmt::print("[{}] {:>2}. {} ({:.1f} s): {}\n", o.pass ? "PASS" : "FAIL", id, criteria[i].first, seconds_since(t0),
               o.detail);
    std::fflush(stdout);
  }
  fmt::print("{}/{} criteria passed\n", passed, run);
  return crashed == 0 ? 0 : 1;
}
