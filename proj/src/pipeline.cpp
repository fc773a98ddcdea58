#include "hexfleet/pipeline.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include "hexfleet/errors.hpp"
#include "json.hpp"

#ifndef HEXFLEET_VERSION
#define HEXFLEET_VERSION "0.0.0"
#endif

namespace hexfleet::pipeline {

namespace {

// Independent streams off one run seed.
std::uint64_t derive(std::uint64_t seed, std::uint64_t salt) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(salt), static_cast<std::uint32_t>(salt >> 32)};
  std::mt19937_64 rng(seq);
  return rng();
}

std::uint64_t hop_seed(std::uint64_t seed, std::int64_t ts, std::size_t vehicle) {
  return derive(seed ^ static_cast<std::uint64_t>(ts) * 0x9e3779b97f4a7c15ULL, 1000 + vehicle);
}

const std::string& level_name(std::size_t i) {
  static const std::array<std::string, 3> names{"micro", "meso", "macro"};
  return names[i];
}

void ensure_dir(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw std::runtime_error(fmt::format("cannot create {}: {}", dir.string(), ec.message()));
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error(fmt::format("cannot write {}", path.string()));
  return out;
}

hex::MultiviewGraph build_graph(const RunConfig& config) {
  return hex::MultiviewGraph::build(config.city_config().bbox, config.diameters_km);
}

TrafficLog make_log(const Corpus& corpus, const RunConfig& config) {
  auto city = config.city_config();
  return TrafficLog(corpus.trajectories, city.dt_s, city.cruise_kmh, city.fare_window_s);
}

hex::FeatureNormalizer fit_normalizer(const Corpus& corpus, const TrafficLog& log, const hex::MultiviewGraph& graph) {
  std::vector<std::int64_t> stamps;
  for (const auto& s : corpus.split.train) {
    for (const auto& r : s.records) stamps.push_back(r.timestamp_s);
  }
  std::sort(stamps.begin(), stamps.end());
  stamps.erase(std::unique(stamps.begin(), stamps.end()), stamps.end());
  if (stamps.empty()) throw ConfigError("no training timestamps to fit the feature normalizer");
  std::array<std::vector<ad::Tensor>, 3> raw;
  for (auto ts : stamps) {
    auto snap = log.snapshot(ts);
    for (std::size_t l = 0; l < 3; ++l) raw[l].push_back(hex::compute_features(graph, snap, hex::kViewLevels[l]));
  }
  hex::FeatureNormalizer norm;
  for (std::size_t l = 0; l < 3; ++l) norm.fit(hex::kViewLevels[l], raw[l]);
  return norm;
}

std::vector<std::string> trainable_prefixes(const RunConfig& config) {
  std::vector<std::string> out{"policy.", "gcn."};
  if (config.fare_weight_train) out.push_back("fare.");
  return out;
}

policy::StepEncoder encoder_for(const RunConfig& config) {
  return policy::model_encoder(config.alpha, config.views, config.gcn_dropout);
}

// Fresh parameter set with every tensor a config implies, used to check
// checkpoints against.
ad::ParameterSet reference_params(const RunConfig& config, bool with_policy) {
  ad::ParameterSet p;
  std::mt19937_64 rng(0);
  represent::init_gcn_params(p, config.d_g, rng);
  behavior::init_gru_params(p, 5 * static_cast<std::size_t>(config.geohash_precision), rng);
  p.add(behavior::kFareWeightName, ad::Tensor::scalar(1.0));
  if (with_policy) policy::init_policy_params(p, config.policy_config(), rng);
  return p;
}

void check_against(const ad::ParameterSet& expected, const ad::TensorMap& tensors, const std::string& what) {
  for (const auto& [name, p] : expected) {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw CheckpointError(fmt::format("{} lacks tensor '{}'", what, name));
    if (!it->second.same_shape(p.value)) {
      throw CheckpointError(fmt::format("{} tensor '{}' is {}, config expects {}", what, name,
                                        it->second.shape_string(), p.value.shape_string()));
    }
  }
}

}  // namespace

const char* version() { return HEXFLEET_VERSION; }

std::vector<TrajectoryRecord> generate_corpus(const RunConfig& config, std::uint64_t seed) {
  auto world = sim::World::generate(config.corpus_city_config(), seed);
  sim::GroundTruthDriver driver(derive(seed, 3));
  sim::run_episode(world, driver);
  return world.records();
}

// ---------------------------------------------------------------- features

TrafficLog::TrafficLog(const TrajectorySet& set, double dt_s, double free_flow_kmh, double travel_time_window_s)
    : set_(&set), dt_s_(dt_s), free_flow_kmh_(free_flow_kmh), window_s_(travel_time_window_s) {
  heading_.resize(set.size());
  for (std::size_t v = 0; v < set.size(); ++v) {
    const auto& recs = set[v].records;
    auto& head = heading_[v];
    head.resize(recs.size());
    std::optional<std::int64_t> start;
    for (std::size_t k = 0; k < recs.size(); ++k) {
      const auto& r = recs[k];
      if (k > 0) {
        head[k] = head[k - 1];
        if (geo::haversine_km(recs[k - 1].position, r.position) > 0.0) {
          head[k] = geo::azimuth_deg(recs[k - 1].position, r.position);
        }
      }
      by_time_[r.timestamp_s].push_back({v, k});
      // Same rule the world uses when it logs a tick.
      if (r.status == VehicleStatus::occupied && !start) start = r.timestamp_s;
      if (r.fare > 0.0) {
        trips_.push_back({r.position, static_cast<double>(r.timestamp_s - start.value_or(r.timestamp_s)),
                          static_cast<double>(r.timestamp_s), r.fare});
        start.reset();
        if (r.status == VehicleStatus::occupied) start = r.timestamp_s;
      }
    }
  }
  std::stable_sort(trips_.begin(), trips_.end(),
                   [](const TripObservation& a, const TripObservation& b) { return a.end_time_s < b.end_time_s; });
  for (const auto& [ts, fixes] : by_time_) timestamps_.push_back(ts);
}

SimSnapshot TrafficLog::snapshot(std::int64_t ts) const {
  SimSnapshot s;
  s.time_s = static_cast<double>(ts);
  s.dt_s = dt_s_;
  s.free_flow_kmh = free_flow_kmh_;
  s.travel_time_window_s = window_s_;
  auto it = by_time_.find(ts);
  if (it != by_time_.end()) {
    for (const auto& f : it->second) {
      const auto& recs = (*set_)[f.vehicle].records;
      const auto& r = recs[f.index];
      VehicleObservation o;
      o.id = static_cast<int>(f.vehicle);
      o.position = r.position;
      o.status = r.status;
      o.heading_deg = heading_[f.vehicle][f.index];
      if (f.index > 0) {
        const auto& prev = recs[f.index - 1];
        o.previous_position = prev.position;
        o.speed_kmh = geo::haversine_km(prev.position, r.position) /
                      static_cast<double>(r.timestamp_s - prev.timestamp_s) * 3600.0;
        o.previous_heading_deg = heading_[f.vehicle][f.index - 1];
      }
      s.vehicles.push_back(o);
    }
  }
  for (const auto& t : trips_) {
    if (t.end_time_s > s.time_s) break;
    s.completed_trips.push_back(t);
  }
  return s;
}

ViewFeatures view_features(const hex::MultiviewGraph& graph, const SimSnapshot& snapshot,
                           const hex::FeatureNormalizer& normalizer) {
  ViewFeatures f;
  for (std::size_t l = 0; l < 3; ++l) {
    f.raw[l] = hex::compute_features(graph, snapshot, hex::kViewLevels[l]);
    f.normalized[l] = normalizer.apply(hex::kViewLevels[l], f.raw[l]);
  }
  return f;
}

std::array<std::vector<double>, 3> ego_aggregates(const hex::MultiviewGraph& graph, const ViewFeatures& features,
                                                  const hex::FeatureNormalizer& normalizer, const geo::GeoPoint& p,
                                                  const RunConfig& config, std::uint64_t seed) {
  auto at = graph.bbox().clamp(p);
  // One hop never exceeds max_delay, so the 1-hop aggregate only changes
  // when a single relay can blow the budget.
  bool masking = config.hops.max_delay_ms > config.hops.budget_ms;
  std::array<std::vector<double>, 3> out;
  for (std::size_t l = 0; l < 3; ++l) {
    auto level = hex::kViewLevels[l];
    const auto& grid = graph.view(level);
    auto ego = grid.locate(at);
    if (masking) {
      auto masked = hex::restrict_by_hops(grid, features.raw[l], ego, config.hops, seed + l);
      out[l] = represent::ego_aggregate(grid, normalizer.apply(level, masked), ego, config.gcn_self_loops);
    } else {
      out[l] = represent::ego_aggregate(grid, features.normalized[l], ego, config.gcn_self_loops);
    }
  }
  return out;
}

// ---------------------------------------------------------------- data

Corpus prepare_corpus(const TrajectorySet& raw, const RunConfig& config) {
  Corpus c;
  auto filtered =
      speed_filter(raw, [limit = config.speed_limit_kmh](const geo::GeoPoint&) { return limit; });
  c.trajectories = std::move(filtered.kept);
  c.removed = filtered.removed;
  auto segs = segment_trajectories(c.trajectories, config.leng, config.n_samples, derive(config.seed, 21));
  c.skipped = segs.skipped;
  c.split = chronological_split(std::move(segs.segments), config.split);
  spdlog::info("corpus: {} vehicles, {} points removed by the speed filter, {}/{}/{} segments",
               c.trajectories.size(), c.removed, c.split.train.size(), c.split.validation.size(),
               c.split.test.size());
  return c;
}

// ---------------------------------------------------------------- stage 1

Stage1 run_stage1(const Corpus& corpus, const RunConfig& config) {
  Stage1 s;
  std::mt19937_64 gcn_rng(derive(config.seed, 31));
  represent::init_gcn_params(s.params, config.d_g, gcn_rng);
  std::mt19937_64 gru_rng(derive(config.seed, 32));
  behavior::init_gru_params(s.params, 5 * static_cast<std::size_t>(config.geohash_precision), gru_rng);

  // Empty runs of the training segments; each trajectory is one driver.
  std::vector<behavior::DriverSegment> runs;
  for (const auto& seg : corpus.split.train) {
    behavior::DriverSegment cur{static_cast<std::int64_t>(seg.trajectory), {}};
    auto flush = [&] {
      if (cur.points.size() >= 2) runs.push_back(cur);
      cur.points.clear();
    };
    for (const auto& r : seg.records) {
      if (r.status == VehicleStatus::empty) {
        cur.points.push_back(r.position);
      } else {
        flush();
      }
    }
    flush();
  }
  s.behavior_segments = runs.size();
  if (config.behavior_epochs > 0) {
    behavior::PretrainOptions opt;
    opt.epochs = config.behavior_epochs;
    opt.batch_size = config.behavior_batch;
    opt.precision = config.geohash_precision;
    opt.loss = config.behavior_loss;
    opt.adam = config.adam;
    opt.adam.lr = config.behavior_lr;
    opt.seed = derive(config.seed, 33);
    s.behavior = behavior::pretrain_behavior(runs, s.params, opt);
    spdlog::info("behavior pretraining on {} empty runs: loss {:.4f} -> {:.4f}", runs.size(),
                 s.behavior.epoch_loss.front(), s.behavior.epoch_loss.back());
  }

  // Scale the fare squashing so the mean training suffix sits at w x = 1.
  double total = 0.0;
  std::size_t steps = 0;
  for (const auto& seg : corpus.split.train) {
    std::vector<double> fares;
    for (std::size_t i = 1; i < seg.records.size(); ++i) fares.push_back(seg.records[i].fare);
    for (double x : behavior::fare_suffix_sum(fares)) total += x;
    steps += fares.size();
  }
  double mean = steps > 0 ? total / static_cast<double>(steps) : 0.0;
  s.params.add(behavior::kFareWeightName, ad::Tensor::scalar(mean > 0.0 ? 1.0 / mean : 1.0));
  return s;
}

ad::TensorMap stage1_tensors(const ad::ParameterSet& params) {
  ad::TensorMap out;
  for (const auto& [name, p] : params) {
    if (name.starts_with("gcn.") || name.starts_with("gru.") || name.starts_with("fare.")) out[name] = p.value;
  }
  return out;
}

ad::ParameterSet stage1_from_tensors(const ad::TensorMap& tensors, const RunConfig& config) {
  auto expected = reference_params(config, false);
  check_against(expected, tensors, "stage-1 checkpoint");
  for (const auto& [name, t] : tensors) {
    if (!expected.contains(name)) throw CheckpointError(fmt::format("stage-1 checkpoint has stray tensor '{}'", name));
  }
  ad::ParameterSet out;
  for (const auto& [name, t] : tensors) out.add(name, t);
  return out;
}

// ---------------------------------------------------------------- stage 2

EpisodeSet build_episodes(const Corpus& corpus, ad::ParameterSet& stage1, const RunConfig& config) {
  auto graph = build_graph(config);
  auto log = make_log(corpus, config);
  EpisodeSet out;
  out.normalizer = fit_normalizer(corpus, log, graph);
  std::map<std::int64_t, ViewFeatures> cache;
  auto features_at = [&](std::int64_t ts) -> const ViewFeatures& {
    auto it = cache.find(ts);
    if (it == cache.end()) it = cache.emplace(ts, view_features(graph, log.snapshot(ts), out.normalizer)).first;
    return it->second;
  };

  auto episode = [&](const Segment& seg) {
    policy::Episode ep;
    const auto& recs = seg.records;
    std::vector<double> fares;
    for (std::size_t i = 1; i < recs.size(); ++i) fares.push_back(recs[i].fare);
    auto suffix = behavior::fare_suffix_sum(fares);
    behavior::BehaviorTracker tracker(config.geohash_precision);
    for (std::size_t i = 0; i + 1 < recs.size(); ++i) {
      const auto& r = recs[i];
      policy::PolicyStep step;
      step.view_aggregates = ego_aggregates(graph, features_at(r.timestamp_s), out.normalizer, r.position, config,
                                            hop_seed(config.seed, r.timestamp_s, seg.trajectory));
      step.location = geo::location_embedding(r.position, config.geohash_precision);
      step.behavior_prob = i == 0 ? tracker.start(stage1, r.position) : tracker.next(stage1, r.position);
      step.fare_suffix = suffix[i];
      auto heading = log.heading(seg.trajectory, seg.begin + i).value_or(0.0);
      step.action = action_between(r.position, recs[i + 1].position, config.r_max_km, heading);
      step.origin = r.position;
      ep.push_back(std::move(step));
    }
    return ep;
  };
  for (const auto& s : corpus.split.train) out.train.push_back(episode(s));
  for (const auto& s : corpus.split.validation) out.validation.push_back(episode(s));
  for (const auto& s : corpus.split.test) out.test.push_back(episode(s));
  return out;
}

Stage2 run_stage2(const EpisodeSet& episodes, const ad::ParameterSet& stage1, const RunConfig& config,
                  const std::function<void(const EpochRow&)>& on_epoch) {
  Stage2 s;
  s.model.config = config;
  s.model.normalizer = episodes.normalizer;
  for (const auto& [name, p] : stage1) s.model.params.add(name, p.value);
  auto pcfg = config.policy_config();
  std::mt19937_64 rng(derive(config.seed, 41));
  policy::init_policy_params(s.model.params, pcfg, rng);

  policy::TrainOptions opt;
  opt.epochs = config.epochs;
  opt.batch_episodes = config.batch_episodes;
  opt.adam = config.adam;
  opt.seed = derive(config.seed, 42);
  opt.trainable = trainable_prefixes(config);
  opt.encoder = encoder_for(config);
  opt.on_epoch = [&](int epoch, double loss, const policy::EvalStats& val) {
    EpochRow row{epoch + 1, loss, val.mean_loss, val.mean_error_km};
    s.epochs.push_back(row);
    spdlog::info("epoch {}: train GeoLoss {:.3f}, validation GeoLoss {:.3f}, Error {:.4f} km", row.epoch,
                 row.train_loss, row.val_geo_loss, row.val_error_km);
    if (on_epoch) on_epoch(row);
  };
  if (config.epochs > 0) policy::train_policy(episodes.train, episodes.validation, s.model.params, pcfg, opt);
  if (!episodes.test.empty()) s.test = evaluate_model(s.model, episodes.test);
  return s;
}

policy::EvalStats evaluate_model(Model& model, std::span<const policy::Episode> episodes) {
  return policy::evaluate_policy(episodes, model.params, model.config.policy_config(), encoder_for(model.config));
}

ad::TensorMap model_tensors(const Model& model) {
  ad::TensorMap out = model.params.values();
  const auto& c = model.config;
  out["meta.version"] = ad::Tensor::scalar(kModelVersion);
  std::vector<double> arch{static_cast<double>(c.d_g),
                           static_cast<double>(c.d_model),
                           static_cast<double>(c.layers),
                           static_cast<double>(c.geohash_precision),
                           c.gcn_self_loops ? 1.0 : 0.0,
                           c.views[0] ? 1.0 : 0.0,
                           c.views[1] ? 1.0 : 0.0,
                           c.views[2] ? 1.0 : 0.0,
                           c.context == policy::ContextMode::sequence ? 0.0 : 1.0,
                           c.diameters_km[0],
                           c.diameters_km[1],
                           c.diameters_km[2],
                           c.r_max_km,
                           c.alpha,
                           static_cast<double>(c.leng)};
  out["meta.arch"] = ad::Tensor::row(arch);
  for (std::size_t l = 0; l < 3; ++l) {
    auto level = hex::kViewLevels[l];
    if (!model.normalizer.fitted(level)) throw CheckpointError("model normalizer is not fitted");
    out["meta.norm." + level_name(l) + ".mean"] = ad::Tensor::row(model.normalizer.mean(level));
    out["meta.norm." + level_name(l) + ".std"] = ad::Tensor::row(model.normalizer.stddev(level));
  }
  return out;
}

Model model_from_tensors(const ad::TensorMap& tensors, const RunConfig& base) {
  auto version = tensors.find("meta.version");
  if (version == tensors.end() || version->second.size() != 1) {
    throw CheckpointError("checkpoint has no meta.version; was it written by pretrain only?");
  }
  if (version->second[0] != kModelVersion) {
    throw CheckpointError(fmt::format("checkpoint version {} is not supported (expected {})", version->second[0],
                                      kModelVersion));
  }
  auto arch_it = tensors.find("meta.arch");
  if (arch_it == tensors.end() || arch_it->second.size() != 15) throw CheckpointError("checkpoint meta.arch is malformed");
  const auto& a = arch_it->second;
  Model m;
  m.config = base;
  m.config.d_g = static_cast<std::size_t>(a[0]);
  m.config.d_model = static_cast<std::size_t>(a[1]);
  m.config.layers = static_cast<std::size_t>(a[2]);
  m.config.geohash_precision = static_cast<int>(a[3]);
  m.config.gcn_self_loops = a[4] != 0.0;
  m.config.views = {a[5] != 0.0, a[6] != 0.0, a[7] != 0.0};
  m.config.context = a[8] == 0.0 ? policy::ContextMode::sequence : policy::ContextMode::step;
  m.config.diameters_km = {a[9], a[10], a[11]};
  m.config.r_max_km = a[12];
  m.config.alpha = a[13];
  m.config.leng = static_cast<std::size_t>(a[14]);
  m.config.validate();

  check_against(reference_params(m.config, true), tensors, "checkpoint");
  for (const auto& [name, t] : tensors) {
    if (!name.starts_with("meta.")) m.params.add(name, t);
  }
  for (std::size_t l = 0; l < 3; ++l) {
    auto mean = tensors.find("meta.norm." + level_name(l) + ".mean");
    auto sd = tensors.find("meta.norm." + level_name(l) + ".std");
    if (mean == tensors.end() || sd == tensors.end()) {
      throw CheckpointError(fmt::format("checkpoint lacks the {} normalizer", level_name(l)));
    }
    m.normalizer.set(hex::kViewLevels[l], mean->second.values(), sd->second.values());
  }
  return m;
}

// ---------------------------------------------------------------- runs

TrainingResult run_training(const RunConfig& config, const TrajectorySet& raw, Stage stage,
                            const std::filesystem::path& out_dir) {
  ensure_dir(out_dir);
  TrainingResult result;
  auto corpus = prepare_corpus(raw, config);
  auto stage1_path = out_dir / "stage1.ckpt";

  ad::ParameterSet stage1;
  if (stage == Stage::policy) {
    if (!std::filesystem::exists(stage1_path)) {
      throw DependencyError(fmt::format("stage 2 needs {}; run pretrain first", stage1_path.string()));
    }
    stage1 = stage1_from_tensors(ad::load_checkpoint(stage1_path), config);
  } else {
    auto s1 = run_stage1(corpus, config);
    ad::save_checkpoint(stage1_path, stage1_tensors(s1.params));
    auto log = open_out(out_dir / "behavior_metrics.csv");
    log << "epoch,loss\n";
    for (std::size_t e = 0; e < s1.behavior.epoch_loss.size(); ++e) {
      log << fmt::format("{},{:.8g}\n", e + 1, s1.behavior.epoch_loss[e]);
    }
    for (const auto& [name, p] : s1.params) stage1.add(name, p.value);
    result.stage1 = std::move(s1);
    result.checkpoint = stage1_path;
  }
  if (stage == Stage::pretrain) return result;

  auto episodes = build_episodes(corpus, stage1, config);
  auto s2 = run_stage2(episodes, stage1, config);
  write_epoch_log(out_dir / "metrics.csv", s2.epochs);
  result.checkpoint = out_dir / "model.ckpt";
  ad::save_checkpoint(result.checkpoint, model_tensors(s2.model));
  spdlog::info("test split: GeoLoss {:.3f}, Error {:.4f} km over {} steps", s2.test.mean_loss, s2.test.mean_error_km,
               s2.test.steps);
  result.stage2 = std::move(s2);
  return result;
}

// ---------------------------------------------------------------- inference

PolicyDispatcher::PolicyDispatcher(Model& model)
    : model_(model), policy_(model.config.policy_config()), encoder_(encoder_for(model.config)) {}

std::map<std::size_t, Action> PolicyDispatcher::decide(const sim::World& world) {
  const auto& c = model_.config;
  const auto& vehicles = world.vehicles();
  while (tracks_.size() < vehicles.size()) {
    tracks_.push_back({policy::OnlineContext(policy_), behavior::BehaviorTracker(c.geohash_precision)});
  }
  auto snap = world.snapshot();
  auto features = view_features(world.graph(), snap, model_.normalizer);
  auto ts = static_cast<std::int64_t>(std::llround(world.time_s()));

  std::map<std::size_t, Action> out;
  for (const auto& v : vehicles) {
    auto& t = tracks_[v.id];
    // Training windows hold at most leng points, i.e. leng - 1 decisions.
    if (t.context.steps() + 1 >= c.leng) {
      t.context.reset();
      t.tracker.reset();
    }
    policy::PolicyStep step;
    step.view_aggregates =
        ego_aggregates(world.graph(), features, model_.normalizer, v.position, c, hop_seed(c.seed, ts, v.id));
    step.location = geo::location_embedding(v.position, c.geohash_precision);
    step.behavior_prob = t.tracker.started() ? t.tracker.next(model_.params, v.position)
                                             : t.tracker.start(model_.params, v.position);
    // Future fares are unknown online; the regional median stands in.
    step.fare_suffix = world.regional_median_fare(v.position);
    step.origin = v.position;
    auto a = t.context.predict(model_.params, policy_, step, encoder_);
    if (v.status == VehicleStatus::empty) out[v.id] = a;
  }
  return out;
}

InferenceResult run_inference(Model& model, sim::World& world, std::uint64_t reference_seed) {
  if (world.config().diameters_km != model.config.diameters_km) {
    throw ConfigError("world grid diameters differ from the model's");
  }
  PolicyDispatcher dispatcher(model);
  sim::GroundTruthDriver reference(reference_seed);
  InferenceResult r;
  sim::EpisodeOptions opt;
  opt.reference = &reference;
  opt.on_tick = [&](const sim::World&, const sim::TickRow& row) { r.ticks.push_back(row); };
  r.metrics = sim::run_episode(world, dispatcher, opt);
  return r;
}

Model random_model(const Corpus& corpus, const RunConfig& config) {
  RunConfig c = config;
  c.behavior_epochs = 0;
  c.epochs = 0;
  auto s1 = run_stage1(corpus, c);
  auto graph = build_graph(c);
  auto log = make_log(corpus, c);
  Model m;
  m.config = config;
  m.normalizer = fit_normalizer(corpus, log, graph);
  for (const auto& [name, p] : s1.params) m.params.add(name, p.value);
  std::mt19937_64 rng(derive(config.seed, 41));
  policy::init_policy_params(m.params, c.policy_config(), rng);
  return m;
}

// ---------------------------------------------------------------- sweeps

std::vector<double> default_alphas() {
  std::vector<double> out;
  for (int i = 0; i <= 10; ++i) out.push_back(i / 10.0);
  return out;
}

std::vector<AlphaRow> alpha_sweep(const EpisodeSet& episodes, const ad::ParameterSet& stage1, const RunConfig& config,
                                  std::span<const double> alphas) {
  std::vector<AlphaRow> rows;
  for (double alpha : alphas) {
    RunConfig c = config;
    c.alpha = alpha;
    auto s2 = run_stage2(episodes, stage1, c);
    AlphaRow row{alpha, s2.epochs.empty() ? NAN : s2.epochs.back().val_error_km, s2.test.mean_error_km};
    spdlog::info("alpha {:.1f}: validation Error {:.4f} km, test Error {:.4f} km", alpha, row.val_error_km,
                 row.test_error_km);
    rows.push_back(row);
  }
  return rows;
}

std::vector<AblationRow> view_ablation(const TrajectorySet& raw, const RunConfig& config) {
  const std::array<std::pair<const char*, represent::ViewMask>, 4> setups{{
      {"micro", {true, false, false}},
      {"meso", {false, true, false}},
      {"macro", {false, false, true}},
      {"micro,meso,macro", {true, true, true}},
  }};
  std::vector<AblationRow> rows;
  for (std::size_t rep = 0; rep < config.ablation_reps; ++rep) {
    RunConfig c = config;
    c.seed = config.seed + rep;
    auto corpus = prepare_corpus(raw, c);
    auto s1 = run_stage1(corpus, c);
    auto episodes = build_episodes(corpus, s1.params, c);
    for (const auto& [name, mask] : setups) {
      RunConfig cv = c;
      cv.views = mask;
      auto s2 = run_stage2(episodes, s1.params, cv);
      rows.push_back({name, rep, c.seed, s2.test.mean_error_km});
      spdlog::info("ablation rep {} views {}: test Error {:.4f} km", rep, name, s2.test.mean_error_km);
    }
  }
  return rows;
}

double sign_test_p(std::size_t wins, std::size_t n) {
  if (wins > n) throw std::invalid_argument("sign test: more wins than trials");
  double p = 0.0;
  for (std::size_t k = wins; k <= n; ++k) {
    double c = 1.0;
    for (std::size_t i = 0; i < k; ++i) c = c * static_cast<double>(n - i) / static_cast<double>(i + 1);
    p += c;
  }
  return p / std::pow(2.0, static_cast<double>(n));
}

// ---------------------------------------------------------------- outputs

void write_epoch_log(const std::filesystem::path& path, std::span<const EpochRow> rows) {
  auto out = open_out(path);
  out << kEpochHeader << '\n';
  for (const auto& r : rows) {
    out << fmt::format("{},{:.8g},{:.8g},{:.8g}\n", r.epoch, r.train_loss, r.val_geo_loss, r.val_error_km);
  }
}

void write_tick_log(const std::filesystem::path& path, std::span<const sim::TickRow> rows) {
  auto out = open_out(path);
  out << sim::kTickHeader << '\n';
  for (const auto& r : rows) {
    out << fmt::format("{},{},{:.8g},{:.8g}\n", r.tick, r.open_orders, r.empty_loaded_rate, r.acceptance_rate);
  }
}

void write_manifest(const std::filesystem::path& dir, const std::string& command, const RunConfig& config,
                    const std::map<std::string, std::uint64_t>& seeds, const std::vector<std::string>& outputs) {
  ensure_dir(dir);
  nlohmann::ordered_json j;
  j["command"] = command;
  j["version"] = version();
  j["config_hash"] = config.hash();
  j["seeds"] = seeds;
  j["config"] = config.canonical();
  j["outputs"] = outputs;
  auto out = open_out(dir / "manifest.json");
  out << j.dump(2) << '\n';
}

}  // namespace hexfleet::pipeline
