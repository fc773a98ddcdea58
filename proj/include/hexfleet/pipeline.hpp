#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hexfleet/checkpoint.hpp"
#include "hexfleet/config.hpp"
#include "hexfleet/preprocess.hpp"
#include "hexfleet/sim.hpp"

namespace hexfleet::pipeline {

inline constexpr double kModelVersion = 1.0;

// Version tag written into manifests.
const char* version();

// gen-data: one ground-truth day on the corpus city. The fleet (positions
// and familiarity) only depends on the seed, so the evaluation city with
// the same seed has the same drivers on a different order stream.
std::vector<TrajectoryRecord> generate_corpus(const RunConfig& config, std::uint64_t seed);

// ---------------------------------------------------------------- features

// Rebuilds the per-tick snapshots a live world would report from logged
// records: speed and heading from consecutive fixes, trips from occupied
// runs ending in a booked fare.
class TrafficLog {
 public:
  TrafficLog(const TrajectorySet& set, double dt_s, double free_flow_kmh, double travel_time_window_s);

  SimSnapshot snapshot(std::int64_t ts) const;
  const std::vector<std::int64_t>& timestamps() const { return timestamps_; }
  // Heading of the last movement up to and including a record.
  std::optional<double> heading(std::size_t vehicle, std::size_t index) const { return heading_[vehicle][index]; }

 private:
  struct Fix {
    std::size_t vehicle;
    std::size_t index;
  };
  const TrajectorySet* set_;
  double dt_s_, free_flow_kmh_, window_s_;
  std::vector<std::vector<std::optional<double>>> heading_;  // heading after each record
  std::vector<TripObservation> trips_;                       // by end time
  std::map<std::int64_t, std::vector<Fix>> by_time_;
  std::vector<std::int64_t> timestamps_;
};

struct ViewFeatures {
  std::array<ad::Tensor, 3> raw;
  std::array<ad::Tensor, 3> normalized;
};

ViewFeatures view_features(const hex::MultiviewGraph& graph, const SimSnapshot& snapshot,
                           const hex::FeatureNormalizer& normalizer);

// Ego rows of (A + I) X per view at p (clamped into the bbox). Hop masking
// is applied on the raw rows when some neighbour can fall outside the
// latency budget; otherwise the cached normalized rows are used as is.
std::array<std::vector<double>, 3> ego_aggregates(const hex::MultiviewGraph& graph, const ViewFeatures& features,
                                                  const hex::FeatureNormalizer& normalizer, const geo::GeoPoint& p,
                                                  const RunConfig& config, std::uint64_t hop_seed);

// ---------------------------------------------------------------- data

struct Corpus {
  TrajectorySet trajectories;  // speed-filtered
  std::size_t removed = 0;
  std::size_t skipped = 0;
  Split split;
};

Corpus prepare_corpus(const TrajectorySet& raw, const RunConfig& config);

// ---------------------------------------------------------------- stage 1

struct Stage1 {
  ad::ParameterSet params;  // gcn.*, gru.*, fare.w
  behavior::PretrainReport behavior;
  std::size_t behavior_segments = 0;
};

// Initializes the GCN, pretrains the behavior model on the empty runs of the
// training segments and calibrates fare.w to 1 / mean fare suffix.
Stage1 run_stage1(const Corpus& corpus, const RunConfig& config);

// Stage-1 parameters only; CheckpointError when names or shapes disagree
// with the config.
ad::TensorMap stage1_tensors(const ad::ParameterSet& params);
ad::ParameterSet stage1_from_tensors(const ad::TensorMap& tensors, const RunConfig& config);

// ---------------------------------------------------------------- stage 2

struct EpisodeSet {
  std::vector<policy::Episode> train, validation, test;
  hex::FeatureNormalizer normalizer;
};

// One step per consecutive pair of each segment: traffic aggregates and
// location at the first point, p from the behavior tracker, the fare suffix
// of the remaining points, and the displacement to the next point.
EpisodeSet build_episodes(const Corpus& corpus, ad::ParameterSet& stage1, const RunConfig& config);

struct EpochRow {
  int epoch = 0;
  double train_loss = 0.0;
  double val_geo_loss = 0.0;
  double val_error_km = 0.0;
};
inline constexpr const char* kEpochHeader = "epoch,train_loss,val_geo_loss,val_error_km";

// Everything inference needs.
struct Model {
  RunConfig config;
  ad::ParameterSet params;
  hex::FeatureNormalizer normalizer;
};

struct Stage2 {
  Model model;
  std::vector<EpochRow> epochs;
  policy::EvalStats test;
};

Stage2 run_stage2(const EpisodeSet& episodes, const ad::ParameterSet& stage1, const RunConfig& config,
                  const std::function<void(const EpochRow&)>& on_epoch = {});

policy::EvalStats evaluate_model(Model& model, std::span<const policy::Episode> episodes);

// Parameters plus meta.* tensors (version, architecture, normalizer).
ad::TensorMap model_tensors(const Model& model);
// CheckpointError on a version mismatch or missing tensors. Architecture
// keys are restored from the checkpoint; the rest comes from `base`.
Model model_from_tensors(const ad::TensorMap& tensors, const RunConfig& base);

// ---------------------------------------------------------------- runs

enum class Stage { pretrain, policy, both };

struct TrainingResult {
  std::optional<Stage1> stage1;
  std::optional<Stage2> stage2;
  std::filesystem::path checkpoint;
};

// Writes stage1.ckpt and/or model.ckpt plus metrics CSVs into out_dir.
// Stage::policy reads out_dir/stage1.ckpt and throws DependencyError when it
// is missing.
TrainingResult run_training(const RunConfig& config, const TrajectorySet& raw, Stage stage,
                            const std::filesystem::path& out_dir);

// ---------------------------------------------------------------- inference

// Algorithm-2 dispatcher. Every vehicle feeds one token per tick so the
// online context matches the training windows; only empty vehicles get
// their action applied. Contexts restart every `leng` tokens.
class PolicyDispatcher : public sim::Dispatcher {
 public:
  explicit PolicyDispatcher(Model& model);
  std::map<std::size_t, Action> decide(const sim::World& world) override;

 private:
  struct Track {
    policy::OnlineContext context;
    behavior::BehaviorTracker tracker;
  };
  Model& model_;
  policy::PolicyConfig policy_;
  policy::StepEncoder encoder_;
  std::vector<Track> tracks_;
};

struct InferenceResult {
  sim::Metrics metrics;
  std::vector<sim::TickRow> ticks;
};

// Runs the model on the world with a seeded ground-truth driver as the
// Error reference.
InferenceResult run_inference(Model& model, sim::World& world, std::uint64_t reference_seed);

// Untrained control: the same pipeline with zero training epochs.
Model random_model(const Corpus& corpus, const RunConfig& config);

// ---------------------------------------------------------------- sweeps

struct AlphaRow {
  double alpha = 0.0;
  double val_error_km = 0.0;
  double test_error_km = 0.0;
};
std::vector<double> default_alphas();
std::vector<AlphaRow> alpha_sweep(const EpisodeSet& episodes, const ad::ParameterSet& stage1, const RunConfig& config,
                                  std::span<const double> alphas);

struct AblationRow {
  std::string views;
  std::size_t rep = 0;
  std::uint64_t seed = 0;
  double test_error_km = 0.0;
};
// Single views and all three on paired seeds config.seed + rep.
std::vector<AblationRow> view_ablation(const TrajectorySet& raw, const RunConfig& config);

// One-sided P(X >= wins) for X ~ Binomial(n, 1/2).
double sign_test_p(std::size_t wins, std::size_t n);

// ---------------------------------------------------------------- outputs

void write_epoch_log(const std::filesystem::path& path, std::span<const EpochRow> rows);
void write_tick_log(const std::filesystem::path& path, std::span<const sim::TickRow> rows);

// manifest.json with command, version tag, config hash and text, seeds and
// the files produced.
void write_manifest(const std::filesystem::path& dir, const std::string& command, const RunConfig& config,
                    const std::map<std::string, std::uint64_t>& seeds, const std::vector<std::string>& outputs);

}  // namespace hexfleet::pipeline
