#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "hexfleet/action.hpp"
#include "hexfleet/autodiff.hpp"
#include "hexfleet/optim.hpp"
#include "hexfleet/represent.hpp"

namespace hexfleet::policy {

inline constexpr std::size_t kMaxSequenceLength = 1024;

// sequence: each block attends over the episode's cached tokens.
// step: only the current token is visible.
enum class ContextMode { sequence, step };
enum class GeoLossMode { symmetric, literal };

ContextMode parse_context_mode(const std::string& s);
GeoLossMode parse_geo_loss_mode(const std::string& s);

struct PolicyConfig {
  std::size_t d_model = 64;
  std::size_t layers = 2;
  std::size_t state_dim = 0;
  double dropout = 0.5;
  ContextMode context = ContextMode::sequence;
  GeoLossMode loss_mode = GeoLossMode::symmetric;
  double angle_weight = 1.0;
  double r_max_km = 5.0;

  void validate() const;
};

// Parameters live under "policy.*".
void init_policy_params(ad::ParameterSet& params, const PolicyConfig& config, std::mt19937_64& rng);

// Sinusoidal table row for step t >= 1; entries in [-1, 1].
ad::Tensor positional_embedding(std::size_t t, std::size_t d);

// softmax(gelu(x Wx) gelu(y Wy)^T / sqrt(d)) gelu(z Wz) over token rows.
// With causal set, query i only sees key rows 0..i.
ad::Var attention(ad::Var x, ad::Var y, ad::Var z, ad::Var wx, ad::Var wy, ad::Var wz, bool causal = false);

struct TokenCache {
  std::vector<ad::Var> keys;
  std::vector<ad::Var> values;
};

struct LayerWeights {
  ad::Var wx, wy, wz;
};

// One decoder layer for the current token at step t. The projected key and
// value are appended to the cache; with keep_history false the cache holds
// only the current token afterwards.
ad::Var decoder_layer(ad::Var x, ad::Var y, std::size_t t, const LayerWeights& w, TokenCache& cache,
                      bool keep_history = true);

// Per-episode decoder state: token caches for both stacks and P_{a_{t-1}}.
class EpisodeContext {
 public:
  explicit EpisodeContext(const PolicyConfig& config);

  std::size_t steps() const { return steps_; }
  void reset();

  std::vector<TokenCache>& reward_caches() { return reward_; }
  std::vector<TokenCache>& state_caches() { return state_; }
  const std::vector<TokenCache>& reward_caches() const { return reward_; }
  const std::vector<TokenCache>& state_caches() const { return state_; }
  ad::Var previous() const { return previous_; }
  void advance(ad::Var p_action);

 private:
  std::vector<TokenCache> reward_;
  std::vector<TokenCache> state_;
  ad::Var previous_;
  std::size_t steps_ = 0;
};

// P_{a_t} (1 x d_model) for step t, which must equal ctx.steps() + 1.
ad::Var policy_step(ad::Graph& g, ad::ParameterSet& params, const PolicyConfig& config, ad::Var reward, ad::Var state,
                    std::size_t t, EpisodeContext& ctx, std::mt19937_64& rng);

struct ActionVars {
  ad::Var dis_norm;  // 1x1 in [0, 1]
  ad::Var deg;       // 1x1 in [0, 360], unwrapped
};

ActionVars action_head(ad::Graph& g, ad::ParameterSet& params, ad::Var p_action);
Action to_action(const ActionVars& vars);

double geo_loss(const Action& pred, const Action& truth, GeoLossMode mode = GeoLossMode::symmetric,
                double angle_weight = 1.0);
ad::Var geo_loss(const ActionVars& pred, const Action& truth, GeoLossMode mode = GeoLossMode::symmetric,
                 double angle_weight = 1.0);

// One decision of an episode. Either `state`/`reward` are given directly,
// or they are derived from the view aggregates, location bits, behavior
// probability and fare suffix by the model encoder.
struct PolicyStep {
  std::vector<double> state;
  double reward = 0.0;
  std::array<std::vector<double>, 3> view_aggregates;
  std::vector<double> location;
  double behavior_prob = 0.5;
  double fare_suffix = 0.0;
  Action action;
  geo::GeoPoint origin;
};
using Episode = std::vector<PolicyStep>;

struct EncodedStep {
  ad::Var state;
  ad::Var reward;
};
using StepEncoder = std::function<EncodedStep(ad::Graph&, ad::ParameterSet&, const PolicyStep&, std::mt19937_64&)>;

StepEncoder direct_encoder();
// s_t = Concat(Emb_G, Emb_loc) with trainable GCN weights; r_t from the
// behavior probability and fare suffix through the "fare.w" weight.
StepEncoder model_encoder(double alpha, const represent::ViewMask& mask = represent::kAllViews,
                          double gcn_dropout = 0.0);

struct EvalStats {
  double mean_loss = 0.0;
  double mean_error_km = 0.0;
  std::size_t steps = 0;
};

struct TrainOptions {
  int epochs = 10;
  std::size_t batch_episodes = 8;
  ad::AdamConfig adam{};
  std::uint64_t seed = 0;
  std::vector<std::string> trainable{"policy."};
  StepEncoder encoder = direct_encoder();
  // Called after each epoch with (epoch, train loss, validation stats).
  std::function<void(int, double, const EvalStats&)> on_epoch;
};

struct TrainReport {
  std::vector<double> train_loss;
  std::vector<EvalStats> validation;
};

// Teacher-forced unrolling of each episode, mean per-step GeoLoss,
// Adam updates every batch_episodes episodes. Throws ConfigError on an
// empty training set.
TrainReport train_policy(std::span<const Episode> train, std::span<const Episode> validation, ad::ParameterSet& params,
                         const PolicyConfig& config, const TrainOptions& options);

EvalStats evaluate_policy(std::span<const Episode> episodes, ad::ParameterSet& params, const PolicyConfig& config,
                          const StepEncoder& encoder = direct_encoder());

// Predicted actions for an episode replayed from a fresh context.
std::vector<Action> replay_actions(const Episode& episode, ad::ParameterSet& params, const PolicyConfig& config,
                                   const StepEncoder& encoder = direct_encoder());

// Long-running inference context that keeps cached tokens as plain tensors,
// so each decision runs on a small fresh tape.
class OnlineContext {
 public:
  explicit OnlineContext(const PolicyConfig& config);
  std::size_t steps() const { return steps_; }
  void reset();

  Action predict(ad::ParameterSet& params, const PolicyConfig& config, const PolicyStep& step,
                 const StepEncoder& encoder);

 private:
  struct Cache {
    std::vector<ad::Tensor> keys;
    std::vector<ad::Tensor> values;
  };
  std::vector<Cache> reward_;
  std::vector<Cache> state_;
  ad::Tensor previous_;
  std::size_t steps_ = 0;
};

}  // namespace hexfleet::policy
