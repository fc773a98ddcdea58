#include "hexfleet/policy.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <fmt/format.h>

#include "hexfleet/behavior.hpp"
#include "hexfleet/errors.hpp"

namespace hexfleet::policy {
namespace {

ad::Tensor random_matrix(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0 / std::sqrt(static_cast<double>(rows)));
  ad::Tensor t = ad::Tensor::matrix(rows, cols);
  for (auto& v : t.values()) v = n(rng);
  return t;
}

std::string layer_name(const char* stack, std::size_t l, const char* w) {
  return fmt::format("policy.{}.l{}.{}", stack, l, w);
}

LayerWeights layer_weights(ad::Graph& g, ad::ParameterSet& params, const char* stack, std::size_t l) {
  return {g.param(params.at(layer_name(stack, l, "Wx"))), g.param(params.at(layer_name(stack, l, "Wy"))),
          g.param(params.at(layer_name(stack, l, "Wz")))};
}

ad::Var project(ad::Graph& g, ad::ParameterSet& params, const std::string& name, ad::Var input) {
  return ad::matmul(input, g.param(params.at(name + ".W"))) + g.param(params.at(name + ".b"));
}

}  // namespace

ContextMode parse_context_mode(const std::string& s) {
  if (s == "sequence") return ContextMode::sequence;
  if (s == "step") return ContextMode::step;
  throw ConfigError(fmt::format("unknown context mode '{}'", s));
}

GeoLossMode parse_geo_loss_mode(const std::string& s) {
  if (s == "symmetric") return GeoLossMode::symmetric;
  if (s == "literal") return GeoLossMode::literal;
  throw ConfigError(fmt::format("unknown geo loss mode '{}'", s));
}

void PolicyConfig::validate() const {
  if (d_model == 0) throw ConfigError("d_model must be positive");
  if (layers == 0) throw ConfigError("decoder needs at least one layer");
  if (state_dim == 0) throw ConfigError("state_dim must be positive");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError(fmt::format("dropout {} outside [0, 1)", dropout));
  if (!(angle_weight >= 0.0)) throw ConfigError("angle_weight must be non-negative");
  if (!(r_max_km > 0.0)) throw ConfigError("r_max_km must be positive");
}

void init_policy_params(ad::ParameterSet& params, const PolicyConfig& config, std::mt19937_64& rng) {
  config.validate();
  std::size_t d = config.d_model;
  auto add_proj = [&](const std::string& name, std::size_t in) {
    params.add(name + ".W", random_matrix(in, d, rng));
    params.add(name + ".b", ad::Tensor::matrix(1, d));
  };
  add_proj("policy.in_action", d);
  add_proj("policy.in_reward", 1);
  add_proj("policy.in_state", config.state_dim);
  for (const char* stack : {"reward", "state"}) {
    for (std::size_t l = 0; l < config.layers; ++l) {
      for (const char* w : {"Wx", "Wy", "Wz"}) params.add(layer_name(stack, l, w), random_matrix(d, d, rng));
    }
  }
  params.add("policy.head.W1", random_matrix(d, d, rng));
  params.add("policy.head.b1", ad::Tensor::matrix(1, d));
  params.add("policy.head.W2", random_matrix(d, 2, rng));
  params.add("policy.head.b2", ad::Tensor::matrix(1, 2));
}

ad::Tensor positional_embedding(std::size_t t, std::size_t d) {
  if (t < 1) throw std::invalid_argument("positional embedding index starts at 1");
  ad::Tensor out = ad::Tensor::matrix(1, d);
  for (std::size_t i = 0; i < d; ++i) {
    double freq = std::pow(10000.0, -static_cast<double>(i - i % 2) / static_cast<double>(d));
    double angle = static_cast<double>(t) * freq;
    out[i] = (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
  }
  return out;
}

ad::Var attention(ad::Var x, ad::Var y, ad::Var z, ad::Var wx, ad::Var wy, ad::Var wz, bool causal) {
  if (y.rows() != z.rows()) {
    throw ShapeError(fmt::format("attention keys {} and values {} differ in token count", y.value().shape_string(),
                                 z.value().shape_string()));
  }
  auto q = ad::gelu(ad::matmul(x, wx));
  auto k = ad::gelu(ad::matmul(y, wy));
  auto v = ad::gelu(ad::matmul(z, wz));
  auto logits = ad::scale(ad::matmul(q, ad::transpose(k)), 1.0 / std::sqrt(static_cast<double>(wy.cols())));
  if (causal) {
    ad::Tensor mask = ad::Tensor::matrix(logits.rows(), logits.cols());
    for (std::size_t i = 0; i < mask.rows(); ++i) {
      for (std::size_t j = i + 1; j < mask.cols(); ++j) mask(i, j) = -1e30;
    }
    logits = logits + x.graph()->constant(std::move(mask));
  }
  return ad::matmul(ad::softmax_rows(logits), v);
}

ad::Var decoder_layer(ad::Var x, ad::Var y, std::size_t t, const LayerWeights& w, TokenCache& cache,
                      bool keep_history) {
  if (t < 1) throw std::invalid_argument("decoder step index starts at 1");
  if (x.rows() != 1 || y.rows() != 1 || x.cols() != y.cols()) {
    throw ShapeError(fmt::format("decoder tokens {} and {} must be single rows of equal width",
                                 x.value().shape_string(), y.value().shape_string()));
  }
  auto* g = x.graph();
  auto pos = g->constant(positional_embedding(t, x.cols()));
  auto xp = x + pos;
  auto yp = y + pos;
  auto q = ad::gelu(ad::matmul(xp, w.wx));
  auto k = ad::gelu(ad::matmul(xp, w.wy));
  auto v = ad::gelu(ad::matmul(yp, w.wz));
  if (!keep_history) {
    cache.keys.clear();
    cache.values.clear();
  }
  cache.keys.push_back(k);
  cache.values.push_back(v);
  return ad::attend(q, cache.keys, cache.values, 1.0 / std::sqrt(static_cast<double>(w.wy.cols())));
}

EpisodeContext::EpisodeContext(const PolicyConfig& config) : reward_(config.layers), state_(config.layers) {}

void EpisodeContext::reset() {
  for (auto& c : reward_) c = {};
  for (auto& c : state_) c = {};
  previous_ = {};
  steps_ = 0;
}

void EpisodeContext::advance(ad::Var p_action) {
  previous_ = p_action;
  ++steps_;
}

ad::Var policy_step(ad::Graph& g, ad::ParameterSet& params, const PolicyConfig& config, ad::Var reward, ad::Var state,
                    std::size_t t, EpisodeContext& ctx, std::mt19937_64& rng) {
  if (t != ctx.steps() + 1) {
    throw StateError(fmt::format("policy step {} does not follow context at step {}", t, ctx.steps()));
  }
  if (ctx.reward_caches().size() != config.layers || ctx.state_caches().size() != config.layers) {
    throw StateError("episode context was built for a different decoder depth");
  }
  if (t > kMaxSequenceLength) throw StateError(fmt::format("episode exceeds {} steps", kMaxSequenceLength));
  if (reward.rows() != 1 || reward.cols() != 1) throw ShapeError("reward must be 1x1");
  if (state.rows() != 1 || state.cols() != config.state_dim) {
    throw ShapeError(fmt::format("state {} does not match state_dim {}", state.value().shape_string(),
                                 config.state_dim));
  }
  bool keep = config.context == ContextMode::sequence;
  ad::Var prev = ctx.previous().valid() && ctx.previous().graph() == &g
                     ? ctx.previous()
                     : g.constant(ctx.previous().valid() ? ctx.previous().value()
                                                         : ad::Tensor::matrix(1, config.d_model));

  ad::Var x = project(g, params, "policy.in_action", prev);
  ad::Var y = project(g, params, "policy.in_reward", reward);
  for (std::size_t l = 0; l < config.layers; ++l) {
    x = decoder_layer(x, y, t, layer_weights(g, params, "reward", l), ctx.reward_caches()[l], keep);
    x = ad::dropout(x, config.dropout, rng);
  }
  y = project(g, params, "policy.in_state", state);
  for (std::size_t l = 0; l < config.layers; ++l) {
    x = decoder_layer(x, y, t, layer_weights(g, params, "state", l), ctx.state_caches()[l], keep);
    x = ad::dropout(x, config.dropout, rng);
  }
  ctx.advance(x);
  return x;
}

ActionVars action_head(ad::Graph& g, ad::ParameterSet& params, ad::Var p_action) {
  auto h = ad::gelu(ad::matmul(p_action, g.param(params.at("policy.head.W1"))) +
                    g.param(params.at("policy.head.b1")));
  auto o = ad::matmul(h, g.param(params.at("policy.head.W2"))) + g.param(params.at("policy.head.b2"));
  return {ad::sigmoid(ad::slice_cols(o, 0, 1)), ad::scale(ad::sigmoid(ad::slice_cols(o, 1, 2)), 360.0)};
}

Action to_action(const ActionVars& vars) {
  double deg = std::fmod(vars.deg.item(), 360.0);
  if (deg < 0.0) deg += 360.0;
  return Action(std::clamp(vars.dis_norm.item(), 0.0, 1.0), deg);
}

namespace {

double best_shift(double delta, GeoLossMode mode) {
  double best = 0.0;
  double best_sq = delta * delta;
  std::array<double, 2> shifts{360.0, -360.0};
  std::size_t n = mode == GeoLossMode::symmetric ? 2 : 1;
  for (std::size_t i = 0; i < n; ++i) {
    double d = delta + shifts[i];
    if (d * d < best_sq) {
      best_sq = d * d;
      best = shifts[i];
    }
  }
  return best;
}

}  // namespace

double geo_loss(const Action& pred, const Action& truth, GeoLossMode mode, double angle_weight) {
  double delta = pred.deg - truth.deg;
  double a = delta + best_shift(delta, mode);
  double dd = pred.dis_norm - truth.dis_norm;
  return angle_weight * a * a + dd * dd;
}

ad::Var geo_loss(const ActionVars& pred, const Action& truth, GeoLossMode mode, double angle_weight) {
  double delta = pred.deg.item() - truth.deg;
  auto angle = ad::square(ad::add_scalar(pred.deg, -truth.deg + best_shift(delta, mode)));
  auto dist = ad::square(ad::add_scalar(pred.dis_norm, -truth.dis_norm));
  return ad::scale(angle, angle_weight) + dist;
}

StepEncoder direct_encoder() {
  return [](ad::Graph& g, ad::ParameterSet&, const PolicyStep& step, std::mt19937_64&) {
    if (step.state.empty()) throw std::invalid_argument("direct encoder needs an explicit state vector");
    return EncodedStep{g.constant(ad::Tensor::row(step.state)), g.constant(ad::Tensor::scalar(step.reward))};
  };
}

StepEncoder model_encoder(double alpha, const represent::ViewMask& mask, double gcn_dropout) {
  behavior::check_alpha(alpha);
  return [alpha, mask, gcn_dropout](ad::Graph& g, ad::ParameterSet& params, const PolicyStep& step,
                                    std::mt19937_64& rng) {
    auto emb_g = represent::multiview_embed_from_aggregates(g, params, step.view_aggregates, mask);
    emb_g = ad::dropout(emb_g, gcn_dropout, rng);
    auto state = represent::state_embed(emb_g, g.constant(ad::Tensor::row(step.location)));
    auto reward = behavior::dynamic_reward(g.constant(ad::Tensor::scalar(step.behavior_prob)),
                                           g.constant(ad::Tensor::scalar(step.fare_suffix)),
                                           g.param(params.at(behavior::kFareWeightName)), alpha);
    return EncodedStep{state, reward};
  };
}

namespace {

// Unrolls one episode on g; returns the mean GeoLoss and per-step predictions.
ad::Var unroll(ad::Graph& g, const Episode& episode, ad::ParameterSet& params, const PolicyConfig& config,
               const StepEncoder& encoder, std::mt19937_64& rng, std::vector<Action>* predictions) {
  EpisodeContext ctx(config);
  std::vector<ad::Var> losses;
  losses.reserve(episode.size());
  for (std::size_t i = 0; i < episode.size(); ++i) {
    auto enc = encoder(g, params, episode[i], rng);
    auto p = policy_step(g, params, config, enc.reward, enc.state, i + 1, ctx, rng);
    auto head = action_head(g, params, p);
    losses.push_back(geo_loss(head, episode[i].action, config.loss_mode, config.angle_weight));
    if (predictions) predictions->push_back(to_action(head));
  }
  return ad::mean(ad::concat_rows(losses));
}

void check_episodes(std::span<const Episode> episodes) {
  for (const auto& e : episodes) {
    if (e.empty()) throw ConfigError("policy episodes must not be empty");
    if (e.size() > kMaxSequenceLength) {
      throw ConfigError(fmt::format("episode of {} steps exceeds {}", e.size(), kMaxSequenceLength));
    }
  }
}

}  // namespace

EvalStats evaluate_policy(std::span<const Episode> episodes, ad::ParameterSet& params, const PolicyConfig& config,
                          const StepEncoder& encoder) {
  check_episodes(episodes);
  EvalStats stats;
  std::mt19937_64 rng(0);
  for (const auto& e : episodes) {
    ad::Graph g(false);
    std::vector<Action> preds;
    auto loss = unroll(g, e, params, config, encoder, rng, &preds);
    stats.mean_loss += loss.item() * static_cast<double>(e.size());
    for (std::size_t i = 0; i < e.size(); ++i) {
      stats.mean_error_km += action_error_km(preds[i], e[i].action, e[i].origin, config.r_max_km);
    }
    stats.steps += e.size();
  }
  if (stats.steps > 0) {
    stats.mean_loss /= static_cast<double>(stats.steps);
    stats.mean_error_km /= static_cast<double>(stats.steps);
  }
  return stats;
}

std::vector<Action> replay_actions(const Episode& episode, ad::ParameterSet& params, const PolicyConfig& config,
                                   const StepEncoder& encoder) {
  std::mt19937_64 rng(0);
  ad::Graph g(false);
  std::vector<Action> preds;
  unroll(g, episode, params, config, encoder, rng, &preds);
  return preds;
}

TrainReport train_policy(std::span<const Episode> train, std::span<const Episode> validation, ad::ParameterSet& params,
                         const PolicyConfig& config, const TrainOptions& options) {
  config.validate();
  if (train.empty()) throw ConfigError("policy training set is empty");
  if (options.batch_episodes == 0) throw ConfigError("batch_episodes must be positive");
  check_episodes(train);
  check_episodes(validation);

  std::mt19937_64 rng(options.seed);
  ad::Adam adam(options.adam);
  TrainReport report;
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 0; epoch < options.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    for (std::size_t begin = 0; begin < order.size(); begin += options.batch_episodes) {
      std::size_t end = std::min(order.size(), begin + options.batch_episodes);
      params.zero_grad();
      for (std::size_t k = begin; k < end; ++k) {
        ad::Graph g(true);
        auto loss = unroll(g, train[order[k]], params, config, options.encoder, rng, nullptr);
        total += loss.item();
        g.backward(ad::scale(loss, 1.0 / static_cast<double>(end - begin)));
      }
      adam.step(params, options.trainable);
    }
    report.train_loss.push_back(total / static_cast<double>(train.size()));
    EvalStats val;
    if (!validation.empty()) val = evaluate_policy(validation, params, config, options.encoder);
    report.validation.push_back(val);
    if (options.on_epoch) options.on_epoch(epoch, report.train_loss.back(), val);
  }
  return report;
}

OnlineContext::OnlineContext(const PolicyConfig& config) : reward_(config.layers), state_(config.layers) {}

void OnlineContext::reset() {
  for (auto& c : reward_) c = {};
  for (auto& c : state_) c = {};
  previous_ = {};
  steps_ = 0;
}

Action OnlineContext::predict(ad::ParameterSet& params, const PolicyConfig& config, const PolicyStep& step,
                              const StepEncoder& encoder) {
  if (steps_ >= kMaxSequenceLength) throw StateError("online context is full; reset it");
  ad::Graph g(false);
  EpisodeContext ctx(config);
  auto load = [&](const std::vector<Cache>& from, std::vector<TokenCache>& to) {
    for (std::size_t l = 0; l < from.size(); ++l) {
      for (std::size_t i = 0; i < from[l].keys.size(); ++i) {
        to[l].keys.push_back(g.constant(from[l].keys[i]));
        to[l].values.push_back(g.constant(from[l].values[i]));
      }
    }
  };
  load(reward_, ctx.reward_caches());
  load(state_, ctx.state_caches());
  for (std::size_t i = 0; i < steps_; ++i) {
    ctx.advance(i + 1 == steps_ ? g.constant(previous_) : ad::Var{});
  }
  std::mt19937_64 rng(0);
  auto enc = encoder(g, params, step, rng);
  auto p = policy_step(g, params, config, enc.reward, enc.state, steps_ + 1, ctx, rng);
  auto head = action_head(g, params, p);

  auto store = [](const std::vector<TokenCache>& from, std::vector<Cache>& to) {
    for (std::size_t l = 0; l < from.size(); ++l) {
      to[l].keys.clear();
      to[l].values.clear();
      for (std::size_t i = 0; i < from[l].keys.size(); ++i) {
        to[l].keys.push_back(from[l].keys[i].value());
        to[l].values.push_back(from[l].values[i].value());
      }
    }
  };
  store(ctx.reward_caches(), reward_);
  store(ctx.state_caches(), state_);
  previous_ = p.value();
  ++steps_;
  return to_action(head);
}

}  // namespace hexfleet::policy
