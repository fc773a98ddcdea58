#include "hexfleet/behavior.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>

#include <fmt/format.h>

#include "hexfleet/errors.hpp"

namespace hexfleet::behavior {
namespace {

ad::Tensor random_matrix(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0 / std::sqrt(static_cast<double>(rows)));
  ad::Tensor t = ad::Tensor::matrix(rows, cols);
  for (auto& v : t.values()) v = n(rng);
  return t;
}

std::vector<std::vector<double>> embed_all(std::span<const geo::GeoPoint> points, int precision) {
  std::vector<std::vector<double>> out;
  out.reserve(points.size());
  for (const auto& p : points) out.push_back(geo::location_embedding(p, precision));
  return out;
}

}  // namespace

void init_gru_params(ad::ParameterSet& params, std::size_t dim, std::mt19937_64& rng) {
  if (dim == 0) throw std::invalid_argument("GRU width must be positive");
  for (const char* name : {"gru.W_zx", "gru.W_zp", "gru.W_yx", "gru.W_yp", "gru.W_x", "gru.W_p"}) {
    params.add(name, random_matrix(dim, dim, rng));
  }
  for (const char* name : {"gru.b_z", "gru.b_y", "gru.b"}) params.add(name, ad::Tensor::matrix(1, dim));
  params.add("gru.w_out", random_matrix(dim, 1, rng));
  params.add("gru.b_out", ad::Tensor::matrix(1, 1));
}

std::size_t gru_dim(const ad::ParameterSet& params) { return params.at("gru.W_zx").value.rows(); }

GruOutput gru_step(ad::Graph& g, ad::ParameterSet& params, ad::Var emb_loc, ad::Var prev) {
  auto p = [&](const char* name) { return g.param(params.at(name)); };
  std::size_t dim = gru_dim(params);
  if (emb_loc.rows() != 1 || emb_loc.cols() != dim || prev.rows() != 1 || prev.cols() != dim) {
    throw ShapeError(fmt::format("gru_step expects 1x{} inputs, got {} and {}", dim, emb_loc.value().shape_string(),
                                 prev.value().shape_string()));
  }
  auto z = ad::sigmoid(ad::matmul(emb_loc, p("gru.W_zx")) + ad::matmul(prev, p("gru.W_zp")) + p("gru.b_z"));
  auto y = ad::sigmoid(ad::matmul(emb_loc, p("gru.W_yx")) + ad::matmul(prev, p("gru.W_yp")) + p("gru.b_y"));
  auto cand = ad::tanh(ad::matmul(emb_loc, p("gru.W_x")) + y * ad::matmul(prev, p("gru.W_p")) + p("gru.b"));
  auto one_minus_z = ad::add_scalar(ad::scale(z, -1.0), 1.0);
  auto state = z * prev + one_minus_z * cand;
  auto prob = ad::sigmoid(ad::matmul(state, p("gru.w_out")) + p("gru.b_out"));
  return {state, prob};
}

std::vector<ad::Var> behavior_trace(ad::Graph& g, ad::ParameterSet& params, const std::vector<double>& initial,
                                    std::span<const std::vector<double>> embeddings) {
  std::vector<ad::Var> probs;
  probs.reserve(embeddings.size());
  ad::Var state = g.constant(ad::Tensor::row(initial));
  for (const auto& e : embeddings) {
    auto out = gru_step(g, params, g.constant(ad::Tensor::row(e)), state);
    state = out.state;
    probs.push_back(out.prob);
  }
  return probs;
}

std::vector<double> trace_probabilities(ad::ParameterSet& params, std::span<const geo::GeoPoint> points,
                                        int precision) {
  if (points.empty()) return {};
  auto embs = embed_all(points, precision);
  ad::Graph g;
  auto vars = behavior_trace(g, params, embs.front(), std::span(embs).subspan(1));
  std::vector<double> out;
  out.reserve(vars.size());
  for (auto v : vars) out.push_back(v.item());
  return out;
}

double BehaviorTracker::start(ad::ParameterSet& params, const geo::GeoPoint& p) {
  state_ = ad::Tensor::row(geo::location_embedding(p, precision_));
  ad::Graph g;
  auto prob = ad::sigmoid(ad::matmul(g.constant(state_), g.param(params.at("gru.w_out"))) +
                          g.param(params.at("gru.b_out")));
  return prob.item();
}

double BehaviorTracker::next(ad::ParameterSet& params, const geo::GeoPoint& p) {
  if (!started()) throw StateError("behavior tracker advanced before start");
  ad::Graph g;
  auto out = gru_step(g, params, g.constant(ad::Tensor::row(geo::location_embedding(p, precision_))),
                      g.constant(state_));
  state_ = out.state.value();
  return out.prob.item();
}

LossMode parse_loss_mode(const std::string& s) {
  if (s == "bce") return LossMode::bce;
  if (s == "literal") return LossMode::literal;
  throw ConfigError(fmt::format("unknown behavior loss mode '{}'", s));
}

ad::Var sequence_loss(std::span<const ad::Var> probs, double q, LossMode mode) {
  if (probs.empty()) throw std::invalid_argument("sequence_loss needs at least one step");
  auto stacked = ad::concat_rows(probs);
  auto p = ad::clamp(stacked, kProbClamp, 1.0 - kProbClamp);
  auto loss = ad::scale(ad::log(p), -q);
  if (mode == LossMode::bce && q != 1.0) {
    auto not_p = ad::add_scalar(ad::scale(p, -1.0), 1.0);
    loss = loss + ad::scale(ad::log(not_p), -(1.0 - q));
  }
  return ad::mean(loss);
}

PretrainReport pretrain_behavior(std::span<const DriverSegment> segments, ad::ParameterSet& params,
                                 const PretrainOptions& options) {
  std::map<std::int64_t, std::vector<std::size_t>> by_driver;
  for (std::size_t i = 0; i < segments.size(); ++i) {
    if (segments[i].points.size() < 2) throw std::invalid_argument("behavior segments need at least two points");
    by_driver[segments[i].driver].push_back(i);
  }
  if (by_driver.size() < 2) throw ConfigError("behavior pretraining needs at least two drivers for negatives");
  if (options.batch_size == 0) throw ConfigError("batch_size must be positive");

  std::vector<std::vector<std::vector<double>>> embs;
  embs.reserve(segments.size());
  for (const auto& s : segments) embs.push_back(embed_all(s.points, options.precision));

  std::mt19937_64 rng(options.seed);
  ad::Adam adam(options.adam);
  PretrainReport report;

  struct Sample {
    std::size_t anchor;
    std::size_t source;
    double label;
  };
  for (int epoch = 0; epoch < options.epochs; ++epoch) {
    std::vector<Sample> samples;
    samples.reserve(2 * segments.size());
    for (std::size_t i = 0; i < segments.size(); ++i) {
      samples.push_back({i, i, 1.0});
      // Uniform over segments of the other drivers.
      std::size_t j;
      do {
        j = std::uniform_int_distribution<std::size_t>(0, segments.size() - 1)(rng);
      } while (segments[j].driver == segments[i].driver);
      samples.push_back({i, j, 0.0});
    }
    if (options.shuffle_labels) {
      std::vector<double> labels;
      for (const auto& s : samples) labels.push_back(s.label);
      std::shuffle(labels.begin(), labels.end(), rng);
      for (std::size_t k = 0; k < samples.size(); ++k) samples[k].label = labels[k];
    }
    std::shuffle(samples.begin(), samples.end(), rng);

    double total = 0.0;
    for (std::size_t begin = 0; begin < samples.size(); begin += options.batch_size) {
      std::size_t end = std::min(samples.size(), begin + options.batch_size);
      params.zero_grad();
      for (std::size_t k = begin; k < end; ++k) {
        const auto& s = samples[k];
        ad::Graph g(true);
        const auto& src = embs[s.source];
        auto probs = behavior_trace(g, params, embs[s.anchor].front(), std::span(src).subspan(1));
        auto loss = ad::scale(sequence_loss(probs, s.label, options.loss), 1.0 / static_cast<double>(end - begin));
        g.backward(loss);
        total += loss.item() * static_cast<double>(end - begin);
      }
      adam.step(params, "gru.");
    }
    report.epoch_loss.push_back(total / static_cast<double>(samples.size()));
  }
  return report;
}

double segment_score(ad::ParameterSet& params, const geo::GeoPoint& anchor, std::span<const geo::GeoPoint> candidate,
                     int precision) {
  if (candidate.size() < 2) throw std::invalid_argument("segment_score needs at least two points");
  auto embs = embed_all(candidate.subspan(1), precision);
  ad::Graph g;
  auto probs = behavior_trace(g, params, geo::location_embedding(anchor, precision), embs);
  double sum = 0.0;
  for (auto p : probs) sum += p.item();
  return sum / static_cast<double>(probs.size());
}

// Random walk of `n` points confined to a disc of radius_km around center.
namespace {

std::vector<geo::GeoPoint> confined_walk(const geo::GeoPoint& center, double radius_km, std::size_t n,
                                         std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<geo::GeoPoint> pts;
  auto p = geo::displace(center, radius_km * std::sqrt(u(rng)), 360.0 * u(rng));
  for (std::size_t i = 0; i < n; ++i) {
    pts.push_back(p);
    auto next = geo::displace(p, 0.2 + 0.4 * u(rng), 360.0 * u(rng));
    if (geo::haversine_km(next, center) > radius_km) next = geo::displace(center, 0.5 * radius_km * u(rng), 360.0 * u(rng));
    p = next;
  }
  return pts;
}

}  // namespace

std::vector<DriverSegment> two_driver_corpus(std::size_t per_driver, std::size_t len, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const geo::GeoPoint a(30.22, 120.10), b(30.30, 120.22);
  std::vector<DriverSegment> out;
  for (std::size_t i = 0; i < per_driver; ++i) {
    out.push_back({0, confined_walk(a, 2.5, len, rng)});
    out.push_back({1, confined_walk(b, 2.5, len, rng)});
  }
  return out;
}

double held_out_auc(ad::ParameterSet& params, std::span<const DriverSegment> test, std::uint64_t seed, int precision) {
  std::mt19937_64 rng(seed);
  std::vector<double> scores;
  std::vector<int> labels;
  for (std::size_t i = 0; i < test.size(); ++i) {
    const auto& seg = test[i];
    scores.push_back(segment_score(params, seg.points.front(), seg.points, precision));
    labels.push_back(1);
    std::size_t j;
    do {
      j = std::uniform_int_distribution<std::size_t>(0, test.size() - 1)(rng);
    } while (test[j].driver == seg.driver);
    scores.push_back(segment_score(params, seg.points.front(), test[j].points, precision));
    labels.push_back(0);
  }
  return roc_auc(scores, labels);
}

double roc_auc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw std::invalid_argument("scores and labels differ in length");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return scores[a] < scores[b]; });
  double pos = 0, neg = 0, rank_sum = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    double avg_rank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k) {
      if (labels[order[k]] != 0) {
        rank_sum += avg_rank;
        pos += 1;
      } else {
        neg += 1;
      }
    }
    i = j;
  }
  if (pos == 0 || neg == 0) throw MetricError("AUC needs both classes");
  return (rank_sum - pos * (pos + 1) / 2.0) / (pos * neg);
}

std::vector<double> fare_suffix_sum(std::span<const double> fares) {
  std::vector<double> out(fares.size());
  double acc = 0.0;
  for (std::size_t i = fares.size(); i-- > 0;) {
    acc += fares[i];
    out[i] = acc;
  }
  return out;
}

void check_alpha(double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw std::invalid_argument(fmt::format("alpha {} outside [0, 1]", alpha));
}

double dynamic_reward(double p, double fare_suffix, double w_fare, double alpha) {
  check_alpha(alpha);
  return alpha * p + (1.0 - alpha) * ad::sigmoid_value(w_fare * fare_suffix);
}

ad::Var dynamic_reward(ad::Var p, ad::Var fare_suffix, ad::Var w_fare, double alpha) {
  check_alpha(alpha);
  return ad::scale(p, alpha) + ad::scale(ad::sigmoid(ad::matmul(fare_suffix, w_fare)), 1.0 - alpha);
}

}  // namespace hexfleet::behavior
