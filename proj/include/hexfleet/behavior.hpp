#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "hexfleet/autodiff.hpp"
#include "hexfleet/geo.hpp"
#include "hexfleet/optim.hpp"

namespace hexfleet::behavior {

inline constexpr double kDefaultAlpha = 0.65;
inline constexpr double kProbClamp = 1e-7;

// GRU weights live under "gru.*"; the recurrent state has the width of the
// location embedding because h_0 is that embedding.
void init_gru_params(ad::ParameterSet& params, std::size_t dim, std::mt19937_64& rng);
std::size_t gru_dim(const ad::ParameterSet& params);

struct GruOutput {
  ad::Var state;  // gated vector p_t, 1 x dim, entries in (-1, 1)
  ad::Var prob;   // sigmoid read-out of state, 1 x 1
};

// One recurrence step. The previous gated vector doubles as h_{t-1}.
GruOutput gru_step(ad::Graph& g, ad::ParameterSet& params, ad::Var emb_loc, ad::Var prev);

// Runs the recurrence from h_0 = initial over the given location
// embeddings, returning p_t for t = 1..T.
std::vector<ad::Var> behavior_trace(ad::Graph& g, ad::ParameterSet& params, const std::vector<double>& initial,
                                    std::span<const std::vector<double>> embeddings);

// Value-only trace over a point sequence: points[0] seeds h_0, the rest are
// the steps. Returns T = points.size() - 1 probabilities.
std::vector<double> trace_probabilities(ad::ParameterSet& params, std::span<const geo::GeoPoint> points,
                                        int precision);

// Value-only recurrence over a live point stream. start() seeds h_0 with
// the embedding of the first point and returns the read-out of h_0; next()
// advances one point and returns its p.
class BehaviorTracker {
 public:
  explicit BehaviorTracker(int precision = geo::kDefaultGeohashPrecision) : precision_(precision) {}
  double start(ad::ParameterSet& params, const geo::GeoPoint& p);
  double next(ad::ParameterSet& params, const geo::GeoPoint& p);
  bool started() const { return state_.size() > 0; }
  void reset() { state_ = {}; }

 private:
  int precision_;
  ad::Tensor state_;
};

enum class LossMode { bce, literal };
LossMode parse_loss_mode(const std::string& s);

// Mean over steps of the (clamped) cross-entropy against label q; literal
// mode keeps only the -q log p term.
ad::Var sequence_loss(std::span<const ad::Var> probs, double q, LossMode mode = LossMode::bce);

struct DriverSegment {
  std::int64_t driver = 0;
  std::vector<geo::GeoPoint> points;  // at least 2
};

struct PretrainOptions {
  int epochs = 20;
  std::size_t batch_size = 16;
  int precision = geo::kDefaultGeohashPrecision;
  LossMode loss = LossMode::bce;
  ad::AdamConfig adam{};
  std::uint64_t seed = 0;
  bool shuffle_labels = false;  // no-signal control
};

struct PretrainReport {
  std::vector<double> epoch_loss;
};

// Contrastive pretraining: each segment is a positive for its own driver and
// is paired with one negative, a segment of a different driver replayed from
// the same anchor point. Throws ConfigError with fewer than two drivers.
PretrainReport pretrain_behavior(std::span<const DriverSegment> segments, ad::ParameterSet& params,
                                 const PretrainOptions& options);

// Mean p over the steps of `candidate` replayed from anchor's first point.
double segment_score(ad::ParameterSet& params, const geo::GeoPoint& anchor, std::span<const geo::GeoPoint> candidate,
                     int precision);

// Synthetic check corpus: drivers 0 and 1 random-walk in two disjoint
// 2.5 km discs; per_driver segments of len points each.
std::vector<DriverSegment> two_driver_corpus(std::size_t per_driver, std::size_t len, std::uint64_t seed);

// AUC of segment_score for own-driver segments against another driver's
// segment replayed from the same anchor (one negative per segment).
double held_out_auc(ad::ParameterSet& params, std::span<const DriverSegment> test, std::uint64_t seed,
                    int precision = 8);

// Area under the ROC curve (Mann-Whitney, ties count one half).
double roc_auc(std::span<const double> scores, std::span<const int> labels);

// x_hat[t] = sum of fares[t..T].
std::vector<double> fare_suffix_sum(std::span<const double> fares);

// r = alpha p + (1 - alpha) sigmoid(w_fare x_hat).
double dynamic_reward(double p, double fare_suffix, double w_fare, double alpha = kDefaultAlpha);
ad::Var dynamic_reward(ad::Var p, ad::Var fare_suffix, ad::Var w_fare, double alpha = kDefaultAlpha);
void check_alpha(double alpha);

inline const std::string kFareWeightName = "fare.w";

}  // namespace hexfleet::behavior
