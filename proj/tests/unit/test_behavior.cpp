#include <chrono>
#include <cmath>
#include <random>

#include "doctest.h"
#include "hexfleet/behavior.hpp"
#include "hexfleet/errors.hpp"
#include "hexfleet/gradcheck.hpp"

using namespace hexfleet;
using namespace hexfleet::behavior;
using ad::Tensor;

namespace {

double sig(double x) { return 1.0 / (1.0 + std::exp(-x)); }

void fill_all(ad::ParameterSet& params, double v) {
  for (auto& [name, p] : params) p.value.fill(v);
}

}  // namespace

TEST_CASE("gru_step with zero parameters halves the previous state") {
  std::mt19937_64 rng(1);
  ad::ParameterSet params;
  init_gru_params(params, 4, rng);
  fill_all(params, 0.0);
  ad::Graph g;
  auto prev = Tensor::row(std::vector<double>{0.4, -0.2, 0.9, 0.0});
  auto out = gru_step(g, params, g.constant(Tensor::row(std::vector<double>{1, 0, 1, 1})), g.constant(prev));
  for (std::size_t i = 0; i < 4; ++i) CHECK(out.state.value()[i] == doctest::Approx(0.5 * prev[i]).epsilon(1e-15));
  CHECK(out.prob.item() == 0.5);
}

TEST_CASE("gru_step scalar hand evaluation") {
  std::mt19937_64 rng(1);
  ad::ParameterSet params;
  init_gru_params(params, 1, rng);
  fill_all(params, 0.0);
  for (const char* n : {"gru.W_zx", "gru.W_zp", "gru.W_yx", "gru.W_yp", "gru.W_x", "gru.W_p", "gru.w_out"}) {
    params.at(n).value.fill(0.1);
  }
  ad::Graph g;
  auto out = gru_step(g, params, g.constant(Tensor::scalar(1.0)), g.constant(Tensor::scalar(1.0)));
  double z = sig(0.2), y = sig(0.2);
  double cand = std::tanh(0.1 + y * 0.1);
  double p = z * 1.0 + (1.0 - z) * cand;
  CHECK(std::abs(out.state.item() - p) < 1e-12);
  CHECK(std::abs(out.prob.item() - sig(0.1 * p)) < 1e-12);
}

TEST_CASE("gru_step ranges and shape errors") {
  std::mt19937_64 rng(4);
  ad::ParameterSet params;
  init_gru_params(params, 5, rng);
  for (auto& [name, p] : params) {
    for (auto& v : p.value.values()) v *= 10.0;
  }
  std::normal_distribution<double> n(0.0, 50.0);
  for (int trial = 0; trial < 200; ++trial) {
    ad::Graph g;
    Tensor e = Tensor::matrix(1, 5), h = Tensor::matrix(1, 5);
    for (auto& v : e.values()) v = n(rng);
    for (auto& v : h.values()) v = std::tanh(n(rng));
    auto out = gru_step(g, params, g.constant(e), g.constant(h));
    for (double v : out.state.value().values()) CHECK((v >= -1.0 && v <= 1.0));
    CHECK(out.prob.item() >= 0.0);
    CHECK(out.prob.item() <= 1.0);
  }
  ad::Graph g;
  CHECK_THROWS_AS(gru_step(g, params, g.constant(Tensor::matrix(1, 4)), g.constant(Tensor::matrix(1, 5))),
                  ShapeError);
}

TEST_CASE("gru_step gradients match finite differences") {
  std::mt19937_64 rng(8);
  ad::ParameterSet params;
  init_gru_params(params, 6, rng);
  for (auto& [name, p] : params) {
    std::uniform_real_distribution<double> u(-0.5, 0.5);
    for (auto& v : p.value.values()) v = u(rng);
  }
  std::vector<std::vector<double>> embs;
  std::uniform_int_distribution<int> bit(0, 1);
  for (int t = 0; t < 4; ++t) {
    std::vector<double> e(6);
    for (auto& v : e) v = bit(rng);
    embs.push_back(e);
  }
  std::vector<double> h0{1, 0, 1, 1, 0, 0};
  auto results = ad::check_gradients(params, [&](ad::Graph& g) {
    auto probs = behavior_trace(g, params, h0, embs);
    return sequence_loss(probs, 1.0) + sequence_loss(probs, 0.0);
  });
  for (const auto& r : results) {
    INFO(r.name);
    CHECK(r.relative_error <= 1e-4);
  }
}

TEST_CASE("sequence loss optimum and literal mode") {
  ad::Graph g;
  std::vector<ad::Var> near_one{g.constant(Tensor::scalar(1.0 - 1e-9)), g.constant(Tensor::scalar(1.0))};
  std::vector<ad::Var> near_zero{g.constant(Tensor::scalar(1e-9)), g.constant(Tensor::scalar(0.0))};
  CHECK(sequence_loss(near_one, 1.0).item() < 1e-6);
  CHECK(sequence_loss(near_zero, 0.0).item() < 1e-6);
  // The literal objective ignores negatives entirely.
  CHECK(sequence_loss(near_one, 0.0, LossMode::literal).item() == 0.0);
  CHECK(sequence_loss(near_one, 0.0, LossMode::bce).item() > 10.0);
  CHECK(parse_loss_mode("bce") == LossMode::bce);
  CHECK_THROWS_AS(parse_loss_mode("mse"), ConfigError);
}

TEST_CASE("fare suffix sums") {
  std::vector<double> fares{1, 2, 3};
  CHECK(fare_suffix_sum(fares) == std::vector<double>{6, 5, 3});
  std::vector<double> zeros(4, 0.0);
  CHECK(fare_suffix_sum(zeros) == zeros);
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.0, 40.0);
  std::vector<double> x(30);
  for (auto& v : x) v = u(rng);
  auto s = fare_suffix_sum(x);
  double total = 0;
  for (double v : x) total += v;
  CHECK(s.front() == doctest::Approx(total));
  CHECK(s.back() == x.back());
  for (std::size_t t = 0; t + 1 < x.size(); ++t) {
    CHECK(s[t] - s[t + 1] == doctest::Approx(x[t]).epsilon(1e-12));
    CHECK(s[t] >= s[t + 1]);
  }
}

TEST_CASE("dynamic reward") {
  CHECK(dynamic_reward(0.8, 3.0, 1.0, 1.0) == doctest::Approx(0.8));
  CHECK(dynamic_reward(0.3, 0.0, 1.0, 0.0) == doctest::Approx(0.5));
  double w = std::log(0.6 / 0.4);  // sigmoid(w * 1) = 0.6
  CHECK(std::abs(dynamic_reward(0.8, 1.0, w, 0.65) - 0.73) < 1e-12);
  CHECK(kDefaultAlpha == 0.65);
  CHECK_THROWS_AS(dynamic_reward(0.5, 1.0, 1.0, 1.01), std::invalid_argument);
  CHECK_THROWS_AS(dynamic_reward(0.5, 1.0, 1.0, -0.1), std::invalid_argument);

  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u(0.01, 0.99);
  for (int i = 0; i < 500; ++i) {
    double p = u(rng), x = 50 * u(rng), alpha = u(rng), wf = u(rng);
    double r = dynamic_reward(p, x, wf, alpha);
    CHECK(r > 0.0);
    CHECK(r < 1.0);
    CHECK(dynamic_reward(std::min(p + 0.01, 0.999), x, wf, alpha) >= r);
    CHECK(dynamic_reward(p, x + 1.0, wf, alpha) >= r);
  }

  ad::Graph g;
  auto var = dynamic_reward(g.constant(Tensor::scalar(0.8)), g.constant(Tensor::scalar(1.0)),
                            g.constant(Tensor::scalar(w)), 0.65);
  CHECK(std::abs(var.item() - 0.73) < 1e-12);
}

TEST_CASE("roc_auc") {
  std::vector<double> s{0.1, 0.4, 0.35, 0.8};
  std::vector<int> l{0, 0, 1, 1};
  CHECK(roc_auc(s, l) == doctest::Approx(0.75));
  std::vector<double> tied{0.5, 0.5};
  std::vector<int> tl{0, 1};
  CHECK(roc_auc(tied, tl) == doctest::Approx(0.5));
  std::vector<int> one_class{1, 1};
  CHECK_THROWS_AS(roc_auc(tied, one_class), MetricError);
}

TEST_CASE("pretraining needs two drivers") {
  std::mt19937_64 rng(1);
  ad::ParameterSet params;
  init_gru_params(params, 40, rng);
  auto corpus = two_driver_corpus(3, 4, 1);
  std::vector<DriverSegment> single;
  for (auto& s : corpus) {
    if (s.driver == 0) single.push_back(s);
  }
  CHECK_THROWS_AS(pretrain_behavior(single, params, {}), ConfigError);
}

TEST_CASE("two-driver corpus: pretraining separates drivers") {
  auto start = std::chrono::steady_clock::now();
  auto train = two_driver_corpus(200, 8, 10);
  auto test = two_driver_corpus(50, 8, 11);

  std::mt19937_64 rng(3);
  ad::ParameterSet params;
  init_gru_params(params, 40, rng);
  PretrainOptions opt;
  opt.epochs = 10;
  opt.adam.lr = 0.01;
  opt.seed = 5;
  auto report = pretrain_behavior(train, params, opt);
  CHECK(report.epoch_loss.back() < report.epoch_loss.front());
  double auc = held_out_auc(params, test, 99);
  MESSAGE("held-out AUC " << auc);
  CHECK(auc >= 0.9);

  ad::ParameterSet control;
  std::mt19937_64 rng2(3);
  init_gru_params(control, 40, rng2);
  opt.shuffle_labels = true;
  pretrain_behavior(train, control, opt);
  double control_auc = held_out_auc(control, test, 99);
  MESSAGE("shuffled-label AUC " << control_auc);
  CHECK(std::abs(control_auc - 0.5) <= 0.1);

  double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  CHECK(seconds < 300.0);
}

TEST_CASE("pretraining loss decreases over 50 epochs (5-epoch windows)") {
  auto train = two_driver_corpus(20, 6, 20);
  std::mt19937_64 rng(7);
  ad::ParameterSet params;
  init_gru_params(params, 40, rng);
  PretrainOptions opt;
  opt.epochs = 50;
  opt.seed = 1;
  auto report = pretrain_behavior(train, params, opt);
  std::vector<double> windows;
  for (std::size_t w = 0; w < 10; ++w) {
    double s = 0;
    for (std::size_t i = 0; i < 5; ++i) s += report.epoch_loss[5 * w + i];
    windows.push_back(s / 5);
  }
  for (std::size_t w = 0; w + 1 < windows.size(); ++w) CHECK(windows[w + 1] < windows[w]);
}
