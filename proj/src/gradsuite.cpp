#include "hexfleet/gradsuite.hpp"

#include <functional>
#include <random>

#include "hexfleet/behavior.hpp"
#include "hexfleet/gradcheck.hpp"
#include "hexfleet/policy.hpp"
#include "hexfleet/represent.hpp"

namespace hexfleet {

namespace {

using ad::Graph;
using ad::ParameterSet;
using ad::Tensor;
using ad::Var;

Tensor random_tensor(std::size_t r, std::size_t c, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Tensor t = Tensor::matrix(r, c);
  for (auto& v : t.values()) v = n(rng);
  return t;
}

// Folds an output into a scalar with fixed random weights so every entry
// reaches the loss.
Var contract(Graph& g, Var out, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return ad::sum(ad::mul(out, g.constant(random_tensor(out.rows(), out.cols(), rng))));
}

struct Suite {
  std::vector<GradSuiteRow> rows;

  void record(const std::string& block, ParameterSet& params, const std::function<Var(Graph&)>& loss,
              double h = 1e-5) {
    double err = ad::max_relative_error(ad::check_gradients(params, loss, h));
    auto it = std::find_if(rows.begin(), rows.end(), [&](const GradSuiteRow& r) { return r.block == block; });
    if (it == rows.end()) {
      rows.push_back({block, 0, 0.0, true});
      it = rows.end() - 1;
    }
    ++it->checks;
    it->max_relative_error = std::max(it->max_relative_error, err);
    it->passed = it->max_relative_error <= kGradTolerance;
  }
};

using Op = std::function<Var(Graph&, std::span<const Var>)>;

void primitive(Suite& suite, const std::string& name, std::size_t inputs, const Op& op, std::uint64_t seed,
               bool positive = false) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> dim(1, 8);
  std::size_t r = dim(rng), c = dim(rng), k = dim(rng);
  ParameterSet ps;
  for (std::size_t i = 0; i < inputs; ++i) {
    std::size_t rows = r, cols = c;
    if (name == "matmul") {
      rows = i == 0 ? r : k;
      cols = i == 0 ? k : c;
    }
    Tensor t = random_tensor(rows, cols, rng);
    if (positive)
      for (auto& v : t.values()) v = 0.5 + std::abs(v);
    ps.add("in" + std::to_string(i), t);
  }
  suite.record(name, ps, [&](Graph& g) {
    std::vector<Var> vars;
    for (std::size_t i = 0; i < inputs; ++i) vars.push_back(g.param(ps.at("in" + std::to_string(i))));
    return contract(g, op(g, vars), seed + 1);
  });
}

void primitives(Suite& suite, std::uint64_t seed) {
  using namespace ad;
  primitive(suite, "matmul", 2, [](Graph&, auto v) { return matmul(v[0], v[1]); }, seed + 1);
  primitive(suite, "transpose", 1, [](Graph&, auto v) { return transpose(v[0]); }, seed + 2);
  primitive(suite, "add", 2, [](Graph&, auto v) { return add(v[0], v[1]); }, seed + 3);
  primitive(suite, "sub", 2, [](Graph&, auto v) { return sub(v[0], v[1]); }, seed + 4);
  primitive(suite, "mul", 2, [](Graph&, auto v) { return mul(v[0], v[1]); }, seed + 5);
  primitive(suite, "add_row", 2, [](Graph&, auto v) { return add_row(v[0], slice_rows(v[1], 0, 1)); }, seed + 6);
  primitive(suite, "scale", 1, [](Graph&, auto v) { return add_scalar(scale(v[0], -1.7), 0.3); }, seed + 7);
  primitive(suite, "concat_cols", 2, [](Graph&, auto v) { return concat_cols(v); }, seed + 8);
  primitive(suite, "concat_rows", 2, [](Graph&, auto v) { return concat_rows(v); }, seed + 9);
  primitive(suite, "slice", 1, [](Graph&, auto v) {
    return slice_rows(slice_cols(v[0], 0, v[0].cols()), 0, v[0].rows());
  }, seed + 10);
  primitive(suite, "sigmoid", 1, [](Graph&, auto v) { return sigmoid(v[0]); }, seed + 11);
  primitive(suite, "tanh", 1, [](Graph&, auto v) { return ad::tanh(v[0]); }, seed + 12);
  primitive(suite, "gelu", 1, [](Graph&, auto v) { return gelu(v[0]); }, seed + 13);
  primitive(suite, "log", 1, [](Graph&, auto v) { return ad::log(v[0]); }, seed + 14, true);
  primitive(suite, "square", 1, [](Graph&, auto v) { return square(v[0]); }, seed + 15);
  primitive(suite, "softmax_rows", 1, [](Graph&, auto v) { return softmax_rows(v[0]); }, seed + 16);
  primitive(suite, "sum", 1, [](Graph&, auto v) { return sum(v[0]); }, seed + 17);
  primitive(suite, "mean", 1, [](Graph&, auto v) { return mean(v[0]); }, seed + 18);
  primitive(suite, "clamp", 1, [](Graph&, auto v) { return clamp(v[0], -100.0, 100.0); }, seed + 19);
  primitive(suite, "attend", 3, [](Graph&, auto v) {
    std::vector<Var> keys, vals;
    for (std::size_t i = 0; i < v[1].rows(); ++i) {
      keys.push_back(slice_rows(v[1], i, i + 1));
      vals.push_back(slice_rows(v[2], i, i + 1));
    }
    return attend(slice_rows(v[0], 0, 1), keys, vals, 0.37);
  }, seed + 20);
}

void gcn_layer(Suite& suite, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> dim(1, 8);
  std::size_t n = dim(rng), m = dim(rng), h = dim(rng);
  Tensor adj = Tensor::matrix(n, n);
  std::bernoulli_distribution edge(0.4);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      if (edge(rng)) adj(i, j) = adj(j, i) = 1.0;
  ParameterSet ps;
  ps.add("x", random_tensor(n, m, rng));
  ps.add("w", random_tensor(m, h, rng));
  suite.record("gcn_layer", ps, [&](Graph& g) {
    return contract(g, represent::gcn_view(g.constant(adj), g.param(ps.at("x")), g.param(ps.at("w"))), seed + 1);
  });
}

void gru_cell(Suite& suite, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::size_t d = std::uniform_int_distribution<std::size_t>(1, 8)(rng);
  ParameterSet ps;
  behavior::init_gru_params(ps, d, rng);
  for (auto& [name, p] : ps)
    for (auto& v : p.value.values()) v += 0.1 * std::normal_distribution<double>()(rng);
  ps.add("emb", random_tensor(1, d, rng));
  ps.add("prev", random_tensor(1, d, rng, 0.5));
  suite.record("gru_cell", ps, [&](Graph& g) {
    auto out = behavior::gru_step(g, ps, g.param(ps.at("emb")), g.param(ps.at("prev")));
    return contract(g, out.state, seed + 1) + ad::log(out.prob);
  });
}

policy::PolicyConfig small_policy(std::size_t d, std::size_t layers, std::size_t state_dim) {
  policy::PolicyConfig c;
  c.d_model = d;
  c.layers = layers;
  c.state_dim = state_dim;
  c.dropout = 0.0;
  return c;
}

void attention_block(Suite& suite, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> dim(1, 8);
  std::size_t n = dim(rng), d = dim(rng);
  ParameterSet ps;
  for (const char* w : {"wx", "wy", "wz"}) ps.add(w, random_tensor(d, d, rng, 0.7));
  ps.add("x", random_tensor(n, d, rng));
  ps.add("y", random_tensor(n, d, rng));
  bool causal = n % 2 == 0;
  suite.record("attention", ps, [&](Graph& g) {
    auto p = [&](const char* k) { return g.param(ps.at(k)); };
    return contract(g, policy::attention(p("x"), p("y"), p("y"), p("wx"), p("wy"), p("wz"), causal), seed + 1);
  });
}

void decoder_block(Suite& suite, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> dim(1, 8);
  std::size_t d = dim(rng), steps = std::uniform_int_distribution<std::size_t>(1, 4)(rng);
  ParameterSet ps;
  for (const char* w : {"wx", "wy", "wz"}) ps.add(w, random_tensor(d, d, rng, 0.7));
  for (std::size_t t = 0; t < steps; ++t) {
    ps.add("x" + std::to_string(t), random_tensor(1, d, rng));
    ps.add("y" + std::to_string(t), random_tensor(1, d, rng));
  }
  suite.record("decoder_layer", ps, [&](Graph& g) {
    policy::LayerWeights w{g.param(ps.at("wx")), g.param(ps.at("wy")), g.param(ps.at("wz"))};
    policy::TokenCache cache;
    std::vector<Var> outs;
    for (std::size_t t = 0; t < steps; ++t) {
      outs.push_back(policy::decoder_layer(g.param(ps.at("x" + std::to_string(t))),
                                           g.param(ps.at("y" + std::to_string(t))), t + 1, w, cache));
    }
    return contract(g, ad::concat_rows(outs), seed + 1);
  });
}

void action_head(Suite& suite, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::size_t d = std::uniform_int_distribution<std::size_t>(2, 8)(rng);
  ParameterSet ps;
  policy::init_policy_params(ps, small_policy(d, 1, 2), rng);
  ps.add("p", random_tensor(1, d, rng));
  suite.record("action_head", ps, [&](Graph& g) {
    auto a = policy::action_head(g, ps, g.param(ps.at("p")));
    return contract(g, ad::concat_cols(std::vector<Var>{a.dis_norm, ad::scale(a.deg, 1.0 / 360.0)}), seed + 1);
  });
}

void geo_loss(Suite& suite, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (auto mode : {policy::GeoLossMode::symmetric, policy::GeoLossMode::literal}) {
    ParameterSet ps;
    ps.add("dis", Tensor::scalar(u(rng)));
    ps.add("deg", Tensor::scalar(360.0 * u(rng)));
    // Keep the truth away from the 180 degree branch switch of the wrap.
    double deg = std::fmod(ps.at("deg").value[0] + 20.0 + 140.0 * u(rng), 360.0);
    Action truth(u(rng), deg);
    double w = 0.5 + u(rng);
    suite.record(mode == policy::GeoLossMode::symmetric ? "geo_loss_symmetric" : "geo_loss_literal", ps,
                 [&](Graph& g) {
                   policy::ActionVars a{g.param(ps.at("dis")), g.param(ps.at("deg"))};
                   return policy::geo_loss(a, truth, mode, w);
                 });
  }
}

void policy_steps(Suite& suite, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> dim(2, 8);
  std::size_t d = dim(rng), state_dim = dim(rng);
  auto c = small_policy(d, 1 + seed % 2, state_dim);
  // Angles in degrees put the loss near 1e4 while the previous-action path
  // can carry gradients near 1e-6; a weighted angle and a wider step keep
  // the differences above roundoff. GeoLoss itself is checked at its
  // natural scale.
  c.angle_weight = 1e-4;
  ParameterSet ps;
  policy::init_policy_params(ps, c, rng);
  auto s1 = random_tensor(1, c.state_dim, rng), s2 = random_tensor(1, c.state_dim, rng);
  Action t1(0.3, 100.0), t2(0.7, 250.0);
  suite.record("policy_two_steps", ps, [&](Graph& g) {
    policy::EpisodeContext ctx(c);
    std::mt19937_64 r(0);
    auto p1 = policy::policy_step(g, ps, c, g.constant(Tensor::scalar(0.4)), g.constant(s1), 1, ctx, r);
    auto l1 = policy::geo_loss(policy::action_head(g, ps, p1), t1, c.loss_mode, c.angle_weight);
    auto p2 = policy::policy_step(g, ps, c, g.constant(Tensor::scalar(0.8)), g.constant(s2), 2, ctx, r);
    return l1 + policy::geo_loss(policy::action_head(g, ps, p2), t2, c.loss_mode, c.angle_weight);
  }, 1e-4);
}

}  // namespace

std::vector<GradSuiteRow> run_gradient_suite(std::uint64_t seed, int reps) {
  Suite suite;
  for (int rep = 0; rep < reps; ++rep) {
    std::uint64_t s = seed * 1000 + static_cast<std::uint64_t>(rep) * 100;
    primitives(suite, s);
    gcn_layer(suite, s + 30);
    gru_cell(suite, s + 31);
    attention_block(suite, s + 32);
    decoder_block(suite, s + 33);
    action_head(suite, s + 34);
    geo_loss(suite, s + 35);
    policy_steps(suite, s + 36);
  }
  return suite.rows;
}

}  // namespace hexfleet
