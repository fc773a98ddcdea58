#include <cmath>
#include <functional>
#include <random>

#include "doctest.h"
#include "hexfleet/autodiff.hpp"
#include "hexfleet/checkpoint.hpp"
#include "hexfleet/errors.hpp"
#include "hexfleet/gradcheck.hpp"
#include "hexfleet/optim.hpp"

using namespace hexfleet;
using namespace hexfleet::ad;

namespace {

Tensor random_tensor(std::size_t r, std::size_t c, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Tensor t = Tensor::matrix(r, c);
  for (auto& v : t.values()) v = n(rng);
  return t;
}

// Contract the op output with fixed random weights so every output entry
// contributes to the scalar loss.
Var contract(Graph& g, Var out, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return sum(mul(out, g.constant(random_tensor(out.rows(), out.cols(), rng))));
}

void check_op(const char* name, std::size_t inputs, const std::function<Var(Graph&, std::span<const Var>)>& op,
              std::uint64_t seed, bool positive = false) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> dim(1, 8);
  std::size_t r = dim(rng), c = dim(rng), k = dim(rng);
  ParameterSet ps;
  for (std::size_t i = 0; i < inputs; ++i) {
    // matmul needs (r x k)(k x c); all other ops take equal shapes.
    std::size_t rows = r, cols = (std::string(name) == "matmul" && i == 0) ? k : c;
    if (std::string(name) == "matmul" && i == 1) rows = k;
    Tensor t = random_tensor(rows, cols, rng);
    if (positive)
      for (auto& v : t.values()) v = 0.5 + std::abs(v);
    ps.add("in" + std::to_string(i), t);
  }
  auto loss = [&](Graph& g) {
    std::vector<Var> vars;
    for (std::size_t i = 0; i < inputs; ++i) vars.push_back(g.param(ps.at("in" + std::to_string(i))));
    return contract(g, op(g, vars), seed + 1);
  };
  double err = max_relative_error(check_gradients(ps, loss));
  INFO(name << " relative error " << err);
  CHECK(err <= 1e-4);
}

}  // namespace

TEST_CASE("primitive values") {
  Graph g;
  auto one = softmax_rows(g.constant(Tensor::from_rows({{3.7}})));
  CHECK(one.value()[0] == 1.0);
  auto z = g.constant(Tensor::from_rows({{0.0}}));
  CHECK(sigmoid(z).item() == 0.5);
  CHECK(ad::tanh(z).item() == 0.0);
  CHECK(gelu(z).item() == 0.0);
  auto a = g.constant(Tensor::from_rows({{1, 2}, {3, 4}}));
  auto id = g.constant(Tensor::from_rows({{1, 0}, {0, 1}}));
  CHECK(matmul(a, id).value() == a.value());
  CHECK(gelu_value(1.0) == doctest::Approx(0.5 * (1 + std::tanh(std::sqrt(2 / M_PI) * (1 + 0.044715)))));
}

TEST_CASE("softmax rows sum to one and stay positive") {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 200; ++trial) {
    Graph g;
    auto s = softmax_rows(g.constant(random_tensor(5, 7, rng, 10.0)));
    for (std::size_t i = 0; i < 5; ++i) {
      double total = 0.0;
      for (std::size_t j = 0; j < 7; ++j) {
        REQUIRE(s.value()(i, j) > 0.0);
        total += s.value()(i, j);
      }
      REQUIRE(std::abs(total - 1.0) <= 1e-12);
    }
  }
}

TEST_CASE("shape errors name both shapes") {
  Graph g;
  auto a = g.constant(Tensor::matrix(2, 3));
  auto b = g.constant(Tensor::matrix(2, 3));
  CHECK_THROWS_AS(matmul(a, b), ShapeError);
  try {
    matmul(a, b);
  } catch (const ShapeError& e) {
    CHECK(std::string(e.what()).find("[2x3]") != std::string::npos);
  }
  CHECK_THROWS_AS(add(a, g.constant(Tensor::matrix(3, 2))), ShapeError);
  CHECK_THROWS_AS(add_row(a, g.constant(Tensor::matrix(1, 2))), ShapeError);
}

TEST_CASE("backward basics") {
  ParameterSet ps;
  ps.add("w", Tensor::from_rows({{1, -2, 3}, {0.5, 4, -1}}));
  {
    Graph g;
    g.backward(sum(g.param(ps.at("w"))));
    for (double v : ps.at("w").grad.values()) CHECK(v == 1.0);
  }
  {
    Graph g;
    auto w = g.param(ps.at("w"));
    g.backward(sum(mul(w, w)));
    // accumulates on top of the all-ones gradient above
    for (std::size_t i = 0; i < 6; ++i) CHECK(ps.at("w").grad[i] == doctest::Approx(1.0 + 2.0 * ps.at("w").value[i]));
  }
  ps.zero_grad();
  Graph g;
  auto w = g.param(ps.at("w"));
  CHECK_THROWS_AS(g.backward(w), std::invalid_argument);
}

TEST_CASE("finite-difference check of every primitive") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    check_op("matmul", 2, [](Graph&, auto v) { return matmul(v[0], v[1]); }, seed * 10 + 1);
    check_op("transpose", 1, [](Graph&, auto v) { return transpose(v[0]); }, seed * 10 + 2);
    check_op("add", 2, [](Graph&, auto v) { return add(v[0], v[1]); }, seed * 10 + 3);
    check_op("sub", 2, [](Graph&, auto v) { return sub(v[0], v[1]); }, seed * 10 + 4);
    check_op("mul", 2, [](Graph&, auto v) { return mul(v[0], v[1]); }, seed * 10 + 5);
    check_op("add_row", 2, [](Graph&, auto v) { return add_row(v[0], slice_rows(v[1], 0, 1)); }, seed * 10 + 6);
    check_op("scale", 1, [](Graph&, auto v) { return add_scalar(scale(v[0], -1.7), 0.3); }, seed * 10 + 7);
    check_op("concat_cols", 2, [](Graph&, auto v) { return concat_cols(v); }, seed * 10 + 8);
    check_op("concat_rows", 2, [](Graph&, auto v) { return concat_rows(v); }, seed * 10 + 9);
    check_op("slice_cols", 1, [](Graph&, auto v) { return slice_cols(v[0], 0, v[0].cols()); }, seed * 10 + 10);
    check_op("sigmoid", 1, [](Graph&, auto v) { return sigmoid(v[0]); }, seed * 10 + 11);
    check_op("tanh", 1, [](Graph&, auto v) { return ad::tanh(v[0]); }, seed * 10 + 12);
    check_op("gelu", 1, [](Graph&, auto v) { return gelu(v[0]); }, seed * 10 + 13);
    check_op("log", 1, [](Graph&, auto v) { return ad::log(v[0]); }, seed * 10 + 14, true);
    check_op("square", 1, [](Graph&, auto v) { return square(v[0]); }, seed * 10 + 15);
    check_op("softmax", 1, [](Graph&, auto v) { return softmax_rows(v[0]); }, seed * 10 + 16);
    check_op("mean", 1, [](Graph&, auto v) { return mean(v[0]); }, seed * 10 + 17);
    check_op("attend", 3, [](Graph&, auto v) {
      std::vector<Var> keys, vals;
      for (std::size_t i = 0; i < v[1].rows(); ++i) {
        keys.push_back(slice_rows(v[1], i, i + 1));
        vals.push_back(slice_rows(v[2], i, i + 1));
      }
      return attend(slice_rows(v[0], 0, 1), keys, vals, 0.37);
    }, seed * 10 + 18);
  }
}

TEST_CASE("dropout") {
  std::mt19937_64 rng(3);
  Graph eval_graph(false);
  auto x = eval_graph.constant(Tensor::matrix(4, 4, 2.0));
  CHECK(dropout(x, 0.5, rng).value() == x.value());

  Graph train(true);
  auto y = dropout(train.constant(Tensor::matrix(50, 50, 1.0)), 0.5, rng);
  std::size_t kept = 0;
  for (double v : y.value().values()) {
    CHECK((v == 0.0 || v == 2.0));
    kept += v != 0.0;
  }
  CHECK(kept > 1000);
  CHECK(kept < 1500);
  CHECK_THROWS_AS(dropout(x, 1.0, rng), std::invalid_argument);

  // Fixed mask: gradient flows only through survivors.
  ParameterSet ps;
  ps.add("x", Tensor::matrix(3, 3, 1.0));
  auto loss = [&](Graph& g) {
    std::mt19937_64 r(9);
    g.set_training(true);
    return sum(square(dropout(g.param(ps.at("x")), 0.3, r)));
  };
  CHECK(max_relative_error(check_gradients(ps, loss)) <= 1e-4);
}

TEST_CASE("attend matches stacked softmax attention") {
  std::mt19937_64 rng(4);
  Graph g;
  auto q = g.constant(random_tensor(1, 5, rng));
  auto k = g.constant(random_tensor(6, 5, rng));
  auto v = g.constant(random_tensor(6, 3, rng));
  std::vector<Var> ks, vs;
  for (std::size_t i = 0; i < 6; ++i) {
    ks.push_back(slice_rows(k, i, i + 1));
    vs.push_back(slice_rows(v, i, i + 1));
  }
  auto fused = attend(q, ks, vs, 0.5);
  auto stacked = matmul(softmax_rows(scale(matmul(q, transpose(k)), 0.5)), v);
  for (std::size_t i = 0; i < 3; ++i) CHECK(fused.value()[i] == doctest::Approx(stacked.value()[i]).epsilon(1e-12));
}

TEST_CASE("adam") {
  SUBCASE("zero gradient leaves parameters unchanged") {
    ParameterSet ps;
    ps.add("w", Tensor::from_rows({{1.0, -2.0}}));
    Adam opt;
    opt.step(ps);
    CHECK(ps.at("w").value == Tensor::from_rows({{1.0, -2.0}}));
  }
  SUBCASE("first step moves each entry by about lr against its gradient") {
    ParameterSet ps;
    ps.add("w", Tensor::from_rows({{1.0, -2.0, 0.0}}));
    ps.at("w").grad = Tensor::from_rows({{0.5, -3.0, 0.0}});
    Adam opt;
    opt.step(ps);
    // m_hat = g, v_hat = g^2 after bias correction: delta = lr * g / (|g| + eps)
    CHECK(ps.at("w").value[0] == doctest::Approx(1.0 - 1e-3 * 0.5 / (0.5 + 1e-8)).epsilon(1e-12));
    CHECK(ps.at("w").value[1] == doctest::Approx(-2.0 + 1e-3 * 3.0 / (3.0 + 1e-8)).epsilon(1e-12));
    CHECK(ps.at("w").value[2] == 0.0);
    CHECK(opt.state().step == 1);
  }
  SUBCASE("converges on a quadratic") {
    ParameterSet ps;
    ps.add("w", Tensor::from_rows({{1.0}}));
    Adam opt(AdamConfig{.lr = 0.01});
    for (int i = 0; i < 200; ++i) {
      ps.zero_grad();
      Graph g;
      auto w = g.param(ps.at("w"));
      g.backward(sum(square(w)));
      opt.step(ps);
    }
    CHECK(std::abs(ps.at("w").value[0]) < 0.1);
  }
  SUBCASE("shape drift is an error") {
    ParameterSet ps;
    ps.add("w", Tensor::from_rows({{1.0}}));
    Adam opt;
    opt.step(ps);
    ps.add("w", Tensor::from_rows({{1.0, 2.0}}));
    CHECK_THROWS_AS(opt.step(ps), ShapeError);
  }
}

TEST_CASE("checkpoint format") {
  TensorMap m;
  m.emplace("b", Tensor::from_rows({{1.5, -2.25}}));
  m.emplace("a", Tensor({3}, {1.0 / 3.0, 1e-300, -0.0}));
  auto bytes = serialize_checkpoint(m);
  CHECK(bytes.substr(0, 9) == "HEXFLEET1");
  // first record is "a" (name order): u64 length 1, 'a', rank 1, dim 3
  CHECK(bytes[9] == 1);
  CHECK(bytes[17] == 'a');
  CHECK(bytes[18] == 1);
  CHECK(bytes[26] == 3);
  auto back = deserialize_checkpoint(bytes);
  CHECK(back == m);
  CHECK(serialize_checkpoint(back) == bytes);
  CHECK(std::signbit(back.at("a")[2]));

  CHECK_THROWS_AS(deserialize_checkpoint("HEXFLEET2"), CheckpointError);
  CHECK_THROWS_AS(deserialize_checkpoint("garbage"), CheckpointError);
  CHECK_THROWS_AS(deserialize_checkpoint(bytes.substr(0, bytes.size() - 3)), CheckpointError);
}

TEST_CASE("checkpoint round trip on random tensors") {
  std::mt19937_64 rng(8);
  std::uniform_int_distribution<std::size_t> dim(0, 6);
  for (int trial = 0; trial < 50; ++trial) {
    TensorMap m;
    for (int i = 0; i < 5; ++i) m.emplace("t" + std::to_string(i), random_tensor(dim(rng), dim(rng) + 1, rng, 1e3));
    auto bytes = serialize_checkpoint(m);
    REQUIRE(serialize_checkpoint(deserialize_checkpoint(bytes)) == bytes);
  }
}
