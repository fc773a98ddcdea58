#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <random>
#include <span>
#include <unordered_map>
#include <vector>

#include "hexfleet/tensor.hpp"

namespace hexfleet::ad {

class Graph;

// Handle to a node recorded on a Graph. Cheap to copy; valid while the
// owning Graph is alive.
class Var {
 public:
  Var() = default;
  Var(Graph* g, std::size_t id) : graph_(g), id_(id) {}

  const Tensor& value() const;
  const Tensor& grad() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  double item() const;  // value of a 1x1 node

  Graph* graph() const { return graph_; }
  std::size_t id() const { return id_; }
  bool valid() const { return graph_ != nullptr; }

 private:
  Graph* graph_ = nullptr;
  std::size_t id_ = 0;
};

// Reverse-mode tape. Nodes are appended in evaluation order, which is a
// topological order, so backward is a single reverse sweep.
class Graph {
 public:
  explicit Graph(bool training = false) : training_(training) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Tensor value);
  // Leaf whose gradient stays on the tape (read back through Var::grad()).
  Var leaf(Tensor value);
  // Leaf bound to a Parameter; backward adds into Parameter::grad. Repeated
  // calls for the same Parameter return the same node, so the value is
  // captured on first use.
  Var param(Parameter& p);

  // Throws std::invalid_argument unless loss is 1x1. Parameter gradients
  // accumulate across calls; tape gradients are recomputed.
  void backward(Var loss);

  bool training() const { return training_; }
  void set_training(bool t) { training_ = t; }
  std::size_t size() const { return nodes_.size(); }

  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    Parameter* param = nullptr;
    std::function<void(Graph&, Node&)> backward;
  };

  Var record(Tensor value, bool requires_grad, std::function<void(Graph&, Node&)> backward);
  Node& node(std::size_t id) { return nodes_[id]; }
  const Node& node(std::size_t id) const { return nodes_[id]; }
  Tensor& grad_of(Var v) { return nodes_[v.id()].grad; }
  bool tracks(Var v) const { return nodes_[v.id()].requires_grad; }

 private:
  std::deque<Node> nodes_;
  std::unordered_map<const Parameter*, std::size_t> param_nodes_;
  bool training_;
};

// Primitives. All operate on rank-2 values; shape mismatches throw
// ShapeError naming both shapes.
Var matmul(Var a, Var b);
Var transpose(Var a);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);  // elementwise
Var add_row(Var a, Var row);  // broadcast a 1xm row over every row of a
Var scale(Var a, double s);
Var add_scalar(Var a, double s);
Var concat_cols(std::span<const Var> parts);
Var concat_rows(std::span<const Var> parts);
Var slice_cols(Var a, std::size_t begin, std::size_t end);
Var slice_rows(Var a, std::size_t begin, std::size_t end);
Var sigmoid(Var a);
Var tanh(Var a);
Var gelu(Var a);  // tanh approximation
Var log(Var a);
Var clamp(Var a, double lo, double hi);
Var square(Var a);
Var softmax_rows(Var a);
Var sum(Var a);
Var mean(Var a);
// Inverted dropout; identity when the graph is not in training mode.
Var dropout(Var a, double rate, std::mt19937_64& rng);

// One query row attending over key/value rows (each 1xd), with logits
// scaled by `scale`. Equivalent to softmax(q K^T * scale) V for the stacked
// rows, without materializing K and V.
Var attend(Var query, std::span<const Var> keys, std::span<const Var> values, double scale);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }

double gelu_value(double x);
double sigmoid_value(double x);

}  // namespace hexfleet::ad
