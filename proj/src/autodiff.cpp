#include "hexfleet/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

#include <fmt/format.h>

#include "hexfleet/errors.hpp"

namespace hexfleet::ad {
namespace {

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2 / pi)
constexpr double kGeluA = 0.044715;

Graph& graph_of(Var a) {
  if (!a.valid()) throw std::invalid_argument("operation on an empty Var");
  return *a.graph();
}

Graph& graph_of(Var a, Var b) {
  if (a.graph() != b.graph()) throw std::invalid_argument("Vars belong to different graphs");
  return graph_of(a);
}

[[noreturn]] void shape_mismatch(const char* op, const Tensor& a, const Tensor& b) {
  throw ShapeError(fmt::format("{}: incompatible shapes {} and {}", op, a.shape_string(), b.shape_string()));
}

Tensor as_matrix(Tensor t) {
  if (t.rank() == 2) return t;
  std::size_t r = t.rows(), c = t.cols();
  return Tensor({r, c}, std::move(t.values()));
}

// out += a * b  (a: n x k, b: k x m)
void gemm_acc(const double* a, const double* b, double* out, std::size_t n, std::size_t k, std::size_t m) {
  for (std::size_t i = 0; i < n; ++i) {
    double* orow = out + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      double av = a[i * k + p];
      if (av == 0.0) continue;
      const double* brow = b + p * m;
      for (std::size_t j = 0; j < m; ++j) orow[j] += av * brow[j];
    }
  }
}

// out += a * b^T  (a: n x k, b: m x k)
void gemm_abt_acc(const double* a, const double* b, double* out, std::size_t n, std::size_t k, std::size_t m) {
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += a[i * k + p] * b[j * k + p];
      out[i * m + j] += s;
    }
  }
}

// out += a^T * b  (a: n x k, b: n x m) -> k x m
void gemm_atb_acc(const double* a, const double* b, double* out, std::size_t n, std::size_t k, std::size_t m) {
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      double av = a[i * k + p];
      if (av == 0.0) continue;
      double* orow = out + p * m;
      const double* brow = b + i * m;
      for (std::size_t j = 0; j < m; ++j) orow[j] += av * brow[j];
    }
  }
}

template <typename Fwd, typename Deriv>
Var unary(Var a, Fwd fwd, Deriv deriv) {
  Graph& g = graph_of(a);
  const Tensor& av = a.value();
  Tensor out(av.shape());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = fwd(av[i]);
  std::size_t ia = a.id();
  return g.record(std::move(out), g.tracks(a), [ia, deriv](Graph& gr, Graph::Node& self) {
    auto& pa = gr.node(ia);
    if (!pa.requires_grad) return;
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      pa.grad[i] += self.grad[i] * deriv(pa.value[i], self.value[i]);
    }
  });
}

}  // namespace

double gelu_value(double x) {
  return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + kGeluA * x * x * x)));
}

double sigmoid_value(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

const Tensor& Var::value() const { return graph_->node(id_).value; }
const Tensor& Var::grad() const { return graph_->node(id_).grad; }

double Var::item() const {
  const Tensor& v = value();
  if (v.size() != 1) throw ShapeError(fmt::format("item() on non-scalar {}", v.shape_string()));
  return v[0];
}

Var Graph::record(Tensor value, bool requires_grad, std::function<void(Graph&, Node&)> backward) {
  nodes_.push_back(Node{as_matrix(std::move(value)), Tensor{}, requires_grad, nullptr,
                        requires_grad ? std::move(backward) : nullptr});
  return Var(this, nodes_.size() - 1);
}

Var Graph::constant(Tensor value) { return record(std::move(value), false, nullptr); }

Var Graph::leaf(Tensor value) { return record(std::move(value), true, nullptr); }

Var Graph::param(Parameter& p) {
  if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) return Var(this, it->second);
  Var v = record(p.value, true, nullptr);
  nodes_[v.id()].param = &p;
  param_nodes_.emplace(&p, v.id());
  return v;
}

void Graph::backward(Var loss) {
  if (loss.graph() != this) throw std::invalid_argument("loss belongs to another graph");
  const Tensor& lv = loss.value();
  if (lv.size() != 1) {
    throw std::invalid_argument(fmt::format("backward needs a scalar loss, got {}", lv.shape_string()));
  }
  if (!std::isfinite(lv[0])) throw std::invalid_argument("backward on a non-finite loss");
  for (std::size_t i = 0; i <= loss.id(); ++i) {
    auto& n = nodes_[i];
    if (n.requires_grad) n.grad = Tensor(n.value.shape(), 0.0);
  }
  if (!nodes_[loss.id()].requires_grad) return;
  nodes_[loss.id()].grad[0] = 1.0;
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    auto& n = nodes_[i];
    if (!n.requires_grad) continue;
    if (n.backward) n.backward(*this, n);
    if (n.param != nullptr) {
      if (!n.param->grad.same_shape(n.value)) n.param->grad = Tensor(n.value.shape(), 0.0);
      for (std::size_t k = 0; k < n.grad.size(); ++k) n.param->grad[k] += n.grad[k];
    }
  }
}

Var matmul(Var a, Var b) {
  Graph& g = graph_of(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.cols() != bv.rows()) shape_mismatch("matmul", av, bv);
  std::size_t n = av.rows(), k = av.cols(), m = bv.cols();
  Tensor out = Tensor::matrix(n, m);
  gemm_acc(av.data(), bv.data(), out.data(), n, k, m);
  std::size_t ia = a.id(), ib = b.id();
  return g.record(std::move(out), g.tracks(a) || g.tracks(b), [ia, ib, n, k, m](Graph& gr, Graph::Node& self) {
    auto& pa = gr.node(ia);
    auto& pb = gr.node(ib);
    if (pa.requires_grad) gemm_abt_acc(self.grad.data(), pb.value.data(), pa.grad.data(), n, m, k);
    if (pb.requires_grad) gemm_atb_acc(pa.value.data(), self.grad.data(), pb.grad.data(), n, k, m);
  });
}

Var transpose(Var a) {
  Graph& g = graph_of(a);
  const Tensor& av = a.value();
  std::size_t n = av.rows(), m = av.cols();
  Tensor out = Tensor::matrix(m, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out(j, i) = av(i, j);
  std::size_t ia = a.id();
  return g.record(std::move(out), g.tracks(a), [ia, n, m](Graph& gr, Graph::Node& self) {
    auto& pa = gr.node(ia);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) pa.grad(i, j) += self.grad(j, i);
  });
}

namespace {

template <typename Fwd, typename Da, typename Db>
Var binary(const char* name, Var a, Var b, Fwd fwd, Da da, Db db) {
  Graph& g = graph_of(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rows() != bv.rows() || av.cols() != bv.cols()) shape_mismatch(name, av, bv);
  Tensor out(av.shape());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = fwd(av[i], bv[i]);
  std::size_t ia = a.id(), ib = b.id();
  return g.record(std::move(out), g.tracks(a) || g.tracks(b), [ia, ib, da, db](Graph& gr, Graph::Node& self) {
    auto& pa = gr.node(ia);
    auto& pb = gr.node(ib);
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      double go = self.grad[i];
      if (pa.requires_grad) pa.grad[i] += go * da(pa.value[i], pb.value[i]);
      if (pb.requires_grad) pb.grad[i] += go * db(pa.value[i], pb.value[i]);
    }
  });
}

}  // namespace

Var add(Var a, Var b) {
  return binary("add", a, b, [](double x, double y) { return x + y; },
                [](double, double) { return 1.0; }, [](double, double) { return 1.0; });
}

Var sub(Var a, Var b) {
  return binary("sub", a, b, [](double x, double y) { return x - y; },
                [](double, double) { return 1.0; }, [](double, double) { return -1.0; });
}

Var mul(Var a, Var b) {
  return binary("mul", a, b, [](double x, double y) { return x * y; },
                [](double, double y) { return y; }, [](double x, double) { return x; });
}

Var add_row(Var a, Var row) {
  Graph& g = graph_of(a, row);
  const Tensor& av = a.value();
  const Tensor& rv = row.value();
  if (rv.rows() != 1 || rv.cols() != av.cols()) shape_mismatch("add_row", av, rv);
  std::size_t n = av.rows(), m = av.cols();
  Tensor out = av;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out(i, j) += rv[j];
  std::size_t ia = a.id(), ir = row.id();
  return g.record(std::move(out), g.tracks(a) || g.tracks(row), [ia, ir, n, m](Graph& gr, Graph::Node& self) {
    auto& pa = gr.node(ia);
    auto& pr = gr.node(ir);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < m; ++j) {
        double go = self.grad(i, j);
        if (pa.requires_grad) pa.grad(i, j) += go;
        if (pr.requires_grad) pr.grad[j] += go;
      }
    }
  });
}

Var scale(Var a, double s) {
  return unary(a, [s](double x) { return s * x; }, [s](double, double) { return s; });
}

Var add_scalar(Var a, double s) {
  return unary(a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw std::invalid_argument("concat of zero tensors");
  Graph& g = graph_of(parts[0]);
  std::size_t n = parts[0].rows();
  std::size_t total = 0;
  bool track = false;
  for (const Var& p : parts) {
    graph_of(parts[0], p);
    if (p.rows() != n) shape_mismatch("concat_cols", parts[0].value(), p.value());
    total += p.cols();
    track = track || g.tracks(p);
  }
  Tensor out = Tensor::matrix(n, total);
  std::vector<std::size_t> ids, offsets;
  std::size_t off = 0;
  for (const Var& p : parts) {
    const Tensor& pv = p.value();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < pv.cols(); ++j) out(i, off + j) = pv(i, j);
    ids.push_back(p.id());
    offsets.push_back(off);
    off += pv.cols();
  }
  return g.record(std::move(out), track, [ids, offsets, n](Graph& gr, Graph::Node& self) {
    for (std::size_t k = 0; k < ids.size(); ++k) {
      auto& pp = gr.node(ids[k]);
      if (!pp.requires_grad) continue;
      std::size_t c = pp.value.cols();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < c; ++j) pp.grad(i, j) += self.grad(i, offsets[k] + j);
    }
  });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw std::invalid_argument("concat of zero tensors");
  Graph& g = graph_of(parts[0]);
  std::size_t m = parts[0].cols();
  std::size_t total = 0;
  bool track = false;
  for (const Var& p : parts) {
    graph_of(parts[0], p);
    if (p.cols() != m) shape_mismatch("concat_rows", parts[0].value(), p.value());
    total += p.rows();
    track = track || g.tracks(p);
  }
  Tensor out = Tensor::matrix(total, m);
  std::vector<std::size_t> ids, offsets;
  std::size_t off = 0;
  for (const Var& p : parts) {
    const Tensor& pv = p.value();
    std::copy(pv.values().begin(), pv.values().end(), out.values().begin() + static_cast<long>(off * m));
    ids.push_back(p.id());
    offsets.push_back(off);
    off += pv.rows();
  }
  return g.record(std::move(out), track, [ids, offsets, m](Graph& gr, Graph::Node& self) {
    for (std::size_t k = 0; k < ids.size(); ++k) {
      auto& pp = gr.node(ids[k]);
      if (!pp.requires_grad) continue;
      for (std::size_t i = 0; i < pp.grad.size(); ++i) pp.grad[i] += self.grad[offsets[k] * m + i];
    }
  });
}

Var slice_cols(Var a, std::size_t begin, std::size_t end) {
  Graph& g = graph_of(a);
  const Tensor& av = a.value();
  if (begin > end || end > av.cols()) {
    throw ShapeError(fmt::format("slice_cols [{}, {}) outside {}", begin, end, av.shape_string()));
  }
  std::size_t n = av.rows(), w = end - begin;
  Tensor out = Tensor::matrix(n, w);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < w; ++j) out(i, j) = av(i, begin + j);
  std::size_t ia = a.id();
  return g.record(std::move(out), g.tracks(a), [ia, n, w, begin](Graph& gr, Graph::Node& self) {
    auto& pa = gr.node(ia);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < w; ++j) pa.grad(i, begin + j) += self.grad(i, j);
  });
}

Var slice_rows(Var a, std::size_t begin, std::size_t end) {
  Graph& g = graph_of(a);
  const Tensor& av = a.value();
  if (begin > end || end > av.rows()) {
    throw ShapeError(fmt::format("slice_rows [{}, {}) outside {}", begin, end, av.shape_string()));
  }
  std::size_t m = av.cols();
  Tensor out({end - begin, m},
             std::vector<double>(av.values().begin() + static_cast<long>(begin * m),
                                 av.values().begin() + static_cast<long>(end * m)));
  std::size_t ia = a.id();
  return g.record(std::move(out), g.tracks(a), [ia, begin, m](Graph& gr, Graph::Node& self) {
    auto& pa = gr.node(ia);
    for (std::size_t i = 0; i < self.grad.size(); ++i) pa.grad[begin * m + i] += self.grad[i];
  });
}

Var sigmoid(Var a) {
  return unary(a, sigmoid_value, [](double, double y) { return y * (1.0 - y); });
}

Var tanh(Var a) {
  return unary(a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Var gelu(Var a) {
  return unary(a, gelu_value, [](double x, double) {
    double u = kGeluC * (x + kGeluA * x * x * x);
    double t = std::tanh(u);
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * kGeluA * x * x);
  });
}

Var log(Var a) {
  return unary(a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Var clamp(Var a, double lo, double hi) {
  return unary(a, [lo, hi](double x) { return std::clamp(x, lo, hi); },
               [lo, hi](double x, double) { return (x >= lo && x <= hi) ? 1.0 : 0.0; });
}

Var square(Var a) {
  return unary(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Var softmax_rows(Var a) {
  Graph& g = graph_of(a);
  const Tensor& av = a.value();
  std::size_t n = av.rows(), m = av.cols();
  Tensor out(av.shape());
  for (std::size_t i = 0; i < n; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < m; ++j) mx = std::max(mx, av(i, j));
    double s = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      out(i, j) = std::exp(av(i, j) - mx);
      s += out(i, j);
    }
    for (std::size_t j = 0; j < m; ++j) out(i, j) /= s;
  }
  std::size_t ia = a.id();
  return g.record(std::move(out), g.tracks(a), [ia, n, m](Graph& gr, Graph::Node& self) {
    auto& pa = gr.node(ia);
    for (std::size_t i = 0; i < n; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < m; ++j) dot += self.grad(i, j) * self.value(i, j);
      for (std::size_t j = 0; j < m; ++j) pa.grad(i, j) += self.value(i, j) * (self.grad(i, j) - dot);
    }
  });
}

Var sum(Var a) {
  Graph& g = graph_of(a);
  double s = 0.0;
  for (double v : a.value().values()) s += v;
  std::size_t ia = a.id();
  return g.record(Tensor::scalar(s), g.tracks(a), [ia](Graph& gr, Graph::Node& self) {
    auto& pa = gr.node(ia);
    for (double& x : pa.grad.values()) x += self.grad[0];
  });
}

Var mean(Var a) {
  return scale(sum(a), 1.0 / static_cast<double>(a.value().size()));
}

Var dropout(Var a, double rate, std::mt19937_64& rng) {
  if (rate < 0.0 || rate >= 1.0) throw std::invalid_argument(fmt::format("dropout rate {} outside [0, 1)", rate));
  Graph& g = graph_of(a);
  if (!g.training() || rate == 0.0) return a;
  const Tensor& av = a.value();
  std::bernoulli_distribution keep(1.0 - rate);
  Tensor mask(av.shape());
  double s = 1.0 / (1.0 - rate);
  for (std::size_t i = 0; i < av.size(); ++i) mask[i] = keep(rng) ? s : 0.0;
  return mul(a, g.constant(std::move(mask)));
}

Var attend(Var query, std::span<const Var> keys, std::span<const Var> values, double scale_factor) {
  Graph& g = graph_of(query);
  if (keys.empty() || keys.size() != values.size()) {
    throw ShapeError(fmt::format("attend needs matching non-empty key/value lists, got {} and {}",
                                 keys.size(), values.size()));
  }
  const Tensor& qv = query.value();
  std::size_t d = qv.cols();
  if (qv.rows() != 1) throw ShapeError(fmt::format("attend query must be one row, got {}", qv.shape_string()));
  std::size_t dv = values[0].cols();
  std::size_t n = keys.size();
  bool track = g.tracks(query);
  std::vector<std::size_t> kid(n), vid(n);
  std::vector<double> w(n);
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < n; ++j) {
    graph_of(query, keys[j]);
    graph_of(query, values[j]);
    const Tensor& kv = keys[j].value();
    const Tensor& vv = values[j].value();
    if (kv.rows() != 1 || kv.cols() != d) shape_mismatch("attend(key)", qv, kv);
    if (vv.rows() != 1 || vv.cols() != dv) shape_mismatch("attend(value)", values[0].value(), vv);
    double s = 0.0;
    for (std::size_t c = 0; c < d; ++c) s += qv[c] * kv[c];
    w[j] = s * scale_factor;
    mx = std::max(mx, w[j]);
    kid[j] = keys[j].id();
    vid[j] = values[j].id();
    track = track || g.tracks(keys[j]) || g.tracks(values[j]);
  }
  double z = 0.0;
  for (double& x : w) {
    x = std::exp(x - mx);
    z += x;
  }
  for (double& x : w) x /= z;
  Tensor out = Tensor::matrix(1, dv);
  for (std::size_t j = 0; j < n; ++j) {
    const Tensor& vv = values[j].value();
    for (std::size_t c = 0; c < dv; ++c) out[c] += w[j] * vv[c];
  }
  std::size_t iq = query.id();
  return g.record(std::move(out), track,
                  [iq, kid, vid, w, d, dv, scale_factor](Graph& gr, Graph::Node& self) {
                    std::size_t n = w.size();
                    // d out / d w_j = v_j . grad
                    std::vector<double> dw(n);
                    double dot = 0.0;
                    for (std::size_t j = 0; j < n; ++j) {
                      auto& pv = gr.node(vid[j]);
                      double s = 0.0;
                      for (std::size_t c = 0; c < dv; ++c) s += pv.value[c] * self.grad[c];
                      dw[j] = s;
                      dot += w[j] * s;
                      if (pv.requires_grad) {
                        for (std::size_t c = 0; c < dv; ++c) pv.grad[c] += w[j] * self.grad[c];
                      }
                    }
                    auto& pq = gr.node(iq);
                    for (std::size_t j = 0; j < n; ++j) {
                      double dlogit = w[j] * (dw[j] - dot) * scale_factor;
                      if (dlogit == 0.0) continue;
                      auto& pk = gr.node(kid[j]);
                      if (pq.requires_grad) {
                        for (std::size_t c = 0; c < d; ++c) pq.grad[c] += dlogit * pk.value[c];
                      }
                      if (pk.requires_grad) {
                        for (std::size_t c = 0; c < d; ++c) pk.grad[c] += dlogit * pq.value[c];
                      }
                    }
                  });
}

}  // namespace hexfleet::ad
