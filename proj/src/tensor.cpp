#include "hexfleet/tensor.hpp"

#include <algorithm>
#include <functional>
#include <numeric>

#include <fmt/format.h>
#include <fmt/ranges.h>

#include "hexfleet/errors.hpp"

namespace hexfleet::ad {
namespace {

std::size_t element_count(const std::vector<std::size_t>& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

}  // namespace

std::string shape_string(const std::vector<std::size_t>& shape) {
  return fmt::format("[{}]", fmt::join(shape, "x"));
}

Tensor::Tensor(std::vector<std::size_t> shape, double fill)
    : shape_(std::move(shape)), values_(element_count(shape_), fill) {}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> values)
    : shape_(std::move(shape)), values_(std::move(values)) {
  if (values_.size() != element_count(shape_)) {
    throw ShapeError(fmt::format("shape {} needs {} values, got {}", ad::shape_string(shape_),
                                 element_count(shape_), values_.size()));
  }
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, double fill) {
  return Tensor({rows, cols}, fill);
}

Tensor Tensor::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  std::size_t n = rows.size();
  std::size_t m = n ? rows.begin()->size() : 0;
  std::vector<double> v;
  v.reserve(n * m);
  for (const auto& r : rows) {
    if (r.size() != m) throw ShapeError("ragged rows in Tensor::from_rows");
    v.insert(v.end(), r.begin(), r.end());
  }
  return Tensor({n, m}, std::move(v));
}

Tensor Tensor::row(std::span<const double> values) {
  return Tensor({1, values.size()}, std::vector<double>(values.begin(), values.end()));
}

Tensor Tensor::scalar(double v) { return Tensor({1, 1}, std::vector<double>{v}); }

std::size_t Tensor::rows() const {
  if (shape_.size() == 2) return shape_[0];
  if (shape_.size() == 1) return 1;
  if (shape_.empty()) return 1;
  throw ShapeError(fmt::format("rank-{} tensor has no matrix view", shape_.size()));
}

std::size_t Tensor::cols() const {
  if (shape_.size() == 2) return shape_[1];
  if (shape_.size() == 1) return shape_[0];
  if (shape_.empty()) return 1;
  throw ShapeError(fmt::format("rank-{} tensor has no matrix view", shape_.size()));
}

void Tensor::fill(double v) { std::fill(values_.begin(), values_.end(), v); }

std::string Tensor::shape_string() const { return ad::shape_string(shape_); }

Parameter& ParameterSet::add(const std::string& name, Tensor init) {
  Tensor grad(init.shape(), 0.0);
  auto [it, inserted] = params_.insert_or_assign(name, Parameter{std::move(init), std::move(grad)});
  return it->second;
}

Parameter& ParameterSet::at(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw DomainError(fmt::format("no parameter named '{}'", name));
  return it->second;
}

const Parameter& ParameterSet::at(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw DomainError(fmt::format("no parameter named '{}'", name));
  return it->second;
}

void ParameterSet::zero_grad() {
  for (auto& [_, p] : params_) p.grad.fill(0.0);
}

std::vector<Parameter*> ParameterSet::select(const std::string& prefix) {
  std::vector<Parameter*> out;
  for (auto& [name, p] : params_) {
    if (name.starts_with(prefix)) out.push_back(&p);
  }
  return out;
}

std::vector<std::string> ParameterSet::names() const {
  std::vector<std::string> out;
  for (const auto& [name, _] : params_) out.push_back(name);
  return out;
}

std::map<std::string, Tensor> ParameterSet::values() const {
  std::map<std::string, Tensor> out;
  for (const auto& [name, p] : params_) out.emplace(name, p.value);
  return out;
}

void ParameterSet::assign(const std::map<std::string, Tensor>& values) {
  for (const auto& [name, t] : values) add(name, t);
}

}  // namespace hexfleet::ad
