#include "hexfleet/represent.hpp"

#include <cmath>
#include <string>

#include <fmt/format.h>

#include "hexfleet/errors.hpp"

namespace hexfleet::represent {
namespace {

ad::Tensor glorot(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0 / std::sqrt(static_cast<double>(rows)));
  ad::Tensor t = ad::Tensor::matrix(rows, cols);
  for (auto& v : t.values()) v = n(rng);
  return t;
}

}  // namespace

const std::string& gcn_weight_name(hex::ViewLevel level) {
  static const std::array<std::string, 3> names{"gcn.micro", "gcn.meso", "gcn.macro"};
  return names[static_cast<std::size_t>(level)];
}

void init_gcn_params(ad::ParameterSet& params, std::size_t hidden, std::mt19937_64& rng) {
  for (auto level : hex::kViewLevels) {
    params.add(gcn_weight_name(level), glorot(static_cast<std::size_t>(hex::feature_dim(level)), hidden, rng));
  }
}

ad::Var gcn_view(ad::Var adjacency, ad::Var features, ad::Var weights, bool self_loops) {
  const auto& a = adjacency.value();
  if (a.rows() != a.cols()) throw ShapeError(fmt::format("adjacency {} is not square", a.shape_string()));
  if (features.rows() != a.rows()) {
    throw ShapeError(fmt::format("adjacency {} and features {} disagree on node count", a.shape_string(),
                                 features.value().shape_string()));
  }
  ad::Var agg = ad::matmul(adjacency, features);
  if (self_loops) agg = ad::add(agg, features);
  return ad::matmul(agg, weights);
}

ad::Var multiview_embed(ad::Graph& g, ad::ParameterSet& params, const ViewInputs& inputs, bool self_loops,
                        const ViewMask& mask) {
  if (inputs.graph == nullptr) throw std::invalid_argument("multiview_embed needs a graph");
  std::vector<ad::Var> parts;
  for (auto level : hex::kViewLevels) {
    auto i = static_cast<std::size_t>(level);
    const auto& grid = inputs.graph->view(level);
    if (inputs.ego[i] >= grid.size()) {
      throw DomainError(fmt::format("ego cell {} missing from the {} view ({} cells)", inputs.ego[i],
                                    hex::to_string(level), grid.size()));
    }
    auto w = g.param(params.at(gcn_weight_name(level)));
    if (!mask[i]) {
      parts.push_back(g.constant(ad::Tensor::matrix(1, w.cols())));
      continue;
    }
    auto out = gcn_view(g.constant(grid.adjacency(false)), g.constant(inputs.features[i]), w, self_loops);
    parts.push_back(ad::slice_rows(out, inputs.ego[i], inputs.ego[i] + 1));
  }
  return ad::concat_cols(parts);
}

std::vector<double> ego_aggregate(const hex::HexGrid& grid, const ad::Tensor& features, std::size_t ego,
                                  bool self_loops) {
  if (features.rows() != grid.size()) {
    throw ShapeError(fmt::format("features {} do not match {} cells", features.shape_string(), grid.size()));
  }
  if (ego >= grid.size()) throw DomainError(fmt::format("ego cell {} outside grid", ego));
  std::vector<double> row(features.cols(), 0.0);
  auto add_row = [&](std::size_t i) {
    for (std::size_t c = 0; c < row.size(); ++c) row[c] += features(i, c);
  };
  if (self_loops) add_row(ego);
  for (auto j : grid.neighbors(ego)) add_row(j);
  return row;
}

ad::Var multiview_embed_from_aggregates(ad::Graph& g, ad::ParameterSet& params,
                                        const std::array<std::vector<double>, 3>& aggregates, const ViewMask& mask) {
  std::vector<ad::Var> parts;
  for (auto level : hex::kViewLevels) {
    auto i = static_cast<std::size_t>(level);
    auto w = g.param(params.at(gcn_weight_name(level)));
    if (!mask[i]) {
      parts.push_back(g.constant(ad::Tensor::matrix(1, w.cols())));
      continue;
    }
    parts.push_back(ad::matmul(g.constant(ad::Tensor::row(aggregates[i])), w));
  }
  return ad::concat_cols(parts);
}

ad::Var state_embed(ad::Var graph_embedding, ad::Var location_embedding) {
  std::array<ad::Var, 2> parts{graph_embedding, location_embedding};
  return ad::concat_cols(parts);
}

}  // namespace hexfleet::represent
