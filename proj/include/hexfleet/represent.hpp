#pragma once

#include <array>
#include <random>
#include <vector>

#include "hexfleet/autodiff.hpp"
#include "hexfleet/hexgraph.hpp"

namespace hexfleet::represent {

// Parameter names of the per-view GCN weights W^i (m^i x d_g).
const std::string& gcn_weight_name(hex::ViewLevel level);

void init_gcn_params(ad::ParameterSet& params, std::size_t hidden, std::mt19937_64& rng);

// A X W, with A replaced by A + I when self_loops is set. No
// normalization and no activation.
ad::Var gcn_view(ad::Var adjacency, ad::Var features, ad::Var weights, bool self_loops = true);

// Micro, meso and macro views in that order; a disabled view contributes a
// zero block of the same width.
using ViewMask = std::array<bool, 3>;
inline constexpr ViewMask kAllViews{true, true, true};

struct ViewInputs {
  const hex::MultiviewGraph* graph = nullptr;
  std::array<ad::Tensor, 3> features;  // X^i_t, already normalized/masked
  std::array<std::size_t, 3> ego{};    // ego cell per view
};

// Emb_G: full-graph GCN per view, ego rows concatenated (1 x 3 d_g).
ad::Var multiview_embed(ad::Graph& g, ad::ParameterSet& params, const ViewInputs& inputs, bool self_loops = true,
                        const ViewMask& mask = kAllViews);

// Ego row of (A [+ I]) X for one view. Because the GCN is linear, the ego
// embedding equals this row times W^i.
std::vector<double> ego_aggregate(const hex::HexGrid& grid, const ad::Tensor& features, std::size_t ego,
                                  bool self_loops = true);

// Same result as multiview_embed, starting from precomputed ego aggregates.
ad::Var multiview_embed_from_aggregates(ad::Graph& g, ad::ParameterSet& params,
                                        const std::array<std::vector<double>, 3>& aggregates,
                                        const ViewMask& mask = kAllViews);

// s_t = Concat(Emb_G, Emb_loc).
ad::Var state_embed(ad::Var graph_embedding, ad::Var location_embedding);

}  // namespace hexfleet::represent
