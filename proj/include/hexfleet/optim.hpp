#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>

#include "hexfleet/tensor.hpp"

namespace hexfleet::ad {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamMoments {
  Tensor m;
  Tensor v;
};

struct OptimizerState {
  std::map<std::string, AdamMoments> moments;
  std::uint64_t step = 0;
};

// One bias-corrected Adam update of every named parameter from its grad.
// Moments are created on first sight; shape drift throws ShapeError.
void adam_step(std::span<const std::pair<std::string, Parameter*>> params, OptimizerState& state,
               const AdamConfig& config);

class Adam {
 public:
  explicit Adam(AdamConfig config = {}) : config_(config) {}

  // Updates every parameter in the set whose name starts with prefix.
  void step(ParameterSet& params, const std::string& prefix = "");
  // One update over every parameter matching any of the prefixes.
  void step(ParameterSet& params, std::span<const std::string> prefixes);

  const OptimizerState& state() const { return state_; }
  const AdamConfig& config() const { return config_; }

 private:
  AdamConfig config_;
  OptimizerState state_;
};

}  // namespace hexfleet::ad
