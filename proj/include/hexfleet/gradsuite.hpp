#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace hexfleet {

struct GradSuiteRow {
  std::string block;
  std::size_t checks = 0;
  double max_relative_error = 0.0;
  bool passed = false;
};

inline constexpr double kGradTolerance = 1e-4;

// Central finite-difference checks of every autodiff primitive and of the
// composite blocks (GCN layer, GRU cell, attention, decoder layer, action
// head, GeoLoss in both modes, a two-step policy), each on `reps` random
// shapes of at most 8 x 8.
std::vector<GradSuiteRow> run_gradient_suite(std::uint64_t seed, int reps = 3);

}  // namespace hexfleet
