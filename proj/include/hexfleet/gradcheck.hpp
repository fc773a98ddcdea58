#pragma once

#include <functional>
#include <string>
#include <vector>

#include "hexfleet/autodiff.hpp"

namespace hexfleet::ad {

struct GradCheckResult {
  std::string name;
  // ||analytic - numeric|| / max(||analytic||, ||numeric||, 1e-7) over the tensor.
  double relative_error = 0.0;
  double analytic_norm = 0.0;
};

// Compares reverse-mode gradients of a scalar loss against central finite
// differences with step h, for every parameter in the set. loss_fn must
// build the loss on the graph it is given, reading parameters via
// Graph::param, and be deterministic.
std::vector<GradCheckResult> check_gradients(ParameterSet& params, const std::function<Var(Graph&)>& loss_fn,
                                             double h = 1e-5);

double max_relative_error(const std::vector<GradCheckResult>& results);

}  // namespace hexfleet::ad
