#include "hexfleet/optim.hpp"

#include <cmath>
#include <vector>

#include <fmt/format.h>

#include "hexfleet/errors.hpp"

namespace hexfleet::ad {

void adam_step(std::span<const std::pair<std::string, Parameter*>> params, OptimizerState& state,
               const AdamConfig& config) {
  for (const auto& [name, p] : params) {
    if (!p->grad.same_shape(p->value)) {
      throw ShapeError(fmt::format("gradient of '{}' is {} but value is {}", name, p->grad.shape_string(),
                                   p->value.shape_string()));
    }
    auto it = state.moments.find(name);
    if (it == state.moments.end()) {
      it = state.moments.emplace(name, AdamMoments{Tensor(p->value.shape()), Tensor(p->value.shape())}).first;
    } else if (!it->second.m.same_shape(p->value)) {
      throw ShapeError(fmt::format("optimizer moments of '{}' are {} but value is {}", name,
                                   it->second.m.shape_string(), p->value.shape_string()));
    }
  }
  ++state.step;
  double t = static_cast<double>(state.step);
  double c1 = 1.0 - std::pow(config.beta1, t);
  double c2 = 1.0 - std::pow(config.beta2, t);
  for (const auto& [name, p] : params) {
    auto& mom = state.moments.at(name);
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      double g = p->grad[i];
      mom.m[i] = config.beta1 * mom.m[i] + (1.0 - config.beta1) * g;
      mom.v[i] = config.beta2 * mom.v[i] + (1.0 - config.beta2) * g * g;
      double mhat = mom.m[i] / c1;
      double vhat = mom.v[i] / c2;
      p->value[i] -= config.lr * mhat / (std::sqrt(vhat) + config.eps);
    }
  }
}

void Adam::step(ParameterSet& params, const std::string& prefix) {
  std::vector<std::pair<std::string, Parameter*>> selected;
  for (auto& [name, p] : params) {
    if (name.starts_with(prefix)) selected.emplace_back(name, &p);
  }
  adam_step(selected, state_, config_);
}

void Adam::step(ParameterSet& params, std::span<const std::string> prefixes) {
  std::vector<std::pair<std::string, Parameter*>> selected;
  for (auto& [name, p] : params) {
    for (const auto& prefix : prefixes) {
      if (name.starts_with(prefix)) {
        selected.emplace_back(name, &p);
        break;
      }
    }
  }
  adam_step(selected, state_, config_);
}

}  // namespace hexfleet::ad
