#include "hexfleet/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace hexfleet::ad {

std::vector<GradCheckResult> check_gradients(ParameterSet& params, const std::function<Var(Graph&)>& loss_fn,
                                             double h) {
  params.zero_grad();
  {
    Graph g;
    g.backward(loss_fn(g));
  }
  auto eval = [&] {
    Graph g;
    return loss_fn(g).item();
  };
  std::vector<GradCheckResult> out;
  for (auto& [name, p] : params) {
    double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      double orig = p.value[i];
      p.value[i] = orig + h;
      double up = eval();
      p.value[i] = orig - h;
      double down = eval();
      p.value[i] = orig;
      double numeric = (up - down) / (2.0 * h);
      double analytic = p.grad[i];
      diff2 += (analytic - numeric) * (analytic - numeric);
      a2 += analytic * analytic;
      n2 += numeric * numeric;
    }
    double denom = std::max({std::sqrt(a2), std::sqrt(n2), 1e-7});
    out.push_back({name, std::sqrt(diff2) / denom, std::sqrt(a2)});
  }
  return out;
}

double max_relative_error(const std::vector<GradCheckResult>& results) {
  double m = 0.0;
  for (const auto& r : results) m = std::max(m, r.relative_error);
  return m;
}

}  // namespace hexfleet::ad
