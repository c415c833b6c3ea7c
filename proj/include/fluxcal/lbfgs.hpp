#pragma once

#include <functional>
#include <vector>

namespace fluxcal {

// f(x, grad) -> value; fills grad (same length as x).
using ObjectiveFn = std::function<double(const std::vector<double>&, std::vector<double>&)>;

struct LbfgsOptions {
  int max_iterations = 1000;
  double gradient_tolerance = 1e-3;  // inf-norm stopping test
  int history = 20;
  int max_line_search = 60;
};

struct LbfgsResult {
  std::vector<double> x;
  double f = 0.0;
  double grad_inf_norm = 0.0;
  int iterations = 0;
  int evaluations = 0;
  bool converged = false;  // gradient tolerance met
};

// Limited-memory BFGS minimizer with a strong-Wolfe line search. Non-finite
// trial values are treated as line-search rejections, so objectives with
// restricted domains are acceptable as long as x0 is feasible. Throws
// NumericalError when the objective is non-finite at x0.
LbfgsResult lbfgs_minimize(const ObjectiveFn& fn, std::vector<double> x0,
                           const LbfgsOptions& options);

}  // namespace fluxcal
