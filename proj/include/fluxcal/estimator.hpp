#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "fluxcal/types.hpp"

namespace fluxcal {

struct OptimizerConfig {
  int max_iterations = 2000;
  double gradient_tolerance = 1e-2;  // inf-norm in reparameterized coordinates
  int restarts = 3;                  // total starts; the first is unjittered
  std::uint64_t seed = 1;            // drives the restart jitter
};

void validate_optimizer_config(const OptimizerConfig& config);

// Maximum-likelihood fit. Positivity of the fluxes, gamma and sigma is
// enforced by a log reparameterization and psi_k by a logistic one, so the
// optimizer runs unconstrained. When warm_start is given it replaces the
// default initialization (bootstrap replicates warm-start at the base MLE).
// converged=false means the gradient tolerance was not met within
// max_iterations; the best point found is still returned.
FitResult fit_mle(const std::vector<Observation>& obs, const RunDesign& design,
                  const Hyperparams& hyper, const OptimizerConfig& config,
                  const ModelParams* warm_start = nullptr);

// Monomial linearization coefficients from Legendre coefficients: evaluates
// the mean response on a regular grid spanning the full flux interval and
// ordinary-least-squares fits flux on powers of the expected reading.
// Readings are internally mapped to [-1,1] before forming powers and the
// coefficients transformed back, which keeps the normal equations well
// conditioned at high degree without changing the result.
std::vector<double> derive_beta(const std::vector<double>& alpha, const Hyperparams& hyper,
                                int grid_size = 1001);

struct CvDegree {
  int p = 0;
  std::vector<double> fold_mse;  // K held-out mean squared reading errors
  double mean_mse = 0.0;
};

struct CvResult {
  std::vector<CvDegree> per_degree;
  int recommended_p = 0;  // argmin mean MSE, ties to the smaller degree
};

// K-fold cross validation over polynomial degree. Folds partition runs (not
// individual repeat observations) with a seeded shuffle; the same partition
// is reused for every degree.
CvResult cross_validate(const std::vector<Observation>& obs, const RunDesign& design,
                        const Hyperparams& hyper, const std::vector<int>& p_range, int folds,
                        std::uint64_t seed, const OptimizerConfig& config);

// Power-series evaluation beta_0 + sum_m beta_m n^m.
double eval_polynomial(std::span<const double> coeffs, double n);

}  // namespace fluxcal
