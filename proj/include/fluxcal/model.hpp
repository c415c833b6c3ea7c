#pragma once

#include <span>
#include <vector>

#include "fluxcal/types.hpp"

namespace fluxcal {

// Flux presented to the instrument for one run.
//   sphere:    sum_j x_j phi_j + sum_k v_k psi_k phi_J
//   conjoiner: sum_j x_j phi1_j + sum_k v_k phi2_k
double compose_flux(const RunDesign& design, std::size_t row, const ModelParams& params);

std::vector<double> composed_fluxes(const RunDesign& design, const ModelParams& params);

// Mean reading at flux phi: alpha_0 + sum_m alpha_m P_m(s(phi)).
double expected_reading(double phi, std::span<const double> alpha, double phi_max);

// Reading-noise standard deviation at flux phi. Constant mode returns sigma;
// PiecewiseProportional returns sigma*phi above the knee kappa0*phi_max and
// the constant sigma*kappa0*phi_max below it.
double noise_sd(double phi, const ModelParams& params, const Hyperparams& hyper);

// Penalized log-likelihood, up to additive constants:
//   -sum_i [ r_i^2/(2 sigma_i^2) + log sigma_i ]
//   - (sum phi - phi_max)^2 / (2 tau^2)
//   - (alpha_1 - phi_max/2)^2 / (2 gamma^2) - log gamma
//   - sum_{m>=2} alpha_m^2 / (2 gamma^2) - (p-1) log gamma
//   - lambda * gamma
// where sigma_i follows the hyper's noise model (recomputed from the current
// fluxes) and the flux-sum penalty spans both beams in conjoiner mode.
double penalized_loglik(const std::vector<Observation>& obs, const RunDesign& design,
                        const ModelParams& params, const Hyperparams& hyper);

// Gradient in the natural coordinates, laid out
// [flux..., flux2..., psi..., alpha..., gamma, sigma].
std::vector<double> penalized_loglik_gradient(const std::vector<Observation>& obs,
                                              const RunDesign& design, const ModelParams& params,
                                              const Hyperparams& hyper);

// Fused value + gradient, used by the optimizer's hot loop.
double penalized_loglik_with_gradient(const std::vector<Observation>& obs,
                                      const RunDesign& design, const ModelParams& params,
                                      const Hyperparams& hyper, std::vector<double>& grad);

}  // namespace fluxcal
