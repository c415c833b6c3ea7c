#include "fluxcal/model.hpp"

#include <cmath>
#include <numeric>

#include "fluxcal/errors.hpp"
#include "fluxcal/legendre.hpp"

namespace fluxcal {

double compose_flux(const RunDesign& design, std::size_t row_index, const ModelParams& params) {
  if (row_index >= design.n_runs()) throw ValidationError("compose_flux: row out of range");
  const DesignRow& row = design.rows[row_index];
  if (row.x.size() != params.flux.size())
    throw ValidationError("compose_flux: flux length does not match the design row");
  double phi = 0.0;
  if (design.mode == InstrumentMode::IntegratingSphere) {
    if (row.v.size() != params.psi.size())
      throw ValidationError("compose_flux: psi length does not match the design row");
    for (std::size_t j = 0; j < row.x.size(); ++j)
      if (row.x[j]) phi += params.flux[j];
    const double aperture_flux = params.flux.empty() ? 0.0 : params.flux.back();
    for (std::size_t k = 0; k < row.v.size(); ++k)
      if (row.v[k]) phi += params.psi[k] * aperture_flux;
  } else {
    if (row.v.size() != params.flux2.size())
      throw ValidationError("compose_flux: flux2 length does not match the design row");
    for (std::size_t j = 0; j < row.x.size(); ++j)
      if (row.x[j]) phi += params.flux[j];
    for (std::size_t k = 0; k < row.v.size(); ++k)
      if (row.v[k]) phi += params.flux2[k];
  }
  return phi;
}

std::vector<double> composed_fluxes(const RunDesign& design, const ModelParams& params) {
  std::vector<double> out(design.n_runs());
  for (std::size_t i = 0; i < design.n_runs(); ++i) out[i] = compose_flux(design, i, params);
  return out;
}

double expected_reading(double phi, std::span<const double> alpha, double phi_max) {
  const int p = static_cast<int>(alpha.size()) - 1;
  const double s = scale_to_unit(phi, phi_max);
  std::vector<double> basis(alpha.size());
  legendre_all(p, s, basis);
  double mean = 0.0;
  for (int m = 0; m <= p; ++m) mean += alpha[m] * basis[m];
  return mean;
}

double noise_sd(double phi, const ModelParams& params, const Hyperparams& hyper) {
  if (!(params.sigma > 0)) throw ValidationError("noise_sd: sigma must be positive");
  if (hyper.noise_model == NoiseModel::Constant) return params.sigma;
  const double knee = hyper.kappa0 * hyper.phi_max;
  return phi > knee ? params.sigma * phi : params.sigma * knee;
}

namespace {

struct PenaltyTerms {
  double value = 0.0;
  double d_alpha1 = 0.0;  // d/d alpha_1
  double d_gamma = 0.0;
};

}  // namespace

double penalized_loglik_with_gradient(const std::vector<Observation>& obs,
                                      const RunDesign& design, const ModelParams& params,
                                      const Hyperparams& hyper, std::vector<double>& grad) {
  if (!(params.sigma > 0) || !(params.gamma > 0))
    throw ValidationError("penalized_loglik: sigma and gamma must be positive");
  validate_params(params, design, hyper);

  const bool sphere = design.mode == InstrumentMode::IntegratingSphere;
  const int p = hyper.p;
  const std::size_t n_flux = params.flux.size();
  const std::size_t n_flux2 = params.flux2.size();
  const std::size_t n_psi = params.psi.size();
  const std::size_t n_alpha = params.alpha.size();
  const std::size_t n_par = n_flux + n_flux2 + n_psi + n_alpha + 2;
  grad.assign(n_par, 0.0);
  double* g_flux = grad.data();
  double* g_flux2 = g_flux + n_flux;
  double* g_psi = g_flux2 + n_flux2;
  double* g_alpha = g_psi + n_psi;
  double& g_gamma = grad[n_par - 2];
  double& g_sigma = grad[n_par - 1];

  const double pm = hyper.phi_max;
  const double knee = hyper.kappa0 * pm;
  const bool piecewise = hyper.noise_model == NoiseModel::PiecewiseProportional;

  // Per-run flux and mean response, then the data term.
  std::vector<double> basis(n_alpha), dbasis(n_alpha);
  std::vector<double> phi_of_run(design.n_runs());
  for (std::size_t i = 0; i < design.n_runs(); ++i) phi_of_run[i] = compose_flux(design, i, params);

  double value = 0.0;
  double weighted_rss = 0.0;  // sum r_i^2 / sigma_i^2
  for (const Observation& o : obs) {
    const double phi = phi_of_run[o.run_index];
    const double s = scale_to_unit(phi, pm);
    legendre_all_with_deriv(p, s, basis, dbasis);
    double mean = 0.0;
    double dmean_ds = 0.0;
    for (std::size_t m = 0; m < n_alpha; ++m) {
      mean += params.alpha[m] * basis[m];
      dmean_ds += params.alpha[m] * dbasis[m];
    }
    const double r = o.n - mean;
    const bool above_knee = piecewise && phi > knee;
    const double sig_i = piecewise ? (above_knee ? params.sigma * phi : params.sigma * knee)
                                   : params.sigma;
    const double inv_var = 1.0 / (sig_i * sig_i);
    value -= 0.5 * r * r * inv_var + std::log(sig_i);
    weighted_rss += r * r * inv_var;

    for (std::size_t m = 0; m < n_alpha; ++m) g_alpha[m] += r * basis[m] * inv_var;

    // d/d phi_i: through the mean curve, and through sigma_i above the knee.
    double g_phi = r * dmean_ds * (2.0 / pm) * inv_var;
    if (above_knee) g_phi += (r * r * inv_var - 1.0) / phi;

    const DesignRow& row = design.rows[o.run_index];
    if (sphere) {
      for (std::size_t j = 0; j < n_flux; ++j)
        if (row.x[j]) g_flux[j] += g_phi;
      const double aperture_flux = params.flux.back();
      for (std::size_t k = 0; k < n_psi; ++k) {
        if (row.v[k]) {
          g_psi[k] += g_phi * aperture_flux;
          g_flux[n_flux - 1] += g_phi * params.psi[k];
        }
      }
    } else {
      for (std::size_t j = 0; j < n_flux; ++j)
        if (row.x[j]) g_flux[j] += g_phi;
      for (std::size_t k = 0; k < n_flux2; ++k)
        if (row.v[k]) g_flux2[k] += g_phi;
    }
  }

  // Flux-sum constraint; spans both beams in conjoiner mode.
  const double flux_sum = std::accumulate(params.flux.begin(), params.flux.end(), 0.0) +
                          std::accumulate(params.flux2.begin(), params.flux2.end(), 0.0);
  const double sum_dev = flux_sum - pm;
  value -= 0.5 * sum_dev * sum_dev / (hyper.tau * hyper.tau);
  const double g_sum = -sum_dev / (hyper.tau * hyper.tau);
  for (std::size_t j = 0; j < n_flux; ++j) g_flux[j] += g_sum;
  for (std::size_t k = 0; k < n_flux2; ++k) g_flux2[k] += g_sum;

  // Shrinkage penalties on the polynomial coefficients and the gamma prior.
  const double inv_g2 = 1.0 / (params.gamma * params.gamma);
  double quad = 0.0;
  if (n_alpha >= 2) {
    const double dev1 = params.alpha[1] - pm / 2.0;
    quad += dev1 * dev1;
    g_alpha[1] -= dev1 * inv_g2;
  }
  for (std::size_t m = 2; m < n_alpha; ++m) {
    quad += params.alpha[m] * params.alpha[m];
    g_alpha[m] -= params.alpha[m] * inv_g2;
  }
  value -= 0.5 * quad * inv_g2 + p * std::log(params.gamma) + hyper.lambda_rate * params.gamma;
  g_gamma = quad * inv_g2 / params.gamma - p / params.gamma - hyper.lambda_rate;

  g_sigma = (weighted_rss - static_cast<double>(obs.size())) / params.sigma;

  return value;
}

double penalized_loglik(const std::vector<Observation>& obs, const RunDesign& design,
                        const ModelParams& params, const Hyperparams& hyper) {
  std::vector<double> grad;
  return penalized_loglik_with_gradient(obs, design, params, hyper, grad);
}

std::vector<double> penalized_loglik_gradient(const std::vector<Observation>& obs,
                                              const RunDesign& design, const ModelParams& params,
                                              const Hyperparams& hyper) {
  std::vector<double> grad;
  penalized_loglik_with_gradient(obs, design, params, hyper, grad);
  return grad;
}

}  // namespace fluxcal
