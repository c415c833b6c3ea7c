#include "fluxcal/calibration.hpp"

#include <algorithm>
#include <cmath>

#include "fluxcal/errors.hpp"
#include "fluxcal/lbfgs.hpp"
#include "fluxcal/model.hpp"
#include "fluxcal/rng.hpp"

namespace fluxcal {

CalibrationResult calibrate(const FitResult& fit, const BootstrapEnsemble& ensemble,
                            const CalibrationRef& ref) {
  if (!(ref.phi_ref > 0.0)) throw ValidationError("calibrate: phi_ref must be positive");
  if (!std::isfinite(ref.n_ref)) throw ValidationError("calibrate: n_ref must be finite");

  CalibrationResult result;
  result.ref = ref;
  result.beta = fit.beta;
  result.phi_ref_hat = eval_polynomial(fit.beta, ref.n_ref);
  if (!(result.phi_ref_hat > 0.0))
    throw NumericalError("calibrate: linearized reference flux is not positive");
  result.rho_hat = ref.phi_ref / result.phi_ref_hat;

  result.beta_replicates.reserve(ensemble.replicates.size());
  for (const FitResult& rep : ensemble.replicates) {
    const double phi_hat = eval_polynomial(rep.beta, ref.n_ref);
    if (!(phi_hat > 0.0))
      throw NumericalError("calibrate: a replicate's linearized reference flux is not positive");
    result.beta_replicates.push_back(rep.beta);
    result.phi_ref_hat_replicates.push_back(phi_hat);
    result.rho_replicates.push_back(ref.phi_ref / phi_hat);
  }
  return result;
}

CalibratedValue apply_calibration(const CalibrationResult& result, double n) {
  CalibratedValue value;
  // phi_ref * (poly(n) / poly(n_ref)): the ratio is exactly 1 at n == n_ref,
  // so the reference point reproduces phi_ref to the last bit.
  value.phi_cal = result.ref.phi_ref * (eval_polynomial(result.beta, n) / result.phi_ref_hat);
  value.replicates.resize(result.beta_replicates.size());
  for (std::size_t b = 0; b < result.beta_replicates.size(); ++b) {
    value.replicates[b] = result.ref.phi_ref * (eval_polynomial(result.beta_replicates[b], n) /
                                                result.phi_ref_hat_replicates[b]);
  }
  return value;
}

LegacyFit legacy_ls_fit(const std::vector<Observation>& obs, const RunDesign& design,
                        const Hyperparams& hyper, const OptimizerConfig& config) {
  validate_design(design);
  validate_observations(obs, design);
  validate_hyperparams(hyper);
  validate_optimizer_config(config);

  const bool sphere = design.mode == InstrumentMode::IntegratingSphere;
  const std::size_t n_flux = static_cast<std::size_t>(design.x_count());
  const std::size_t n_aux = static_cast<std::size_t>(design.v_count());
  const std::size_t n_flux2 = sphere ? 0 : n_aux;
  const std::size_t n_psi = sphere ? n_aux : 0;
  const std::size_t n_beta = static_cast<std::size_t>(hyper.p) + 1;
  const std::size_t n_par = n_flux + n_flux2 + n_psi + n_beta;
  if (obs.size() < n_par)
    throw ValidationError("legacy_ls_fit: under-determined problem");

  // Pack: [log flux..., log flux2..., logit psi..., beta...].
  const auto unpack = [&](const std::vector<double>& v, ModelParams& p,
                          std::vector<double>& beta) {
    std::size_t k = 0;
    p.flux.resize(n_flux);
    for (auto& f : p.flux) f = std::exp(v[k++]);
    p.flux2.resize(n_flux2);
    for (auto& f : p.flux2) f = std::exp(v[k++]);
    p.psi.resize(n_psi);
    for (auto& s : p.psi) s = 1.0 / (1.0 + std::exp(-v[k++]));
    beta.assign(v.begin() + static_cast<std::ptrdiff_t>(k), v.end());
  };

  ModelParams p;
  std::vector<double> beta_local;
  std::vector<double> fd_grad;
  const ObjectiveFn objective = [&](const std::vector<double>& v, std::vector<double>& grad) {
    unpack(v, p, beta_local);
    const std::vector<double> phi = composed_fluxes(design, p);

    std::size_t max_i = 0;
    for (std::size_t i = 1; i < phi.size(); ++i)
      if (phi[i] > phi[max_i]) max_i = i;
    const double max_dev = hyper.phi_max - phi[max_i];

    double value = max_dev * max_dev;
    grad.assign(v.size(), 0.0);
    double* g_flux = grad.data();
    double* g_flux2 = g_flux + n_flux;
    double* g_psi = g_flux2 + n_flux2;
    double* g_beta = g_psi + n_psi;

    // d(value)/d phi_i accumulated per run, then pushed through the flux
    // composition; the max term contributes only at the arg-max run.
    std::vector<double> g_phi(phi.size(), 0.0);
    g_phi[max_i] += -2.0 * max_dev;

    for (const Observation& o : obs) {
      const double pred = eval_polynomial(beta_local, o.n);
      const double r = pred - phi[o.run_index];
      value += r * r;
      double power = 1.0;
      for (std::size_t m = 0; m < n_beta; ++m) {
        g_beta[m] += 2.0 * r * power;
        power *= o.n;
      }
      g_phi[o.run_index] += -2.0 * r;
    }

    for (std::size_t i = 0; i < phi.size(); ++i) {
      if (g_phi[i] == 0.0) continue;
      const DesignRow& row = design.rows[i];
      if (sphere) {
        for (std::size_t j = 0; j < n_flux; ++j)
          if (row.x[j]) g_flux[j] += g_phi[i] * p.flux[j];  // chain rule through log
        for (std::size_t k = 0; k < n_psi; ++k) {
          if (row.v[k]) {
            g_flux[n_flux - 1] += g_phi[i] * p.psi[k] * p.flux[n_flux - 1];
            g_psi[k] += g_phi[i] * p.flux[n_flux - 1] * p.psi[k] * (1.0 - p.psi[k]);
          }
        }
      } else {
        for (std::size_t j = 0; j < n_flux; ++j)
          if (row.x[j]) g_flux[j] += g_phi[i] * p.flux[j];
        for (std::size_t k = 0; k < n_flux2; ++k)
          if (row.v[k]) g_flux2[k] += g_phi[i] * p.flux2[k];
      }
    }
    return value;
  };

  // Start from evenly split fluxes and an identity-like linearization.
  std::vector<double> x0(n_par, 0.0);
  {
    std::size_t k = 0;
    const double flux0 = sphere ? hyper.phi_max / static_cast<double>(n_flux)
                                : hyper.phi_max / (2.0 * static_cast<double>(n_flux));
    for (std::size_t j = 0; j < n_flux; ++j) x0[k++] = std::log(flux0);
    for (std::size_t j = 0; j < n_flux2; ++j)
      x0[k++] = std::log(hyper.phi_max / (2.0 * static_cast<double>(n_flux2)));
    for (std::size_t j = 0; j < n_psi; ++j) {
      const double psi0 = static_cast<double>(j + 1) / static_cast<double>(n_psi + 1);
      x0[k++] = std::log(psi0 / (1.0 - psi0));
    }
    x0[k + 1] = 1.0;  // beta_1
  }

  LbfgsOptions lopt;
  lopt.max_iterations = config.max_iterations;
  lopt.gradient_tolerance = config.gradient_tolerance;
  LbfgsResult best;
  bool any = false;
  for (int attempt = 0; attempt < config.restarts; ++attempt) {
    std::vector<double> start = x0;
    if (attempt > 0) {
      Rng rng(derive_seed(config.seed, 7000 + static_cast<std::uint64_t>(attempt)));
      for (std::size_t j = 0; j < n_flux + n_flux2; ++j) start[j] += 0.05 * rng.normal();
    }
    try {
      LbfgsResult r = lbfgs_minimize(objective, std::move(start), lopt);
      if (std::isfinite(r.f) && (!any || r.f < best.f)) {
        best = std::move(r);
        any = true;
      }
    } catch (const NumericalError&) {
    }
  }
  if (!any) throw NumericalError("legacy_ls_fit: optimization failed at every start");

  LegacyFit fit;
  ModelParams p_best;
  unpack(best.x, p_best, fit.beta);
  fit.flux = p_best.flux;
  fit.flux2 = p_best.flux2;
  fit.psi = p_best.psi;
  fit.fitted_flux = composed_fluxes(design, p_best);
  fit.objective = best.f;
  fit.converged = best.converged;
  return fit;
}

}  // namespace fluxcal
