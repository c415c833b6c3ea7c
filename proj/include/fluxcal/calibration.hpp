#pragma once

#include <vector>

#include "fluxcal/bootstrap.hpp"
#include "fluxcal/estimator.hpp"
#include "fluxcal/types.hpp"

namespace fluxcal {

// Single reference point, treated as exact.
struct CalibrationRef {
  double phi_ref = 0.0;  // reference flux, > 0
  double n_ref = 0.0;    // expected reading at phi_ref
};

struct CalibrationResult {
  CalibrationRef ref;
  double phi_ref_hat = 0.0;  // linearized response at n_ref, base fit
  double rho_hat = 0.0;      // phi_ref / phi_ref_hat
  std::vector<double> beta;  // base linearization coefficients
  std::vector<std::vector<double>> beta_replicates;
  std::vector<double> phi_ref_hat_replicates;
  std::vector<double> rho_replicates;
};

// Single-point calibration: evaluates the linearization at n_ref for the base
// fit and every replicate and forms the ratios rho = phi_ref / phi_ref_hat.
// Throws on a non-positive phi_ref_hat.
CalibrationResult calibrate(const FitResult& fit, const BootstrapEnsemble& ensemble,
                            const CalibrationRef& ref);

struct CalibratedValue {
  double phi_cal = 0.0;
  std::vector<double> replicates;
};

// Calibrated flux at reading n with its bootstrap replicates. Computed as
// phi_ref * (poly(beta, n) / phi_ref_hat) so that n == n_ref returns phi_ref
// bit-exactly for the base value and every replicate.
CalibratedValue apply_calibration(const CalibrationResult& result, double n);

struct LegacyFit {
  std::vector<double> beta;
  std::vector<double> flux;        // per-lamp / beam-1 per-setting
  std::vector<double> flux2;       // beam-2 per-setting (conjoiner)
  std::vector<double> psi;         // aperture fractions (sphere, if present)
  std::vector<double> fitted_flux;
  double objective = 0.0;
  bool converged = false;
};

// The least-squares comparison objective
//   [phi_max - max_i Phi_i]^2 + sum_i [(beta_0 + sum_m beta_m n_i^m) - Phi_i]^2
// minimized jointly over beta and the fluxes composing Phi_i. No noise model,
// no penalties; fluxes kept nonnegative by the same log reparameterization as
// the likelihood fit.
LegacyFit legacy_ls_fit(const std::vector<Observation>& obs, const RunDesign& design,
                        const Hyperparams& hyper, const OptimizerConfig& config);

}  // namespace fluxcal
