#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace fluxcal {

enum class InstrumentMode { IntegratingSphere, BeamConjoiner };

enum class NoiseModel { Constant, PiecewiseProportional };

// One experimental run's indicator row.
//   IntegratingSphere: x = lamp off/on flags (J entries; x[J-1] is the
//     variable-aperture lamp at full power), v = aperture-state flags (N_v).
//   BeamConjoiner: x = beam-1 filter-setting flags (J1), v = beam-2 flags (J2).
struct DesignRow {
  std::vector<int> x;
  std::vector<int> v;
};

struct RunDesign {
  InstrumentMode mode = InstrumentMode::IntegratingSphere;
  std::vector<DesignRow> rows;

  std::size_t n_runs() const { return rows.size(); }
  // Entries per rows[i].x / rows[i].v (0 allowed for v).
  int x_count() const { return rows.empty() ? 0 : static_cast<int>(rows.front().x.size()); }
  int v_count() const { return rows.empty() ? 0 : static_cast<int>(rows.front().v.size()); }
};

// Throws ValidationError on non-binary indicators, ragged rows, or violation
// of the at-most-one constraints (aperture states in sphere mode; each beam's
// settings in conjoiner mode).
void validate_design(const RunDesign& design);

// Soft checks: an all-off run and a maximal-flux run are recommended but not
// required. Returns human-readable warnings, empty when none apply.
std::vector<std::string> design_warnings(const RunDesign& design);

struct Observation {
  std::size_t run_index = 0;
  double n = 0.0;  // instrument reading, dimensionless digital number
};

void validate_observations(const std::vector<Observation>& obs, const RunDesign& design);

// Known fixed inputs of the fit. lambda_rate is the rate of the Exponential
// penalty on gamma; configuration usually supplies it as 1/gamma_prior_mean.
struct Hyperparams {
  double phi_max = 1.0;
  double tau = 1e-3;
  double lambda_rate = 1.0;
  int p = 3;                    // polynomial degree
  double kappa0 = 0.2;          // noise knee, PiecewiseProportional only
  double drift_variance = 0.0;  // Var[sum of lamp fluxes], bootstrap drift assumption
  NoiseModel noise_model = NoiseModel::Constant;
};

void validate_hyperparams(const Hyperparams& hyper);

// Unknown parameter vector.
//   flux  = lamp fluxes (sphere) or beam-1 per-setting fluxes (conjoiner)
//   flux2 = beam-2 per-setting fluxes (conjoiner only, else empty)
//   psi   = variable-aperture fractions in [0,1] (sphere only, may be empty)
//   alpha = p+1 Legendre coefficients
struct ModelParams {
  std::vector<double> flux;
  std::vector<double> flux2;
  std::vector<double> psi;
  std::vector<double> alpha;
  double gamma = 1.0;
  double sigma = 1.0;
};

void validate_params(const ModelParams& params, const RunDesign& design, const Hyperparams& hyper);

struct FitResult {
  ModelParams params;
  std::vector<double> beta;         // monomial linearization coefficients
  std::vector<double> fitted_flux;  // per-run composed flux at the MLE
  double loglik = 0.0;
  bool converged = false;
  int iterations = 0;
  // Diagnostics.
  double grad_norm = 0.0;           // inf-norm of the reparameterized gradient
  double phi_max_used = 0.0;        // Phi_max the fit ran with (drift perturbs it)
};

}  // namespace fluxcal
