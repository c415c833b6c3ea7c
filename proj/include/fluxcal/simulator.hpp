#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fluxcal/bootstrap.hpp"
#include "fluxcal/types.hpp"

namespace fluxcal {

// One row of the simulation-study table. Scenarios:
//   1: identical lamps, no drift
//   2: identical lamps, 0.5 % run-to-run drift, independent across lamps
//   3: identical lamps, 0.5 % drift, identical within a run
//   4: lamp baselines within ~2.5 % of 1/J (sum-to-unity), 0.5 % correlated drift
struct ScenarioSpec {
  int id = 1;
  bool identical_lamps = true;
  double drift_fraction = 0.0;   // 0 or 0.005 (at most +/-0.5 % of baseline)
  bool correlated_drift = false;
  int lamps = 7;                 // J, last lamp carries the variable aperture
  int aperture_states = 3;       // N_v
  double baseline_spread = 0.0;  // scenario 4: 0.025
  std::vector<double> psi_true{0.25, 0.5, 0.75};
  std::vector<double> beta_true{0.5, 1.0, 0.022, -0.008};
  double shot_coeff = 1.1e-4;  // shot-noise sd = shot_coeff * sqrt(flux)
  double elec_sd = 1e-3;
  std::uint64_t seed = 1;
};

ScenarioSpec make_scenario(int id, std::uint64_t seed);

// The full factorial sphere design: every off/on pattern of the six plain
// lamps crossed with the five aperture-lamp states (off, full, psi_1..3),
// 320 distinct rows, plus five all-off and five all-on repeats: 330 rows.
RunDesign build_design();

// Ground truth recorded alongside a simulated dataset.
struct SimTruth {
  std::vector<double> baseline_flux;          // per-lamp (or per-setting) baselines
  std::vector<std::vector<double>> run_flux;  // per-run per-lamp fluxes after drift
  std::vector<double> psi;
  std::vector<double> beta;
  std::vector<double> phi;        // composed flux per run
  std::vector<double> phi_tilde;  // after shot noise
  std::vector<double> n_tilde;    // root of the response polynomial
};

// Draws per-run lamp fluxes per the scenario, composes the flux, perturbs it
// with shot noise, solves the monotone response polynomial for the reading,
// and adds electrical noise. Deterministic in spec.seed.
std::pair<std::vector<Observation>, SimTruth> simulate_dataset(const ScenarioSpec& spec);

// Unique real root n of beta_0 + sum_m beta_m n^m = phi_tilde for a strictly
// increasing polynomial, by bracket expansion plus safeguarded Newton; the
// residual at the root is below 1e-12. Throws ValidationError when the
// polynomial is not increasing over the bracket.
double invert_response(double phi_tilde, std::span<const double> beta);

// Synthetic two-beam dataset in the conjoiner geometry: two geometric ladders
// of per-setting fluxes (all (s1, s2) combinations including off) and
// flux-proportional noise above the knee kappa0.
struct ConjoinerSpec {
  int settings_per_beam = 12;
  double ladder_ratio = 0.605;  // flux ratio between adjacent settings
  double phi_max = 1.0;         // sum of all per-setting fluxes, both beams
  double sigma = 1e-3;          // proportionality constant of Eq-style noise
  double kappa0 = 0.2;
  std::vector<double> beta_true{0.5, 1.0, 0.022, -0.008};
  int repeats_off = 5;
  int repeats_max = 5;
  std::uint64_t seed = 1;
};

RunDesign build_conjoiner_design(const ConjoinerSpec& spec);
std::pair<std::vector<Observation>, SimTruth> simulate_conjoiner(const ConjoinerSpec& spec);
// Hyperparameters matching the synthetic truth (phi_max, kappa0, piecewise noise).
Hyperparams conjoiner_hyper(const ConjoinerSpec& spec);

// The drift configuration the scenario implies for the bootstrap: mode None /
// Independent / Correlated per the table row, per-lamp variance equal to the
// variance of the uniform drift the simulator actually applies.
BootstrapConfig scenario_boot_config(const ScenarioSpec& spec, int B, std::uint64_t master_seed,
                                     int jobs = 1);

struct ParamEval {
  std::string name;
  double truth = 0.0;
  std::vector<double> estimates;                      // one MLE per dataset
  std::vector<std::pair<double, double>> intervals;   // 95 % percentile CIs
  double relative_bias = 0.0;
  double coverage = 0.0;  // fraction of CIs bracketing the truth
};

struct EvaluationReport {
  int scenario_id = 0;
  int n_datasets = 0;
  int failed_datasets = 0;
  std::vector<ParamEval> params;  // beta_m, psi_k, phi_j
};

// Bias / coverage study: simulate n_datasets datasets, fit and bootstrap each,
// and aggregate per-parameter relative bias and CI coverage. Datasets whose
// base fit fails are dropped and counted. Scenario 4 scores each lamp flux
// against its own dataset's baseline (there is no single true value).
EvaluationReport evaluate_scenario(const ScenarioSpec& spec, int n_datasets,
                                   const BootstrapConfig& boot_config,
                                   const OptimizerConfig& opt_config, int jobs = 1);

}  // namespace fluxcal
