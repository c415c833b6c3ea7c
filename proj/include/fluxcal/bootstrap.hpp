#pragma once

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "fluxcal/estimator.hpp"
#include "fluxcal/types.hpp"

namespace fluxcal {

enum class DriftMode { None, Independent, Correlated, ExplicitVariance };

struct BootstrapConfig {
  int B = 1000;
  std::uint64_t master_seed = 1;
  DriftMode drift_mode = DriftMode::None;
  double per_lamp_drift_variance = 0.0;  // used by Independent / Correlated
  double explicit_variance = 0.0;        // used by ExplicitVariance
  double max_failure_fraction = 0.10;
  int jobs = 1;  // replicate workers; results are independent of this
};

void validate_bootstrap_config(const BootstrapConfig& config);

struct BootstrapEnsemble {
  std::vector<FitResult> replicates;        // successful fits, in replicate order
  std::vector<std::uint64_t> replicate_seeds;  // seeds of the successful replicates
  std::vector<std::uint64_t> failed_seeds;
  int failures = 0;
  int B = 0;
  std::uint64_t master_seed = 0;
};

// Resamples N (reading, indicator-row) pairs i.i.d. with replacement. The
// pairing is preserved: observation i' carries the design row it was measured
// under. Deterministic in the seed.
std::pair<std::vector<Observation>, RunDesign> resample_pairs(
    const std::vector<Observation>& obs, const RunDesign& design, std::uint64_t seed);

// Var[sum of lamp fluxes] implied by the drift assumption: independent lamps
// add variances (J*v), identically drifting lamps add standard deviations
// (J^2*v); ExplicitVariance passes the supplied value through.
double drift_sigma2(const BootstrapConfig& config, int lamp_count);

// Bootstrapping pairs: for each replicate, resample, optionally perturb
// phi_max with Gaussian noise of variance drift_sigma2, and refit warm-started
// at the base MLE. Failed replicates are dropped and counted; throws
// EnsembleQualityError when the failure fraction exceeds the configured cap.
BootstrapEnsemble run_bootstrap(const std::vector<Observation>& obs, const RunDesign& design,
                                const Hyperparams& hyper, const OptimizerConfig& opt_config,
                                const BootstrapConfig& boot_config, const FitResult& base_fit);

// Sample standard deviation with divisor B-1. Throws below 2 values.
double standard_error(std::span<const double> values);

// Empirical (1-level)/2 and (1+level)/2 quantiles, linearly interpolated
// between order statistics at positions q*(B-1)+1. Requires >= 20 values.
std::pair<double, double> percentile_interval(std::span<const double> values, double level);

struct FluxBand {
  std::vector<double> flux;
  std::vector<double> lo;
  std::vector<double> hi;
};

// Pointwise bands on the given flux grid, both centered on the base mean
// response: confidence band from the replicate mean-response curves,
// prediction band from those curves plus one simulated noise draw per
// replicate per grid point (the replicate's own sigma and noise model).
// Returns {confidence, prediction}.
std::pair<FluxBand, FluxBand> residual_bands(const FitResult& base_fit,
                                             const BootstrapEnsemble& ensemble,
                                             const Hyperparams& hyper,
                                             const std::vector<double>& flux_grid, double level);

// Convenience: fraction of observed residuals n_i - E[n](fitted flux) that
// fall inside the prediction band evaluated at each observation's fitted flux.
double prediction_band_coverage(const std::vector<Observation>& obs, const FitResult& base_fit,
                                const BootstrapEnsemble& ensemble, const Hyperparams& hyper,
                                double level);

}  // namespace fluxcal
