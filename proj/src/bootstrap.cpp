#include "fluxcal/bootstrap.hpp"

#include <algorithm>
#include <cmath>
#include <optional>

#include "fluxcal/errors.hpp"
#include "fluxcal/model.hpp"
#include "fluxcal/parallel.hpp"
#include "fluxcal/rng.hpp"

namespace fluxcal {

void validate_bootstrap_config(const BootstrapConfig& config) {
  if (config.B < 1) throw ValidationError("bootstrap B must be >= 1");
  if (config.per_lamp_drift_variance < 0 || config.explicit_variance < 0)
    throw ValidationError("drift variances must be nonnegative");
  if (!(config.max_failure_fraction >= 0 && config.max_failure_fraction <= 1))
    throw ValidationError("max_failure_fraction must lie in [0, 1]");
}

std::pair<std::vector<Observation>, RunDesign> resample_pairs(
    const std::vector<Observation>& obs, const RunDesign& design, std::uint64_t seed) {
  if (obs.empty()) throw ValidationError("resample_pairs: no observations");
  Rng rng(seed);
  std::vector<Observation> obs_out(obs.size());
  RunDesign design_out;
  design_out.mode = design.mode;
  design_out.rows.reserve(obs.size());
  for (std::size_t i = 0; i < obs.size(); ++i) {
    const Observation& picked = obs[rng.uniform_int(obs.size())];
    obs_out[i].run_index = i;  // each resampled pair becomes its own run
    obs_out[i].n = picked.n;
    design_out.rows.push_back(design.rows[picked.run_index]);
  }
  return {std::move(obs_out), std::move(design_out)};
}

double drift_sigma2(const BootstrapConfig& config, int lamp_count) {
  if (lamp_count < 1) throw ValidationError("drift_sigma2: lamp count must be >= 1");
  const double j = static_cast<double>(lamp_count);
  switch (config.drift_mode) {
    case DriftMode::None:
      return 0.0;
    case DriftMode::Independent:
      return j * config.per_lamp_drift_variance;
    case DriftMode::Correlated:
      return j * j * config.per_lamp_drift_variance;
    case DriftMode::ExplicitVariance:
      return config.explicit_variance;
  }
  return 0.0;
}

BootstrapEnsemble run_bootstrap(const std::vector<Observation>& obs, const RunDesign& design,
                                const Hyperparams& hyper, const OptimizerConfig& opt_config,
                                const BootstrapConfig& boot_config, const FitResult& base_fit) {
  validate_bootstrap_config(boot_config);
  const int lamp_count = static_cast<int>(base_fit.params.flux.size() +
                                          base_fit.params.flux2.size());
  const double sigma2 = drift_sigma2(boot_config, lamp_count);
  const double drift_sd = std::sqrt(sigma2);

  struct Slot {
    std::optional<FitResult> fit;
    std::uint64_t seed = 0;
  };
  std::vector<Slot> slots(static_cast<std::size_t>(boot_config.B));

  parallel_for(slots.size(), boot_config.jobs, [&](std::size_t b) {
    Slot& slot = slots[b];
    slot.seed = derive_seed(boot_config.master_seed, b);
    Rng rng(slot.seed);
    auto [obs_b, design_b] = resample_pairs(obs, design, derive_seed(slot.seed, 0));
    Hyperparams hyper_b = hyper;
    if (drift_sd > 0.0) hyper_b.phi_max = hyper.phi_max + rng.normal(0.0, drift_sd);
    if (!(hyper_b.phi_max > 0.0)) return;  // degenerate draw; count as a failure
    // Warm start at the base MLE; jittered restarts only on failure.
    OptimizerConfig warm = opt_config;
    warm.restarts = 1;
    warm.seed = derive_seed(slot.seed, 1);
    try {
      slot.fit = fit_mle(obs_b, design_b, hyper_b, warm, &base_fit.params);
    } catch (const NumericalError&) {
      if (opt_config.restarts > 1) {
        OptimizerConfig retry = warm;
        retry.restarts = opt_config.restarts;
        try {
          slot.fit = fit_mle(obs_b, design_b, hyper_b, retry, &base_fit.params);
        } catch (const NumericalError&) {
        }
      }
    }
    if (slot.fit && !std::isfinite(slot.fit->loglik)) slot.fit.reset();
  });

  BootstrapEnsemble ensemble;
  ensemble.B = boot_config.B;
  ensemble.master_seed = boot_config.master_seed;
  for (Slot& slot : slots) {
    if (slot.fit) {
      ensemble.replicates.push_back(std::move(*slot.fit));
      ensemble.replicate_seeds.push_back(slot.seed);
    } else {
      ensemble.failed_seeds.push_back(slot.seed);
      ++ensemble.failures;
    }
  }
  const double failure_fraction =
      static_cast<double>(ensemble.failures) / static_cast<double>(boot_config.B);
  if (failure_fraction > boot_config.max_failure_fraction)
    throw EnsembleQualityError("bootstrap failure fraction " + std::to_string(failure_fraction) +
                               " exceeds threshold " +
                               std::to_string(boot_config.max_failure_fraction));
  return ensemble;
}

double standard_error(std::span<const double> values) {
  if (values.size() < 2) throw ValidationError("standard_error: need at least 2 values");
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= static_cast<double>(values.size());
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  return std::sqrt(ss / static_cast<double>(values.size() - 1));
}

std::pair<double, double> percentile_interval(std::span<const double> values, double level) {
  if (values.size() < 20) throw ValidationError("percentile_interval: need at least 20 values");
  if (!(level > 0.0 && level < 1.0))
    throw ValidationError("percentile_interval: level must lie in (0, 1)");
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  const auto quantile = [&](double q) {
    // Position q*(B-1)+1 among 1-based order statistics, linear interpolation.
    const double pos = q * static_cast<double>(sorted.size() - 1);
    const std::size_t lo = static_cast<std::size_t>(pos);
    const double frac = pos - static_cast<double>(lo);
    if (lo + 1 >= sorted.size()) return sorted.back();
    return sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]);
  };
  return {quantile((1.0 - level) / 2.0), quantile((1.0 + level) / 2.0)};
}

std::pair<FluxBand, FluxBand> residual_bands(const FitResult& base_fit,
                                             const BootstrapEnsemble& ensemble,
                                             const Hyperparams& hyper,
                                             const std::vector<double>& flux_grid, double level) {
  if (ensemble.replicates.empty()) throw ValidationError("residual_bands: empty ensemble");
  const std::size_t n_rep = ensemble.replicates.size();
  const std::size_t n_grid = flux_grid.size();

  FluxBand confidence;
  FluxBand prediction;
  confidence.flux = flux_grid;
  prediction.flux = flux_grid;
  confidence.lo.resize(n_grid);
  confidence.hi.resize(n_grid);
  prediction.lo.resize(n_grid);
  prediction.hi.resize(n_grid);

  // One noise draw per replicate per grid point, from a stream derived off the
  // ensemble's master seed so bands are reproducible.
  std::vector<std::vector<double>> noise(n_rep, std::vector<double>(n_grid));
  for (std::size_t b = 0; b < n_rep; ++b) {
    Rng rng(derive_seed(ensemble.replicate_seeds[b], 2));
    for (std::size_t g = 0; g < n_grid; ++g) noise[b][g] = rng.normal();
  }

  std::vector<double> conf_values(n_rep), pred_values(n_rep);
  for (std::size_t g = 0; g < n_grid; ++g) {
    const double base_curve =
        expected_reading(flux_grid[g], base_fit.params.alpha, base_fit.phi_max_used);
    for (std::size_t b = 0; b < n_rep; ++b) {
      const FitResult& rep = ensemble.replicates[b];
      Hyperparams hyper_b = hyper;
      hyper_b.phi_max = rep.phi_max_used;
      const double curve = expected_reading(flux_grid[g], rep.params.alpha, rep.phi_max_used);
      const double sd = noise_sd(flux_grid[g], rep.params, hyper_b);
      conf_values[b] = curve - base_curve;
      pred_values[b] = curve + sd * noise[b][g] - base_curve;
    }
    const auto conf = percentile_interval(conf_values, level);
    const auto pred = percentile_interval(pred_values, level);
    confidence.lo[g] = conf.first;
    confidence.hi[g] = conf.second;
    prediction.lo[g] = pred.first;
    prediction.hi[g] = pred.second;
  }
  return {std::move(confidence), std::move(prediction)};
}

double prediction_band_coverage(const std::vector<Observation>& obs, const FitResult& base_fit,
                                const BootstrapEnsemble& ensemble, const Hyperparams& hyper,
                                double level) {
  std::vector<double> grid(obs.size());
  for (std::size_t i = 0; i < obs.size(); ++i) grid[i] = base_fit.fitted_flux[obs[i].run_index];
  const auto [confidence, prediction] = residual_bands(base_fit, ensemble, hyper, grid, level);
  std::size_t inside = 0;
  for (std::size_t i = 0; i < obs.size(); ++i) {
    const double residual =
        obs[i].n - expected_reading(grid[i], base_fit.params.alpha, base_fit.phi_max_used);
    if (residual >= prediction.lo[i] && residual <= prediction.hi[i]) ++inside;
  }
  return static_cast<double>(inside) / static_cast<double>(obs.size());
}

}  // namespace fluxcal
