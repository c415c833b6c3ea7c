#include "fluxcal/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fluxcal/errors.hpp"
#include "fluxcal/estimator.hpp"
#include "fluxcal/model.hpp"
#include "fluxcal/parallel.hpp"
#include "fluxcal/rng.hpp"

namespace fluxcal {

ScenarioSpec make_scenario(int id, std::uint64_t seed) {
  if (id < 1 || id > 4) throw ValidationError("scenario id must be 1..4");
  ScenarioSpec spec;
  spec.id = id;
  spec.seed = seed;
  switch (id) {
    case 1:
      break;
    case 2:
      spec.drift_fraction = 0.005;
      break;
    case 3:
      spec.drift_fraction = 0.005;
      spec.correlated_drift = true;
      break;
    case 4:
      spec.identical_lamps = false;
      spec.baseline_spread = 0.025;
      spec.drift_fraction = 0.005;
      spec.correlated_drift = true;
      break;
  }
  return spec;
}

RunDesign build_design() {
  RunDesign design;
  design.mode = InstrumentMode::IntegratingSphere;
  const int plain_lamps = 6;
  const int j = plain_lamps + 1;
  const int n_v = 3;
  // 2^6 plain-lamp patterns x 5 aperture-lamp states (off, full, psi_1..3).
  for (int pattern = 0; pattern < (1 << plain_lamps); ++pattern) {
    for (int state = 0; state < n_v + 2; ++state) {
      DesignRow row;
      row.x.assign(j, 0);
      row.v.assign(n_v, 0);
      for (int bit = 0; bit < plain_lamps; ++bit) row.x[bit] = (pattern >> bit) & 1;
      if (state == 1) row.x[j - 1] = 1;
      if (state >= 2) row.v[state - 2] = 1;
      design.rows.push_back(std::move(row));
    }
  }
  for (int r = 0; r < 5; ++r) {  // all-off repeats
    DesignRow row;
    row.x.assign(j, 0);
    row.v.assign(n_v, 0);
    design.rows.push_back(std::move(row));
  }
  for (int r = 0; r < 5; ++r) {  // all-on-at-full repeats
    DesignRow row;
    row.x.assign(j, 1);
    row.v.assign(n_v, 0);
    design.rows.push_back(std::move(row));
  }
  return design;
}

double invert_response(double phi_tilde, std::span<const double> beta) {
  if (beta.size() < 2) throw ValidationError("invert_response: need at least a linear term");
  const auto value = [&](double n) { return eval_polynomial(beta, n) - phi_tilde; };
  const auto deriv = [&](double n) {
    double d = 0.0;
    for (std::size_t m = beta.size(); m-- > 1;) d = d * n + static_cast<double>(m) * beta[m];
    return d;
  };

  // Bracket around the linear-inverse guess, expanding geometrically.
  const double slope = beta[1] != 0.0 ? beta[1] : 1.0;
  const double guess = (phi_tilde - beta[0]) / slope;
  double half = std::max(1.0, std::abs(guess));
  double lo = guess - half;
  double hi = guess + half;
  bool bracketed = false;
  for (int i = 0; i < 64; ++i) {
    if (value(lo) <= 0.0 && value(hi) >= 0.0) {
      bracketed = true;
      break;
    }
    half *= 2.0;
    lo = guess - half;
    hi = guess + half;
  }
  if (!bracketed)
    throw ValidationError("invert_response: polynomial does not bracket the target; "
                          "not increasing over the working range");
  if (deriv(lo) <= 0.0 || deriv(hi) <= 0.0 || deriv(0.5 * (lo + hi)) <= 0.0)
    throw ValidationError("invert_response: polynomial not increasing over the bracket");

  double x = std::clamp(guess, lo, hi);
  for (int iter = 0; iter < 200; ++iter) {
    const double f = value(x);
    if (std::abs(f) < 1e-13) return x;
    if (f > 0.0)
      hi = x;
    else
      lo = x;
    const double d = deriv(x);
    double next = d > 0.0 ? x - f / d : lo - 1.0;  // force bisection when flat
    if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
    if (next == x) return x;  // interval exhausted at double precision
    x = next;
  }
  if (std::abs(value(x)) < 1e-12) return x;
  throw NumericalError("invert_response: did not reach tolerance");
}

namespace {

std::vector<double> draw_baselines(const ScenarioSpec& spec, Rng& rng) {
  const double nominal = 1.0 / static_cast<double>(spec.lamps);
  std::vector<double> base(spec.lamps, nominal);
  if (!spec.identical_lamps) {
    // Within +/- baseline_spread of nominal, then rescaled to sum to one.
    for (double& b : base) b = nominal * (1.0 + rng.uniform(-spec.baseline_spread, spec.baseline_spread));
    const double total = std::accumulate(base.begin(), base.end(), 0.0);
    for (double& b : base) b /= total;
  }
  return base;
}

}  // namespace

std::pair<std::vector<Observation>, SimTruth> simulate_dataset(const ScenarioSpec& spec) {
  if (static_cast<int>(spec.psi_true.size()) != spec.aperture_states)
    throw ValidationError("simulate_dataset: psi_true length mismatch");
  if (spec.beta_true.size() < 2) throw ValidationError("simulate_dataset: beta_true too short");

  const RunDesign design = build_design();
  Rng rng(spec.seed);

  SimTruth truth;
  truth.baseline_flux = draw_baselines(spec, rng);
  truth.psi = spec.psi_true;
  truth.beta = spec.beta_true;

  std::vector<Observation> obs(design.n_runs());
  truth.run_flux.resize(design.n_runs());
  truth.phi.resize(design.n_runs());
  truth.phi_tilde.resize(design.n_runs());
  truth.n_tilde.resize(design.n_runs());

  for (std::size_t i = 0; i < design.n_runs(); ++i) {
    // Per-run lamp fluxes: baseline, plus bounded uniform drift when enabled.
    std::vector<double> lamp_flux = truth.baseline_flux;
    if (spec.drift_fraction > 0.0) {
      if (spec.correlated_drift) {
        const double factor = 1.0 + rng.uniform(-spec.drift_fraction, spec.drift_fraction);
        for (double& f : lamp_flux) f *= factor;
      } else {
        for (double& f : lamp_flux) f *= 1.0 + rng.uniform(-spec.drift_fraction, spec.drift_fraction);
      }
    }

    const DesignRow& row = design.rows[i];
    double phi = 0.0;
    for (int j = 0; j < spec.lamps; ++j)
      if (row.x[j]) phi += lamp_flux[j];
    for (int k = 0; k < spec.aperture_states; ++k)
      if (row.v[k]) phi += spec.psi_true[k] * lamp_flux[spec.lamps - 1];

    const double shot_sd = spec.shot_coeff * std::sqrt(phi);
    const double phi_tilde = phi + (shot_sd > 0.0 ? rng.normal(0.0, shot_sd) : 0.0);
    const double n_tilde = invert_response(phi_tilde, spec.beta_true);
    const double n = n_tilde + (spec.elec_sd > 0.0 ? rng.normal(0.0, spec.elec_sd) : 0.0);

    truth.run_flux[i] = std::move(lamp_flux);
    truth.phi[i] = phi;
    truth.phi_tilde[i] = phi_tilde;
    truth.n_tilde[i] = n_tilde;
    obs[i] = Observation{i, n};
  }
  return {std::move(obs), std::move(truth)};
}

RunDesign build_conjoiner_design(const ConjoinerSpec& spec) {
  RunDesign design;
  design.mode = InstrumentMode::BeamConjoiner;
  const int j = spec.settings_per_beam;
  // Every (setting-1, setting-2) combination, 0 meaning that beam blocked.
  for (int s1 = 0; s1 <= j; ++s1) {
    for (int s2 = 0; s2 <= j; ++s2) {
      DesignRow row;
      row.x.assign(j, 0);
      row.v.assign(j, 0);
      if (s1 > 0) row.x[s1 - 1] = 1;
      if (s2 > 0) row.v[s2 - 1] = 1;
      design.rows.push_back(std::move(row));
    }
  }
  for (int r = 0; r < spec.repeats_off; ++r) {
    DesignRow row;
    row.x.assign(j, 0);
    row.v.assign(j, 0);
    design.rows.push_back(std::move(row));
  }
  for (int r = 0; r < spec.repeats_max; ++r) {
    DesignRow row;
    row.x.assign(j, 0);
    row.v.assign(j, 0);
    row.x[0] = 1;  // setting 1 carries the largest flux of each ladder
    row.v[0] = 1;
    design.rows.push_back(std::move(row));
  }
  return design;
}

namespace {

// Geometric flux ladder for one beam, normalized so the beam's settings sum
// to half of phi_max (phi_max is the sum over both beams, matching the
// flux-sum constraint the fit applies).
std::vector<double> conjoiner_ladder(const ConjoinerSpec& spec) {
  std::vector<double> ladder(spec.settings_per_beam);
  double power = 1.0;
  double total = 0.0;
  for (int s = 0; s < spec.settings_per_beam; ++s) {
    ladder[s] = power;
    total += power;
    power *= spec.ladder_ratio;
  }
  for (double& f : ladder) f *= spec.phi_max / 2.0 / total;
  return ladder;
}

}  // namespace

Hyperparams conjoiner_hyper(const ConjoinerSpec& spec) {
  Hyperparams hyper;
  hyper.phi_max = spec.phi_max;
  hyper.tau = 1e-3 * spec.phi_max;
  hyper.lambda_rate = 1.0 / spec.phi_max;
  hyper.p = static_cast<int>(spec.beta_true.size()) - 1;
  hyper.kappa0 = spec.kappa0;
  hyper.noise_model = NoiseModel::PiecewiseProportional;
  return hyper;
}

std::pair<std::vector<Observation>, SimTruth> simulate_conjoiner(const ConjoinerSpec& spec) {
  if (spec.settings_per_beam < 1) throw ValidationError("settings_per_beam must be >= 1");
  if (!(spec.ladder_ratio > 0.0 && spec.ladder_ratio < 1.0))
    throw ValidationError("ladder_ratio must lie in (0, 1)");

  const RunDesign design = build_conjoiner_design(spec);
  const std::vector<double> ladder = conjoiner_ladder(spec);
  Rng rng(spec.seed);

  SimTruth truth;
  truth.baseline_flux = ladder;  // both beams share the ladder
  truth.beta = spec.beta_true;

  const double knee = spec.kappa0 * spec.phi_max;
  std::vector<Observation> obs(design.n_runs());
  truth.phi.resize(design.n_runs());
  truth.phi_tilde.resize(design.n_runs());
  truth.n_tilde.resize(design.n_runs());
  for (std::size_t i = 0; i < design.n_runs(); ++i) {
    const DesignRow& row = design.rows[i];
    double phi = 0.0;
    for (int s = 0; s < spec.settings_per_beam; ++s) {
      if (row.x[s]) phi += ladder[s];
      if (row.v[s]) phi += ladder[s];
    }
    const double n_tilde = invert_response(phi, spec.beta_true);
    const double sd = phi > knee ? spec.sigma * phi : spec.sigma * knee;
    const double n = n_tilde + rng.normal(0.0, sd);
    truth.phi[i] = phi;
    truth.phi_tilde[i] = phi;
    truth.n_tilde[i] = n_tilde;
    obs[i] = Observation{i, n};
  }
  return {std::move(obs), std::move(truth)};
}

BootstrapConfig scenario_boot_config(const ScenarioSpec& spec, int B, std::uint64_t master_seed,
                                     int jobs) {
  BootstrapConfig boot;
  boot.B = B;
  boot.master_seed = master_seed;
  boot.jobs = jobs;
  if (spec.drift_fraction > 0.0) {
    boot.drift_mode = spec.correlated_drift ? DriftMode::Correlated : DriftMode::Independent;
    // Variance of the uniform multiplicative drift actually applied per lamp.
    const double half_width = spec.drift_fraction / static_cast<double>(spec.lamps);
    boot.per_lamp_drift_variance = half_width * half_width / 3.0;
  }
  return boot;
}

EvaluationReport evaluate_scenario(const ScenarioSpec& spec, int n_datasets,
                                   const BootstrapConfig& boot_config,
                                   const OptimizerConfig& opt_config, int jobs) {
  if (n_datasets < 1) throw ValidationError("evaluate_scenario: need at least one dataset");

  Hyperparams hyper;
  hyper.phi_max = 1.0;
  hyper.tau = 1e-3;
  hyper.lambda_rate = 1.0;
  hyper.p = static_cast<int>(spec.beta_true.size()) - 1;

  const RunDesign design = build_design();
  const int n_beta = hyper.p + 1;
  const int n_psi = spec.aperture_states;
  const int n_phi = spec.lamps;

  struct DatasetResult {
    bool ok = false;
    std::vector<double> estimates;                     // beta, psi, phi
    std::vector<std::pair<double, double>> intervals;  // same order
    std::vector<double> phi_truth;                     // per-lamp baseline
  };
  std::vector<DatasetResult> results(static_cast<std::size_t>(n_datasets));

  parallel_for(results.size(), jobs, [&](std::size_t d) {
    ScenarioSpec spec_d = spec;
    spec_d.seed = derive_seed(spec.seed, d);
    auto [obs, truth] = simulate_dataset(spec_d);

    OptimizerConfig opt_d = opt_config;
    opt_d.seed = derive_seed(spec_d.seed, 1001);
    BootstrapConfig boot_d = boot_config;
    boot_d.master_seed = derive_seed(spec_d.seed, 1002);
    boot_d.jobs = 1;  // parallelism lives at the dataset level here

    DatasetResult& out = results[d];
    out.phi_truth = truth.baseline_flux;
    try {
      const FitResult fit = fit_mle(obs, design, hyper, opt_d);
      const BootstrapEnsemble ensemble =
          run_bootstrap(obs, design, hyper, opt_d, boot_d, fit);

      const auto collect = [&](auto&& extract) {
        std::vector<double> reps(ensemble.replicates.size());
        for (std::size_t b = 0; b < ensemble.replicates.size(); ++b)
          reps[b] = extract(ensemble.replicates[b]);
        return percentile_interval(reps, 0.95);
      };
      for (int m = 0; m < n_beta; ++m) {
        out.estimates.push_back(fit.beta[m]);
        out.intervals.push_back(collect([m](const FitResult& r) { return r.beta[m]; }));
      }
      for (int k = 0; k < n_psi; ++k) {
        out.estimates.push_back(fit.params.psi[k]);
        out.intervals.push_back(collect([k](const FitResult& r) { return r.params.psi[k]; }));
      }
      for (int j = 0; j < n_phi; ++j) {
        out.estimates.push_back(fit.params.flux[j]);
        out.intervals.push_back(collect([j](const FitResult& r) { return r.params.flux[j]; }));
      }
      out.ok = true;
    } catch (const NumericalError&) {
    } catch (const EnsembleQualityError&) {
    }
  });

  EvaluationReport report;
  report.scenario_id = spec.id;
  report.n_datasets = n_datasets;

  std::vector<std::string> names;
  for (int m = 0; m < n_beta; ++m) names.push_back("beta_" + std::to_string(m));
  for (int k = 0; k < n_psi; ++k) names.push_back("psi_" + std::to_string(k + 1));
  for (int j = 0; j < n_phi; ++j) names.push_back("phi_" + std::to_string(j + 1));

  const double nominal_flux = 1.0 / static_cast<double>(spec.lamps);
  report.params.resize(names.size());
  for (std::size_t q = 0; q < names.size(); ++q) {
    ParamEval& pe = report.params[q];
    pe.name = names[q];
    double bias_sum = 0.0;
    int covered = 0;
    int used = 0;
    for (const DatasetResult& r : results) {
      if (!r.ok) continue;
      // Scenario 4 lamp fluxes are scored against the dataset's own baseline.
      double truth_q;
      if (q < static_cast<std::size_t>(n_beta))
        truth_q = spec.beta_true[q];
      else if (q < static_cast<std::size_t>(n_beta + n_psi))
        truth_q = spec.psi_true[q - n_beta];
      else
        truth_q = spec.identical_lamps ? nominal_flux : r.phi_truth[q - n_beta - n_psi];
      pe.estimates.push_back(r.estimates[q]);
      pe.intervals.push_back(r.intervals[q]);
      bias_sum += (r.estimates[q] - truth_q) / truth_q;
      if (r.intervals[q].first <= truth_q && truth_q <= r.intervals[q].second) ++covered;
      ++used;
      pe.truth = truth_q;
    }
    if (used > 0) {
      pe.relative_bias = bias_sum / static_cast<double>(used);
      pe.coverage = static_cast<double>(covered) / static_cast<double>(used);
    }
  }
  report.failed_datasets =
      n_datasets - static_cast<int>(std::count_if(results.begin(), results.end(),
                                                  [](const DatasetResult& r) { return r.ok; }));
  return report;
}

}  // namespace fluxcal
