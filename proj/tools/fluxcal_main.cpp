#include <CLI11.hpp>
#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "fluxcal/bootstrap.hpp"
#include "fluxcal/calibration.hpp"
#include "fluxcal/errors.hpp"
#include "fluxcal/estimator.hpp"
#include "fluxcal/io.hpp"
#include "fluxcal/model.hpp"
#include "fluxcal/parallel.hpp"
#include "fluxcal/rng.hpp"
#include "fluxcal/simulator.hpp"
#include "fluxcal/version.hpp"

namespace fs = std::filesystem;
using namespace fluxcal;

namespace {

int default_jobs() {
  if (const char* env = std::getenv("FLUXCAL_JOBS")) {
    try {
      const int jobs = std::stoi(env);
      if (jobs >= 0) return jobs;
    } catch (const std::exception&) {
    }
  }
  return 0;  // resolve to hardware concurrency
}

Provenance make_provenance(std::uint64_t seed, const std::string& canonical_config) {
  Provenance prov;
  prov.version = kVersion;
  prov.seed = seed;
  prov.config_hash = fnv1a_hex(canonical_config);
  return prov;
}

void ensure_directory(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw ValidationError("cannot create output directory '" + dir + "': " + ec.message());
}

void print_warnings(const RunDesign& design) {
  for (const std::string& warning : design_warnings(design))
    std::cerr << "warning: " << warning << "\n";
}

InstrumentMode mode_of_flag(const std::string& flag) {
  if (flag == "sphere") return InstrumentMode::IntegratingSphere;
  if (flag == "conjoiner") return InstrumentMode::BeamConjoiner;
  throw ValidationError("--mode must be sphere or conjoiner");
}

struct CurveSeries {
  std::string name;
  std::vector<double> value;  // aligned with the flux grid
};

void write_curves_csv(const std::string& path, const std::vector<double>& flux_grid,
                      const std::vector<CurveSeries>& series, const Provenance& prov) {
  std::ostringstream out;
  out << "# fluxcal " << prov.version << "\n";
  out << "# seed=" << prov.seed << " config=" << prov.config_hash << "\n";
  out << "series,flux,value\n";
  for (const CurveSeries& s : series)
    for (std::size_t g = 0; g < flux_grid.size(); ++g)
      out << s.name << "," << format_double(flux_grid[g]) << "," << format_double(s.value[g])
          << "\n";
  std::ofstream file(path, std::ios::binary);
  if (!file) throw ValidationError("cannot open '" + path + "' for writing");
  file << out.str();
}

// ---------------------------------------------------------------------------

int cmd_simulate(int scenario_id, const std::string& conjoiner_flag, std::uint64_t seed,
                 const std::string& out_dir, int datasets, const std::optional<std::string>& config_path) {
  ensure_directory(out_dir);
  const AppConfig config = load_config(config_path, InstrumentMode::IntegratingSphere);
  const Provenance prov = make_provenance(seed, config.canonical_json);

  for (int d = 0; d < datasets; ++d) {
    const std::uint64_t seed_d = derive_seed(seed, static_cast<std::uint64_t>(d));
    Dataset dataset;
    SimTruth truth;
    std::string stem;
    if (!conjoiner_flag.empty()) {
      ConjoinerSpec spec;
      spec.seed = seed_d;
      dataset.design = build_conjoiner_design(spec);
      auto [obs, tr] = simulate_conjoiner(spec);
      dataset.obs = std::move(obs);
      truth = std::move(tr);
      stem = "conjoiner_dataset" + std::to_string(d);
    } else {
      ScenarioSpec spec = make_scenario(scenario_id, seed_d);
      spec.shot_coeff = config.scenario.shot_coeff;
      spec.elec_sd = config.scenario.elec_sd;
      spec.psi_true = config.scenario.psi_true;
      spec.beta_true = config.scenario.beta_true;
      spec.aperture_states = config.scenario.aperture_states;
      dataset.design = build_design();
      auto [obs, tr] = simulate_dataset(spec);
      dataset.obs = std::move(obs);
      truth = std::move(tr);
      stem = "scenario" + std::to_string(scenario_id) + "_dataset" + std::to_string(d);
    }
    write_dataset_csv(out_dir + "/" + stem + ".csv", dataset, prov);
    write_truth_json(out_dir + "/" + stem + "_truth.json", truth, prov);
  }
  std::cout << "wrote " << datasets << " dataset/truth pair(s) to " << out_dir << "\n";
  return 0;
}

int cmd_fit(const std::string& data_path, const std::optional<std::string>& config_path,
            const std::string& out_path, const std::string& mode_flag) {
  const Dataset dataset = read_dataset_csv(data_path);
  if (!mode_flag.empty() && mode_of_flag(mode_flag) != dataset.design.mode)
    throw ValidationError("--mode disagrees with the data file's indicator columns");
  const AppConfig config = load_config(config_path, dataset.design.mode);
  if (config.mode_set && config.mode != dataset.design.mode)
    throw ValidationError("config mode disagrees with the data file's indicator columns");
  print_warnings(dataset.design);

  const FitResult fit = fit_mle(dataset.obs, dataset.design, config.hyper, config.opt);
  const Provenance prov = make_provenance(config.opt.seed, config.canonical_json);
  write_fit_json(out_path, fit, dataset.obs, config.hyper, dataset.design.mode, prov);
  std::cout << "loglik=" << format_double(fit.loglik) << " converged=" << (fit.converged ? 1 : 0)
            << " iterations=" << fit.iterations << "\n";
  return 0;
}

int cmd_bootstrap(const std::string& data_path, const std::optional<std::string>& config_path,
                  const std::string& fit_path, int B_override, std::int64_t seed_override,
                  const std::string& out_dir, int jobs) {
  const Dataset dataset = read_dataset_csv(data_path);
  const AppConfig config = load_config(config_path, dataset.design.mode);
  if (config.mode_set && config.mode != dataset.design.mode)
    throw ValidationError("config mode disagrees with the data file's indicator columns");
  const FitResult base_fit = read_fit_json(fit_path);

  BootstrapConfig boot = config.boot;
  if (B_override > 0) boot.B = B_override;
  if (seed_override >= 0) boot.master_seed = static_cast<std::uint64_t>(seed_override);
  boot.jobs = jobs;
  // An explicit drift variance in the hyperparameters activates drift unless
  // the bootstrap block already chose a mode.
  if (boot.drift_mode == DriftMode::None && config.hyper.drift_variance > 0.0) {
    boot.drift_mode = DriftMode::ExplicitVariance;
    boot.explicit_variance = config.hyper.drift_variance;
  }

  ensure_directory(out_dir);
  const BootstrapEnsemble ensemble =
      run_bootstrap(dataset.obs, dataset.design, config.hyper, config.opt, boot, base_fit);
  const Provenance prov = make_provenance(boot.master_seed, config.canonical_json);
  write_ensemble_json(out_dir + "/ensemble.json", ensemble, prov);
  write_bootstrap_summary_csv(out_dir + "/summary.csv", base_fit, ensemble, 0.95, prov);
  std::cout << "replicates=" << ensemble.replicates.size() << " failures=" << ensemble.failures
            << "\n";
  return 0;
}

int cmd_cv(const std::string& data_path, const std::optional<std::string>& config_path,
           int p_min, int p_max, int folds, std::uint64_t seed, const std::string& out_path) {
  const Dataset dataset = read_dataset_csv(data_path);
  const AppConfig config = load_config(config_path, dataset.design.mode);
  if (p_min < 1 || p_max < p_min) throw ValidationError("require 1 <= pmin <= pmax");
  std::vector<int> p_range;
  for (int p = p_min; p <= p_max; ++p) p_range.push_back(p);

  const CvResult cv =
      cross_validate(dataset.obs, dataset.design, config.hyper, p_range, folds, seed, config.opt);
  const Provenance prov = make_provenance(seed, config.canonical_json);
  write_cv_csv(out_path, cv, prov);
  std::cout << "recommended_p=" << cv.recommended_p << "\n";
  return 0;
}

int cmd_calibrate(const std::string& fit_path, const std::string& ensemble_path, double phi_ref,
                  double n_ref, const std::string& eval_at, const std::string& out_dir) {
  const FitResult fit = read_fit_json(fit_path);
  const BootstrapEnsemble ensemble = read_ensemble_json(ensemble_path);
  const CalibrationResult calibration = calibrate(fit, ensemble, CalibrationRef{phi_ref, n_ref});

  // Evaluation readings: a regular grid over the fitted response range, or one
  // reading per line from a file.
  std::vector<double> readings;
  double n_lo = 0.0, n_hi = 0.0;
  if (!fit.fitted_flux.empty()) {
    const auto [lo_it, hi_it] = std::minmax_element(fit.fitted_flux.begin(), fit.fitted_flux.end());
    n_lo = expected_reading(*lo_it, fit.params.alpha, fit.phi_max_used);
    n_hi = expected_reading(*hi_it, fit.params.alpha, fit.phi_max_used);
  }
  if (eval_at == "grid") {
    if (fit.fitted_flux.empty())
      throw ValidationError("grid evaluation needs fitted fluxes in the fit file");
    const int points = 101;
    for (int g = 0; g < points; ++g)
      readings.push_back(n_lo + (n_hi - n_lo) * static_cast<double>(g) /
                                    static_cast<double>(points - 1));
  } else {
    std::ifstream in(eval_at);
    if (!in) throw ValidationError("cannot open evaluation file '" + eval_at + "'");
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty() || line[0] == '#') continue;
      readings.push_back(std::stod(line));
    }
    if (readings.empty()) throw ValidationError("no evaluation readings in '" + eval_at + "'");
    for (double n : readings)
      if (n < std::min(n_lo, n_hi) || n > std::max(n_lo, n_hi))
        std::cerr << "warning: reading " << format_double(n)
                  << " is outside the fitted range; extrapolating\n";
  }

  ensure_directory(out_dir);
  const Provenance prov = make_provenance(ensemble.master_seed, "{}");
  std::ostringstream main_out, abs_out, rel_out;
  main_out << "# fluxcal " << prov.version << "\n";
  main_out << "n,phi_cal,replicate_min,replicate_max,replicate_se\n";
  abs_out << "# fluxcal " << prov.version << "\n";
  abs_out << "phi_cal,replicate,deviation\n";
  rel_out << "# fluxcal " << prov.version << "\n";
  rel_out << "phi_cal,replicate,relative_deviation\n";
  for (double n : readings) {
    const CalibratedValue value = apply_calibration(calibration, n);
    double rep_min = value.phi_cal, rep_max = value.phi_cal;
    for (double rep : value.replicates) {
      rep_min = std::min(rep_min, rep);
      rep_max = std::max(rep_max, rep);
    }
    const double se = value.replicates.size() >= 2 ? standard_error(value.replicates) : 0.0;
    main_out << format_double(n) << "," << format_double(value.phi_cal) << ","
             << format_double(rep_min) << "," << format_double(rep_max) << ","
             << format_double(se) << "\n";
    for (std::size_t b = 0; b < value.replicates.size(); ++b) {
      const double dev = value.replicates[b] - value.phi_cal;
      abs_out << format_double(value.phi_cal) << "," << b + 1 << "," << format_double(dev) << "\n";
      rel_out << format_double(value.phi_cal) << "," << b + 1 << ","
              << format_double(dev / value.phi_cal) << "\n";
    }
  }
  std::ofstream(out_dir + "/calibrated.csv", std::ios::binary) << main_out.str();
  std::ofstream(out_dir + "/deviations_abs.csv", std::ios::binary) << abs_out.str();
  std::ofstream(out_dir + "/deviations_rel.csv", std::ios::binary) << rel_out.str();
  std::cout << "rho=" << format_double(calibration.rho_hat) << " points=" << readings.size()
            << "\n";
  return 0;
}

int cmd_compare(const std::string& data_path, const std::optional<std::string>& config_path,
                const std::string& out_dir, int jobs) {
  const Dataset dataset = read_dataset_csv(data_path);
  const AppConfig config = load_config(config_path, dataset.design.mode);
  if (config.mode_set && config.mode != dataset.design.mode)
    throw ValidationError("config mode disagrees with the data file's indicator columns");
  print_warnings(dataset.design);

  const FitResult fit = fit_mle(dataset.obs, dataset.design, config.hyper, config.opt);
  BootstrapConfig boot = config.boot;
  boot.jobs = jobs;
  const BootstrapEnsemble ensemble =
      run_bootstrap(dataset.obs, dataset.design, config.hyper, config.opt, boot, fit);
  const LegacyFit legacy = legacy_ls_fit(dataset.obs, dataset.design, config.hyper, config.opt);

  const auto [lo_it, hi_it] = std::minmax_element(fit.fitted_flux.begin(), fit.fitted_flux.end());
  const int points = 101;
  std::vector<double> flux_grid(points);
  for (int g = 0; g < points; ++g)
    flux_grid[g] = *lo_it + (*hi_it - *lo_it) * static_cast<double>(g) /
                               static_cast<double>(points - 1);

  std::vector<CurveSeries> series;
  CurveSeries mle_series{"mle", {}};
  for (double phi : flux_grid)
    mle_series.value.push_back(expected_reading(phi, fit.params.alpha, fit.phi_max_used) - phi);
  series.push_back(std::move(mle_series));

  CurveSeries legacy_series{"legacy", {}};
  for (double phi : flux_grid)
    legacy_series.value.push_back(invert_response(phi, legacy.beta) - phi);
  series.push_back(std::move(legacy_series));

  for (std::size_t b = 0; b < ensemble.replicates.size(); ++b) {
    const FitResult& rep = ensemble.replicates[b];
    char name[32];
    std::snprintf(name, sizeof(name), "rep_%04zu", b + 1);
    CurveSeries rep_series{name, {}};
    for (double phi : flux_grid)
      rep_series.value.push_back(expected_reading(phi, rep.params.alpha, rep.phi_max_used) - phi);
    series.push_back(std::move(rep_series));
  }

  ensure_directory(out_dir);
  const Provenance prov = make_provenance(boot.master_seed, config.canonical_json);
  write_curves_csv(out_dir + "/curves.csv", flux_grid, series, prov);
  write_fit_json(out_dir + "/mle_fit.json", fit, dataset.obs, config.hyper, dataset.design.mode,
                 prov);
  std::cout << "series=" << series.size() << " (mle, legacy, " << ensemble.replicates.size()
            << " replicates)\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"fluxcal: flux-addition nonlinearity characterization and calibration"};
  app.require_subcommand(1);
  int jobs = default_jobs();
  app.add_option("--jobs", jobs, "worker threads (0 = hardware; env FLUXCAL_JOBS)");

  // simulate
  auto* simulate = app.add_subcommand("simulate", "generate synthetic datasets with ground truth");
  std::string scenario_arg = "1";
  std::uint64_t sim_seed = 1;
  std::string sim_out;
  int sim_datasets = 1;
  std::string sim_config;
  simulate->add_option("--scenario", scenario_arg, "scenario 1..4, or 'conjoiner'");
  simulate->add_option("--seed", sim_seed, "master seed");
  simulate->add_option("--out", sim_out, "output directory")->required();
  simulate->add_option("--datasets", sim_datasets, "number of datasets");
  simulate->add_option("--config", sim_config, "config JSON (scenario overrides)");

  // fit
  auto* fit_cmd = app.add_subcommand("fit", "maximum-likelihood fit of fluxes and response");
  std::string fit_data, fit_config, fit_out, fit_mode;
  fit_cmd->add_option("--data", fit_data, "dataset CSV")->required();
  fit_cmd->add_option("--config", fit_config, "config JSON");
  fit_cmd->add_option("--out", fit_out, "output fit JSON")->required();
  fit_cmd->add_option("--mode", fit_mode, "sphere|conjoiner (checked against the data)");

  // bootstrap
  auto* boot_cmd = app.add_subcommand("bootstrap", "bootstrapping-pairs uncertainty");
  std::string boot_data, boot_config, boot_fit, boot_out;
  int boot_B = 0;
  std::int64_t boot_seed = -1;
  boot_cmd->add_option("--data", boot_data, "dataset CSV")->required();
  boot_cmd->add_option("--config", boot_config, "config JSON");
  boot_cmd->add_option("--fit", boot_fit, "base fit JSON")->required();
  boot_cmd->add_option("--B", boot_B, "replicate count (overrides config)");
  boot_cmd->add_option("--seed", boot_seed, "master seed (overrides config)");
  boot_cmd->add_option("--out", boot_out, "output directory")->required();

  // cv
  auto* cv_cmd = app.add_subcommand("cv", "cross-validated polynomial degree selection");
  std::string cv_data, cv_config, cv_out;
  int cv_pmin = 1, cv_pmax = 8, cv_folds = 10;
  std::uint64_t cv_seed = 1;
  cv_cmd->add_option("--data", cv_data, "dataset CSV")->required();
  cv_cmd->add_option("--config", cv_config, "config JSON");
  cv_cmd->add_option("--pmin", cv_pmin, "smallest degree");
  cv_cmd->add_option("--pmax", cv_pmax, "largest degree");
  cv_cmd->add_option("--folds", cv_folds, "fold count K");
  cv_cmd->add_option("--seed", cv_seed, "fold-shuffle seed");
  cv_cmd->add_option("--out", cv_out, "output CSV")->required();

  // calibrate
  auto* cal_cmd = app.add_subcommand("calibrate", "single-point calibration with uncertainty");
  std::string cal_fit, cal_ensemble, cal_eval = "grid", cal_out;
  double cal_phi_ref = 0.0, cal_n_ref = 0.0;
  cal_cmd->add_option("--fit", cal_fit, "base fit JSON")->required();
  cal_cmd->add_option("--ensemble", cal_ensemble, "ensemble JSON")->required();
  cal_cmd->add_option("--phi-ref", cal_phi_ref, "reference flux")->required();
  cal_cmd->add_option("--n-ref", cal_n_ref, "expected reading at the reference flux")->required();
  cal_cmd->add_option("--eval-at", cal_eval, "'grid' or a file of readings");
  cal_cmd->add_option("--out", cal_out, "output directory")->required();

  // compare
  auto* cmp_cmd = app.add_subcommand("compare", "likelihood fit vs. legacy least squares");
  std::string cmp_data, cmp_config, cmp_out;
  cmp_cmd->add_option("--data", cmp_data, "dataset CSV")->required();
  cmp_cmd->add_option("--config", cmp_config, "config JSON");
  cmp_cmd->add_option("--out", cmp_out, "output directory")->required();

  CLI11_PARSE(app, argc, argv);

  const auto opt_path = [](const std::string& s) {
    return s.empty() ? std::optional<std::string>{} : std::optional<std::string>{s};
  };

  try {
    if (simulate->parsed()) {
      if (scenario_arg == "conjoiner")
        return cmd_simulate(0, scenario_arg, sim_seed, sim_out, sim_datasets, opt_path(sim_config));
      int id = 0;
      try {
        id = std::stoi(scenario_arg);
      } catch (const std::exception&) {
        throw ValidationError("bad scenario id '" + scenario_arg + "'");
      }
      return cmd_simulate(id, "", sim_seed, sim_out, sim_datasets, opt_path(sim_config));
    }
    if (fit_cmd->parsed()) return cmd_fit(fit_data, opt_path(fit_config), fit_out, fit_mode);
    if (boot_cmd->parsed())
      return cmd_bootstrap(boot_data, opt_path(boot_config), boot_fit, boot_B, boot_seed,
                           boot_out, jobs);
    if (cv_cmd->parsed())
      return cmd_cv(cv_data, opt_path(cv_config), cv_pmin, cv_pmax, cv_folds, cv_seed, cv_out);
    if (cal_cmd->parsed())
      return cmd_calibrate(cal_fit, cal_ensemble, cal_phi_ref, cal_n_ref, cal_eval, cal_out);
    if (cmp_cmd->parsed()) return cmd_compare(cmp_data, opt_path(cmp_config), cmp_out, jobs);
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const EnsembleQualityError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  } catch (const NumericalError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
