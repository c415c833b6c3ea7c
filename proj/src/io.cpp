#include "fluxcal/io.hpp"

#include <algorithm>
#include <cctype>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "fluxcal/errors.hpp"
#include "fluxcal/model.hpp"
#include "fluxcal/version.hpp"

namespace fluxcal {

using nlohmann::json;

std::string fnv1a_hex(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016" PRIx64, h);
  return std::string(buf);
}

std::string format_double(double value) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", value);
  return std::string(buf);
}

namespace {

std::string mode_name(InstrumentMode mode) {
  return mode == InstrumentMode::IntegratingSphere ? "sphere" : "conjoiner";
}

InstrumentMode mode_from_name(const std::string& name) {
  if (name == "sphere") return InstrumentMode::IntegratingSphere;
  if (name == "conjoiner") return InstrumentMode::BeamConjoiner;
  throw ValidationError("unknown mode '" + name + "' (expected sphere or conjoiner)");
}

std::string noise_name(NoiseModel model) {
  return model == NoiseModel::Constant ? "constant" : "piecewise_proportional";
}

NoiseModel noise_from_name(const std::string& name) {
  if (name == "constant") return NoiseModel::Constant;
  if (name == "piecewise_proportional") return NoiseModel::PiecewiseProportional;
  throw ValidationError("unknown noise_model '" + name + "'");
}

DriftMode drift_from_name(const std::string& name) {
  if (name == "none") return DriftMode::None;
  if (name == "independent") return DriftMode::Independent;
  if (name == "correlated") return DriftMode::Correlated;
  if (name == "explicit") return DriftMode::ExplicitVariance;
  throw ValidationError("unknown drift_mode '" + name + "'");
}

void reject_unknown_keys(const json& obj, const std::string& where,
                         std::initializer_list<const char*> allowed) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    if (std::find_if(allowed.begin(), allowed.end(), [&](const char* k) {
          return it.key() == k;
        }) == allowed.end())
      throw ValidationError("unknown key '" + it.key() + "' in " + where);
  }
}

json provenance_json(const Provenance& prov) {
  return json{{"tool", "fluxcal"},
              {"version", prov.version},
              {"seed", prov.seed},
              {"config_hash", prov.config_hash}};
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot open '" + path + "' for writing");
  out << text;
  if (!out) throw ValidationError("failed writing '" + path + "'");
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json parse_json_file(const std::string& path) {
  try {
    return json::parse(read_text_file(path));
  } catch (const json::parse_error& e) {
    throw ValidationError("malformed JSON in '" + path + "': " + e.what());
  }
}

std::string provenance_comment(const Provenance& prov) {
  std::ostringstream ss;
  ss << "# fluxcal " << prov.version << "\n";
  ss << "# seed=" << prov.seed << " config=" << prov.config_hash << "\n";
  return ss.str();
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

// Indicator header layout: prefix1 columns 1..A then prefix2 columns 1..B.
struct IndicatorLayout {
  std::string prefix1, prefix2;
  int count1 = 0, count2 = 0;
};

IndicatorLayout parse_indicator_header(const std::vector<std::string>& header) {
  if (header.size() < 2 || header[0] != "run_id" || header[1] != "n")
    throw ValidationError("dataset header must start with run_id,n");
  if (header.size() == 2) throw ValidationError("dataset has no indicator columns");

  IndicatorLayout layout;
  const std::string& first = header[2];
  if (first.rfind("x", 0) == 0 && first.rfind("xv", 0) != 0) {
    layout.prefix1 = "x";
    layout.prefix2 = "xv";
  } else if (first.rfind("a", 0) == 0) {
    layout.prefix1 = "a";
    layout.prefix2 = "b";
  } else {
    throw ValidationError("unrecognized indicator column '" + first +
                          "' (expected x*/xv* or a*/b*)");
  }

  // The columns must be prefix1 1..A in order, then prefix2 1..B in order;
  // a gap in the numbering names the missing column.
  std::size_t col = 2;
  for (int expect = 1; col < header.size(); ++col, ++expect) {
    const std::string want = layout.prefix1 + std::to_string(expect);
    if (header[col] == want) {
      layout.count1 = expect;
      continue;
    }
    if (header[col].rfind(layout.prefix2, 0) == 0) break;
    throw ValidationError("missing indicator column " + want);
  }
  if (layout.count1 == 0) throw ValidationError("missing indicator column " + layout.prefix1 + "1");
  for (int expect = 1; col < header.size(); ++col, ++expect) {
    const std::string want = layout.prefix2 + std::to_string(expect);
    if (header[col] != want) throw ValidationError("missing indicator column " + want);
    layout.count2 = expect;
  }
  return layout;
}

}  // namespace

Dataset read_dataset_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open '" + path + "'");

  std::string line;
  std::vector<std::string> header;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    header = split_csv_line(line);
    break;
  }
  if (header.empty()) throw ValidationError("dataset '" + path + "' is empty");
  const IndicatorLayout layout = parse_indicator_header(header);

  Dataset dataset;
  dataset.design.mode = layout.prefix1 == "x" ? InstrumentMode::IntegratingSphere
                                              : InstrumentMode::BeamConjoiner;

  std::vector<long long> run_id_of_row;  // original ids, in first-appearance order
  std::vector<std::size_t> row_of_id;    // lazy map via linear scan (ids are few)
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const std::vector<std::string> cells = split_csv_line(line);
    if (cells.size() != header.size())
      throw ValidationError(path + ": wrong cell count on line " + std::to_string(line_no));

    long long run_id = 0;
    double reading = 0.0;
    try {
      run_id = std::stoll(cells[0]);
      reading = std::stod(cells[1]);
    } catch (const std::exception&) {
      throw ValidationError(path + ": unparsable run_id or n on line " + std::to_string(line_no));
    }

    DesignRow row;
    row.x.resize(layout.count1);
    row.v.resize(layout.count2);
    for (int j = 0; j < layout.count1 + layout.count2; ++j) {
      const std::string& cell = cells[2 + static_cast<std::size_t>(j)];
      int flag;
      if (cell == "0")
        flag = 0;
      else if (cell == "1")
        flag = 1;
      else
        throw ValidationError(path + ": indicator '" + cell + "' on line " +
                              std::to_string(line_no) + " is not 0 or 1");
      if (j < layout.count1)
        row.x[j] = flag;
      else
        row.v[j - layout.count1] = flag;
    }

    const auto found = std::find(run_id_of_row.begin(), run_id_of_row.end(), run_id);
    if (found == run_id_of_row.end()) {
      run_id_of_row.push_back(run_id);
      dataset.design.rows.push_back(row);
      dataset.obs.push_back(Observation{dataset.design.rows.size() - 1, reading});
    } else {
      const std::size_t idx = static_cast<std::size_t>(found - run_id_of_row.begin());
      const DesignRow& existing = dataset.design.rows[idx];
      if (existing.x != row.x || existing.v != row.v)
        throw ValidationError(path + ": run_id " + std::to_string(run_id) +
                              " repeats with different indicators (line " +
                              std::to_string(line_no) + ")");
      dataset.obs.push_back(Observation{idx, reading});
    }
  }
  if (dataset.obs.empty()) throw ValidationError("dataset '" + path + "' has no data rows");
  validate_design(dataset.design);
  validate_observations(dataset.obs, dataset.design);
  return dataset;
}

void write_dataset_csv(const std::string& path, const Dataset& dataset, const Provenance& prov) {
  const bool sphere = dataset.design.mode == InstrumentMode::IntegratingSphere;
  const int c1 = dataset.design.x_count();
  const int c2 = dataset.design.v_count();
  std::ostringstream out;
  out << provenance_comment(prov);
  out << "run_id,n";
  for (int j = 1; j <= c1; ++j) out << "," << (sphere ? "x" : "a") << j;
  for (int k = 1; k <= c2; ++k) out << "," << (sphere ? "xv" : "b") << k;
  out << "\n";
  for (const Observation& o : dataset.obs) {
    const DesignRow& row = dataset.design.rows[o.run_index];
    out << o.run_index << "," << format_double(o.n);
    for (int flag : row.x) out << "," << flag;
    for (int flag : row.v) out << "," << flag;
    out << "\n";
  }
  write_text_file(path, out.str());
}

namespace {

Hyperparams parse_hyperparams(const json& obj, InstrumentMode mode) {
  reject_unknown_keys(obj, "hyperparams",
                      {"phi_max", "tau", "gamma_prior_mean", "p", "kappa0", "drift_variance",
                       "noise_model"});
  Hyperparams hyper;
  hyper.phi_max = obj.value("phi_max", 1.0);
  hyper.tau = obj.value("tau", 1e-3 * hyper.phi_max);
  const double gamma_prior_mean = obj.value("gamma_prior_mean", hyper.phi_max);
  if (!(gamma_prior_mean > 0)) throw ValidationError("gamma_prior_mean must be positive");
  hyper.lambda_rate = 1.0 / gamma_prior_mean;
  hyper.p = obj.value("p", 3);
  hyper.drift_variance = obj.value("drift_variance", 0.0);
  const std::string default_noise =
      mode == InstrumentMode::BeamConjoiner ? "piecewise_proportional" : "constant";
  hyper.noise_model = noise_from_name(obj.value("noise_model", default_noise));

  const bool need_kappa0 = hyper.noise_model == NoiseModel::PiecewiseProportional ||
                           mode == InstrumentMode::BeamConjoiner;
  if (obj.contains("kappa0")) {
    hyper.kappa0 = obj["kappa0"].get<double>();
  } else if (need_kappa0) {
    throw ValidationError("kappa0 is required in conjoiner / piecewise-noise configurations");
  }
  validate_hyperparams(hyper);
  return hyper;
}

OptimizerConfig parse_optimizer(const json& obj) {
  reject_unknown_keys(obj, "optimizer",
                      {"max_iterations", "gradient_tolerance", "restarts", "seed"});
  OptimizerConfig config;
  config.max_iterations = obj.value("max_iterations", config.max_iterations);
  config.gradient_tolerance = obj.value("gradient_tolerance", config.gradient_tolerance);
  config.restarts = obj.value("restarts", config.restarts);
  config.seed = obj.value("seed", config.seed);
  validate_optimizer_config(config);
  return config;
}

BootstrapConfig parse_bootstrap(const json& obj) {
  reject_unknown_keys(obj, "bootstrap",
                      {"B", "master_seed", "drift_mode", "per_lamp_drift_variance",
                       "explicit_variance", "max_failure_fraction"});
  BootstrapConfig config;
  config.B = obj.value("B", config.B);
  config.master_seed = obj.value("master_seed", config.master_seed);
  config.drift_mode = drift_from_name(obj.value("drift_mode", "none"));
  config.per_lamp_drift_variance =
      obj.value("per_lamp_drift_variance", config.per_lamp_drift_variance);
  config.explicit_variance = obj.value("explicit_variance", config.explicit_variance);
  config.max_failure_fraction = obj.value("max_failure_fraction", config.max_failure_fraction);
  validate_bootstrap_config(config);
  return config;
}

ScenarioSpec parse_scenario(const json& obj) {
  reject_unknown_keys(obj, "scenario",
                      {"id", "seed", "shot_coeff", "elec_sd", "psi_true", "beta_true"});
  ScenarioSpec spec = make_scenario(obj.value("id", 1), obj.value("seed", std::uint64_t{1}));
  spec.shot_coeff = obj.value("shot_coeff", spec.shot_coeff);
  spec.elec_sd = obj.value("elec_sd", spec.elec_sd);
  if (obj.contains("psi_true")) spec.psi_true = obj["psi_true"].get<std::vector<double>>();
  if (obj.contains("beta_true")) spec.beta_true = obj["beta_true"].get<std::vector<double>>();
  if (spec.shot_coeff < 0 || spec.elec_sd < 0)
    throw ValidationError("scenario noise levels must be nonnegative");
  for (std::size_t k = 0; k < spec.psi_true.size(); ++k) {
    if (!(spec.psi_true[k] > 0 && spec.psi_true[k] < 1))
      throw ValidationError("psi_true entries must lie in (0, 1)");
    if (k > 0 && spec.psi_true[k] <= spec.psi_true[k - 1])
      throw ValidationError("psi_true must be increasing");
  }
  spec.aperture_states = static_cast<int>(spec.psi_true.size());
  if (spec.beta_true.size() < 2 || spec.beta_true[1] == 0)
    throw ValidationError("beta_true must have a nonzero linear coefficient");
  return spec;
}

}  // namespace

AppConfig parse_config(const std::string& json_text, InstrumentMode mode_hint) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ValidationError(std::string("malformed config JSON: ") + e.what());
  }
  if (!root.is_object()) throw ValidationError("config must be a JSON object");
  reject_unknown_keys(root, "config", {"mode", "hyperparams", "optimizer", "bootstrap", "scenario"});

  AppConfig config;
  config.mode = mode_hint;
  if (root.contains("mode")) {
    config.mode = mode_from_name(root["mode"].get<std::string>());
    config.mode_set = true;
  }
  config.hyper = parse_hyperparams(root.value("hyperparams", json::object()), config.mode);
  config.opt = parse_optimizer(root.value("optimizer", json::object()));
  config.boot = parse_bootstrap(root.value("bootstrap", json::object()));
  config.scenario = parse_scenario(root.value("scenario", json::object()));
  config.canonical_json = root.dump();
  return config;
}

AppConfig load_config(const std::optional<std::string>& path, InstrumentMode mode_hint) {
  if (!path) return parse_config("{}", mode_hint);
  return parse_config(read_text_file(*path), mode_hint);
}

void write_truth_json(const std::string& path, const SimTruth& truth, const Provenance& prov) {
  json doc;
  doc["provenance"] = provenance_json(prov);
  doc["baseline_flux"] = truth.baseline_flux;
  doc["run_flux"] = truth.run_flux;
  doc["psi"] = truth.psi;
  doc["beta"] = truth.beta;
  doc["phi"] = truth.phi;
  doc["phi_tilde"] = truth.phi_tilde;
  doc["n_tilde"] = truth.n_tilde;
  write_text_file(path, doc.dump(2) + "\n");
}

namespace {

json hyper_json(const Hyperparams& hyper) {
  return json{{"phi_max", hyper.phi_max},
              {"tau", hyper.tau},
              {"lambda_rate", hyper.lambda_rate},
              {"p", hyper.p},
              {"kappa0", hyper.kappa0},
              {"drift_variance", hyper.drift_variance},
              {"noise_model", noise_name(hyper.noise_model)}};
}

json params_json(const FitResult& fit) {
  return json{{"alpha", fit.params.alpha},
              {"beta", fit.beta},
              {"flux", fit.params.flux},
              {"flux2", fit.params.flux2},
              {"psi", fit.params.psi},
              {"gamma", fit.params.gamma},
              {"sigma", fit.params.sigma},
              {"loglik", fit.loglik},
              {"converged", fit.converged},
              {"iterations", fit.iterations},
              {"grad_norm", fit.grad_norm},
              {"phi_max_used", fit.phi_max_used}};
}

FitResult params_from_json(const json& obj) {
  FitResult fit;
  fit.params.alpha = obj.at("alpha").get<std::vector<double>>();
  fit.beta = obj.at("beta").get<std::vector<double>>();
  fit.params.flux = obj.at("flux").get<std::vector<double>>();
  fit.params.flux2 = obj.at("flux2").get<std::vector<double>>();
  fit.params.psi = obj.at("psi").get<std::vector<double>>();
  fit.params.gamma = obj.at("gamma").get<double>();
  fit.params.sigma = obj.at("sigma").get<double>();
  fit.loglik = obj.at("loglik").get<double>();
  fit.converged = obj.at("converged").get<bool>();
  fit.iterations = obj.at("iterations").get<int>();
  fit.grad_norm = obj.value("grad_norm", 0.0);
  fit.phi_max_used = obj.at("phi_max_used").get<double>();
  return fit;
}

}  // namespace

void write_fit_json(const std::string& path, const FitResult& fit,
                    const std::vector<Observation>& obs, const Hyperparams& hyper,
                    InstrumentMode mode, const Provenance& prov) {
  json doc = params_json(fit);
  doc["provenance"] = provenance_json(prov);
  doc["mode"] = mode_name(mode);
  doc["hyperparams"] = hyper_json(hyper);
  doc["fitted_flux"] = fit.fitted_flux;
  std::vector<double> residuals(obs.size());
  for (std::size_t i = 0; i < obs.size(); ++i) {
    const double mean = expected_reading(fit.fitted_flux[obs[i].run_index], fit.params.alpha,
                                         fit.phi_max_used);
    residuals[i] = obs[i].n - mean;
  }
  doc["residuals"] = residuals;
  write_text_file(path, doc.dump(2) + "\n");
}

FitResult read_fit_json(const std::string& path) {
  const json doc = parse_json_file(path);
  FitResult fit = params_from_json(doc);
  if (doc.contains("fitted_flux")) fit.fitted_flux = doc["fitted_flux"].get<std::vector<double>>();
  return fit;
}

void write_ensemble_json(const std::string& path, const BootstrapEnsemble& ensemble,
                         const Provenance& prov) {
  json doc;
  doc["provenance"] = provenance_json(prov);
  doc["B"] = ensemble.B;
  doc["failures"] = ensemble.failures;
  doc["master_seed"] = ensemble.master_seed;
  doc["replicate_seeds"] = ensemble.replicate_seeds;
  doc["failed_seeds"] = ensemble.failed_seeds;
  json reps = json::array();
  for (const FitResult& rep : ensemble.replicates) reps.push_back(params_json(rep));
  doc["replicates"] = std::move(reps);
  write_text_file(path, doc.dump(2) + "\n");
}

BootstrapEnsemble read_ensemble_json(const std::string& path) {
  const json doc = parse_json_file(path);
  BootstrapEnsemble ensemble;
  ensemble.B = doc.at("B").get<int>();
  ensemble.failures = doc.at("failures").get<int>();
  ensemble.master_seed = doc.at("master_seed").get<std::uint64_t>();
  ensemble.replicate_seeds = doc.at("replicate_seeds").get<std::vector<std::uint64_t>>();
  ensemble.failed_seeds = doc.at("failed_seeds").get<std::vector<std::uint64_t>>();
  for (const json& rep : doc.at("replicates")) ensemble.replicates.push_back(params_from_json(rep));
  return ensemble;
}

void write_bootstrap_summary_csv(const std::string& path, const FitResult& base,
                                 const BootstrapEnsemble& ensemble, double level,
                                 const Provenance& prov) {
  std::ostringstream out;
  out << provenance_comment(prov);
  out << "parameter,estimate,se,ci_lo,ci_hi\n";
  const auto emit = [&](const std::string& name, double estimate, auto&& extract) {
    std::vector<double> reps(ensemble.replicates.size());
    for (std::size_t b = 0; b < ensemble.replicates.size(); ++b)
      reps[b] = extract(ensemble.replicates[b]);
    const double se = standard_error(reps);
    const auto [lo, hi] = percentile_interval(reps, level);
    out << name << "," << format_double(estimate) << "," << format_double(se) << ","
        << format_double(lo) << "," << format_double(hi) << "\n";
  };
  for (std::size_t m = 0; m < base.params.alpha.size(); ++m)
    emit("alpha_" + std::to_string(m), base.params.alpha[m],
         [m](const FitResult& r) { return r.params.alpha[m]; });
  for (std::size_t m = 0; m < base.beta.size(); ++m)
    emit("beta_" + std::to_string(m), base.beta[m],
         [m](const FitResult& r) { return r.beta[m]; });
  for (std::size_t j = 0; j < base.params.flux.size(); ++j)
    emit("flux_" + std::to_string(j + 1), base.params.flux[j],
         [j](const FitResult& r) { return r.params.flux[j]; });
  for (std::size_t j = 0; j < base.params.flux2.size(); ++j)
    emit("flux2_" + std::to_string(j + 1), base.params.flux2[j],
         [j](const FitResult& r) { return r.params.flux2[j]; });
  for (std::size_t k = 0; k < base.params.psi.size(); ++k)
    emit("psi_" + std::to_string(k + 1), base.params.psi[k],
         [k](const FitResult& r) { return r.params.psi[k]; });
  emit("gamma", base.params.gamma, [](const FitResult& r) { return r.params.gamma; });
  emit("sigma", base.params.sigma, [](const FitResult& r) { return r.params.sigma; });
  write_text_file(path, out.str());
}

void write_cv_csv(const std::string& path, const CvResult& cv, const Provenance& prov) {
  std::ostringstream out;
  out << provenance_comment(prov);
  out << "# recommended_p=" << cv.recommended_p << "\n";
  out << "p,fold,rmse\n";
  for (const CvDegree& degree : cv.per_degree)
    for (std::size_t fold = 0; fold < degree.fold_mse.size(); ++fold)
      out << degree.p << "," << fold + 1 << "," << format_double(std::sqrt(degree.fold_mse[fold]))
          << "\n";
  write_text_file(path, out.str());
}

void write_evaluation_json(const std::string& path, const EvaluationReport& report,
                           const Provenance& prov) {
  json doc;
  doc["provenance"] = provenance_json(prov);
  doc["scenario_id"] = report.scenario_id;
  doc["n_datasets"] = report.n_datasets;
  doc["failed_datasets"] = report.failed_datasets;
  json params = json::array();
  for (const ParamEval& pe : report.params) {
    json intervals = json::array();
    for (const auto& [lo, hi] : pe.intervals) intervals.push_back(json::array({lo, hi}));
    params.push_back(json{{"name", pe.name},
                          {"truth", pe.truth},
                          {"estimates", pe.estimates},
                          {"intervals", std::move(intervals)},
                          {"relative_bias", pe.relative_bias},
                          {"coverage", pe.coverage}});
  }
  doc["parameters"] = std::move(params);
  write_text_file(path, doc.dump(2) + "\n");
}

}  // namespace fluxcal
