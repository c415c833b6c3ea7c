#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "fluxcal/bootstrap.hpp"
#include "fluxcal/calibration.hpp"
#include "fluxcal/estimator.hpp"
#include "fluxcal/simulator.hpp"
#include "fluxcal/types.hpp"

namespace fluxcal {

struct Dataset {
  RunDesign design;
  std::vector<Observation> obs;
};

// Stamped into every output so results are attributable and reruns comparable.
struct Provenance {
  std::string version;
  std::uint64_t seed = 0;
  std::string config_hash;
};

// FNV-1a 64-bit, hex-encoded. Stable across platforms (std::hash is not).
std::string fnv1a_hex(const std::string& bytes);

// Lossless float formatting (17 significant digits) for CSV output.
std::string format_double(double value);

// Dataset CSV: header `run_id,n,<indicators>` where the indicator columns are
// x1..xJ,xv1..xvNv (sphere) or a1..aJ1,b1..bJ2 (conjoiner). Repeated run_ids
// are repeat measurements and must carry identical indicator values. Lines
// starting with '#' are provenance comments and are skipped on read.
Dataset read_dataset_csv(const std::string& path);
void write_dataset_csv(const std::string& path, const Dataset& dataset, const Provenance& prov);

// Everything a run needs beyond the data. Parsed strictly: unknown keys and
// out-of-range values are ValidationErrors reported before any computation.
struct AppConfig {
  InstrumentMode mode = InstrumentMode::IntegratingSphere;
  bool mode_set = false;  // whether the file named the mode explicitly
  Hyperparams hyper;
  OptimizerConfig opt;
  BootstrapConfig boot;
  ScenarioSpec scenario;
  std::string canonical_json;  // re-serialized config, input to the hash
};

// Parses and validates a config file; `json_text` variant parses a string.
// A missing path yields the documented defaults.
AppConfig load_config(const std::optional<std::string>& path, InstrumentMode mode_hint);
AppConfig parse_config(const std::string& json_text, InstrumentMode mode_hint);

void write_truth_json(const std::string& path, const SimTruth& truth, const Provenance& prov);

void write_fit_json(const std::string& path, const FitResult& fit,
                    const std::vector<Observation>& obs, const Hyperparams& hyper,
                    InstrumentMode mode, const Provenance& prov);
FitResult read_fit_json(const std::string& path);

void write_ensemble_json(const std::string& path, const BootstrapEnsemble& ensemble,
                         const Provenance& prov);
BootstrapEnsemble read_ensemble_json(const std::string& path);

// Parameter summary table: name, estimate, SE, percentile CI bounds.
void write_bootstrap_summary_csv(const std::string& path, const FitResult& base,
                                 const BootstrapEnsemble& ensemble, double level,
                                 const Provenance& prov);

void write_cv_csv(const std::string& path, const CvResult& cv, const Provenance& prov);

void write_evaluation_json(const std::string& path, const EvaluationReport& report,
                           const Provenance& prov);

}  // namespace fluxcal
