#include "fluxcal/types.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fluxcal/errors.hpp"

namespace fluxcal {

namespace {

bool is_binary(const std::vector<int>& flags) {
  return std::all_of(flags.begin(), flags.end(), [](int f) { return f == 0 || f == 1; });
}

int sum_flags(const std::vector<int>& flags) {
  return std::accumulate(flags.begin(), flags.end(), 0);
}

}  // namespace

void validate_design(const RunDesign& design) {
  if (design.rows.empty()) throw ValidationError("design has no runs");
  const std::size_t nx = design.rows.front().x.size();
  const std::size_t nv = design.rows.front().v.size();
  if (nx == 0) throw ValidationError("design rows have no indicator columns");
  for (std::size_t i = 0; i < design.rows.size(); ++i) {
    const DesignRow& row = design.rows[i];
    if (row.x.size() != nx || row.v.size() != nv)
      throw ValidationError("design row " + std::to_string(i) + " has inconsistent width");
    if (!is_binary(row.x) || !is_binary(row.v))
      throw ValidationError("design row " + std::to_string(i) + " has non-binary indicators");
    if (design.mode == InstrumentMode::IntegratingSphere) {
      // The aperture lamp is either off, on at full (x[J-1]) or at exactly one
      // reduced state.
      if (row.x.back() + sum_flags(row.v) > 1)
        throw ValidationError("design row " + std::to_string(i) +
                              ": more than one aperture-lamp state active");
    } else {
      if (sum_flags(row.x) > 1)
        throw ValidationError("design row " + std::to_string(i) +
                              ": more than one beam-1 setting active");
      if (sum_flags(row.v) > 1)
        throw ValidationError("design row " + std::to_string(i) +
                              ": more than one beam-2 setting active");
    }
  }
}

std::vector<std::string> design_warnings(const RunDesign& design) {
  std::vector<std::string> warnings;
  bool has_all_off = false;
  bool has_max = false;
  for (const DesignRow& row : design.rows) {
    const int total = sum_flags(row.x) + sum_flags(row.v);
    if (total == 0) has_all_off = true;
    if (design.mode == InstrumentMode::IntegratingSphere) {
      if (sum_flags(row.x) == static_cast<int>(row.x.size())) has_max = true;
    } else {
      if (sum_flags(row.x) == 1 && sum_flags(row.v) == 1) has_max = true;
    }
  }
  if (!has_all_off) warnings.push_back("no all-off run; recommended for anchoring zero flux");
  if (!has_max)
    warnings.push_back(design.mode == InstrumentMode::IntegratingSphere
                           ? "no all-lamps-on run; recommended for anchoring maximal flux"
                           : "no run with both beams active; maximal flux is unanchored");
  return warnings;
}

void validate_observations(const std::vector<Observation>& obs, const RunDesign& design) {
  if (obs.empty()) throw ValidationError("no observations");
  for (const Observation& o : obs) {
    if (o.run_index >= design.n_runs())
      throw ValidationError("observation references run " + std::to_string(o.run_index) +
                            " outside the design");
    if (!std::isfinite(o.n)) throw ValidationError("non-finite instrument reading");
  }
}

void validate_hyperparams(const Hyperparams& hyper) {
  if (!(hyper.phi_max > 0)) throw ValidationError("phi_max must be positive");
  if (!(hyper.tau > 0)) throw ValidationError("tau must be positive");
  if (!(hyper.lambda_rate > 0)) throw ValidationError("lambda_rate must be positive");
  if (hyper.p < 1) throw ValidationError("polynomial degree p must be >= 1");
  if (!(hyper.kappa0 > 0.0 && hyper.kappa0 <= 1.0))
    throw ValidationError("kappa0 must lie in (0, 1]");
  if (hyper.drift_variance < 0) throw ValidationError("drift_variance must be nonnegative");
}

void validate_params(const ModelParams& params, const RunDesign& design, const Hyperparams& hyper) {
  const std::size_t nx = static_cast<std::size_t>(design.x_count());
  const std::size_t nv = static_cast<std::size_t>(design.v_count());
  if (params.flux.size() != nx) throw ValidationError("flux length does not match the design");
  if (design.mode == InstrumentMode::IntegratingSphere) {
    if (!params.flux2.empty()) throw ValidationError("flux2 must be empty in sphere mode");
    if (params.psi.size() != nv) throw ValidationError("psi length does not match the design");
  } else {
    if (params.flux2.size() != nv) throw ValidationError("flux2 length does not match the design");
    if (!params.psi.empty()) throw ValidationError("psi must be empty in conjoiner mode");
  }
  if (params.alpha.size() != static_cast<std::size_t>(hyper.p) + 1)
    throw ValidationError("alpha must have p+1 entries");
  if (!(params.gamma > 0)) throw ValidationError("gamma must be positive");
  if (!(params.sigma > 0)) throw ValidationError("sigma must be positive");
  for (double f : params.flux)
    if (f < 0) throw ValidationError("fluxes must be nonnegative");
  for (double f : params.flux2)
    if (f < 0) throw ValidationError("fluxes must be nonnegative");
  for (double s : params.psi)
    if (!(s >= 0.0 && s <= 1.0)) throw ValidationError("psi entries must lie in [0, 1]");
}

}  // namespace fluxcal
