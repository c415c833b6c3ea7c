#include "fluxcal/estimator.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>

#include "fluxcal/errors.hpp"
#include "fluxcal/lbfgs.hpp"
#include "fluxcal/legendre.hpp"
#include "fluxcal/model.hpp"
#include "fluxcal/rng.hpp"

namespace fluxcal {

void validate_optimizer_config(const OptimizerConfig& config) {
  if (config.max_iterations <= 0) throw ValidationError("max_iterations must be positive");
  if (!(config.gradient_tolerance > 0)) throw ValidationError("gradient_tolerance must be positive");
  if (config.restarts < 1) throw ValidationError("restarts must be >= 1");
}

double eval_polynomial(std::span<const double> coeffs, double n) {
  double value = 0.0;
  for (std::size_t m = coeffs.size(); m-- > 0;) value = value * n + coeffs[m];
  return value;
}

namespace {

double logit(double s) { return std::log(s / (1.0 - s)); }
double logistic(double u) { return 1.0 / (1.0 + std::exp(-u)); }

constexpr double kLogFloor = -700.0;  // exp() underflow guard for packed logs

// Maps ModelParams onto the unconstrained optimizer vector
// [log flux..., log flux2..., logit psi..., alpha..., log gamma, log sigma].
struct ParamLayout {
  std::size_t n_flux = 0, n_flux2 = 0, n_psi = 0, n_alpha = 0;

  static ParamLayout of(const ModelParams& params) {
    return {params.flux.size(), params.flux2.size(), params.psi.size(), params.alpha.size()};
  }
  std::size_t size() const { return n_flux + n_flux2 + n_psi + n_alpha + 2; }

  std::vector<double> pack(const ModelParams& p) const {
    std::vector<double> v(size());
    std::size_t k = 0;
    for (double f : p.flux) v[k++] = std::log(std::max(f, std::exp(kLogFloor)));
    for (double f : p.flux2) v[k++] = std::log(std::max(f, std::exp(kLogFloor)));
    for (double s : p.psi) v[k++] = logit(std::clamp(s, 1e-12, 1.0 - 1e-12));
    for (double a : p.alpha) v[k++] = a;
    v[k++] = std::log(p.gamma);
    v[k++] = std::log(p.sigma);
    return v;
  }

  ModelParams unpack(const std::vector<double>& v) const {
    ModelParams p;
    std::size_t k = 0;
    p.flux.resize(n_flux);
    for (auto& f : p.flux) f = std::exp(v[k++]);
    p.flux2.resize(n_flux2);
    for (auto& f : p.flux2) f = std::exp(v[k++]);
    p.psi.resize(n_psi);
    for (auto& s : p.psi) s = logistic(v[k++]);
    p.alpha.resize(n_alpha);
    for (auto& a : p.alpha) a = v[k++];
    p.gamma = std::exp(v[k++]);
    p.sigma = std::exp(v[k++]);
    return p;
  }

  // Chain rule from natural-coordinate gradient to the packed coordinates.
  void reparam_gradient(const ModelParams& p, const std::vector<double>& natural,
                        std::vector<double>& packed) const {
    packed.resize(size());
    std::size_t k = 0;
    for (std::size_t j = 0; j < n_flux; ++j, ++k) packed[k] = natural[k] * p.flux[j];
    for (std::size_t j = 0; j < n_flux2; ++j, ++k) packed[k] = natural[k] * p.flux2[j];
    for (std::size_t j = 0; j < n_psi; ++j, ++k)
      packed[k] = natural[k] * p.psi[j] * (1.0 - p.psi[j]);
    for (std::size_t j = 0; j < n_alpha; ++j, ++k) packed[k] = natural[k];
    packed[k] = natural[k] * p.gamma;
    ++k;
    packed[k] = natural[k] * p.sigma;
  }
};

ModelParams initial_params(const std::vector<Observation>& obs, const RunDesign& design,
                           const Hyperparams& hyper) {
  ModelParams init;
  const bool sphere = design.mode == InstrumentMode::IntegratingSphere;
  const std::size_t nx = static_cast<std::size_t>(design.x_count());
  const std::size_t nv = static_cast<std::size_t>(design.v_count());
  if (sphere) {
    init.flux.assign(nx, hyper.phi_max / static_cast<double>(nx));
    init.psi.resize(nv);
    for (std::size_t k = 0; k < nv; ++k)
      init.psi[k] = static_cast<double>(k + 1) / static_cast<double>(nv + 1);
  } else {
    init.flux.assign(nx, hyper.phi_max / (2.0 * static_cast<double>(nx)));
    init.flux2.assign(nv, hyper.phi_max / (2.0 * static_cast<double>(nv)));
  }
  double mean_n = 0.0;
  for (const Observation& o : obs) mean_n += o.n;
  mean_n /= static_cast<double>(obs.size());
  init.alpha.assign(static_cast<std::size_t>(hyper.p) + 1, 0.0);
  init.alpha[0] = mean_n;
  if (hyper.p >= 1) init.alpha[1] = hyper.phi_max / 2.0;
  init.gamma = hyper.phi_max / 10.0;

  // sigma: residual spread against the initial linear surface, floored so the
  // log reparameterization starts well inside its domain.
  double rss = 0.0;
  for (const Observation& o : obs) {
    const double phi = compose_flux(design, o.run_index, init);
    const double r = o.n - expected_reading(phi, init.alpha, hyper.phi_max);
    rss += r * r;
  }
  double sd = std::sqrt(rss / static_cast<double>(obs.size()));
  sd = std::max(sd, 1e-6 * hyper.phi_max);
  if (hyper.noise_model == NoiseModel::PiecewiseProportional)
    sd /= hyper.kappa0 * hyper.phi_max;
  init.sigma = sd;
  return init;
}

}  // namespace

FitResult fit_mle(const std::vector<Observation>& obs, const RunDesign& design,
                  const Hyperparams& hyper, const OptimizerConfig& config,
                  const ModelParams* warm_start) {
  validate_design(design);
  validate_observations(obs, design);
  validate_hyperparams(hyper);
  validate_optimizer_config(config);

  ModelParams start = warm_start ? *warm_start : initial_params(obs, design, hyper);
  const ParamLayout layout = ParamLayout::of(start);
  if (obs.size() < layout.size())
    throw ValidationError("under-determined: " + std::to_string(obs.size()) +
                          " observations for " + std::to_string(layout.size()) +
                          " free parameters");

  std::vector<double> natural_grad;
  const ObjectiveFn objective = [&](const std::vector<double>& v, std::vector<double>& grad) {
    const ModelParams p = layout.unpack(v);
    const double value = penalized_loglik_with_gradient(obs, design, p, hyper, natural_grad);
    layout.reparam_gradient(p, natural_grad, grad);
    for (double& g : grad) g = -g;
    return -value;
  };

  LbfgsOptions lopt;
  lopt.max_iterations = config.max_iterations;
  lopt.gradient_tolerance = config.gradient_tolerance;

  bool any_success = false;
  LbfgsResult best;
  for (int attempt = 0; attempt < config.restarts; ++attempt) {
    ModelParams attempt_start = start;
    if (attempt > 0) {  // multiplicative lognormal jitter on the fluxes
      Rng rng(derive_seed(config.seed, static_cast<std::uint64_t>(attempt)));
      for (double& f : attempt_start.flux) f *= std::exp(0.05 * rng.normal());
      for (double& f : attempt_start.flux2) f *= std::exp(0.05 * rng.normal());
    }
    try {
      LbfgsResult r = lbfgs_minimize(objective, layout.pack(attempt_start), lopt);
      if (!std::isfinite(r.f)) continue;
      if (!any_success || r.f < best.f ||
          (r.converged && !best.converged && r.f <= best.f + 1e-12)) {
        best = std::move(r);
        any_success = true;
      }
    } catch (const NumericalError&) {
      continue;  // non-finite at this start; try the next jitter
    }
  }
  if (!any_success)
    throw NumericalError("optimization failed: objective non-finite at every restart");

  FitResult fit;
  fit.params = layout.unpack(best.x);
  fit.loglik = -best.f;
  fit.converged = best.converged;
  fit.iterations = best.iterations;
  fit.grad_norm = best.grad_inf_norm;
  fit.phi_max_used = hyper.phi_max;
  fit.fitted_flux = composed_fluxes(design, fit.params);
  fit.beta = derive_beta(fit.params.alpha, hyper);
  return fit;
}

std::vector<double> derive_beta(const std::vector<double>& alpha, const Hyperparams& hyper,
                                int grid_size) {
  const int p = static_cast<int>(alpha.size()) - 1;
  if (p < 1) throw ValidationError("derive_beta: alpha must have at least two entries");
  if (grid_size < 10 * (p + 1))
    throw ValidationError("derive_beta: grid must have at least 10*(p+1) points");

  // Regular sequence on [-1, 1] -> fluxes -> expected readings.
  std::vector<double> phi_grid(grid_size), readings(grid_size);
  for (int l = 0; l < grid_size; ++l) {
    const double u = -1.0 + 2.0 * static_cast<double>(l) / static_cast<double>(grid_size - 1);
    phi_grid[l] = scale_from_unit(u, hyper.phi_max);
    readings[l] = expected_reading(phi_grid[l], alpha, hyper.phi_max);
  }

  const auto [min_it, max_it] = std::minmax_element(readings.begin(), readings.end());
  const double center = 0.5 * (*max_it + *min_it);
  const double half_width = 0.5 * (*max_it - *min_it);
  if (!(half_width > 0.0))
    throw NumericalError("derive_beta: constant response, monomial design is singular");

  Eigen::MatrixXd design_matrix(grid_size, p + 1);
  Eigen::VectorXd target(grid_size);
  for (int l = 0; l < grid_size; ++l) {
    const double t = (readings[l] - center) / half_width;
    double power = 1.0;
    for (int m = 0; m <= p; ++m) {
      design_matrix(l, m) = power;
      power *= t;
    }
    target(l) = phi_grid[l];
  }
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(design_matrix);
  if (qr.rank() < p + 1)
    throw NumericalError("derive_beta: rank-deficient monomial design");
  const Eigen::VectorXd scaled = qr.solve(target);

  // Expand sum_m c_m ((n - center)/half_width)^m back to powers of n.
  const double a = 1.0 / half_width;
  const double b = -center / half_width;
  std::vector<double> beta(p + 1, 0.0);
  std::vector<double> u_power{1.0};  // coefficients of ((n-c)/h)^m in powers of n
  for (int m = 0; m <= p; ++m) {
    for (int j = 0; j < static_cast<int>(u_power.size()); ++j) beta[j] += scaled(m) * u_power[j];
    if (m < p) {  // u_power <- u_power * (a n + b)
      std::vector<double> next(u_power.size() + 1, 0.0);
      for (int j = 0; j < static_cast<int>(u_power.size()); ++j) {
        next[j] += u_power[j] * b;
        next[j + 1] += u_power[j] * a;
      }
      u_power = std::move(next);
    }
  }
  return beta;
}

CvResult cross_validate(const std::vector<Observation>& obs, const RunDesign& design,
                        const Hyperparams& hyper, const std::vector<int>& p_range, int folds,
                        std::uint64_t seed, const OptimizerConfig& config) {
  validate_design(design);
  validate_observations(obs, design);
  if (folds < 2) throw ValidationError("cross_validate: need at least 2 folds");
  if (p_range.empty()) throw ValidationError("cross_validate: empty degree range");

  // Fold assignment is by run, so repeat measurements of a run stay together.
  std::vector<std::size_t> run_ids;
  {
    std::vector<char> seen(design.n_runs(), 0);
    for (const Observation& o : obs) {
      if (!seen[o.run_index]) {
        seen[o.run_index] = 1;
        run_ids.push_back(o.run_index);
      }
    }
  }
  if (static_cast<std::size_t>(folds) > run_ids.size())
    throw ValidationError("cross_validate: more folds than runs leaves empty folds");

  Rng rng(seed);
  for (std::size_t i = run_ids.size(); i > 1; --i)
    std::swap(run_ids[i - 1], run_ids[rng.uniform_int(i)]);
  std::vector<int> fold_of_run(design.n_runs(), -1);
  for (std::size_t i = 0; i < run_ids.size(); ++i)
    fold_of_run[run_ids[i]] = static_cast<int>(i % static_cast<std::size_t>(folds));

  CvResult result;
  for (int p : p_range) {
    if (p < 1) throw ValidationError("cross_validate: degree must be >= 1");
    Hyperparams h = hyper;
    h.p = p;
    CvDegree degree;
    degree.p = p;
    for (int fold = 0; fold < folds; ++fold) {
      std::vector<Observation> train;
      std::vector<Observation> held;
      for (const Observation& o : obs)
        (fold_of_run[o.run_index] == fold ? held : train).push_back(o);
      if (held.empty()) throw ValidationError("cross_validate: empty fold");
      const FitResult fit = fit_mle(train, design, h, config);
      double mse = 0.0;
      for (const Observation& o : held) {
        const double phi = compose_flux(design, o.run_index, fit.params);
        const double pred = expected_reading(phi, fit.params.alpha, h.phi_max);
        mse += (o.n - pred) * (o.n - pred);
      }
      degree.fold_mse.push_back(mse / static_cast<double>(held.size()));
    }
    degree.mean_mse = std::accumulate(degree.fold_mse.begin(), degree.fold_mse.end(), 0.0) /
                      static_cast<double>(folds);
    result.per_degree.push_back(std::move(degree));
  }

  // Argmin of mean MSE; exact ties go to the smaller degree.
  result.recommended_p = result.per_degree.front().p;
  double best_mse = result.per_degree.front().mean_mse;
  for (const CvDegree& d : result.per_degree) {
    if (d.mean_mse < best_mse || (d.mean_mse == best_mse && d.p < result.recommended_p)) {
      best_mse = d.mean_mse;
      result.recommended_p = d.p;
    }
  }
  return result;
}

}  // namespace fluxcal
