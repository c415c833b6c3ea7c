#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "fluxcal/bootstrap.hpp"
#include "fluxcal/errors.hpp"
#include "fluxcal/estimator.hpp"
#include "fluxcal/legendre.hpp"
#include "fluxcal/model.hpp"
#include "fluxcal/rng.hpp"
#include "fluxcal/simulator.hpp"
#include "oracles.hpp"

using namespace fluxcal;

namespace {

Hyperparams study_hyper(int p = 3) {
  Hyperparams hyper;
  hyper.phi_max = 1.0;
  hyper.tau = 1e-3;
  hyper.lambda_rate = 1.0;
  hyper.p = p;
  return hyper;
}

OptimizerConfig quick_opt() {
  OptimizerConfig opt;
  opt.seed = 11;
  opt.restarts = 1;
  return opt;
}

}  // namespace

TEST_CASE("derive_beta inverts the exact linear response to the identity") {
  const std::vector<double> alpha{0.5, 0.5, 0.0, 0.0};
  const std::vector<double> beta = derive_beta(alpha, study_hyper());
  CHECK(std::abs(beta[0]) < 1e-10);
  CHECK(beta[1] == doctest::Approx(1.0).epsilon(1e-10));
  CHECK(std::abs(beta[2]) < 1e-10);
  CHECK(std::abs(beta[3]) < 1e-10);
}

TEST_CASE("derive_beta round trip: composing beta with the mean response returns the flux") {
  const std::vector<double> alpha{0.497, 0.503, 0.0091, -0.0135};
  const Hyperparams hyper = study_hyper();
  const std::vector<double> beta = derive_beta(alpha, hyper);
  double worst = 0.0;
  for (int l = 0; l <= 400; ++l) {
    const double phi = hyper.phi_max * l / 400.0;
    const double reading = expected_reading(phi, alpha, hyper.phi_max);
    worst = std::max(worst, std::abs(phi - eval_polynomial(beta, reading)));
  }
  CHECK(worst < 1e-6 * hyper.phi_max);
}

TEST_CASE("derive_beta matches a brute-force dense OLS oracle") {
  const std::vector<double> alpha{0.51, 0.49, 0.0, 0.011};  // small cubic term
  const Hyperparams hyper = study_hyper();
  const std::vector<double> beta = derive_beta(alpha, hyper, 10000);

  std::vector<double> readings(10000), fluxes(10000);
  for (int l = 0; l < 10000; ++l) {
    const double u = -1.0 + 2.0 * l / 9999.0;
    fluxes[l] = scale_from_unit(u, hyper.phi_max);
    readings[l] = expected_reading(fluxes[l], alpha, hyper.phi_max);
  }
  const std::vector<double> expect = oracle::dense_ols_poly(readings, fluxes, 3);
  for (int m = 0; m <= 3; ++m) CHECK(beta[m] == doctest::Approx(expect[m]).epsilon(1e-6));
}

TEST_CASE("derive_beta is stable under grid refinement") {
  const std::vector<double> alpha{0.48, 0.52, 0.018, -0.006};
  const Hyperparams hyper = study_hyper();
  const std::vector<double> coarse = derive_beta(alpha, hyper, 1001);
  const std::vector<double> fine = derive_beta(alpha, hyper, 2001);
  for (int m = 0; m <= 3; ++m)
    CHECK(fine[m] == doctest::Approx(coarse[m]).epsilon(1e-8));
}

TEST_CASE("derive_beta error paths") {
  const Hyperparams hyper = study_hyper();
  CHECK_THROWS_AS(derive_beta({1.0, 0.0, 0.0, 0.0}, hyper), NumericalError);  // constant response
  CHECK_THROWS_AS(derive_beta({0.5, 0.5, 0.0, 0.0}, hyper, 30), ValidationError);  // grid too small
}

TEST_CASE("noise-free scenario recovery: beta to 1e-4, fluxes to 1e-6 of scale") {
  ScenarioSpec spec = make_scenario(1, 4242);
  spec.shot_coeff = 0.0;
  spec.elec_sd = 0.0;
  auto [obs, truth] = simulate_dataset(spec);
  const RunDesign design = build_design();
  const FitResult fit = fit_mle(obs, design, study_hyper(), quick_opt());

  REQUIRE(fit.beta.size() == 4);
  for (int m = 0; m < 4; ++m)
    CHECK(std::abs(fit.beta[m] - spec.beta_true[m]) < 1e-4);

  double scale = 0.0;
  for (double phi : truth.phi) scale = std::max(scale, phi);
  double worst = 0.0;
  for (std::size_t i = 0; i < truth.phi.size(); ++i)
    worst = std::max(worst, std::abs(fit.fitted_flux[i] - truth.phi[i]));
  CHECK(worst / scale < 1e-6);
}

TEST_CASE("under-determined data is rejected") {
  const RunDesign design = build_design();
  ScenarioSpec spec = make_scenario(1, 1);
  auto [obs, truth] = simulate_dataset(spec);
  obs.resize(10);  // fewer observations than free parameters
  CHECK_THROWS_AS(fit_mle(obs, design, study_hyper(), quick_opt()), ValidationError);
}

TEST_CASE("finite-difference gradient is small at the returned MLE") {
  ScenarioSpec spec = make_scenario(1, 99);
  auto [obs, truth] = simulate_dataset(spec);
  const RunDesign design = build_design();
  const Hyperparams hyper = study_hyper();
  const OptimizerConfig opt = quick_opt();
  const FitResult fit = fit_mle(obs, design, hyper, opt);

  // Reparameterized coordinates: log fluxes, logit psi, alpha, log gamma/sigma.
  const ModelParams& p = fit.params;
  const auto value_at = [&](const ModelParams& q) {
    return penalized_loglik(obs, design, q, hyper);
  };
  std::vector<double> grad;
  const double h = 1e-6;
  for (std::size_t j = 0; j < p.flux.size(); ++j) {
    ModelParams hi = p, lo = p;
    hi.flux[j] *= std::exp(h);
    lo.flux[j] *= std::exp(-h);
    grad.push_back((value_at(hi) - value_at(lo)) / (2.0 * h));
  }
  for (std::size_t k = 0; k < p.psi.size(); ++k) {
    ModelParams hi = p, lo = p;
    const double u = std::log(p.psi[k] / (1.0 - p.psi[k]));
    hi.psi[k] = 1.0 / (1.0 + std::exp(-(u + h)));
    lo.psi[k] = 1.0 / (1.0 + std::exp(-(u - h)));
    grad.push_back((value_at(hi) - value_at(lo)) / (2.0 * h));
  }
  for (std::size_t m = 0; m < p.alpha.size(); ++m) {
    ModelParams hi = p, lo = p;
    hi.alpha[m] += h;
    lo.alpha[m] -= h;
    grad.push_back((value_at(hi) - value_at(lo)) / (2.0 * h));
  }
  {
    ModelParams hi = p, lo = p;
    hi.gamma *= std::exp(h);
    lo.gamma *= std::exp(-h);
    grad.push_back((value_at(hi) - value_at(lo)) / (2.0 * h));
    hi = p;
    lo = p;
    hi.sigma *= std::exp(h);
    lo.sigma *= std::exp(-h);
    grad.push_back((value_at(hi) - value_at(lo)) / (2.0 * h));
  }
  double inf_norm = 0.0;
  for (double g : grad) inf_norm = std::max(inf_norm, std::abs(g));
  CHECK(inf_norm < 10.0 * opt.gradient_tolerance);
}

TEST_CASE("objective is stable across seeds and restarts") {
  ScenarioSpec spec = make_scenario(1, 31);
  auto [obs, truth] = simulate_dataset(spec);
  const RunDesign design = build_design();
  const Hyperparams hyper = study_hyper();
  OptimizerConfig a = quick_opt();
  OptimizerConfig b = quick_opt();
  b.seed = 1234567;
  b.restarts = 2;
  const FitResult fit_a = fit_mle(obs, design, hyper, a);
  const FitResult fit_b = fit_mle(obs, design, hyper, b);
  CHECK(std::abs(fit_a.loglik - fit_b.loglik) < 1e-6);
}

TEST_CASE("strictly linear truth: spurious curvature stays within 3 bootstrap SEs") {
  ScenarioSpec spec = make_scenario(1, 57);
  spec.beta_true = {0.5, 1.0, 0.0, 0.0};  // linear response
  auto [obs, truth] = simulate_dataset(spec);
  const RunDesign design = build_design();
  const Hyperparams hyper = study_hyper();
  const OptimizerConfig opt = quick_opt();
  const FitResult fit = fit_mle(obs, design, hyper, opt);

  BootstrapConfig boot;
  boot.B = 80;
  boot.master_seed = 3;
  boot.jobs = 2;
  const BootstrapEnsemble ensemble = run_bootstrap(obs, design, hyper, opt, boot, fit);
  for (std::size_t m = 2; m < fit.params.alpha.size(); ++m) {
    std::vector<double> reps(ensemble.replicates.size());
    for (std::size_t b = 0; b < reps.size(); ++b)
      reps[b] = ensemble.replicates[b].params.alpha[m];
    CHECK(std::abs(fit.params.alpha[m]) < 3.0 * standard_error(reps));
  }
}

TEST_CASE("cross validation prefers the generating cubic over a line") {
  ScenarioSpec spec = make_scenario(1, 404);
  spec.elec_sd = 2e-3;  // make misfit at p=1 unambiguous
  auto [obs, truth] = simulate_dataset(spec);
  const RunDesign design = build_design();
  const CvResult cv =
      cross_validate(obs, design, study_hyper(), {1, 2, 3, 4, 5}, 5, 17, quick_opt());

  const auto mse_of = [&](int p) {
    for (const CvDegree& d : cv.per_degree)
      if (d.p == p) return d.mean_mse;
    FAIL("degree missing");
    return 0.0;
  };
  CHECK(mse_of(1) > mse_of(3));
  CHECK(cv.recommended_p >= 3);
  for (const CvDegree& d : cv.per_degree) {
    CHECK(d.fold_mse.size() == 5);
    double mean = 0.0;
    for (double v : d.fold_mse) mean += v;
    CHECK(d.mean_mse == doctest::Approx(mean / 5.0).epsilon(1e-12));
  }
  // Bias is gone by p=3; the CV curve flattens into a plateau.
  const double plateau_max = std::max({mse_of(3), mse_of(4), mse_of(5)});
  const double plateau_min = std::min({mse_of(3), mse_of(4), mse_of(5)});
  CHECK(plateau_max / plateau_min < 1.5);
}

TEST_CASE("leave-one-out on a small set matches direct fold enumeration") {
  // 12 distinct runs over 2 lamps.
  RunDesign design;
  design.mode = InstrumentMode::IntegratingSphere;
  for (int r = 0; r < 12; ++r) {
    DesignRow row;
    row.x = {(r >> 0) & 1, (r >> 1) & 1};
    if (row.x[0] == 0 && row.x[1] == 0 && r > 3) row.x = {1, 1};
    design.rows.push_back(row);
  }
  ModelParams truth_params;
  truth_params.flux = {0.45, 0.55};
  truth_params.alpha = {0.5, 0.5};
  truth_params.gamma = 1.0;
  truth_params.sigma = 1.0;
  Rng rng(8);
  std::vector<Observation> obs;
  for (std::size_t i = 0; i < design.n_runs(); ++i) {
    const double phi = compose_flux(design, i, truth_params);
    obs.push_back({i, phi + rng.normal(0.0, 5e-3)});
  }
  Hyperparams hyper = study_hyper(1);
  OptimizerConfig opt = quick_opt();
  const CvResult cv = cross_validate(obs, design, hyper, {1}, 12, 5, opt);

  // Direct enumeration: every fold is one run; refit without it and score it.
  std::vector<double> direct(12, -1.0);
  for (std::size_t held = 0; held < design.n_runs(); ++held) {
    std::vector<Observation> train;
    for (const Observation& o : obs)
      if (o.run_index != held) train.push_back(o);
    const FitResult fit = fit_mle(train, design, hyper, opt);
    const double pred = expected_reading(compose_flux(design, held, fit.params),
                                         fit.params.alpha, hyper.phi_max);
    direct[held] = (obs[held].n - pred) * (obs[held].n - pred);
  }
  std::vector<double> got = cv.per_degree[0].fold_mse;
  std::vector<double> want = direct;
  std::sort(got.begin(), got.end());
  std::sort(want.begin(), want.end());
  for (int f = 0; f < 12; ++f) CHECK(got[f] == doctest::Approx(want[f]).epsilon(1e-6));
}

TEST_CASE("cross validation error paths") {
  ScenarioSpec spec = make_scenario(1, 2);
  auto [obs, truth] = simulate_dataset(spec);
  const RunDesign design = build_design();
  CHECK_THROWS_AS(cross_validate(obs, design, study_hyper(), {3}, 1, 1, quick_opt()),
                  ValidationError);
  CHECK_THROWS_AS(cross_validate(obs, design, study_hyper(), {}, 5, 1, quick_opt()),
                  ValidationError);
  CHECK_THROWS_AS(cross_validate(obs, design, study_hyper(), {0, 3}, 5, 1, quick_opt()),
                  ValidationError);
}
