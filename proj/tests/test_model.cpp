#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "fluxcal/errors.hpp"
#include "fluxcal/legendre.hpp"
#include "fluxcal/model.hpp"
#include "fluxcal/rng.hpp"
#include "oracles.hpp"

using namespace fluxcal;

namespace {

RunDesign tiny_sphere_design() {
  RunDesign design;
  design.mode = InstrumentMode::IntegratingSphere;
  // 3 lamps (lamp 3 has the aperture), 2 aperture states.
  design.rows = {
      DesignRow{{0, 0, 0}, {0, 0}}, DesignRow{{1, 0, 0}, {0, 0}},
      DesignRow{{0, 1, 1}, {0, 0}}, DesignRow{{1, 1, 0}, {0, 1}},
      DesignRow{{1, 1, 1}, {0, 0}}, DesignRow{{0, 0, 0}, {1, 0}},
  };
  return design;
}

ModelParams tiny_params(int p) {
  ModelParams params;
  params.flux = {0.3, 0.45, 0.25};
  params.psi = {0.25, 0.6};
  params.alpha.assign(p + 1, 0.0);
  params.alpha[0] = 0.51;
  params.alpha[1] = 0.48;
  if (p >= 2) params.alpha[2] = 0.013;
  if (p >= 3) params.alpha[3] = -0.034;
  params.gamma = 0.21;
  params.sigma = 0.011;
  return params;
}

}  // namespace

TEST_CASE("compose_flux: empty sum, full sum, aperture product") {
  RunDesign design;
  design.mode = InstrumentMode::IntegratingSphere;
  DesignRow all_off{{0, 0, 0, 0, 0, 0, 0}, {0, 0, 0}};
  DesignRow all_on{{1, 1, 1, 1, 1, 1, 1}, {0, 0, 0}};
  DesignRow aperture_only{{0, 0, 0, 0, 0, 0, 0}, {0, 1, 0}};
  design.rows = {all_off, all_on, aperture_only};

  ModelParams params;
  params.flux.assign(7, 1.0 / 7.0);
  params.psi = {0.25, 0.5, 0.75};
  params.alpha = {0.0, 0.5};

  CHECK(compose_flux(design, 0, params) == 0.0);
  CHECK(compose_flux(design, 1, params) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(compose_flux(design, 2, params) == doctest::Approx(1.0 / 14.0).epsilon(1e-12));
}

TEST_CASE("compose_flux is additive over disjoint indicator rows") {
  RunDesign design;
  design.mode = InstrumentMode::IntegratingSphere;
  DesignRow a{{1, 0, 1, 0, 0}, {0, 0}};
  DesignRow b{{0, 1, 0, 0, 0}, {0, 1}};
  DesignRow sum{{1, 1, 1, 0, 0}, {0, 1}};
  design.rows = {a, b, sum};
  ModelParams params;
  params.flux = {0.11, 0.23, 0.05, 0.4, 0.21};
  params.psi = {0.3, 0.8};
  params.alpha = {0.0, 0.5};
  CHECK(compose_flux(design, 0, params) + compose_flux(design, 1, params) ==
        compose_flux(design, 2, params));
}

TEST_CASE("compose_flux rejects dimension mismatches") {
  RunDesign design = tiny_sphere_design();
  ModelParams params = tiny_params(3);
  params.flux.pop_back();
  CHECK_THROWS_AS(compose_flux(design, 0, params), ValidationError);
}

TEST_CASE("two-beam composition sums one setting per beam") {
  RunDesign design;
  design.mode = InstrumentMode::BeamConjoiner;
  design.rows = {DesignRow{{0, 1, 0}, {0, 0, 1}}, DesignRow{{0, 0, 0}, {0, 0, 0}}};
  ModelParams params;
  params.flux = {0.4, 0.2, 0.1};
  params.flux2 = {0.15, 0.08, 0.04};
  params.alpha = {0.0, 0.5};
  CHECK(compose_flux(design, 0, params) == doctest::Approx(0.24).epsilon(1e-14));
  CHECK(compose_flux(design, 1, params) == 0.0);
}

TEST_CASE("expected_reading reproduces the identity response") {
  const std::vector<double> alpha{0.5, 0.5, 0.0, 0.0};
  for (double phi : {0.0, 0.25, 0.5, 0.9, 1.0})
    CHECK(expected_reading(phi, alpha, 1.0) == doctest::Approx(phi).epsilon(1e-14));

  const std::vector<double> constant{3.25, 0.0, 0.0};
  for (double phi : {0.0, 0.4, 1.0})
    CHECK(expected_reading(phi, constant, 1.0) == doctest::Approx(3.25).epsilon(1e-14));
}

TEST_CASE("expected_reading agrees with an independent recurrence") {
  const std::vector<double> alpha{0.47, 0.52, 0.011, -0.02};
  for (double phi : {0.05, 0.31, 0.5, 0.77, 0.98}) {
    const double s = 2.0 * phi - 1.0;
    double expect = alpha[0];
    for (int m = 1; m <= 3; ++m) expect += alpha[m] * oracle::legendre_recurrence(m, s);
    CHECK(expected_reading(phi, alpha, 1.0) == doctest::Approx(expect).epsilon(1e-13));
  }
}

TEST_CASE("noise_sd branches at the knee") {
  ModelParams params = tiny_params(3);
  Hyperparams hyper;

  params.sigma = 1e-3;
  hyper.noise_model = NoiseModel::Constant;
  CHECK(noise_sd(0.0, params, hyper) == 1e-3);
  CHECK(noise_sd(123.0, params, hyper) == 1e-3);

  hyper.noise_model = NoiseModel::PiecewiseProportional;
  hyper.kappa0 = 0.2;
  hyper.phi_max = 1.0;
  params.sigma = 0.01;
  CHECK(noise_sd(0.1, params, hyper) == doctest::Approx(0.002).epsilon(1e-14));
  CHECK(noise_sd(0.5, params, hyper) == doctest::Approx(0.005).epsilon(1e-14));
  CHECK(noise_sd(0.2, params, hyper) == doctest::Approx(0.002).epsilon(1e-14));  // knee inclusive
}

TEST_CASE("penalized_loglik trivial value: only the exponential penalty survives") {
  // Identity response, readings exactly on the curve, sigma = gamma = 1.
  RunDesign design;
  design.mode = InstrumentMode::IntegratingSphere;
  design.rows = {DesignRow{{1, 0}, {}}, DesignRow{{0, 1}, {}}, DesignRow{{1, 1}, {}}};
  ModelParams params;
  params.flux = {0.4, 0.6};
  params.alpha = {0.5, 0.5, 0.0, 0.0};
  params.gamma = 1.0;
  params.sigma = 1.0;
  Hyperparams hyper;
  hyper.phi_max = 1.0;
  hyper.tau = 0.1;
  hyper.lambda_rate = 1.0;
  hyper.p = 3;
  std::vector<Observation> obs;
  for (std::size_t i = 0; i < design.n_runs(); ++i)
    obs.push_back({i, compose_flux(design, i, params)});  // identity: n == phi
  CHECK(penalized_loglik(obs, design, params, hyper) == doctest::Approx(-1.0).epsilon(1e-14));
}

TEST_CASE("penalized_loglik is linear in lambda") {
  RunDesign design = tiny_sphere_design();
  ModelParams params = tiny_params(3);
  Hyperparams hyper;
  hyper.p = 3;
  std::vector<Observation> obs;
  for (std::size_t i = 0; i < design.n_runs(); ++i) obs.push_back({i, 0.2 + 0.1 * i});
  Hyperparams doubled = hyper;
  doubled.lambda_rate = 2.0 * hyper.lambda_rate;
  const double base = penalized_loglik(obs, design, params, hyper);
  const double more = penalized_loglik(obs, design, params, doubled);
  CHECK(base - more == doctest::Approx(hyper.lambda_rate * params.gamma).epsilon(1e-12));
}

TEST_CASE("penalized_loglik matches the term-by-term oracle on random instances") {
  Rng rng(2024);
  for (int rep = 0; rep < 5; ++rep) {
    RunDesign design = tiny_sphere_design();
    const int p = 2 + static_cast<int>(rng.uniform_int(2));
    ModelParams params = tiny_params(p);
    for (double& f : params.flux) f *= std::exp(0.2 * rng.normal());
    params.gamma = 0.1 + rng.uniform();
    params.sigma = 0.005 + 0.05 * rng.uniform();
    Hyperparams hyper;
    hyper.p = p;
    hyper.tau = 0.01 + 0.1 * rng.uniform();
    hyper.lambda_rate = 0.5 + rng.uniform();
    const std::size_t n_obs = 4 + rng.uniform_int(7);
    std::vector<Observation> obs;
    for (std::size_t i = 0; i < n_obs; ++i)
      obs.push_back({rng.uniform_int(design.n_runs()), rng.normal(0.4, 0.3)});

    const std::vector<double> run_flux = composed_fluxes(design, params);
    const double expect = oracle::naive_penalized_loglik(obs, run_flux, params, hyper);
    const double got = penalized_loglik(obs, design, params, hyper);
    CHECK(got == doctest::Approx(expect).epsilon(1e-10));

    Hyperparams piecewise = hyper;
    piecewise.noise_model = NoiseModel::PiecewiseProportional;
    piecewise.kappa0 = 0.3;
    const double expect_pw = oracle::naive_penalized_loglik(obs, run_flux, params, piecewise);
    const double got_pw = penalized_loglik(obs, design, params, piecewise);
    CHECK(got_pw == doctest::Approx(expect_pw).epsilon(1e-10));
  }
}

TEST_CASE("penalized_loglik rejects non-positive sigma or gamma") {
  RunDesign design = tiny_sphere_design();
  ModelParams params = tiny_params(3);
  Hyperparams hyper;
  hyper.p = 3;
  std::vector<Observation> obs{{0, 0.1}};
  params.sigma = 0.0;
  CHECK_THROWS_AS(penalized_loglik(obs, design, params, hyper), ValidationError);
  params.sigma = 0.01;
  params.gamma = -1.0;
  CHECK_THROWS_AS(penalized_loglik(obs, design, params, hyper), ValidationError);
}

TEST_CASE("profile in sigma is maximized at sigma^2 = RSS/N") {
  RunDesign design = tiny_sphere_design();
  ModelParams params = tiny_params(3);
  Hyperparams hyper;
  hyper.p = 3;
  std::vector<Observation> obs;
  Rng rng(7);
  for (std::size_t i = 0; i < design.n_runs(); ++i) obs.push_back({i, rng.normal(0.5, 0.2)});

  double rss = 0.0;
  for (const Observation& o : obs) {
    const double phi = compose_flux(design, o.run_index, params);
    const double r = o.n - expected_reading(phi, params.alpha, hyper.phi_max);
    rss += r * r;
  }
  const double n_obs = static_cast<double>(obs.size());
  const double sigma_star = std::sqrt(rss / n_obs);
  ModelParams at_star = params;
  at_star.sigma = sigma_star;
  const double peak = penalized_loglik(obs, design, at_star, hyper);
  for (double factor : {0.7, 0.9, 1.1, 1.4}) {
    ModelParams off = params;
    off.sigma = sigma_star * factor;
    const double value = penalized_loglik(obs, design, off, hyper);
    CHECK(value < peak);
    // Only the sigma terms move: the drop has the closed form
    // N [ 1/(2 c^2) - 1/2 + log c ] for sigma = c sigma*.
    const double expect_drop =
        n_obs * (0.5 / (factor * factor) - 0.5 + std::log(factor));
    CHECK(peak - value == doctest::Approx(expect_drop).epsilon(1e-8));
  }
}

TEST_CASE("shrinkage strictly penalizes alpha_2 when the data cannot see it") {
  // Place every run at a zero of P_2, so moving alpha_2 leaves all residuals
  // unchanged and only the penalty term responds.
  const double phi_node = (1.0 + 1.0 / std::sqrt(3.0)) / 2.0;  // s(phi) = 1/sqrt(3)
  RunDesign design;
  design.mode = InstrumentMode::IntegratingSphere;
  design.rows = {DesignRow{{1}, {}}, DesignRow{{1}, {}}};
  ModelParams params;
  params.flux = {phi_node};
  params.alpha = {0.5, 0.5, 0.0, 0.01};
  params.gamma = 0.3;
  params.sigma = 0.05;
  Hyperparams hyper;
  hyper.p = 3;
  std::vector<Observation> obs{{0, 0.8}, {1, 0.76}};

  double previous = penalized_loglik(obs, design, params, hyper);
  for (double a2 : {0.02, 0.05, 0.11, 0.4}) {
    ModelParams moved = params;
    moved.alpha[2] = a2;
    const double value = penalized_loglik(obs, design, moved, hyper);
    CHECK(value < previous);
    previous = value;
  }
}

TEST_CASE("analytic gradient matches central finite differences") {
  Rng rng(99);
  for (int mode_case = 0; mode_case < 2; ++mode_case) {
    RunDesign design;
    ModelParams params;
    Hyperparams hyper;
    hyper.p = 3;
    if (mode_case == 0) {
      design = tiny_sphere_design();
      params = tiny_params(3);
    } else {
      design.mode = InstrumentMode::BeamConjoiner;
      design.rows = {DesignRow{{1, 0}, {0, 0}}, DesignRow{{0, 1}, {1, 0}},
                     DesignRow{{0, 0}, {0, 1}}, DesignRow{{1, 0}, {0, 1}},
                     DesignRow{{0, 0}, {0, 0}}, DesignRow{{0, 1}, {0, 1}}};
      params.flux = {0.31, 0.18};
      params.flux2 = {0.34, 0.17};
      params.alpha = {0.49, 0.51, 0.02, -0.01};
      params.gamma = 0.17;
      params.sigma = 0.02;
      hyper.noise_model = NoiseModel::PiecewiseProportional;
      hyper.kappa0 = 0.25;
    }
    std::vector<Observation> obs;
    for (std::size_t i = 0; i < design.n_runs(); ++i)
      obs.push_back({i, rng.normal(0.4, 0.25)});

    const std::vector<double> grad = penalized_loglik_gradient(obs, design, params, hyper);

    // Natural-coordinate layout: flux, flux2, psi, alpha, gamma, sigma.
    const auto with_offset = [&](std::size_t idx, double h) {
      ModelParams q = params;
      std::size_t k = idx;
      if (k < q.flux.size()) {
        q.flux[k] += h;
      } else if ((k -= q.flux.size()) < q.flux2.size()) {
        q.flux2[k] += h;
      } else if ((k -= q.flux2.size()) < q.psi.size()) {
        q.psi[k] += h;
      } else if ((k -= q.psi.size()) < q.alpha.size()) {
        q.alpha[k] += h;
      } else if ((k -= q.alpha.size()) == 0) {
        q.gamma += h;
      } else {
        q.sigma += h;
      }
      return penalized_loglik(obs, design, q, hyper);
    };
    for (std::size_t idx = 0; idx < grad.size(); ++idx) {
      const double h = 1e-7;
      const double fd = (with_offset(idx, h) - with_offset(idx, -h)) / (2.0 * h);
      CHECK(grad[idx] == doctest::Approx(fd).epsilon(5e-5));
    }
  }
}
