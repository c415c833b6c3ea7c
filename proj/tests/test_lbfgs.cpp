#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>

#include "fluxcal/errors.hpp"
#include "fluxcal/lbfgs.hpp"

using namespace fluxcal;

TEST_CASE("separable quadratic converges in a handful of iterations") {
  const ObjectiveFn fn = [](const std::vector<double>& x, std::vector<double>& g) {
    double f = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double w = 1.0 + static_cast<double>(i);
      f += 0.5 * w * (x[i] - 2.0) * (x[i] - 2.0);
      g[i] = w * (x[i] - 2.0);
    }
    return f;
  };
  LbfgsOptions opt;
  opt.gradient_tolerance = 1e-10;
  const LbfgsResult r = lbfgs_minimize(fn, std::vector<double>(5, -3.0), opt);
  CHECK(r.converged);
  for (double xi : r.x) CHECK(xi == doctest::Approx(2.0).epsilon(1e-8));
}

TEST_CASE("Rosenbrock 2D reaches the global minimum") {
  const ObjectiveFn fn = [](const std::vector<double>& x, std::vector<double>& g) {
    const double a = 1.0 - x[0];
    const double b = x[1] - x[0] * x[0];
    g[0] = -2.0 * a - 400.0 * x[0] * b;
    g[1] = 200.0 * b;
    return a * a + 100.0 * b * b;
  };
  LbfgsOptions opt;
  opt.gradient_tolerance = 1e-8;
  const LbfgsResult r = lbfgs_minimize(fn, {-1.2, 1.0}, opt);
  CHECK(r.converged);
  CHECK(r.x[0] == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(r.x[1] == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("extended Rosenbrock in 10 dimensions") {
  const ObjectiveFn fn = [](const std::vector<double>& x, std::vector<double>& g) {
    double f = 0.0;
    std::fill(g.begin(), g.end(), 0.0);
    for (std::size_t i = 0; i + 1 < x.size(); ++i) {
      const double a = 1.0 - x[i];
      const double b = x[i + 1] - x[i] * x[i];
      f += a * a + 100.0 * b * b;
      g[i] += -2.0 * a - 400.0 * x[i] * b;
      g[i + 1] += 200.0 * b;
    }
    return f;
  };
  LbfgsOptions opt;
  opt.gradient_tolerance = 1e-7;
  opt.max_iterations = 3000;
  const LbfgsResult r = lbfgs_minimize(fn, std::vector<double>(10, -1.0), opt);
  CHECK(r.converged);
  for (double xi : r.x) CHECK(xi == doctest::Approx(1.0).epsilon(1e-5));
}

TEST_CASE("ill-conditioned quadratic still converges") {
  const ObjectiveFn fn = [](const std::vector<double>& x, std::vector<double>& g) {
    double f = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double w = std::pow(10.0, static_cast<double>(i) * 2.0);  // cond 1e8
      f += 0.5 * w * x[i] * x[i];
      g[i] = w * x[i];
    }
    return f;
  };
  LbfgsOptions opt;
  opt.gradient_tolerance = 1e-6;
  opt.max_iterations = 500;
  const LbfgsResult r = lbfgs_minimize(fn, std::vector<double>(5, 1.0), opt);
  CHECK(r.converged);
  CHECK(std::abs(r.x[0]) < 1e-5);
}

TEST_CASE("restricted domain: non-finite trials are stepped around") {
  // min -log(x) + x on x > 0, minimum at x = 1.
  const ObjectiveFn fn = [](const std::vector<double>& x, std::vector<double>& g) {
    if (x[0] <= 0.0) {
      g[0] = 0.0;
      return std::numeric_limits<double>::quiet_NaN();
    }
    g[0] = -1.0 / x[0] + 1.0;
    return -std::log(x[0]) + x[0];
  };
  LbfgsOptions opt;
  opt.gradient_tolerance = 1e-9;
  const LbfgsResult r = lbfgs_minimize(fn, {0.05}, opt);
  CHECK(r.converged);
  CHECK(r.x[0] == doctest::Approx(1.0).epsilon(1e-7));
}

TEST_CASE("non-finite start throws") {
  const ObjectiveFn fn = [](const std::vector<double>&, std::vector<double>& g) {
    g[0] = 0.0;
    return std::numeric_limits<double>::quiet_NaN();
  };
  CHECK_THROWS_AS(lbfgs_minimize(fn, {1.0}, LbfgsOptions{}), NumericalError);
}

TEST_CASE("already-optimal start returns immediately") {
  const ObjectiveFn fn = [](const std::vector<double>& x, std::vector<double>& g) {
    g[0] = 2.0 * x[0];
    return x[0] * x[0];
  };
  const LbfgsResult r = lbfgs_minimize(fn, {0.0}, LbfgsOptions{});
  CHECK(r.converged);
  CHECK(r.iterations == 0);
}
