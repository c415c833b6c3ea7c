#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "fluxcal/errors.hpp"
#include "fluxcal/legendre.hpp"
#include "oracles.hpp"

using namespace fluxcal;

TEST_CASE("low-order values match the closed forms") {
  CHECK(legendre_eval(0, 0.37) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(legendre_eval(1, -0.5) == doctest::Approx(-0.5).epsilon(1e-15));
  CHECK(legendre_eval(2, 0.5) == doctest::Approx(-0.125).epsilon(1e-15));
  CHECK(legendre_eval(5, 1.0) == 1.0);

  for (int m = 0; m <= 5; ++m) {
    for (int i = 0; i <= 200; ++i) {
      const double x = -1.0 + 2.0 * i / 200.0;
      CHECK(legendre_eval(m, x) ==
            doctest::Approx(oracle::legendre_closed_form(m, x)).epsilon(1e-12));
    }
  }
}

TEST_CASE("Bonnet recurrence holds to 1e-12 up to order 20") {
  for (int m = 1; m <= 19; ++m) {
    for (int i = 0; i <= 200; ++i) {
      const double x = -1.0 + 2.0 * i / 200.0;
      const double lhs = (m + 1) * legendre_eval(m + 1, x);
      const double rhs = (2 * m + 1) * x * legendre_eval(m, x) - m * legendre_eval(m - 1, x);
      CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
    }
  }
}

TEST_CASE("endpoint snapping and errors") {
  CHECK(legendre_eval(7, 1.0 + 5e-13) == 1.0);
  CHECK(legendre_eval(7, -1.0 - 5e-13) == -1.0);
  CHECK_THROWS_AS(legendre_eval(-1, 0.0), ValidationError);
}

TEST_CASE("derivative recurrence agrees with finite differences") {
  std::vector<double> values(9), derivs(9);
  for (double x : {-0.9, -0.3, 0.0, 0.4, 0.8}) {
    legendre_all_with_deriv(8, x, values, derivs);
    const double h = 1e-6;
    for (int m = 0; m <= 8; ++m) {
      const double fd = (legendre_eval(m, x + h) - legendre_eval(m, x - h)) / (2.0 * h);
      CHECK(derivs[m] == doctest::Approx(fd).epsilon(1e-6));
    }
  }
}

TEST_CASE("scale maps [0, phi_max] onto [-1, 1] and inverts") {
  CHECK(scale_to_unit(0.0, 1.0) == -1.0);
  CHECK(scale_to_unit(1.0, 1.0) == 1.0);
  CHECK(scale_to_unit(0.5, 1.0) == 0.0);
  for (int i = 0; i <= 50; ++i) {
    const double phi = 3.7 * i / 50.0;
    const double round_trip = scale_from_unit(scale_to_unit(phi, 3.7), 3.7);
    CHECK(round_trip == doctest::Approx(phi).epsilon(1e-12));
  }
}
