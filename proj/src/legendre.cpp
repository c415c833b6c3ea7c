#include "fluxcal/legendre.hpp"

#include <cmath>

#include "fluxcal/errors.hpp"

namespace fluxcal {

namespace {

double snap_to_interval(double x) {
  if (x > 1.0 && x <= 1.0 + 1e-12) return 1.0;
  if (x < -1.0 && x >= -1.0 - 1e-12) return -1.0;
  return x;
}

}  // namespace

double legendre_eval(int order, double x) {
  if (order < 0) throw ValidationError("legendre_eval: negative order");
  x = snap_to_interval(x);
  if (order == 0) return 1.0;
  if (order == 1) return x;
  double prev = 1.0;  // P_0
  double curr = x;    // P_1
  for (int m = 1; m < order; ++m) {
    const double next = ((2 * m + 1) * x * curr - m * prev) / (m + 1);
    prev = curr;
    curr = next;
  }
  return curr;
}

void legendre_all(int max_order, double x, std::span<double> out) {
  out[0] = 1.0;
  if (max_order == 0) return;
  out[1] = x;
  for (int m = 1; m < max_order; ++m) {
    out[m + 1] = ((2 * m + 1) * x * out[m] - m * out[m - 1]) / (m + 1);
  }
}

void legendre_all_with_deriv(int max_order, double x, std::span<double> values,
                             std::span<double> derivs) {
  values[0] = 1.0;
  derivs[0] = 0.0;
  if (max_order == 0) return;
  values[1] = x;
  derivs[1] = 1.0;
  for (int m = 1; m < max_order; ++m) {
    values[m + 1] = ((2 * m + 1) * x * values[m] - m * values[m - 1]) / (m + 1);
    derivs[m + 1] = derivs[m - 1] + (2 * m + 1) * values[m];
  }
}

double scale_to_unit(double phi, double phi_max) {
  return 2.0 * phi / phi_max - 1.0;
}

double scale_from_unit(double u, double phi_max) {
  return phi_max * (u + 1.0) / 2.0;
}

}  // namespace fluxcal
