#pragma once

#include <span>

namespace fluxcal {

// P_m(x) by the Bonnet recurrence (m+1)P_{m+1} = (2m+1)x P_m - m P_{m-1}.
// Inputs within 1e-12 of the interval ends are snapped to +/-1 so that e.g.
// P_m(1) == 1 holds exactly; values farther outside are evaluated as the
// polynomial extends. Negative order throws.
double legendre_eval(int order, double x);

// Fills out[0..max_order] with P_0(x)..P_{max_order}(x). No clamping; the
// likelihood evaluates the polynomials wherever s(Phi) lands.
void legendre_all(int max_order, double x, std::span<double> out);

// Same, plus first derivatives via P'_{m+1} = P'_{m-1} + (2m+1) P_m.
void legendre_all_with_deriv(int max_order, double x, std::span<double> values,
                             std::span<double> derivs);

// s and its inverse: the affine map between [0, phi_max] and [-1, 1].
double scale_to_unit(double phi, double phi_max);
double scale_from_unit(double u, double phi_max);

}  // namespace fluxcal
