#include "fluxcal/lbfgs.hpp"

#include <cmath>
#include <cstddef>
#include <deque>
#include <limits>

#include "fluxcal/errors.hpp"

namespace fluxcal {

namespace {

double inf_norm(const std::vector<double>& v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::abs(x));
  return m;
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double l2_norm(const std::vector<double>& v) { return std::sqrt(dot(v, v)); }

struct Pair {
  std::vector<double> s;
  std::vector<double> y;
  double rho;  // 1 / (s.y)
};

// Minimizer of the cubic through (a, fa, ga), (b, fb, gb); NaN when undefined.
double cubic_min(double a, double fa, double ga, double b, double fb, double gb) {
  const double d1 = ga + gb - 3.0 * (fa - fb) / (a - b);
  double disc = d1 * d1 - ga * gb;
  if (disc < 0.0) return std::numeric_limits<double>::quiet_NaN();
  double d2 = std::sqrt(disc);
  if (b < a) d2 = -d2;
  const double denom = gb - ga + 2.0 * d2;
  if (denom == 0.0) return std::numeric_limits<double>::quiet_NaN();
  return b - (b - a) * (gb + d2 - d1) / denom;
}

struct LineEval {
  double t = 0.0;
  double f = std::numeric_limits<double>::quiet_NaN();
  double dphi = 0.0;  // directional derivative at t
  bool finite = false;
};

class LineSearch {
 public:
  LineSearch(const ObjectiveFn& fn, const std::vector<double>& x, const std::vector<double>& d,
             double f0, double dphi0)
      : fn_(fn), x_(x), d_(d), f0_(f0), dphi0_(dphi0), trial_(x.size()), grad_(x.size()) {}

  LineEval eval(double t) {
    for (std::size_t i = 0; i < x_.size(); ++i) trial_[i] = x_[i] + t * d_[i];
    LineEval e;
    e.t = t;
    e.f = fn_(trial_, grad_);
    ++evaluations;
    e.finite = std::isfinite(e.f);
    e.dphi = e.finite ? dot(grad_, d_) : 0.0;
    if (e.finite && e.f < best_.f) {
      best_ = e;
      best_x_ = trial_;
      best_grad_ = grad_;
    }
    return e;
  }

  bool armijo(const LineEval& e) const { return e.finite && e.f <= f0_ + c1 * e.t * dphi0_; }
  bool curvature(const LineEval& e) const { return std::abs(e.dphi) <= -c2 * dphi0_; }

  // Strong-Wolfe search; falls back to the best finite improvement seen when
  // the interval collapses. Returns false when no finite decrease was found.
  bool run(double t_init, int max_evals, LineEval& out, std::vector<double>& x_out,
           std::vector<double>& g_out) {
    best_ = LineEval{0.0, f0_, dphi0_, true};
    LineEval prev{0.0, f0_, dphi0_, true};
    double t = t_init;
    LineEval lo, hi;
    bool bracketed = false;
    for (int i = 0; i < max_evals && !bracketed; ++i) {
      LineEval e = eval(t);
      if (!e.finite || !armijo(e) || (i > 0 && e.f >= prev.f)) {
        lo = prev;
        hi = e;
        bracketed = true;
        break;
      }
      if (curvature(e)) {
        out = e;
        x_out = trial_;
        g_out = grad_;
        return true;
      }
      if (e.dphi >= 0.0) {
        lo = e;
        hi = prev;
        bracketed = true;
        break;
      }
      prev = e;
      t = std::min(t * 2.0, 1e12);
      if (t >= 1e12) break;
    }
    if (!bracketed) return finish_with_best(out, x_out, g_out);

    for (int i = 0; i < max_evals; ++i) {
      double t_next = std::numeric_limits<double>::quiet_NaN();
      if (lo.finite && hi.finite)
        t_next = cubic_min(lo.t, lo.f, lo.dphi, hi.t, hi.f, hi.dphi);
      const double span = hi.t - lo.t;
      const double lo_guard = lo.t + 0.05 * span;
      const double hi_guard = hi.t - 0.05 * span;
      const double lo_bound = std::min(lo_guard, hi_guard);
      const double hi_bound = std::max(lo_guard, hi_guard);
      if (!std::isfinite(t_next) || t_next < lo_bound || t_next > hi_bound)
        t_next = 0.5 * (lo.t + hi.t);
      if (std::abs(span) <= 1e-14 * std::max(1.0, std::abs(lo.t)))
        return finish_with_best(out, x_out, g_out);

      LineEval e = eval(t_next);
      if (!e.finite || !armijo(e) || e.f >= lo.f) {
        hi = e;
      } else {
        if (curvature(e)) {
          out = e;
          x_out = trial_;
          g_out = grad_;
          return true;
        }
        if (e.dphi * (hi.t - lo.t) >= 0.0) hi = lo;
        lo = e;
      }
    }
    return finish_with_best(out, x_out, g_out);
  }

  int evaluations = 0;

 private:
  bool finish_with_best(LineEval& out, std::vector<double>& x_out, std::vector<double>& g_out) {
    if (best_.t > 0.0 && best_.finite && best_.f < f0_) {
      out = best_;
      x_out = best_x_;
      g_out = best_grad_;
      return true;
    }
    return false;
  }

  static constexpr double c1 = 1e-4;
  static constexpr double c2 = 0.9;
  const ObjectiveFn& fn_;
  const std::vector<double>& x_;
  const std::vector<double>& d_;
  double f0_, dphi0_;
  std::vector<double> trial_, grad_;
  LineEval best_;
  std::vector<double> best_x_, best_grad_;
};

}  // namespace

LbfgsResult lbfgs_minimize(const ObjectiveFn& fn, std::vector<double> x0,
                           const LbfgsOptions& options) {
  const std::size_t n = x0.size();
  LbfgsResult result;
  std::vector<double> grad(n);
  double f = fn(x0, grad);
  result.evaluations = 1;
  if (!std::isfinite(f)) throw NumericalError("objective is not finite at the starting point");

  std::vector<double> x = std::move(x0);
  std::deque<Pair> memory;
  std::vector<double> direction(n), q(n);
  std::vector<double> x_new(n), g_new(n);

  for (int iter = 0; iter < options.max_iterations; ++iter) {
    result.grad_inf_norm = inf_norm(grad);
    if (result.grad_inf_norm <= options.gradient_tolerance) {
      result.converged = true;
      break;
    }

    // Two-loop recursion; implicit H0 = (s.y / y.y) I from the latest pair.
    q = grad;
    std::vector<double> alpha_coef(memory.size());
    for (std::size_t i = memory.size(); i-- > 0;) {
      const Pair& pr = memory[i];
      alpha_coef[i] = pr.rho * dot(pr.s, q);
      for (std::size_t j = 0; j < n; ++j) q[j] -= alpha_coef[i] * pr.y[j];
    }
    double h0 = 1.0;
    if (!memory.empty()) {
      const Pair& last = memory.back();
      h0 = dot(last.s, last.y) / dot(last.y, last.y);
    }
    for (std::size_t j = 0; j < n; ++j) q[j] *= h0;
    for (std::size_t i = 0; i < memory.size(); ++i) {
      const Pair& pr = memory[i];
      const double beta = pr.rho * dot(pr.y, q);
      for (std::size_t j = 0; j < n; ++j) q[j] += (alpha_coef[i] - beta) * pr.s[j];
    }
    for (std::size_t j = 0; j < n; ++j) direction[j] = -q[j];

    double dphi0 = dot(grad, direction);
    if (!(dphi0 < 0.0)) {  // not a descent direction; restart from steepest
      memory.clear();
      for (std::size_t j = 0; j < n; ++j) direction[j] = -grad[j];
      dphi0 = dot(grad, direction);
      if (!(dphi0 < 0.0)) break;
    }

    const double t_init =
        (iter == 0 && memory.empty()) ? std::min(1.0, 1.0 / std::max(1.0, inf_norm(grad))) : 1.0;

    LineSearch search(fn, x, direction, f, dphi0);
    LineEval accepted;
    bool ok = search.run(t_init, options.max_line_search, accepted, x_new, g_new);
    result.evaluations += search.evaluations;
    if (!ok && !memory.empty()) {
      // Retry once along steepest descent with a fresh approximation.
      memory.clear();
      for (std::size_t j = 0; j < n; ++j) direction[j] = -grad[j];
      dphi0 = dot(grad, direction);
      LineSearch retry(fn, x, direction, f, dphi0);
      ok = retry.run(std::min(1.0, 1.0 / std::max(1.0, inf_norm(grad))), options.max_line_search,
                     accepted, x_new, g_new);
      result.evaluations += retry.evaluations;
    }
    if (!ok) break;  // no finite decrease anywhere along the ray: stall

    Pair pr;
    pr.s.resize(n);
    pr.y.resize(n);
    for (std::size_t j = 0; j < n; ++j) {
      pr.s[j] = x_new[j] - x[j];
      pr.y[j] = g_new[j] - grad[j];
    }
    const double sy = dot(pr.s, pr.y);
    if (sy > 1e-10 * l2_norm(pr.s) * l2_norm(pr.y)) {
      pr.rho = 1.0 / sy;
      memory.push_back(std::move(pr));
      if (static_cast<int>(memory.size()) > options.history) memory.pop_front();
    }

    x.swap(x_new);
    grad.swap(g_new);
    f = accepted.f;
    result.iterations = iter + 1;
  }

  result.x = std::move(x);
  result.f = f;
  result.grad_inf_norm = inf_norm(grad);
  if (result.grad_inf_norm <= options.gradient_tolerance) result.converged = true;
  return result;
}

}  // namespace fluxcal
