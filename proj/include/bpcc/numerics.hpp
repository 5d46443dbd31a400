#pragma once

// Scalar special functions and root solves behind the load allocator:
// the per-worker lambda equation, the W_{-1} Lambert branch that gives its
// p = 1 closed form, and the integral that appears in the large-p limits.

#include <algorithm>
#include <cmath>
#include <concepts>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>
#include <utility>

namespace bpcc {

class NumericFailure : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

struct RootSolveConfig {
  double abs_tol = 1e-12; ///< accepted |f(lambda) - 1|
  int max_iter = 200;

  void validate() const {
    if (!(abs_tol > 0.0))
      throw std::invalid_argument("RootSolveConfig.abs_tol must be positive");
    if (max_iter < 1)
      throw std::invalid_argument("RootSolveConfig.max_iter must be >= 1");
  }
};

/// f(x) = sum_{k=1..p} (1/p + mu x / k) exp(-mu (x p / k - alpha)).
/// Strictly decreasing on x > 0 with f(0) = exp(mu alpha) > 1.
template <std::floating_point Scalar>
Scalar lambda_equation(Scalar mu, Scalar alpha, int p, Scalar x) {
  const Scalar inv_p = Scalar(1) / Scalar(p);
  Scalar sum = 0;
  // Largest k first: those terms dominate, smaller ones decay fast.
  for (int k = p; k >= 1; --k) {
    const Scalar arg = -mu * (x * Scalar(p) / Scalar(k) - alpha);
    if (arg < Scalar(-745))
      break;
    sum += (inv_p + mu * x / Scalar(k)) * std::exp(arg);
  }
  return sum;
}

/// d/dx of lambda_equation.
template <std::floating_point Scalar>
Scalar lambda_equation_derivative(Scalar mu, Scalar alpha, int p, Scalar x) {
  const Scalar inv_p = Scalar(1) / Scalar(p);
  Scalar sum = 0;
  for (int k = p; k >= 1; --k) {
    const Scalar ratio = Scalar(p) / Scalar(k);
    const Scalar arg = -mu * (x * ratio - alpha);
    if (arg < Scalar(-745))
      break;
    sum += (mu / Scalar(k) - (inv_p + mu * x / Scalar(k)) * mu * ratio) * std::exp(arg);
  }
  return sum;
}

/// W_{-1}(x) for x in (-1/e, 0): the solution of w e^w = x with w <= -1.
template <std::floating_point Scalar> Scalar lambert_w_branch_minus1(Scalar x) {
  const Scalar inv_e = Scalar(1) / std::numbers::e_v<Scalar>;
  if (!(x > -inv_e) || !(x < Scalar(0)))
    throw std::domain_error("lambert_w_branch_minus1: argument must lie in (-1/e, 0), got " +
                            std::to_string(static_cast<double>(x)));

  Scalar w;
  const Scalar q = Scalar(2) * (std::numbers::e_v<Scalar> * x + Scalar(1));
  if (q < Scalar(0.5)) {
    // Branch-point series in p = -sqrt(2 (e x + 1)).
    const Scalar s = -std::sqrt(std::max(q, Scalar(0)));
    w = Scalar(-1) + s - s * s / Scalar(3) + Scalar(11) / Scalar(72) * s * s * s;
  } else {
    const Scalar l1 = std::log(-x);
    const Scalar l2 = std::log(-l1);
    w = l1 - l2 + l2 / l1;
  }
  if (w >= Scalar(-1))
    return Scalar(-1);

  // Halley on g(w) = w e^w - x.
  for (int it = 0; it < 64; ++it) {
    const Scalar ew = std::exp(w);
    const Scalar g = w * ew - x;
    const Scalar wp1 = w + Scalar(1);
    const Scalar denom = ew * wp1 - (w + Scalar(2)) * g / (Scalar(2) * wp1);
    if (denom == Scalar(0))
      break;
    Scalar next = w - g / denom;
    if (next > Scalar(-1))
      next = (w + Scalar(-1)) / Scalar(2);
    const bool done = std::abs(next - w) <= Scalar(4) * std::numeric_limits<Scalar>::epsilon() *
                                                 std::abs(next);
    w = next;
    if (done)
      break;
  }
  return w;
}

/// W_{-1}(-exp(-y)) for y > 1, evaluated in log space: with w = -1 - v the
/// defining equation becomes v - log1p(v) = y - 1. Stays accurate when
/// -exp(-y) is within rounding of the branch point or underflows.
template <std::floating_point Scalar> Scalar lambert_w_branch_minus1_neg_exp(Scalar y) {
  if (!(y > Scalar(1)))
    throw std::domain_error("lambert_w_branch_minus1_neg_exp: y must exceed 1");
  const Scalar s = y - Scalar(1);
  auto h = [s](Scalar v) { return v - std::log1p(v) - s; };
  Scalar v = std::sqrt(Scalar(2) * s) + s;
  while (h(v) < Scalar(0))
    v *= Scalar(2);
  // h is convex and increasing on v > 0, so Newton from the right decreases
  // monotonically onto the root.
  for (int it = 0; it < 200; ++it) {
    const Scalar step = h(v) * (Scalar(1) + v) / v;
    const Scalar next = v - step;
    if (!(next < v) || next <= Scalar(0))
      break;
    v = next;
    if (step <= Scalar(2) * std::numeric_limits<Scalar>::epsilon() * v)
      break;
  }
  return Scalar(-1) - v;
}

/// Closed-form supremum of lambda over p (attained at p = 1):
/// (W_{-1}(-exp(-mu alpha - 1)) + 1) / (-mu).
template <std::floating_point Scalar> Scalar sup_lambda(Scalar mu, Scalar alpha) {
  if (!(mu > Scalar(0)) || !(alpha > Scalar(0)))
    throw std::invalid_argument("sup_lambda: mu and alpha must be positive");
  const Scalar w = lambert_w_branch_minus1_neg_exp(mu * alpha + Scalar(1));
  return (w + Scalar(1)) / (-mu);
}

/// Unique positive root of lambda_equation(mu, alpha, p, x) = 1.
///
/// Safeguarded Newton inside a bisection bracket whose upper end is
/// sup_lambda. Iterates to the floating-point root, then checks the
/// residual against cfg.abs_tol.
template <std::floating_point Scalar>
Scalar solve_lambda(Scalar mu, Scalar alpha, int p, const RootSolveConfig &cfg = {}) {
  if (!(mu > Scalar(0)) || !(alpha > Scalar(0)) || p < 1)
    throw std::invalid_argument("solve_lambda: need mu > 0, alpha > 0, p >= 1");
  cfg.validate();
  auto g = [&](Scalar x) { return lambda_equation(mu, alpha, p, x) - Scalar(1); };

  Scalar hi = sup_lambda(mu, alpha);
  Scalar g_hi = g(hi);
  if (p == 1 && std::abs(g_hi) <= Scalar(cfg.abs_tol) * Scalar(1e-2))
    return hi;
  while (g_hi > Scalar(0)) {
    hi *= Scalar(2);
    g_hi = g(hi);
  }
  Scalar lo = alpha;
  if (!(g(lo) > Scalar(0)))
    lo = Scalar(0);

  const Scalar eps = std::numeric_limits<Scalar>::epsilon();
  Scalar x = hi;
  Scalar best = hi;
  Scalar best_res = std::abs(g_hi);
  for (int it = 0; it < cfg.max_iter; ++it) {
    const Scalar gx = g(x);
    if (std::abs(gx) < best_res) {
      best_res = std::abs(gx);
      best = x;
    }
    if (gx == Scalar(0))
      return x;
    (gx > Scalar(0) ? lo : hi) = x;
    if (hi - lo <= Scalar(4) * eps * hi)
      break;
    const Scalar d = lambda_equation_derivative(mu, alpha, p, x);
    Scalar next = d < Scalar(0) ? x - gx / d : lo + (hi - lo) / Scalar(2);
    if (!(next > lo && next < hi))
      next = lo + (hi - lo) / Scalar(2);
    if (std::abs(next - x) <= Scalar(4) * eps * x) {
      const Scalar gn = std::abs(g(next));
      if (gn < best_res) {
        best_res = gn;
        best = next;
      }
      break;
    }
    x = next;
  }
  if (best_res <= Scalar(cfg.abs_tol))
    return best;
  throw NumericFailure("solve_lambda did not converge (mu=" + std::to_string(double(mu)) +
                       ", alpha=" + std::to_string(double(alpha)) +
                       ", p=" + std::to_string(p) + ")");
}

namespace detail {

template <std::floating_point Scalar, class F>
std::pair<Scalar, Scalar> gauss_kronrod15(const F &f, Scalar a, Scalar b) {
  static constexpr double xgk[8] = {
      0.991455371120812639206854697526329, 0.949107912342758524526189684047851,
      0.864864423359769072789712788640926, 0.741531185599394439863864773280788,
      0.586087235467691130294144845693013, 0.405845151377397166906606412076961,
      0.207784955007898467600689403773245, 0.000000000000000000000000000000000};
  static constexpr double wgk[8] = {
      0.022935322010529224963732008058970, 0.063092092629978553290700663189204,
      0.104790010322250183839876322541518, 0.140653259715525918745189590510238,
      0.169004726639267902826583426598550, 0.190350578064785409913256402421014,
      0.204432940075298892414161999234649, 0.209482141084727828012999174891714};
  static constexpr double wg[4] = {
      0.129484966168869693270611432679082, 0.279705391489276667901467771423780,
      0.381830050505118944950369775488975, 0.417959183673469387755102040816327};
  const Scalar center = (a + b) / Scalar(2);
  const Scalar half = (b - a) / Scalar(2);
  const Scalar fc = f(center);
  Scalar kronrod = fc * Scalar(wgk[7]);
  Scalar gauss = fc * Scalar(wg[3]);
  for (int j = 0; j < 7; ++j) {
    const Scalar dx = half * Scalar(xgk[j]);
    const Scalar fsum = f(center - dx) + f(center + dx);
    kronrod += Scalar(wgk[j]) * fsum;
    if (j % 2 == 1)
      gauss += Scalar(wg[j / 2]) * fsum;
  }
  return {kronrod * half, std::abs((kronrod - gauss) * half)};
}

template <std::floating_point Scalar, class F>
Scalar adaptive_gk(const F &f, Scalar a, Scalar b, Scalar tol, int depth) {
  const auto [value, err] = gauss_kronrod15(f, a, b);
  if (err <= tol || depth >= 50)
    return value;
  const Scalar mid = (a + b) / Scalar(2);
  return adaptive_gk(f, a, mid, tol / Scalar(2), depth + 1) +
         adaptive_gk(f, mid, b, tol / Scalar(2), depth + 1);
}

} // namespace detail

/// Adaptive Gauss-Kronrod (7/15) quadrature of f over [a, b].
template <std::floating_point Scalar, class F>
Scalar integrate(const F &f, Scalar a, Scalar b, Scalar abs_tol = Scalar(1e-12)) {
  return detail::adaptive_gk(f, a, b, abs_tol, 0);
}

/// exp(c) * integral_0^1 exp(-c/x) dx, i.e. integral_0^1 exp(-c (1-x)/x) dx.
/// The integrand is bounded by 1, so this stays finite where exp(c) alone
/// would overflow.
template <std::floating_point Scalar> Scalar scaled_exp_integral_01(Scalar c) {
  if (!(c >= Scalar(0)))
    throw std::invalid_argument("scaled_exp_integral_01: c must be nonnegative");
  if (c == Scalar(0))
    return Scalar(1);
  auto f = [c](Scalar x) {
    return x <= Scalar(0) ? Scalar(0) : std::exp(-c * (Scalar(1) - x) / x);
  };
  return integrate<Scalar>(f, Scalar(0), Scalar(1), Scalar(1e-13));
}

/// integral_0^1 exp(-c/x) dx for c >= 0.
template <std::floating_point Scalar> Scalar exp_integral_01(Scalar c) {
  if (!(c >= Scalar(0)))
    throw std::invalid_argument("exp_integral_01: c must be nonnegative");
  if (c == Scalar(0))
    return Scalar(1);
  auto f = [c](Scalar x) { return x <= Scalar(0) ? Scalar(0) : std::exp(-c / x); };
  return integrate<Scalar>(f, Scalar(0), Scalar(1), Scalar(1e-13));
}

} // namespace bpcc
