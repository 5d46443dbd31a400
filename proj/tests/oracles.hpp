#pragma once

// Independent reference computations used by the tests. Deliberately naive:
// bisection, brute-force quadrature, direct formulas.

#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

namespace oracle {

/// Root of a decreasing function on [lo, hi] by plain bisection.
inline long double bisect_decreasing(const std::function<long double(long double)> &f,
                                     long double lo, long double hi, int steps = 200) {
  for (int i = 0; i < steps; ++i) {
    const long double mid = 0.5L * (lo + hi);
    if (f(mid) > 0)
      lo = mid;
    else
      hi = mid;
  }
  return 0.5L * (lo + hi);
}

/// f(x) - 1 for the batch equation, summed in long double.
inline long double lambda_residual(long double mu, long double alpha, int p, long double x) {
  long double s = 0;
  for (int k = 1; k <= p; ++k)
    s += (1.0L / p + mu * x / k) * std::exp(-mu * (x * p / k - alpha));
  return s - 1.0L;
}

/// lambda by bisection; the bracket grows until the residual changes sign.
inline long double lambda_bisect(double mu, double alpha, int p) {
  long double hi = alpha + 1.0L / mu;
  while (lambda_residual(mu, alpha, p, hi) > 0)
    hi *= 2;
  return bisect_decreasing([&](long double x) { return lambda_residual(mu, alpha, p, x); }, 0.0L,
                           hi);
}

/// W_{-1}(-exp(-y)) for y > 1 by bisection on w + log(-w) = -y over w <= -1.
inline long double lambert_wm1_neg_exp(long double y) {
  // g(w) = w + log(-w) + y is increasing on (-inf, -1].
  long double lo = -1.0L;
  long double step = 1.0L;
  while (lo + std::log(-lo) + y > 0) {
    lo -= step;
    step *= 2;
  }
  long double hi = -1.0L;
  for (int i = 0; i < 300; ++i) {
    const long double mid = 0.5L * (lo + hi);
    if (mid + std::log(-mid) + y > 0)
      hi = mid;
    else
      lo = mid;
  }
  return 0.5L * (lo + hi);
}

/// Composite midpoint rule with n points on [a, b].
inline long double midpoint(const std::function<long double(long double)> &f, long double a,
                            long double b, std::int64_t n) {
  const long double h = (b - a) / n;
  long double s = 0;
  for (std::int64_t i = 0; i < n; ++i)
    s += f(a + (i + 0.5L) * h);
  return s * h;
}

/// One-sided sign test: P(X >= wins) for X ~ Binomial(n, 1/2).
inline double sign_test_p(int wins, int n) {
  double p = 0;
  for (int k = wins; k <= n; ++k)
    p += std::exp(std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0) -
                  n * std::log(2.0));
  return p;
}

} // namespace oracle
