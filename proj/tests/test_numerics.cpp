#include "bpcc/numerics.hpp"
#include "bpcc/rng.hpp"

#include "doctest.h"
#include "oracles.hpp"

#include <cmath>
#include <numbers>

using namespace bpcc;

TEST_CASE("solve_lambda at mu = alpha = 1 matches bisection") {
  const double lam = solve_lambda(1.0, 1.0, 1);
  CHECK(lam == doctest::Approx(static_cast<double>(oracle::lambda_bisect(1.0, 1.0, 1))).epsilon(1e-12));
  CHECK(lam == doctest::Approx(2.1462).epsilon(1e-4));
  CHECK(std::abs((1.0 + lam) * std::exp(-(lam - 1.0)) - 1.0) < 1e-12);
}

TEST_CASE("solve_lambda approaches alpha as p grows") {
  const double lam = solve_lambda(1.0, 1.0, 10000);
  CHECK(std::abs(lam - 1.0) < 1e-2);
  CHECK(lam > 1.0);
  CHECK(lam == doctest::Approx(static_cast<double>(oracle::lambda_bisect(1.0, 1.0, 10000))).epsilon(1e-10));
}

TEST_CASE("solve_lambda matches bisection across parameters") {
  SplitMix64 gen(17);
  for (int i = 0; i < 200; ++i) {
    const double mu = 0.05 + 49.95 * gen.uniform();
    const double alpha = 0.01 + 1.99 * gen.uniform();
    const int p = 1 + static_cast<int>(gen() % 200);
    const double lam = solve_lambda(mu, alpha, p);
    const double ref = static_cast<double>(oracle::lambda_bisect(mu, alpha, p));
    CHECK(lam == doctest::Approx(ref).epsilon(1e-10));
    CHECK(std::abs(lambda_equation(mu, alpha, p, lam) - 1.0) <= 1e-12);
  }
}

TEST_CASE("solve_lambda at p = 1 equals sup_lambda") {
  SplitMix64 gen(3);
  for (int i = 0; i < 1000; ++i) {
    const double mu = 1e-3 + 50.0 * gen.uniform();
    const double alpha = 1e-3 + 2.0 * gen.uniform();
    const double sup = sup_lambda(mu, alpha);
    CHECK(solve_lambda(mu, alpha, 1) == doctest::Approx(sup).epsilon(1e-9));
    CHECK(sup > alpha);
  }
}

TEST_CASE("solve_lambda is strictly decreasing in p and stays above alpha") {
  SplitMix64 gen(23);
  for (int i = 0; i < 50; ++i) {
    const double mu = 0.1 + 49.9 * gen.uniform();
    const double alpha = 0.01 + 1.99 * gen.uniform();
    double prev = sup_lambda(mu, alpha) * (1 + 1e-12);
    for (int p = 1; p <= 1024; p *= 2) {
      const double lam = solve_lambda(mu, alpha, p);
      CHECK(lam < prev);
      CHECK(lam > alpha);
      prev = lam;
    }
  }
}

TEST_CASE("lambda equation starts above one at alpha") {
  SplitMix64 gen(31);
  for (int i = 0; i < 500; ++i) {
    const double mu = 0.01 + 50.0 * gen.uniform();
    const double alpha = 0.001 + 2.0 * gen.uniform();
    const int p = 1 + static_cast<int>(gen() % 1024);
    CHECK(lambda_equation(mu, alpha, p, alpha) > 1.0);
    const double h = 1e-6 * alpha;
    const double fd = (lambda_equation(mu, alpha, p, alpha + h) -
                       lambda_equation(mu, alpha, p, alpha - h)) / (2 * h);
    CHECK(lambda_equation_derivative(mu, alpha, p, alpha) == doctest::Approx(fd).epsilon(1e-5));
  }
}

TEST_CASE("solve_lambda validates its inputs") {
  CHECK_THROWS_AS(solve_lambda(0.0, 1.0, 1), std::invalid_argument);
  CHECK_THROWS_AS(solve_lambda(1.0, -1.0, 1), std::invalid_argument);
  CHECK_THROWS_AS(solve_lambda(1.0, 1.0, 0), std::invalid_argument);
  CHECK_THROWS_AS(RootSolveConfig({0.0, 10}).validate(), std::invalid_argument);
  CHECK_THROWS_AS(RootSolveConfig({1e-12, 0}).validate(), std::invalid_argument);
}

TEST_CASE("lambert W branch -1") {
  const double x = -std::exp(-2.0);
  const double w = lambert_w_branch_minus1(x);
  CHECK(w == doctest::Approx(-3.14619).epsilon(1e-5));
  CHECK(w == doctest::Approx(static_cast<double>(oracle::lambert_wm1_neg_exp(2.0L))).epsilon(1e-13));
  CHECK(lambert_w_branch_minus1(-std::exp(-1.0) + 1e-15) == doctest::Approx(-1.0).epsilon(1e-6));
  CHECK_THROWS_AS(lambert_w_branch_minus1(0.0), std::domain_error);
  CHECK_THROWS_AS(lambert_w_branch_minus1(-0.5), std::domain_error);
  CHECK_THROWS_AS(lambert_w_branch_minus1(0.1), std::domain_error);
}

TEST_CASE("lambert W satisfies its defining identity") {
  SplitMix64 gen(8);
  for (int i = 0; i < 1000; ++i) {
    const double x = -std::exp(-1.0) * (1e-9 + (1 - 2e-9) * gen.uniform());
    const double w = lambert_w_branch_minus1(x);
    CHECK(w <= -1.0);
    CHECK(w * std::exp(w) == doctest::Approx(x).epsilon(1e-12));
  }
}

TEST_CASE("log-space W agrees with the direct evaluation and with bisection") {
  for (double y : {1.0 + 1e-10, 1.001, 1.5, 2.0, 5.0, 30.0, 200.0, 800.0}) {
    const double ref = static_cast<double>(oracle::lambert_wm1_neg_exp(y));
    CHECK(lambert_w_branch_minus1_neg_exp(y) == doctest::Approx(ref).epsilon(1e-12));
    if (y < 700.0)
      CHECK(lambert_w_branch_minus1(-std::exp(-y)) == doctest::Approx(ref).epsilon(1e-9));
  }
}

TEST_CASE("sup_lambda closed form") {
  CHECK(sup_lambda(1.0, 1.0) == doctest::Approx(2.1462).epsilon(1e-4));
  // Large mu*alpha: the supremum approaches alpha.
  const double alpha = 0.4, mu = 2000.0 / alpha;
  CHECK((sup_lambda(mu, alpha) - alpha) / alpha < 0.01);
  CHECK(sup_lambda(mu, alpha) == doctest::Approx(solve_lambda(mu, alpha, 1)).epsilon(1e-10));
  // Tiny mu*alpha stays finite and positive.
  CHECK(std::isfinite(sup_lambda(1e-6, 1e-6)));
  CHECK(sup_lambda(1e-6, 1e-6) > 1e-6);
}

TEST_CASE("exp_integral_01 against composite quadrature") {
  CHECK(exp_integral_01(0.0) == doctest::Approx(1.0).epsilon(1e-14));
  const auto ref = oracle::midpoint([](long double x) { return std::exp(-1.0L / x); }, 0.0L, 1.0L,
                                    10'000'000);
  CHECK(std::abs(exp_integral_01(1.0) - static_cast<double>(ref)) < 1e-10);
  CHECK(exp_integral_01(1.0) == doctest::Approx(0.14850).epsilon(1e-4));
  for (double c : {0.01, 0.3, 2.0, 7.5, 40.0}) {
    const auto r = oracle::midpoint([c](long double x) { return std::exp(-c / x); }, 0.0L, 1.0L,
                                    2'000'000);
    CHECK(std::abs(exp_integral_01(c) - static_cast<double>(r)) < 1e-10);
  }
}

TEST_CASE("scaled integral stays finite for large arguments") {
  for (double c : {1.0, 50.0, 800.0, 5000.0}) {
    const double s = scaled_exp_integral_01(c);
    CHECK(std::isfinite(s));
    CHECK(s > 0.0);
    CHECK(s < 1.0);
    // Asymptotically e^c I(c) ~ 1/(c + 2).
    if (c >= 800.0)
      CHECK(s == doctest::Approx(1.0 / (c + 2.0)).epsilon(1e-3));
  }
}

TEST_CASE("integral identity holds for the quadrature") {
  for (double c : {0.1, 0.5, 1.0, 2.0, 5.0, 10.0}) {
    const double lhs = integrate([c](double x) { return (1.0 + c / x) * std::exp(-c / x); }, 0.0, 1.0);
    CHECK(std::abs(lhs - std::exp(-c)) < 1e-8);
  }
}

TEST_CASE("integrate handles smooth integrands and works in float") {
  CHECK(integrate([](double x) { return std::sin(x); }, 0.0, std::numbers::pi) ==
        doctest::Approx(2.0).epsilon(1e-13));
  CHECK(integrate([](double x) { return x * x; }, -1.0, 2.0) == doctest::Approx(3.0).epsilon(1e-13));
  CHECK(integrate([](float x) { return x; }, 0.0f, 1.0f, 1e-6f) == doctest::Approx(0.5).epsilon(1e-6));
  CHECK(solve_lambda<float>(1.0f, 1.0f, 1, {1e-5, 200}) == doctest::Approx(2.1462).epsilon(1e-4));
}
