#include "bpcc/model.hpp"
#include "bpcc/rng.hpp"

#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <numeric>

using namespace bpcc;

TEST_CASE("batch_cdf follows the clamped shifted exponential") {
  const WorkerProfile unit{1.0, 1.0, 1};
  CHECK(batch_cdf(unit, 1, 1.0, 1.0) == 0.0);
  CHECK(batch_cdf(unit, 1, 1.0, 0.5) == 0.0);
  CHECK(batch_cdf(unit, 1, 1.0, -3.0) == 0.0);

  const WorkerProfile w{2.0, 0.5, 3};
  const double expect = 1.0 - std::exp(-2.0 * (20.0 / 30.0 - 0.5));
  CHECK(batch_cdf(w, 3, 10.0, 20.0) == doctest::Approx(expect).epsilon(1e-14));
  CHECK(batch_cdf(w, 3, 10.0, 20.0) == doctest::Approx(0.2835).epsilon(1e-3));
}

TEST_CASE("batch_cdf depends only on k*b, is monotone and tends to one") {
  const WorkerProfile w{3.0, 0.2, 4};
  double prev = 0.0;
  for (double t = 0.0; t < 200.0; t += 0.37) {
    const double v = batch_cdf(w, 3, 7.0, t);
    CHECK(v >= prev);
    CHECK(v == doctest::Approx(batch_cdf(w, 1, 21.0, t)).epsilon(1e-15));
    prev = v;
  }
  CHECK(batch_cdf(w, 3, 7.0, 1e6) == doctest::Approx(1.0));
}

TEST_CASE("expected_batch_time closed form") {
  CHECK(expected_batch_time({1.0, 0.0, 1}, 1, 1.0) == doctest::Approx(1.0));
  CHECK(expected_batch_time({2.0, 0.5, 1}, 2, 5.0) == doctest::Approx(10.0));
  CHECK(expected_batch_time({1e5, 1e-4, 1}, 1, 1000.0) == doctest::Approx(0.11));
}

TEST_CASE("expected_batch_time matches a Monte-Carlo average") {
  struct Case {
    WorkerProfile w;
    int k;
    std::int64_t b;
  };
  for (const auto &c : {Case{{2.0, 0.5, 2}, 2, 5}, Case{{1e5, 1e-4, 1}, 1, 1000}}) {
    SplitMix64 gen(42);
    const std::int64_t load = c.k * c.b;
    const int n = 1'000'000;
    double sum = 0.0;
    for (int i = 0; i < n; ++i) {
      const auto times = sample_completion_times(WorkerProfile{c.w.mu, c.w.alpha, c.k}, load,
                                                 SamplingMode::coupled, gen);
      sum += times.back();
    }
    const double expect = expected_batch_time(c.w, c.k, static_cast<double>(c.b));
    CHECK(sum / n == doctest::Approx(expect).epsilon(0.01));
  }
}

TEST_CASE("batch row counts use ceil(load/p) with a short last batch") {
  CHECK(batch_row_counts(10, 3) == std::vector<std::int64_t>{4, 4, 2});
  CHECK(batch_row_counts(12, 3) == std::vector<std::int64_t>{4, 4, 4});
  CHECK(batch_row_counts(4, 4) == std::vector<std::int64_t>{1, 1, 1, 1});
  CHECK(batch_row_counts(7, 1) == std::vector<std::int64_t>{7});
  // ceil(5/4) = 2 leaves nothing for a fourth batch.
  CHECK(batch_row_counts(5, 4) == std::vector<std::int64_t>{2, 2, 1});
  CHECK(cumulative_rows(10, 3) == std::vector<std::int64_t>{4, 8, 10});
  for (std::int64_t load = 1; load < 300; load += 7)
    for (int p = 1; p <= load && p < 40; p += 3) {
      const auto c = batch_row_counts(load, p);
      CHECK(std::accumulate(c.begin(), c.end(), std::int64_t{0}) == load);
      const auto b = (load + p - 1) / p;
      for (std::size_t k = 0; k + 1 < c.size(); ++k)
        CHECK(c[k] == b);
      CHECK(c.back() >= 1);
      CHECK(c.back() <= b);
    }
}

TEST_CASE("coupled sampling formula") {
  const WorkerProfile w{1.0, 1.0, 2};
  CHECK(arrival_times_from_draw(w, 4, 1.0) == std::vector<double>{4.0, 8.0});
  CHECK(arrival_times_from_draw({3.0, 0.25, 3}, 10, 0.0) == std::vector<double>{1.0, 2.0, 2.5});
  SplitMix64 gen(7);
  for (int i = 0; i < 1000; ++i) {
    const auto t = sample_completion_times({0.5, 0.1, 7}, 100, SamplingMode::coupled, gen);
    REQUIRE(t.size() == 7);
    for (std::size_t k = 1; k < t.size(); ++k)
      CHECK(t[k] > t[k - 1]);
  }
}

TEST_CASE("sample_completion_times rejects load below p") {
  SplitMix64 gen(1);
  CHECK_THROWS_AS(sample_completion_times({1.0, 1.0, 5}, 4, SamplingMode::coupled, gen),
                  InvalidAllocation);
  CHECK_THROWS_AS(WorkerProfile({0.0, 1.0, 1}).validate(), std::invalid_argument);
  CHECK_THROWS_AS(WorkerProfile({1.0, -1.0, 1}).validate(), std::invalid_argument);
  CHECK_THROWS_AS(WorkerProfile({1.0, 1.0, 0}).validate(), std::invalid_argument);
}

namespace {

// Kolmogorov-Smirnov distance between the empirical CDF of `xs` and `cdf`.
template <class Cdf> double ks_distance(std::vector<double> xs, Cdf cdf) {
  std::sort(xs.begin(), xs.end());
  const double n = static_cast<double>(xs.size());
  double d = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double f = cdf(xs[i]);
    d = std::max({d, std::abs(f - i / n), std::abs(f - (i + 1) / n)});
  }
  return d;
}

} // namespace

TEST_CASE("empirical CDF of the first batch matches batch_cdf") {
  const WorkerProfile w{2.0, 0.5, 1};
  for (auto mode : {SamplingMode::coupled, SamplingMode::independent}) {
    SplitMix64 gen(2024);
    std::vector<double> first;
    for (int i = 0; i < 100'000; ++i)
      first.push_back(sample_completion_times({2.0, 0.5, 3}, 30, mode, gen).front());
    CHECK(ks_distance(first, [&](double t) { return batch_cdf(w, 1, 10.0, t); }) < 0.01);
  }
}

TEST_CASE("independent mode keeps the marginal of the last batch") {
  SplitMix64 gen(99);
  std::vector<double> last;
  for (int i = 0; i < 100'000; ++i)
    last.push_back(sample_completion_times({2.0, 0.5, 3}, 30, SamplingMode::independent, gen).back());
  const WorkerProfile w{2.0, 0.5, 3};
  CHECK(ks_distance(last, [&](double t) { return batch_cdf(w, 3, 10.0, t); }) < 0.01);
}

TEST_CASE("standard exponential draws have unit mean and no infinities") {
  SplitMix64 gen(5);
  double sum = 0.0;
  const int n = 2'000'000;
  for (int i = 0; i < n; ++i) {
    const double x = standard_exponential(gen);
    REQUIRE(std::isfinite(x));
    REQUIRE(x >= 0.0);
    sum += x;
  }
  CHECK(sum / n == doctest::Approx(1.0).epsilon(0.003));
}

TEST_CASE("fit recovers the shift exactly from noiseless data") {
  const double mu = 50.0, alpha = 0.02;
  std::vector<TimingSample> samples;
  for (std::int64_t r : {100, 400, 900})
    samples.push_back({r, {alpha * r, alpha * r + 2.0 * r / mu, alpha * r + r / mu}});
  const auto fit = fit_shift_and_rate(samples);
  CHECK(fit.alpha == doctest::Approx(alpha).epsilon(1e-12));
  CHECK(fit.mu == doctest::Approx(mu).epsilon(1e-12));
  for (double res : fit.shift_residuals)
    CHECK(std::abs(res) < 1e-12);
  for (double res : fit.tail_residuals)
    CHECK(std::abs(res) < 1e-12);
}

TEST_CASE("fit reproduces the instance parameter table fixture") {
  // Per-size shift and tail estimates consistent with mu = 9.42e4, alpha = 1.75e-4.
  const double mu = 9.42e4, alpha = 1.75e-4;
  std::vector<TimingSample> samples;
  for (std::int64_t r : {2000, 5000, 10000}) {
    const double t0 = alpha * r, tc = r / mu;
    samples.push_back({r, {t0, t0 + 2.0 * tc}});
  }
  const auto fit = fit_shift_and_rate(samples);
  CHECK(fit.mu == doctest::Approx(9.42e4).epsilon(1e-9));
  CHECK(fit.alpha == doctest::Approx(1.75e-4).epsilon(1e-9));
}

TEST_CASE("fit recovers synthetic parameters within 5 percent") {
  const WorkerProfile truth{100.0, 0.01, 1};
  SplitMix64 gen(13);
  std::vector<TimingSample> samples;
  for (std::int64_t r : {500, 1000, 2000}) {
    TimingSample s{r, {}};
    for (int i = 0; i < 1000; ++i)
      s.durations.push_back(sample_completion_times(truth, r, SamplingMode::coupled, gen).back());
    samples.push_back(std::move(s));
  }
  const auto fit = fit_shift_and_rate(samples);
  CHECK(std::abs(fit.mu - 100.0) / 100.0 < 0.05);
  CHECK(std::abs(fit.alpha - 0.01) / 0.01 < 0.05);
}

TEST_CASE("fit pools repeated task sizes and rejects degenerate inputs") {
  std::vector<TimingSample> one_size{{100, {1.0, 2.0}}, {100, {1.5, 3.0}}};
  CHECK_THROWS_AS(fit_shift_and_rate(one_size), EstimationFailure);
  std::vector<TimingSample> short_sample{{100, {1.0}}, {200, {2.0, 3.0}}};
  CHECK_THROWS_AS(fit_shift_and_rate(short_sample), EstimationFailure);
  std::vector<TimingSample> flat{{100, {1.0, 1.0}}, {200, {2.0, 2.0}}};
  CHECK_THROWS_AS(fit_shift_and_rate(flat), EstimationFailure);

  std::vector<TimingSample> split{{100, {1.0, 2.0}}, {200, {2.0, 4.0}}, {100, {1.0, 3.0}}};
  const auto fit = fit_shift_and_rate(split);
  CHECK(fit.task_sizes == std::vector<std::int64_t>{100, 200});
  CHECK(fit.shift_estimates[0] == doctest::Approx(1.0));
  CHECK(fit.tail_estimates[0] == doctest::Approx(0.75));
}
