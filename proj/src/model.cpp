#include "bpcc/model.hpp"

#include <algorithm>
#include <map>
#include <numeric>

namespace bpcc {

void WorkerProfile::validate() const {
  if (!(mu > 0.0) || !std::isfinite(mu))
    throw std::invalid_argument("worker mu must be positive, got " + std::to_string(mu));
  if (!(alpha > 0.0) || !std::isfinite(alpha))
    throw std::invalid_argument("worker alpha must be positive, got " + std::to_string(alpha));
  if (p < 1)
    throw std::invalid_argument("worker batch count must be >= 1, got " + std::to_string(p));
}

double batch_cdf(const WorkerProfile &profile, int k, double b, double t) {
  const double rows = static_cast<double>(k) * b;
  if (t < rows * profile.alpha)
    return 0.0;
  return -std::expm1(-profile.mu * (t / rows - profile.alpha));
}

double expected_batch_time(const WorkerProfile &profile, int k, double b) {
  return static_cast<double>(k) * b * (profile.alpha + 1.0 / profile.mu);
}

std::vector<std::int64_t> batch_row_counts(std::int64_t load, int p) {
  if (load < 1 || p < 1 || load < p)
    throw InvalidAllocation("cannot split " + std::to_string(load) + " rows into " +
                            std::to_string(p) + " batches");
  const std::int64_t b = (load + p - 1) / p;
  const std::int64_t count = (load + b - 1) / b;
  std::vector<std::int64_t> rows(static_cast<std::size_t>(count), b);
  rows.back() = load - (count - 1) * b;
  return rows;
}

std::vector<std::int64_t> cumulative_rows(std::int64_t load, int p) {
  auto rows = batch_row_counts(load, p);
  std::partial_sum(rows.begin(), rows.end(), rows.begin());
  return rows;
}

std::vector<double> arrival_times_from_draw(const WorkerProfile &profile, std::int64_t load,
                                            double x) {
  const double per_row = profile.alpha + x / profile.mu;
  const auto cum = cumulative_rows(load, profile.p);
  std::vector<double> times(cum.size());
  for (std::size_t k = 0; k < cum.size(); ++k)
    times[k] = static_cast<double>(cum[k]) * per_row;
  return times;
}

ParameterFit fit_shift_and_rate(std::span<const TimingSample> samples) {
  std::map<std::int64_t, std::vector<double>> by_size;
  for (const auto &s : samples) {
    if (s.task_size <= 0)
      throw EstimationFailure("task size must be positive");
    if (s.durations.empty())
      throw EstimationFailure("timing sample for size " + std::to_string(s.task_size) +
                              " has no durations");
    for (double d : s.durations)
      if (!(d >= 0.0))
        throw EstimationFailure("durations must be nonnegative");
    auto &dst = by_size[s.task_size];
    dst.insert(dst.end(), s.durations.begin(), s.durations.end());
  }
  if (by_size.size() < 2)
    throw EstimationFailure("need at least two distinct task sizes, got " +
                            std::to_string(by_size.size()));

  ParameterFit fit;
  double sxx = 0.0, sx_shift = 0.0, sx_tail = 0.0;
  for (const auto &[size, durations] : by_size) {
    if (durations.size() < 2)
      throw EstimationFailure("need at least two durations for task size " +
                              std::to_string(size));
    const double t0 = *std::min_element(durations.begin(), durations.end());
    const double mean =
        std::accumulate(durations.begin(), durations.end(), 0.0) / double(durations.size());
    const double tc = mean - t0;
    const double r = static_cast<double>(size);
    fit.task_sizes.push_back(size);
    fit.shift_estimates.push_back(t0);
    fit.tail_estimates.push_back(tc);
    sxx += r * r;
    sx_shift += r * t0;
    sx_tail += r * tc;
  }

  const double alpha = sx_shift / sxx;
  const double inv_mu = sx_tail / sxx;
  if (!(alpha > 0.0))
    throw EstimationFailure("degenerate shift fit (nonpositive slope)");
  if (!(inv_mu > 0.0))
    throw EstimationFailure("degenerate rate fit (nonpositive slope)");
  fit.alpha = alpha;
  fit.mu = 1.0 / inv_mu;
  for (std::size_t i = 0; i < fit.task_sizes.size(); ++i) {
    const double r = static_cast<double>(fit.task_sizes[i]);
    fit.shift_residuals.push_back(fit.shift_estimates[i] - alpha * r);
    fit.tail_residuals.push_back(fit.tail_estimates[i] - r * inv_mu);
  }
  return fit;
}

} // namespace bpcc
