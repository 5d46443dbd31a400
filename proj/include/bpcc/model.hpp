#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace bpcc {

/// Latency parameters of one worker under the shifted-exponential batch
/// model, plus the number of batches it splits its load into.
struct WorkerProfile {
  double mu = 1.0;    ///< straggling rate, rows per second
  double alpha = 1.0; ///< shift, seconds per row
  int p = 1;          ///< number of batches

  void validate() const;
};

/// Repeated timings of one task size.
struct TimingSample {
  std::int64_t task_size = 0;
  std::vector<double> durations;
};

enum class SamplingMode { coupled, independent };

class InvalidAllocation : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

class EstimationFailure : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Pr(T_k <= t) where T_k is the arrival time of the k-th batch of size b.
/// Clamped to zero below the shift k*b*alpha.
double batch_cdf(const WorkerProfile &profile, int k, double b, double t);

/// E[T_k] = k*b*(alpha + 1/mu).
double expected_batch_time(const WorkerProfile &profile, int k, double b);

/// Row counts of the batches a worker with `load` rows and `p` requested
/// batches processes: ceil(load/p) rows each, the last one short. When the
/// ceiling leaves nothing for the trailing batches the count shrinks to
/// ceil(load/b).
std::vector<std::int64_t> batch_row_counts(std::int64_t load, int p);

/// Cumulative rows delivered after each batch (K_1, ..., K_p).
std::vector<std::int64_t> cumulative_rows(std::int64_t load, int p);

/// Arrival times T_k = K_k * (alpha + x / mu) for a given standard
/// exponential draw x. Strictly increasing in k.
std::vector<double> arrival_times_from_draw(const WorkerProfile &profile,
                                            std::int64_t load, double x);

template <class Gen> double standard_exponential(Gen &gen) {
  static_assert(Gen::max() == ~typename Gen::result_type{0} && sizeof(typename Gen::result_type) == 8,
                "expects a full-range 64-bit generator");
  // u in [0, 1) so 1 - u is in (0, 1] and the log is finite.
  const double u = static_cast<double>(gen() >> 11) * 0x1.0p-53;
  return -std::log1p(-u);
}

/// Batch arrival times of one worker in one run.
///
/// coupled: one exponential draw per run, T_k = K_k (alpha + X/mu).
/// independent: a fresh draw per batch; same marginals, not monotone.
template <class Gen>
std::vector<double> sample_completion_times(const WorkerProfile &profile, std::int64_t load,
                                            SamplingMode mode, Gen &gen) {
  profile.validate();
  if (load < profile.p)
    throw InvalidAllocation("load " + std::to_string(load) + " is smaller than batch count " +
                            std::to_string(profile.p));
  if (mode == SamplingMode::coupled)
    return arrival_times_from_draw(profile, load, standard_exponential(gen));

  const auto cum = cumulative_rows(load, profile.p);
  std::vector<double> times(cum.size());
  for (std::size_t k = 0; k < cum.size(); ++k)
    times[k] = static_cast<double>(cum[k]) *
               (profile.alpha + standard_exponential(gen) / profile.mu);
  return times;
}

/// Result of fitting (mu, alpha) to timing data.
struct ParameterFit {
  double mu = 0.0;
  double alpha = 0.0;
  std::vector<std::int64_t> task_sizes;
  std::vector<double> shift_estimates; ///< t0_hat(r) = min duration
  std::vector<double> tail_estimates;  ///< tc_hat(r) = mean - t0_hat(r)
  std::vector<double> shift_residuals; ///< t0_hat(r) - alpha * r
  std::vector<double> tail_residuals;  ///< tc_hat(r) - r / mu
};

/// Per-size minimum and excess-mean estimates, then least squares through
/// the origin of t0(r) = alpha r and tc(r) = r / mu. Samples sharing a task
/// size are pooled.
ParameterFit fit_shift_and_rate(std::span<const TimingSample> samples);

} // namespace bpcc
