#pragma once

#include "bpcc/allocation.hpp"
#include "bpcc/model.hpp"

#include <cstdint>
#include <limits>
#include <span>
#include <vector>

namespace bpcc {

enum class StragglerKind { none, finite, infinite };

/// Straggler injection. A fraction of the workers, redrawn every trial, is
/// either slowed (every arrival time multiplied by delay_factor) or silenced.
struct StragglerPolicy {
  StragglerKind kind = StragglerKind::none;
  double fraction = 0.0;
  double delay_factor = 3.0;

  /// ceil(fraction * n), or 0 when there are no stragglers.
  std::size_t count(std::size_t n) const;
  void validate() const;
};

struct Scenario {
  std::int64_t r = 0;
  std::vector<WorkerProfile> profiles;
  Scheme scheme = Scheme::bpcc;
  StragglerPolicy straggler;
  std::int64_t trials = 100;
  std::uint64_t seed = 1;
  /// Rows a coded scheme needs to decode; 0 means r.
  std::int64_t recovery_rows = 0;
  SamplingMode mode = SamplingMode::coupled;
  /// Test hook: every exponential draw is zero, leaving only the shift.
  bool zero_variance = false;

  std::int64_t coded_threshold() const { return recovery_rows > 0 ? recovery_rows : r; }
  void validate() const;
};

struct TracePoint {
  double time = 0.0;
  std::int64_t rows = 0; ///< cumulative rows received
};

struct TrialRecord {
  double completion_time = std::numeric_limits<double>::infinity();
  bool success = false;
  std::vector<TracePoint> trace; ///< one point per batch arrival
  std::vector<std::size_t> straggler_ids;
};

/// Rows that must arrive before the master can finish: the coded threshold
/// for coded schemes, every assigned row for uncoded ones.
std::int64_t completion_threshold(const Scenario &scenario, const Allocation &alloc);

/// One run. Trial `trial_index` draws from streams keyed by
/// (seed, trial, worker), so every scheme sees the same randomness.
TrialRecord run_trial(const Scenario &scenario, const Allocation &alloc, std::uint64_t trial_index);

struct MonteCarloOptions {
  bool curve = true;
  std::size_t curve_points = 1000;
  unsigned threads = 0; ///< 0 = hardware concurrency
};

struct MonteCarloSummary {
  Scheme scheme = Scheme::bpcc;
  double mean_time = std::numeric_limits<double>::quiet_NaN(); ///< over successful trials
  double success_rate = 0.0;
  std::int64_t trials = 0;
  std::vector<double> completion_times; ///< per trial, +inf on failure
  std::vector<double> curve_times;      ///< grid from 0 to the 99th-percentile completion
  std::vector<double> curve_rows;       ///< mean rows received at each grid time
};

MonteCarloSummary monte_carlo(const Scenario &scenario, const Allocation &alloc,
                              const MonteCarloOptions &options = {});

/// Mean over trials of rows received by time t.
double mean_rows_at(const Scenario &scenario, const Allocation &alloc, double t);

struct SchemeComparison {
  Allocation allocation;
  MonteCarloSummary summary;
};

/// Uniform, load-balanced, HCMM and BPCC on the same roster with common
/// random numbers.
std::vector<SchemeComparison> compare_schemes(const Scenario &scenario,
                                              const MonteCarloOptions &options = {});

struct SweepRow {
  int p = 1;
  double tau_star = 0.0;
  double mean_time = 0.0;
  std::int64_t total_load = 0;
};

/// BPCC with p_i = p for every worker, for each p in p_values.
std::vector<SweepRow> sweep_p(const Scenario &scenario, std::span<const int> p_values);

enum class Parameter { mu, alpha };

struct SensitivityResult {
  double delta = 0.0;
  Parameter which = Parameter::mu;
  double baseline_mean = 0.0;
  double perturbed_mean = 0.0;
  double relative_change = 0.0;
};

/// Allocates with each worker's mu (or alpha) redrawn uniformly from
/// (x (1 - delta), x (1 + delta)), lower end clamped at zero, simulates with
/// the true parameters, and reports the relative change of the mean time
/// against the unperturbed allocation. Both runs share trial seeds.
SensitivityResult sensitivity(const Scenario &scenario, double delta, Parameter which,
                              std::int64_t trials);

} // namespace bpcc
