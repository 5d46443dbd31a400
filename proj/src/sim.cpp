#include "bpcc/sim.hpp"
#include "bpcc/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <thread>

namespace bpcc {

namespace {

constexpr std::uint64_t kStragglerStream = 0xA5A5'0000'0000'0001ULL;
constexpr std::uint64_t kPerturbStream = 0xA5A5'0000'0000'0002ULL;

// One worker's realized behaviour in one trial.
struct WorkerRun {
  std::int64_t load = 0;
  std::int64_t batch = 0; // rows per full batch
  std::int64_t batches = 0;
  std::vector<double> per_row; // seconds per row: one entry (coupled) or one per batch
  bool dead = false;

  std::int64_t cumulative(std::int64_t k) const { return std::min(k * batch, load); }
  double rate(std::int64_t k) const { return per_row.size() == 1 ? per_row[0] : per_row[k - 1]; }
  double arrival(std::int64_t k) const { return static_cast<double>(cumulative(k)) * rate(k); }

  // Rows delivered by time t (coupled draws only: arrivals are monotone).
  std::int64_t rows_by(double t) const {
    if (dead)
      return 0;
    const double c = per_row[0];
    auto k = static_cast<std::int64_t>(std::floor(t / (static_cast<double>(batch) * c)));
    k = std::clamp<std::int64_t>(k, 0, batches);
    while (k < batches && arrival(k + 1) <= t)
      ++k;
    while (k > 0 && arrival(k) > t)
      --k;
    return cumulative(k);
  }

  // First arrival strictly after t, or +inf.
  double next_after(double t) const {
    if (dead)
      return std::numeric_limits<double>::infinity();
    const double c = per_row[0];
    auto k = static_cast<std::int64_t>(std::floor(t / (static_cast<double>(batch) * c)));
    k = std::clamp<std::int64_t>(k, 0, batches);
    while (k < batches && arrival(k + 1) <= t)
      ++k;
    while (k > 0 && arrival(k) > t)
      --k;
    return k < batches ? arrival(k + 1) : std::numeric_limits<double>::infinity();
  }
};

std::vector<std::size_t> pick_stragglers(const Scenario &s, std::uint64_t trial) {
  const std::size_t n = s.profiles.size();
  const std::size_t count = s.straggler.count(n);
  std::vector<std::size_t> ids(n);
  std::iota(ids.begin(), ids.end(), std::size_t{0});
  SplitMix64 gen(derive_seed(s.seed, trial, kStragglerStream));
  for (std::size_t i = 0; i < count; ++i) {
    const auto j = i + static_cast<std::size_t>(gen() % (n - i));
    std::swap(ids[i], ids[j]);
  }
  ids.resize(count);
  std::sort(ids.begin(), ids.end());
  return ids;
}

std::vector<WorkerRun> realize(const Scenario &s, const Allocation &alloc, std::uint64_t trial,
                               std::vector<std::size_t> *straggler_ids = nullptr) {
  const std::size_t n = s.profiles.size();
  const auto stragglers = pick_stragglers(s, trial);
  std::vector<WorkerRun> runs(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto &w = s.profiles[i];
    auto &run = runs[i];
    run.load = alloc.loads[i];
    run.batch = alloc.batch_sizes[i];
    run.batches = alloc.batches[i];
    SplitMix64 gen(derive_seed(s.seed, trial, i));
    const std::size_t draws = s.mode == SamplingMode::coupled ? 1 : std::size_t(run.batches);
    for (std::size_t k = 0; k < draws; ++k) {
      const double x = s.zero_variance ? 0.0 : standard_exponential(gen);
      run.per_row.push_back(w.alpha + x / w.mu);
    }
    if (std::binary_search(stragglers.begin(), stragglers.end(), i)) {
      if (s.straggler.kind == StragglerKind::infinite)
        run.dead = true;
      else
        for (double &c : run.per_row)
          c *= s.straggler.delay_factor;
    }
  }
  if (straggler_ids)
    *straggler_ids = stragglers;
  return runs;
}

struct Event {
  double time;
  std::size_t worker;
  std::int64_t rows;
};

std::vector<Event> sorted_events(const std::vector<WorkerRun> &runs) {
  std::vector<Event> events;
  for (std::size_t i = 0; i < runs.size(); ++i) {
    if (runs[i].dead)
      continue;
    for (std::int64_t k = 1; k <= runs[i].batches; ++k)
      events.push_back({runs[i].arrival(k), i, runs[i].cumulative(k) - runs[i].cumulative(k - 1)});
  }
  std::stable_sort(events.begin(), events.end(),
                   [](const Event &a, const Event &b) { return a.time < b.time; });
  return events;
}

// Earliest time the live rows reach `threshold`, by bisection on the step
// function followed by an exact walk over arrivals. Coupled draws only.
double fast_completion(const std::vector<WorkerRun> &runs, std::int64_t threshold) {
  auto rows_at = [&](double t) {
    std::int64_t sum = 0;
    for (const auto &w : runs)
      sum += w.rows_by(t);
    return sum;
  };
  std::int64_t live = 0;
  double hi = 0.0;
  for (const auto &w : runs)
    if (!w.dead) {
      live += w.load;
      hi = std::max(hi, w.arrival(w.batches));
    }
  if (live < threshold)
    return std::numeric_limits<double>::infinity();
  double lo = 0.0;
  for (int it = 0; it < 200; ++it) {
    const double mid = lo + (hi - lo) / 2;
    if (!(mid > lo && mid < hi))
      break;
    (rows_at(mid) >= threshold ? hi : lo) = mid;
  }
  for (;;) {
    double next = std::numeric_limits<double>::infinity();
    for (const auto &w : runs)
      next = std::min(next, w.next_after(lo));
    if (!std::isfinite(next) || next >= hi || rows_at(next) >= threshold)
      return std::min(next, hi);
    lo = next;
  }
}

unsigned thread_count(const MonteCarloOptions &o, std::int64_t trials) {
  unsigned n = o.threads ? o.threads : std::max(1u, std::thread::hardware_concurrency());
  return static_cast<unsigned>(std::min<std::int64_t>(n, trials));
}

template <class Fn> void parallel_trials(std::int64_t trials, unsigned threads, Fn fn) {
  if (threads <= 1) {
    for (std::int64_t t = 0; t < trials; ++t)
      fn(0u, t);
    return;
  }
  std::vector<std::thread> pool;
  for (unsigned w = 0; w < threads; ++w)
    pool.emplace_back([=, &fn] {
      for (std::int64_t t = w; t < trials; t += threads)
        fn(w, t);
    });
  for (auto &th : pool)
    th.join();
}

double percentile(std::vector<double> v, double q) {
  if (v.empty())
    return 0.0;
  std::sort(v.begin(), v.end());
  const auto idx = static_cast<std::size_t>(std::ceil(q * double(v.size()))) - 1;
  return v[std::min(idx, v.size() - 1)];
}

} // namespace

std::size_t StragglerPolicy::count(std::size_t n) const {
  if (kind == StragglerKind::none || fraction <= 0.0)
    return 0;
  // Guard against 0.2 * 10 evaluating to 2.0000000000000004.
  const double raw = fraction * static_cast<double>(n);
  const auto c = static_cast<std::size_t>(std::ceil(raw - 1e-9));
  return std::min(c, n);
}

void StragglerPolicy::validate() const {
  if (!(fraction >= 0.0 && fraction <= 1.0))
    throw std::invalid_argument("straggler fraction must lie in [0, 1]");
  if (kind == StragglerKind::finite && !(delay_factor >= 1.0))
    throw std::invalid_argument("straggler delay factor must be >= 1");
}

void Scenario::validate() const {
  if (profiles.empty())
    throw std::invalid_argument("scenario has no workers");
  for (const auto &w : profiles)
    w.validate();
  if (r < 1)
    throw std::invalid_argument("scenario r must be positive");
  if (trials < 1)
    throw std::invalid_argument("scenario trials must be >= 1");
  if (recovery_rows < 0)
    throw std::invalid_argument("recovery rows must be nonnegative");
  straggler.validate();
}

std::int64_t completion_threshold(const Scenario &scenario, const Allocation &alloc) {
  return is_coded(alloc.scheme) ? scenario.coded_threshold() : alloc.total_load();
}

TrialRecord run_trial(const Scenario &scenario, const Allocation &alloc,
                      std::uint64_t trial_index) {
  if (alloc.size() != scenario.profiles.size())
    throw std::invalid_argument("allocation does not match the roster");
  TrialRecord rec;
  const auto runs = realize(scenario, alloc, trial_index, &rec.straggler_ids);
  const auto threshold = completion_threshold(scenario, alloc);
  std::int64_t total = 0;
  for (const auto &e : sorted_events(runs)) {
    total += e.rows;
    rec.trace.push_back({e.time, total});
    if (!rec.success && total >= threshold) {
      rec.success = true;
      rec.completion_time = e.time;
    }
  }
  return rec;
}

MonteCarloSummary monte_carlo(const Scenario &scenario, const Allocation &alloc,
                              const MonteCarloOptions &options) {
  scenario.validate();
  if (alloc.size() != scenario.profiles.size())
    throw std::invalid_argument("allocation does not match the roster");
  const auto threshold = completion_threshold(scenario, alloc);
  const bool coupled = scenario.mode == SamplingMode::coupled;

  MonteCarloSummary out;
  out.scheme = alloc.scheme;
  out.trials = scenario.trials;
  out.completion_times.assign(static_cast<std::size_t>(scenario.trials), 0.0);
  const unsigned threads = thread_count(options, scenario.trials);
  parallel_trials(scenario.trials, threads, [&](unsigned, std::int64_t t) {
    const auto trial = static_cast<std::uint64_t>(t);
    out.completion_times[t] = coupled ? fast_completion(realize(scenario, alloc, trial), threshold)
                                      : run_trial(scenario, alloc, trial).completion_time;
  });

  std::vector<double> finite;
  double sum = 0.0;
  for (double c : out.completion_times)
    if (std::isfinite(c)) {
      finite.push_back(c);
      sum += c;
    }
  out.success_rate = double(finite.size()) / double(scenario.trials);
  if (!finite.empty())
    out.mean_time = sum / double(finite.size());

  if (!options.curve || options.curve_points < 2)
    return out;

  // Grid end: 99th percentile of completions, or the last arrival if none.
  double end = percentile(finite, 0.99);
  if (!(end > 0.0)) {
    for (std::int64_t t = 0; t < scenario.trials; ++t)
      for (const auto &w : realize(scenario, alloc, std::uint64_t(t)))
        if (!w.dead)
          for (std::int64_t k = 1; k <= w.batches; ++k)
            end = std::max(end, w.arrival(k));
  }
  if (!(end > 0.0))
    end = 1.0;
  const std::size_t g = options.curve_points;
  const double dt = end / double(g - 1);
  // Integer row counts per thread, merged exactly.
  std::vector<std::vector<std::int64_t>> diff(threads, std::vector<std::int64_t>(g + 1, 0));
  parallel_trials(scenario.trials, threads, [&](unsigned w, std::int64_t t) {
    for (const auto &run : realize(scenario, alloc, std::uint64_t(t))) {
      if (run.dead)
        continue;
      for (std::int64_t k = 1; k <= run.batches; ++k) {
        const double at = run.arrival(k);
        auto idx = static_cast<std::size_t>(std::ceil(at / dt));
        // ceil can land one cell late or early through rounding.
        while (idx > 0 && double(idx - 1) * dt >= at)
          --idx;
        while (idx < g && double(idx) * dt < at)
          ++idx;
        if (idx < g)
          diff[w][idx] += run.cumulative(k) - run.cumulative(k - 1);
      }
    }
  });
  std::vector<std::int64_t> merged(g, 0);
  for (const auto &d : diff)
    for (std::size_t i = 0; i < g; ++i)
      merged[i] += d[i];
  std::int64_t running = 0;
  for (std::size_t i = 0; i < g; ++i) {
    running += merged[i];
    out.curve_times.push_back(double(i) * dt);
    out.curve_rows.push_back(double(running) / double(scenario.trials));
  }
  return out;
}

double mean_rows_at(const Scenario &scenario, const Allocation &alloc, double t) {
  std::int64_t total = 0;
  for (std::int64_t trial = 0; trial < scenario.trials; ++trial) {
    const auto runs = realize(scenario, alloc, std::uint64_t(trial));
    for (const auto &w : runs) {
      if (w.dead)
        continue;
      for (std::int64_t k = 1; k <= w.batches; ++k)
        if (w.arrival(k) <= t)
          total += w.cumulative(k) - w.cumulative(k - 1);
    }
  }
  return double(total) / double(scenario.trials);
}

std::vector<SchemeComparison> compare_schemes(const Scenario &scenario,
                                              const MonteCarloOptions &options) {
  scenario.validate();
  std::vector<SchemeComparison> out;
  for (Scheme s : {Scheme::uniform, Scheme::load_balanced, Scheme::hcmm, Scheme::bpcc}) {
    auto alloc = allocate(s, scenario.r, scenario.profiles);
    auto summary = monte_carlo(scenario, alloc, options);
    out.push_back({std::move(alloc), std::move(summary)});
  }
  return out;
}

std::vector<SweepRow> sweep_p(const Scenario &scenario, std::span<const int> p_values) {
  scenario.validate();
  if (p_values.empty())
    throw std::invalid_argument("sweep needs at least one p value");
  std::vector<SweepRow> rows;
  for (int p : p_values) {
    auto profiles = scenario.profiles;
    for (auto &w : profiles)
      w.p = p;
    const auto alloc = bpcc_allocate(scenario.r, profiles);
    const auto summary = monte_carlo(scenario, alloc, {.curve = false});
    rows.push_back({p, *alloc.tau_star, summary.mean_time, alloc.total_load()});
  }
  return rows;
}

SensitivityResult sensitivity(const Scenario &scenario, double delta, Parameter which,
                              std::int64_t trials) {
  scenario.validate();
  if (delta < 0.0)
    throw std::invalid_argument("deviation degree must be nonnegative");
  Scenario run = scenario;
  run.trials = trials;

  auto perturbed = scenario.profiles;
  SplitMix64 gen(derive_seed(scenario.seed, kPerturbStream));
  for (auto &w : perturbed) {
    double &x = which == Parameter::mu ? w.mu : w.alpha;
    const double lo = delta > 1.0 ? 0.0 : x * (1.0 - delta);
    const double hi = x * (1.0 + delta);
    const double draw = lo + (hi - lo) * gen.uniform();
    if (delta > 0.0)
      x = std::max(draw, x * 1e-6);
  }

  const auto base_alloc = allocate(scenario.scheme, scenario.r, scenario.profiles);
  const auto pert_alloc = allocate(scenario.scheme, scenario.r, perturbed);
  const auto base = monte_carlo(run, base_alloc, {.curve = false});
  const auto pert = monte_carlo(run, pert_alloc, {.curve = false});
  return {delta, which, base.mean_time, pert.mean_time,
          (pert.mean_time - base.mean_time) / base.mean_time};
}

} // namespace bpcc
