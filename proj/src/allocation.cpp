#include "bpcc/allocation.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace bpcc {

std::string_view to_string(Scheme scheme) {
  switch (scheme) {
  case Scheme::uniform:
    return "uniform";
  case Scheme::load_balanced:
    return "load_balanced";
  case Scheme::hcmm:
    return "hcmm";
  case Scheme::bpcc:
    return "bpcc";
  }
  return "unknown";
}

Scheme scheme_from_string(std::string_view name) {
  if (name == "uniform")
    return Scheme::uniform;
  if (name == "load_balanced" || name == "load-balanced")
    return Scheme::load_balanced;
  if (name == "hcmm")
    return Scheme::hcmm;
  if (name == "bpcc")
    return Scheme::bpcc;
  throw std::invalid_argument("unknown scheme '" + std::string(name) + "'");
}

std::int64_t Allocation::total_load() const {
  return std::accumulate(loads.begin(), loads.end(), std::int64_t{0});
}

std::vector<WorkerProfile>
Allocation::effective_profiles(std::span<const WorkerProfile> profiles) const {
  std::vector<WorkerProfile> out(profiles.begin(), profiles.end());
  for (std::size_t i = 0; i < out.size() && i < batches.size(); ++i)
    out[i].p = batches[i];
  return out;
}

namespace {

void check_roster(std::int64_t r, std::size_t n) {
  if (n == 0)
    throw std::invalid_argument("worker roster is empty");
  if (r < static_cast<std::int64_t>(n))
    throw InfeasibleTask("task of " + std::to_string(r) + " rows cannot feed " +
                         std::to_string(n) + " workers");
}

void check_roster(std::int64_t r, std::span<const WorkerProfile> profiles) {
  check_roster(r, profiles.size());
  for (const auto &w : profiles)
    w.validate();
}

// Fills batches and batch sizes from loads and requested batch counts.
void assign_batches(Allocation &alloc, std::span<const int> requested) {
  const std::size_t n = alloc.loads.size();
  alloc.batches.resize(n);
  alloc.batch_sizes.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::int64_t load = alloc.loads[i];
    int p = requested[i];
    if (load < p) {
      p = static_cast<int>(load);
      alloc.reduced_batches.push_back(i);
    }
    alloc.batch_sizes[i] = (load + p - 1) / p;
    alloc.batches[i] = static_cast<int>(batch_row_counts(load, p).size());
  }
}

Allocation coded_from_lambdas(Scheme scheme, std::int64_t r,
                              std::span<const WorkerProfile> profiles,
                              std::vector<double> lambdas, double beta) {
  Allocation alloc;
  alloc.scheme = scheme;
  alloc.beta = beta;
  alloc.tau_star = static_cast<double>(r) / beta;
  alloc.lambdas = std::move(lambdas);
  std::vector<int> requested;
  for (std::size_t i = 0; i < profiles.size(); ++i) {
    const double ideal = static_cast<double>(r) / (beta * alloc.lambdas[i]);
    alloc.ideal_loads.push_back(ideal);
    alloc.loads.push_back(std::max<std::int64_t>(1, std::llround(ideal)));
    requested.push_back(scheme == Scheme::hcmm ? 1 : profiles[i].p);
  }
  assign_batches(alloc, requested);
  return alloc;
}

double beta_term(const WorkerProfile &w, double lambda, int p) {
  double tail = 0.0;
  for (int k = p; k >= 1; --k) {
    const double arg = -w.mu * (lambda * p / k - w.alpha);
    if (arg < -745.0)
      break;
    tail += std::exp(arg);
  }
  return (1.0 - tail / p) / lambda;
}

// sum_j (1/alpha_j)(1 - e^{mu_j alpha_j} I(mu_j alpha_j))
double limit_rate(std::span<const WorkerProfile> profiles) {
  double sum = 0.0;
  for (const auto &w : profiles)
    sum += (1.0 - scaled_exp_integral_01(w.mu * w.alpha)) / w.alpha;
  return sum;
}

} // namespace

std::vector<std::int64_t> largest_remainder(std::span<const double> shares, std::int64_t total) {
  const std::size_t n = shares.size();
  check_roster(total, n);
  std::vector<std::int64_t> out(n);
  std::vector<double> frac(n);
  const double mass = std::accumulate(shares.begin(), shares.end(), 0.0);
  if (!(mass > 0.0) || !std::isfinite(mass))
    throw std::invalid_argument("shares must have a positive finite sum");
  std::int64_t assigned = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (shares[i] < 0.0)
      throw std::invalid_argument("shares must be nonnegative");
    const double scaled = shares[i] * static_cast<double>(total) / mass;
    const double fl = std::floor(scaled);
    out[i] = static_cast<std::int64_t>(fl);
    frac[i] = scaled - fl;
    assigned += out[i];
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return frac[a] > frac[b]; });
  for (std::size_t j = 0; assigned < total; j = (j + 1) % n, ++assigned)
    ++out[order[j]];
  // Every worker gets at least one row, taken from the currently largest load.
  for (std::size_t i = 0; i < n; ++i) {
    if (out[i] >= 1)
      continue;
    auto donor = std::max_element(out.begin(), out.end());
    --*donor;
    out[i] = 1;
  }
  return out;
}

Allocation bpcc_allocate(std::int64_t r, std::span<const WorkerProfile> profiles,
                         const RootSolveConfig &cfg) {
  check_roster(r, profiles);
  std::vector<double> lambdas;
  double beta = 0.0;
  for (const auto &w : profiles) {
    const double lambda = solve_lambda(w.mu, w.alpha, w.p, cfg);
    lambdas.push_back(lambda);
    beta += beta_term(w, lambda, w.p);
  }
  return coded_from_lambdas(Scheme::bpcc, r, profiles, std::move(lambdas), beta);
}

Allocation hcmm_allocate(std::int64_t r, std::span<const WorkerProfile> profiles) {
  check_roster(r, profiles);
  std::vector<double> lambdas;
  double beta = 0.0;
  for (const auto &w : profiles) {
    const double lambda = sup_lambda(w.mu, w.alpha);
    lambdas.push_back(lambda);
    beta += w.mu / (1.0 + w.mu * lambda);
  }
  return coded_from_lambdas(Scheme::hcmm, r, profiles, std::move(lambdas), beta);
}

Allocation uniform_allocate(std::int64_t r, std::size_t n) {
  check_roster(r, n);
  Allocation alloc;
  alloc.scheme = Scheme::uniform;
  const auto nn = static_cast<std::int64_t>(n);
  for (std::int64_t i = 0; i < nn; ++i)
    alloc.loads.push_back(r / nn + (i < r % nn ? 1 : 0));
  const std::vector<int> ones(n, 1);
  assign_batches(alloc, ones);
  return alloc;
}

Allocation load_balanced_allocate(std::int64_t r, std::span<const WorkerProfile> profiles) {
  check_roster(r, profiles);
  std::vector<double> speed;
  for (const auto &w : profiles)
    speed.push_back(w.mu / (w.mu * w.alpha + 1.0));
  const double total = std::accumulate(speed.begin(), speed.end(), 0.0);
  std::vector<double> shares;
  for (double s : speed)
    shares.push_back(static_cast<double>(r) * s / total);
  Allocation alloc;
  alloc.scheme = Scheme::load_balanced;
  alloc.ideal_loads = shares;
  alloc.loads = largest_remainder(shares, r);
  const std::vector<int> ones(profiles.size(), 1);
  assign_batches(alloc, ones);
  return alloc;
}

Allocation allocate(Scheme scheme, std::int64_t r, std::span<const WorkerProfile> profiles) {
  switch (scheme) {
  case Scheme::uniform:
    for (const auto &w : profiles)
      w.validate();
    return uniform_allocate(r, profiles.size());
  case Scheme::load_balanced:
    return load_balanced_allocate(r, profiles);
  case Scheme::hcmm:
    return hcmm_allocate(r, profiles);
  case Scheme::bpcc:
    return bpcc_allocate(r, profiles);
  }
  throw std::invalid_argument("unknown scheme");
}

double expected_results(const Allocation &alloc, std::span<const WorkerProfile> profiles,
                        double t) {
  if (alloc.size() != profiles.size())
    throw std::invalid_argument("allocation and roster sizes differ");
  double total = 0.0;
  for (std::size_t i = 0; i < alloc.size(); ++i) {
    const auto rows = batch_row_counts(alloc.loads[i], alloc.batches[i]);
    std::int64_t cumulative = 0;
    for (auto count : rows) {
      cumulative += count;
      total += static_cast<double>(count) *
               batch_cdf(profiles[i], 1, static_cast<double>(cumulative), t);
    }
  }
  return total;
}

TauBounds tau_bounds(std::int64_t r, std::span<const WorkerProfile> profiles) {
  check_roster(r, profiles);
  double beta_one = 0.0;
  for (const auto &w : profiles) {
    const double lambda = sup_lambda(w.mu, w.alpha);
    beta_one += -std::expm1(-w.mu * (lambda - w.alpha)) / lambda;
  }
  return {static_cast<double>(r) / limit_rate(profiles), static_cast<double>(r) / beta_one};
}

std::vector<double> l_hat(std::int64_t r, std::span<const WorkerProfile> profiles) {
  check_roster(r, profiles);
  const double rate = limit_rate(profiles);
  std::vector<double> out;
  for (const auto &w : profiles)
    out.push_back(static_cast<double>(r) / (w.alpha * rate));
  return out;
}

std::vector<WorkerProfile> with_limit_batches(std::int64_t r,
                                              std::span<const WorkerProfile> profiles) {
  const auto limits = l_hat(r, profiles);
  std::vector<WorkerProfile> out(profiles.begin(), profiles.end());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i].p = static_cast<int>(std::max(1.0, std::floor(limits[i])));
  return out;
}

std::string allocation_to_json(const Allocation &alloc) {
  nlohmann::json j = {{"scheme", std::string(to_string(alloc.scheme))},
                      {"loads", alloc.loads},
                      {"batches", alloc.batches},
                      {"batch_sizes", alloc.batch_sizes},
                      {"ideal_loads", alloc.ideal_loads},
                      {"lambdas", alloc.lambdas},
                      {"beta", nullptr},
                      {"tau_star", nullptr},
                      {"total_load", alloc.total_load()},
                      {"reduced_batches", alloc.reduced_batches}};
  if (alloc.beta)
    j["beta"] = *alloc.beta;
  if (alloc.tau_star)
    j["tau_star"] = *alloc.tau_star;
  return j.dump(2);
}

Allocation allocation_from_json(std::string_view text) {
  const auto j = nlohmann::json::parse(text);
  Allocation a;
  a.scheme = scheme_from_string(j.at("scheme").get<std::string>());
  a.loads = j.at("loads").get<std::vector<std::int64_t>>();
  a.batches = j.at("batches").get<std::vector<int>>();
  a.batch_sizes = j.at("batch_sizes").get<std::vector<std::int64_t>>();
  a.ideal_loads = j.value("ideal_loads", std::vector<double>{});
  a.lambdas = j.value("lambdas", std::vector<double>{});
  if (j.contains("beta") && !j["beta"].is_null())
    a.beta = j["beta"].get<double>();
  if (j.contains("tau_star") && !j["tau_star"].is_null())
    a.tau_star = j["tau_star"].get<double>();
  a.reduced_batches = j.value("reduced_batches", std::vector<std::size_t>{});
  if (a.batches.size() != a.loads.size() || a.batch_sizes.size() != a.loads.size())
    throw std::invalid_argument("allocation arrays differ in length");
  return a;
}

} // namespace bpcc
