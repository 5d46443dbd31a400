#pragma once

#include "bpcc/model.hpp"
#include "bpcc/numerics.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace bpcc {

enum class Scheme { uniform, load_balanced, hcmm, bpcc };

std::string_view to_string(Scheme scheme);
Scheme scheme_from_string(std::string_view name);
constexpr bool is_coded(Scheme s) { return s == Scheme::hcmm || s == Scheme::bpcc; }

class InfeasibleTask : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

/// Per-worker row assignment produced by one of the allocators.
struct Allocation {
  Scheme scheme = Scheme::uniform;
  std::vector<std::int64_t> loads;       ///< rows per worker
  std::vector<int> batches;              ///< effective batch count per worker
  std::vector<std::int64_t> batch_sizes; ///< ceil(load / batches)
  std::vector<double> ideal_loads;       ///< unrounded loads (coded schemes)
  std::vector<double> lambdas;           ///< empty for uncoded schemes
  std::optional<double> beta;
  std::optional<double> tau_star;
  std::vector<std::size_t> reduced_batches; ///< workers whose p was lowered to fit the load

  std::size_t size() const { return loads.size(); }
  std::int64_t total_load() const;
  /// Profiles with p replaced by the effective batch counts.
  std::vector<WorkerProfile> effective_profiles(std::span<const WorkerProfile> profiles) const;
};

/// Batch-processing coded allocation: solve lambda_i for each worker,
/// beta = sum_i (1/lambda_i)(1 - (1/p_i) sum_k exp(-mu_i (lambda_i p_i / k - alpha_i))),
/// tau* = r / beta and l_i = round(r / (beta lambda_i)).
Allocation bpcc_allocate(std::int64_t r, std::span<const WorkerProfile> profiles,
                         const RootSolveConfig &cfg = {});

/// Single-batch coded allocation with lambda_i = sup_lambda(mu_i, alpha_i) and
/// beta = sum_i mu_i / (1 + mu_i lambda_i).
Allocation hcmm_allocate(std::int64_t r, std::span<const WorkerProfile> profiles);

/// r / N rows each; the first r mod N workers take one extra row.
Allocation uniform_allocate(std::int64_t r, std::size_t n);

/// Shares proportional to mu_i / (mu_i alpha_i + 1), rounded by largest
/// remainder so that the total is exactly r and every load is >= 1.
Allocation load_balanced_allocate(std::int64_t r, std::span<const WorkerProfile> profiles);

Allocation allocate(Scheme scheme, std::int64_t r, std::span<const WorkerProfile> profiles);

/// Expected rows received by time t: sum over workers and batches of the
/// batch row count times Pr(batch arrived by t).
double expected_results(const Allocation &alloc, std::span<const WorkerProfile> profiles,
                        double t);

struct TauBounds {
  double inf_tau = 0.0; ///< limit of tau* as every p_i grows without bound
  double sup_tau = 0.0; ///< tau* at p_i = 1 for all i
};

TauBounds tau_bounds(std::int64_t r, std::span<const WorkerProfile> profiles);

/// Limit loads as every p_i grows: r / (alpha_i * sum_j (1/alpha_j)(1 - e^{mu_j alpha_j} I(mu_j alpha_j)))
/// with I(c) = integral_0^1 exp(-c/x) dx.
std::vector<double> l_hat(std::int64_t r, std::span<const WorkerProfile> profiles);

/// Profiles with p_i = max(1, floor(l_hat_i)), the largest batch counts the
/// limit loads support.
std::vector<WorkerProfile> with_limit_batches(std::int64_t r,
                                              std::span<const WorkerProfile> profiles);

/// JSON object with the Allocation fields under their member names.
std::string allocation_to_json(const Allocation &alloc);
Allocation allocation_from_json(std::string_view text);

/// Largest-remainder rounding of nonnegative shares, rescaled to `total`,
/// to integers summing to `total`, each at least 1.
std::vector<std::int64_t> largest_remainder(std::span<const double> shares, std::int64_t total);

} // namespace bpcc
