#pragma once

// Scenario files, timing-sample files and the command entry points.
//
// Scenario file (JSON):
//   {
//     "r": 10000,                       required, rows of A
//     "m": 1000,                        columns of A (provisioning only)
//     "scheme": "bpcc",                 uniform | load_balanced | hcmm | bpcc
//     "codec": "dense",                 dense | lt
//     "epsilon": 0.13,                  LT overhead
//     "workers": [{"mu": 10, "alpha": 0.1, "p": 4}, ...],   p may be "auto"
//     "straggler": {"fraction": 0.2, "delay_factor": 3},    or "inf"
//     "trials": 100,
//     "seed": 1
//   }
// Unknown keys are rejected.
//
// Timing samples: CSV with header task_size,duration_seconds, or a JSON
// array of {"task_size": n, "duration_seconds": t}.

#include "bpcc/allocation.hpp"
#include "bpcc/coding.hpp"
#include "bpcc/sim.hpp"

#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace bpcc::cli {

enum ExitCode : int {
  kOk = 0,
  kError = 1,
  kSchema = 2,
  kInfeasible = 3,
  kIo = 4,
  kRunFailure = 5,
  kWorkerCrashed = 9,
};

class SchemaError : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

struct ScenarioFile {
  std::int64_t r = 0;
  std::int64_t m = 0;
  Scheme scheme = Scheme::bpcc;
  Codec codec = Codec::dense;
  double epsilon = 0.13;
  std::vector<WorkerProfile> workers;
  std::vector<bool> auto_batches; ///< p given as "auto"
  StragglerPolicy straggler;
  std::int64_t trials = 100;
  std::uint64_t seed = 1;

  /// Worker profiles with "auto" batch counts resolved to floor(l_hat).
  std::vector<WorkerProfile> profiles() const;
  /// Simulation scenario; LT scenarios need ceil(r (1 + epsilon)) rows.
  Scenario scenario() const;
};

ScenarioFile parse_scenario(std::string_view json_text);
/// Applies BPCC_SEED when set.
ScenarioFile load_scenario(const std::filesystem::path &path);

std::vector<TimingSample> parse_timing_csv(std::string_view text);
std::vector<TimingSample> parse_timing_json(std::string_view text);
/// JSON when the first non-blank character is '[', CSV otherwise.
std::vector<TimingSample> load_timing_samples(const std::filesystem::path &path);

/// Runs one command. args excludes the program name. Returns an exit code.
int run(const std::vector<std::string> &args, std::ostream &out, std::ostream &err);

} // namespace bpcc::cli
