#pragma once

// Desk-scale distributed execution: provisioning of worker data
// directories, the worker server and the master.
//
// Worker data directory:
//   slice.bin  encoded rows held by the worker (matrix block file)
//   meta.json  worker_id, codec, row_start, row_count, batch_offsets, m, mu, alpha
//
// Master directory:
//   task.json + coefficients.bin | neighbors.bin   (see save_task)
//   allocation.json
//   source.json  how A was produced, so runs can be checked against A x

#include "bpcc/allocation.hpp"
#include "bpcc/coding.hpp"
#include "bpcc/wire.hpp"

#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

namespace bpcc::net {

namespace fs = std::filesystem;

struct WorkerMeta {
  std::uint32_t worker_id = 0;
  Codec codec = Codec::dense;
  std::int64_t row_start = 0;
  std::int64_t row_count = 0;
  std::vector<std::int64_t> batch_offsets;
  std::int64_t m = 0;
  double mu = 1.0;
  double alpha = 1.0;

  std::size_t batch_count() const { return batch_offsets.empty() ? 0 : batch_offsets.size() - 1; }
};

void write_worker_meta(const fs::path &path, const WorkerMeta &meta);
WorkerMeta read_worker_meta(const fs::path &path);

// ---------------------------------------------------------------- provisioning

/// Returns columns [col, col + cols) of the r x m source matrix.
using ColumnBlockSource = std::function<Matrix<double>(std::int64_t col, std::int64_t cols)>;

/// Entry (i, j) of the synthetic matrix: uniform in (-1, 1), a pure function
/// of (seed, i, j) so any block can be regenerated independently.
Matrix<double> synthetic_block(std::uint64_t seed, std::int64_t r, std::int64_t m,
                               std::int64_t col, std::int64_t cols);

/// A x for the synthetic matrix, streamed in column blocks.
Vector<double> synthetic_product(std::uint64_t seed, std::int64_t r, std::int64_t m,
                                 std::span<const double> x);

struct ProvisionConfig {
  Scheme scheme = Scheme::bpcc;
  Codec codec = Codec::dense;
  DenseLayout layout = DenseLayout::systematic;
  std::int64_t r = 0;
  std::int64_t m = 0;
  std::vector<WorkerProfile> profiles;
  double epsilon = 0.13;
  std::uint64_t seed = 1;
  std::int64_t block_cols = 2048;
};

struct Provisioned {
  Allocation allocation;
  CodedTask task;
  fs::path master_dir;
  std::vector<fs::path> worker_dirs;
};

/// Allocates, encodes and writes master/ and worker_<i>/ under `root`.
/// Uncoded schemes store plain rows (identity code). `source_json` is copied
/// to master/source.json.
Provisioned provision(const fs::path &root, const ProvisionConfig &config,
                      const ColumnBlockSource &source, const std::string &source_json = "{}");

Provisioned provision(const fs::path &root, const ProvisionConfig &config,
                      const Matrix<double> &a);

/// Provisions the synthetic matrix with seed config.seed.
Provisioned provision_synthetic(const fs::path &root, const ProvisionConfig &config);

// ---------------------------------------------------------------- worker

struct WorkerOptions {
  wire::Endpoint listen;
  fs::path data_dir;
  /// Each batch is held back until d times its compute time has passed.
  double delay_factor = 1.0;
  /// Accept input but never return results (infinite-delay straggler).
  bool drop = false;
  /// Terminate the session abruptly after this many BATCH_RESULTs (-1: never).
  int crash_after_batches = -1;
  /// Pace batches like the latency model: batch k is released at
  /// K_k (alpha + X / mu) * delay_factor after the input arrives, X ~ Exp(1)
  /// drawn per session from emulate_seed.
  bool emulate = false;
  std::uint64_t emulate_seed = 1;
  /// Sessions to serve before returning (0: until stopped).
  int max_sessions = 0;
  std::uint32_t frame_cap = wire::kDefaultFrameCap;
};

/// Reads BPCC_DELAY_FACTOR and BPCC_DROP into the options when set.
void apply_worker_env(WorkerOptions &options);

enum class SessionEnd { stopped, finished, disconnected, crashed, protocol_error, failed };

struct SessionReport {
  SessionEnd end = SessionEnd::finished;
  std::uint32_t batches_sent = 0;
  std::uint32_t batches_computed = 0;
  std::uint32_t rows_computed = 0;
};

/// Runs one master session over an accepted connection.
SessionReport serve_session(wire::Socket &conn, const WorkerMeta &meta, const fs::path &slice,
                            const WorkerOptions &options, std::uint64_t session_index);

/// Listening worker. start() binds and serves on a background thread.
class WorkerServer {
public:
  explicit WorkerServer(WorkerOptions options);
  ~WorkerServer();
  WorkerServer(const WorkerServer &) = delete;
  WorkerServer &operator=(const WorkerServer &) = delete;

  /// Binds the listening socket; port() is valid afterwards.
  void bind();
  void start();
  /// Blocks on the calling thread until max_sessions are served or stop().
  void run();
  void stop();
  void join();

  std::uint16_t port() const { return port_; }
  wire::Endpoint endpoint() const { return {options_.listen.host, port_}; }
  std::vector<SessionReport> reports() const;

  /// Set when a session crashed on purpose (crash_after_batches).
  bool crashed() const { return crashed_.load(); }

private:
  WorkerOptions options_;
  WorkerMeta meta_;
  wire::Socket listener_;
  std::uint16_t port_ = 0;
  std::atomic<bool> stopping_{false};
  std::atomic<bool> crashed_{false};
  std::thread thread_;
  mutable std::mutex mutex_;
  int active_fd_ = -1;
  std::vector<SessionReport> reports_;
};

// ---------------------------------------------------------------- master

struct MasterOptions {
  std::chrono::milliseconds connect_timeout{10000};
  std::chrono::milliseconds run_timeout{60000};
  /// How long to wait for STATS after STOP.
  std::chrono::milliseconds stats_grace{2000};
  std::uint32_t frame_cap = wire::kDefaultFrameCap;
};

struct WorkerReport {
  std::string address;
  std::optional<std::uint32_t> worker_id;
  std::int64_t batches_delivered = 0;
  std::int64_t rows_delivered = 0;
  std::optional<std::int64_t> rows_computed; ///< from STATS
  bool finished = false;                     ///< sent STATS before the master stopped
  bool lost = false;                         ///< connection failed or dropped
  std::string error;
};

struct RunMetrics {
  bool success = false;
  double wall_time = 0.0;   ///< input broadcast to decoded result
  double decode_time = 0.0; ///< time inside the decoder
  std::int64_t rows_received = 0;
  std::int64_t threshold = 0;
  std::string failure;
  std::vector<WorkerReport> workers;

  std::int64_t rows_computed() const;
};

struct MasterResult {
  std::optional<Vector<double>> y;
  RunMetrics metrics;
};

/// Connects to every worker, broadcasts x, decodes from streamed batch
/// results and stops the workers once it has enough. A lost worker is an
/// infinite-delay straggler; the run fails when the remaining workers cannot
/// supply enough rows or on timeout.
MasterResult run_master(std::span<const wire::Endpoint> workers, const CodedTask &task,
                        std::span<const double> x, const MasterOptions &options = {});

} // namespace bpcc::net
