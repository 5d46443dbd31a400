#include "bpcc/matrix_io.hpp"
#include "bpcc/model.hpp"
#include "bpcc/net.hpp"
#include "bpcc/rng.hpp"

#include <sys/socket.h>

#include <cstdlib>
#include <string_view>

namespace bpcc::net {

namespace {

using Clock = std::chrono::steady_clock;

struct StopRequested {};

// Consumes any frame already waiting. Returns true on STOP.
bool poll_stop(wire::Socket &conn, std::chrono::milliseconds wait, std::uint32_t cap) {
  if (!conn.wait_readable(wait))
    return false;
  const auto frame = conn.recv_frame(cap);
  if (frame.kind == wire::FrameKind::stop)
    return true;
  throw wire::ProtocolError("unexpected frame while computing");
}

// Sleeps until `until` unless STOP arrives first.
bool wait_until_or_stop(wire::Socket &conn, Clock::time_point until, std::uint32_t cap) {
  for (;;) {
    const auto now = Clock::now();
    if (now >= until)
      return poll_stop(conn, std::chrono::milliseconds(0), cap);
    const auto left = std::chrono::ceil<std::chrono::milliseconds>(until - now);
    if (poll_stop(conn, left, cap))
      return true;
  }
}

void send_stats(wire::Socket &conn, const WorkerMeta &meta, const SessionReport &report) {
  const wire::Stats stats{meta.worker_id, report.batches_computed, report.rows_computed};
  conn.send_frame(wire::FrameKind::stats, wire::encode_payload(stats));
}

// After the work is over: wait for STOP or the master hanging up.
void drain(wire::Socket &conn, std::uint32_t cap) {
  for (;;) {
    const auto frame = conn.recv_frame(cap);
    if (frame.kind == wire::FrameKind::stop)
      return;
  }
}

} // namespace

void apply_worker_env(WorkerOptions &options) {
  if (const char *d = std::getenv("BPCC_DELAY_FACTOR"); d && *d) {
    const double v = std::stod(d);
    if (!(v >= 1.0))
      throw std::invalid_argument("BPCC_DELAY_FACTOR must be >= 1");
    options.delay_factor = v;
  }
  if (const char *drop = std::getenv("BPCC_DROP"); drop && *drop) {
    const std::string_view v(drop);
    options.drop = !(v == "0" || v == "false" || v == "no");
  }
}

SessionReport serve_session(wire::Socket &conn, const WorkerMeta &meta, const fs::path &slice,
                            const WorkerOptions &options, std::uint64_t session_index) {
  SessionReport report;
  const auto cap = options.frame_cap;
  try {
    const wire::Hello hello{meta.worker_id, static_cast<std::uint32_t>(meta.row_start),
                            static_cast<std::uint32_t>(meta.row_count),
                            static_cast<std::uint32_t>(meta.batch_count())};
    conn.send_frame(wire::FrameKind::hello, wire::encode_payload(hello));

    const auto first = conn.recv_frame(cap);
    if (first.kind == wire::FrameKind::stop) {
      report.end = SessionEnd::stopped;
      send_stats(conn, meta, report);
      return report;
    }
    if (first.kind != wire::FrameKind::input_vector)
      throw wire::ProtocolError("expected INPUT_VECTOR");
    const auto x = wire::parse_input_vector(first.payload);
    if (static_cast<std::int64_t>(x.size()) != meta.m)
      throw wire::ProtocolError("input vector has " + std::to_string(x.size()) +
                                " entries, slice has " + std::to_string(meta.m) + " columns");
    const auto start = Clock::now();

    if (options.drop) {
      drain(conn, cap);
      report.end = SessionEnd::stopped;
      send_stats(conn, meta, report);
      return report;
    }

    double per_row = 0.0;
    if (options.emulate) {
      WorkerProfile profile{meta.mu, meta.alpha, 1};
      profile.validate();
      SplitMix64 gen(derive_seed(options.emulate_seed, session_index, meta.worker_id));
      per_row = (meta.alpha + standard_exponential(gen) / meta.mu) * options.delay_factor;
    }

    MatrixFileReader reader(slice);
    if (reader.rows() != meta.row_count || reader.cols() != meta.m)
      throw IoError("slice shape does not match meta.json");
    const Eigen::Map<const Vector<double>> xv(x.data(), meta.m);

    for (std::size_t k = 0; k < meta.batch_count(); ++k) {
      if (options.crash_after_batches >= 0 &&
          report.batches_sent >= static_cast<std::uint32_t>(options.crash_after_batches)) {
        report.end = SessionEnd::crashed;
        return report;
      }
      if (poll_stop(conn, std::chrono::milliseconds(0), cap))
        throw StopRequested{};

      const auto off = meta.batch_offsets[k];
      const auto rows = meta.batch_offsets[k + 1] - off;
      const auto t0 = Clock::now();
      const auto block =
          reader.read_rows(static_cast<std::uint32_t>(off), static_cast<std::uint32_t>(rows));
      wire::BatchResult result;
      result.worker_id = meta.worker_id;
      result.batch_index = static_cast<std::uint32_t>(k);
      result.row_start = static_cast<std::uint32_t>(meta.row_start + off);
      result.values.resize(static_cast<std::size_t>(rows));
      Eigen::Map<Vector<double>>(result.values.data(), rows).noalias() = block * xv;
      const auto t1 = Clock::now();
      ++report.batches_computed;
      report.rows_computed += static_cast<std::uint32_t>(rows);

      Clock::time_point release = t1;
      if (options.emulate)
        release = start + std::chrono::duration_cast<Clock::duration>(std::chrono::duration<double>(
                              static_cast<double>(meta.batch_offsets[k + 1]) * per_row));
      else if (options.delay_factor > 1.0)
        release = t1 + std::chrono::duration_cast<Clock::duration>((t1 - t0) *
                                                                   (options.delay_factor - 1.0));
      if (wait_until_or_stop(conn, release, cap))
        throw StopRequested{};

      conn.send_frame(wire::FrameKind::batch_result, wire::encode_payload(result));
      ++report.batches_sent;
    }
    send_stats(conn, meta, report);
    report.end = SessionEnd::finished;
    drain(conn, cap);
    return report;
  } catch (const StopRequested &) {
    report.end = SessionEnd::stopped;
    try {
      send_stats(conn, meta, report);
    } catch (const wire::ConnectionClosed &) {
    }
    return report;
  } catch (const wire::ConnectionClosed &) {
    if (report.end != SessionEnd::finished)
      report.end = SessionEnd::disconnected;
    return report;
  } catch (const wire::ProtocolError &) {
    report.end = SessionEnd::protocol_error;
    return report;
  } catch (const std::exception &) {
    report.end = SessionEnd::failed;
    return report;
  }
}

WorkerServer::WorkerServer(WorkerOptions options) : options_(std::move(options)) {
  if (options_.delay_factor < 1.0)
    throw std::invalid_argument("delay factor must be >= 1");
  meta_ = read_worker_meta(options_.data_dir / "meta.json");
  MatrixFileReader check(options_.data_dir / "slice.bin");
  if (check.rows() != meta_.row_count || check.cols() != meta_.m)
    throw IoError(options_.data_dir.string() + ": slice shape does not match meta.json");
}

WorkerServer::~WorkerServer() {
  stop();
  join();
}

void WorkerServer::bind() {
  if (listener_.valid())
    return;
  listener_ = wire::listen_on(options_.listen);
  port_ = wire::local_port(listener_);
}

void WorkerServer::start() {
  bind();
  thread_ = std::thread([this] { run(); });
}

void WorkerServer::run() {
  bind();
  std::uint64_t session = 0;
  while (!stopping_.load()) {
    wire::Socket conn;
    try {
      conn = wire::accept_from(listener_);
    } catch (const wire::ConnectionClosed &) {
      break;
    }
    if (stopping_.load())
      break;
    {
      std::lock_guard lock(mutex_);
      active_fd_ = conn.fd();
    }
    const auto report = serve_session(conn, meta_, options_.data_dir / "slice.bin", options_, session++);
    {
      std::lock_guard lock(mutex_);
      active_fd_ = -1;
      reports_.push_back(report);
    }
    conn.close();
    if (report.end == SessionEnd::crashed) {
      crashed_.store(true);
      break;
    }
    if (options_.max_sessions > 0 && session >= static_cast<std::uint64_t>(options_.max_sessions))
      break;
  }
}

void WorkerServer::stop() {
  stopping_.store(true);
  listener_.shutdown();
  std::lock_guard lock(mutex_);
  if (active_fd_ >= 0)
    ::shutdown(active_fd_, SHUT_RDWR);
}

void WorkerServer::join() {
  if (thread_.joinable())
    thread_.join();
}

std::vector<SessionReport> WorkerServer::reports() const {
  std::lock_guard lock(mutex_);
  return reports_;
}

} // namespace bpcc::net
