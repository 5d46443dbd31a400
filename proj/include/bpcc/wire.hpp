#pragma once

// Length-prefixed binary protocol between master and workers.
//
//   u32 length (little-endian) = payload bytes + 1
//   u8  kind
//   payload
//
// HELLO        worker -> master  u32 worker_id, u32 row_start, u32 row_count, u32 batch_count
// INPUT_VECTOR master -> worker  u32 m, m x f64
// BATCH_RESULT worker -> master  u32 worker_id, u32 batch_index, u32 row_start, u32 row_count,
//                                row_count x f64
// STOP         master -> worker  (empty)
// STATS        worker -> master  u32 worker_id, u32 batches_computed, u32 rows_computed

#include <chrono>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace bpcc::wire {

enum class FrameKind : std::uint8_t {
  hello = 0x01,
  input_vector = 0x02,
  batch_result = 0x03,
  stop = 0x04,
  stats = 0x05,
};

inline constexpr std::uint32_t kDefaultFrameCap = 64u << 20;

class ProtocolError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

class ConnectionClosed : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

struct Frame {
  FrameKind kind = FrameKind::stop;
  std::vector<std::uint8_t> payload;
};

struct Hello {
  std::uint32_t worker_id = 0;
  std::uint32_t row_start = 0;
  std::uint32_t row_count = 0;
  std::uint32_t batch_count = 0;
};

struct BatchResult {
  std::uint32_t worker_id = 0;
  std::uint32_t batch_index = 0;
  std::uint32_t row_start = 0;
  std::vector<double> values;
};

struct Stats {
  std::uint32_t worker_id = 0;
  std::uint32_t batches_computed = 0;
  std::uint32_t rows_computed = 0;
};

/// Full frame bytes, length prefix included.
std::vector<std::uint8_t> encode_frame(FrameKind kind, std::span<const std::uint8_t> payload);

/// Parses one complete frame from `bytes`; throws ProtocolError on a
/// malformed or oversized frame. Returns the frame and the bytes consumed,
/// or std::nullopt when `bytes` holds only a prefix of a frame.
std::optional<std::pair<Frame, std::size_t>> decode_frame(std::span<const std::uint8_t> bytes,
                                                          std::uint32_t cap = kDefaultFrameCap);

std::vector<std::uint8_t> encode_payload(const Hello &h);
std::vector<std::uint8_t> encode_payload(const BatchResult &b);
std::vector<std::uint8_t> encode_payload(const Stats &s);
std::vector<std::uint8_t> encode_input_vector(std::span<const double> x);

Hello parse_hello(std::span<const std::uint8_t> payload);
BatchResult parse_batch_result(std::span<const std::uint8_t> payload);
Stats parse_stats(std::span<const std::uint8_t> payload);
std::vector<double> parse_input_vector(std::span<const std::uint8_t> payload);

/// Owning TCP socket.
class Socket {
public:
  Socket() = default;
  explicit Socket(int fd) : fd_(fd) {}
  Socket(Socket &&other) noexcept : fd_(std::exchange(other.fd_, -1)) {}
  Socket &operator=(Socket &&other) noexcept;
  Socket(const Socket &) = delete;
  Socket &operator=(const Socket &) = delete;
  ~Socket();

  int fd() const { return fd_; }
  bool valid() const { return fd_ >= 0; }
  void close();
  /// Unblocks readers on other threads without releasing the descriptor.
  void shutdown();

  void send_frame(FrameKind kind, std::span<const std::uint8_t> payload);
  /// Blocks until a full frame arrives. Throws ConnectionClosed on EOF.
  Frame recv_frame(std::uint32_t cap = kDefaultFrameCap);
  /// Waits up to `timeout` for readable data.
  bool wait_readable(std::chrono::milliseconds timeout);

private:
  void read_exact(std::uint8_t *dst, std::size_t n);
  int fd_ = -1;
};

struct Endpoint {
  std::string host = "127.0.0.1";
  std::uint16_t port = 0;
  std::string str() const { return host + ":" + std::to_string(port); }
};

Endpoint parse_endpoint(const std::string &text);

/// Listening socket bound to `ep` (port 0 picks a free port).
Socket listen_on(const Endpoint &ep, int backlog = 16);
std::uint16_t local_port(const Socket &s);
Socket accept_from(Socket &listener);
/// Connects, retrying until `timeout` elapses.
Socket connect_to(const Endpoint &ep,
                  std::chrono::milliseconds timeout = std::chrono::milliseconds(10000));

} // namespace bpcc::wire
