#include "bpcc/wire.hpp"

#include <arpa/inet.h>
#include <cerrno>
#include <cstring>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <thread>
#include <unistd.h>

namespace bpcc::wire {

namespace {

void put_u32(std::vector<std::uint8_t> &out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i)
    out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_f64(std::vector<std::uint8_t> &out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, sizeof bits);
  for (int i = 0; i < 8; ++i)
    out.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
}

class Cursor {
public:
  explicit Cursor(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= std::uint32_t(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }

  double f64() {
    need(8);
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i)
      bits |= std::uint64_t(bytes_[pos_ + i]) << (8 * i);
    pos_ += 8;
    double v;
    std::memcpy(&v, &bits, sizeof v);
    return v;
  }

  std::size_t remaining() const { return bytes_.size() - pos_; }

  void finish() const {
    if (remaining() != 0)
      throw ProtocolError("trailing bytes in payload");
  }

private:
  void need(std::size_t n) const {
    if (remaining() < n)
      throw ProtocolError("truncated payload");
  }

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

bool known_kind(std::uint8_t k) { return k >= 0x01 && k <= 0x05; }

std::uint32_t read_u32_le(const std::uint8_t *p) {
  return std::uint32_t(p[0]) | std::uint32_t(p[1]) << 8 | std::uint32_t(p[2]) << 16 |
         std::uint32_t(p[3]) << 24;
}

std::vector<double> read_values(Cursor &c, std::uint32_t count) {
  if (c.remaining() != std::size_t(count) * 8)
    throw ProtocolError("value count does not match payload size");
  std::vector<double> values(count);
  for (auto &v : values)
    v = c.f64();
  return values;
}

} // namespace

std::vector<std::uint8_t> encode_frame(FrameKind kind, std::span<const std::uint8_t> payload) {
  if (payload.size() + 1 > UINT32_MAX)
    throw ProtocolError("payload too large for a frame");
  std::vector<std::uint8_t> out;
  out.reserve(payload.size() + 5);
  put_u32(out, static_cast<std::uint32_t>(payload.size() + 1));
  out.push_back(static_cast<std::uint8_t>(kind));
  out.insert(out.end(), payload.begin(), payload.end());
  return out;
}

std::optional<std::pair<Frame, std::size_t>> decode_frame(std::span<const std::uint8_t> bytes,
                                                          std::uint32_t cap) {
  if (bytes.size() < 4)
    return std::nullopt;
  const std::uint32_t length = read_u32_le(bytes.data());
  if (length == 0)
    throw ProtocolError("zero-length frame");
  if (length > cap)
    throw ProtocolError("frame of " + std::to_string(length) + " bytes exceeds cap");
  if (bytes.size() < 4 + std::size_t(length))
    return std::nullopt;
  const std::uint8_t kind = bytes[4];
  if (!known_kind(kind))
    throw ProtocolError("unknown frame kind " + std::to_string(kind));
  Frame f;
  f.kind = static_cast<FrameKind>(kind);
  f.payload.assign(bytes.begin() + 5, bytes.begin() + 4 + length);
  return std::make_pair(std::move(f), 4 + std::size_t(length));
}

std::vector<std::uint8_t> encode_payload(const Hello &h) {
  std::vector<std::uint8_t> out;
  put_u32(out, h.worker_id);
  put_u32(out, h.row_start);
  put_u32(out, h.row_count);
  put_u32(out, h.batch_count);
  return out;
}

std::vector<std::uint8_t> encode_payload(const BatchResult &b) {
  std::vector<std::uint8_t> out;
  out.reserve(16 + b.values.size() * 8);
  put_u32(out, b.worker_id);
  put_u32(out, b.batch_index);
  put_u32(out, b.row_start);
  put_u32(out, static_cast<std::uint32_t>(b.values.size()));
  for (double v : b.values)
    put_f64(out, v);
  return out;
}

std::vector<std::uint8_t> encode_payload(const Stats &s) {
  std::vector<std::uint8_t> out;
  put_u32(out, s.worker_id);
  put_u32(out, s.batches_computed);
  put_u32(out, s.rows_computed);
  return out;
}

std::vector<std::uint8_t> encode_input_vector(std::span<const double> x) {
  std::vector<std::uint8_t> out;
  out.reserve(4 + x.size() * 8);
  put_u32(out, static_cast<std::uint32_t>(x.size()));
  for (double v : x)
    put_f64(out, v);
  return out;
}

Hello parse_hello(std::span<const std::uint8_t> payload) {
  Cursor c(payload);
  Hello h{c.u32(), c.u32(), c.u32(), c.u32()};
  c.finish();
  return h;
}

BatchResult parse_batch_result(std::span<const std::uint8_t> payload) {
  Cursor c(payload);
  BatchResult b;
  b.worker_id = c.u32();
  b.batch_index = c.u32();
  b.row_start = c.u32();
  const auto count = c.u32();
  b.values = read_values(c, count);
  return b;
}

Stats parse_stats(std::span<const std::uint8_t> payload) {
  Cursor c(payload);
  Stats s{c.u32(), c.u32(), c.u32()};
  c.finish();
  return s;
}

std::vector<double> parse_input_vector(std::span<const std::uint8_t> payload) {
  Cursor c(payload);
  const auto m = c.u32();
  return read_values(c, m);
}

Socket &Socket::operator=(Socket &&other) noexcept {
  if (this != &other) {
    close();
    fd_ = std::exchange(other.fd_, -1);
  }
  return *this;
}

Socket::~Socket() { close(); }

void Socket::close() {
  if (fd_ >= 0)
    ::close(fd_);
  fd_ = -1;
}

void Socket::shutdown() {
  if (fd_ >= 0)
    ::shutdown(fd_, SHUT_RDWR);
}

void Socket::send_frame(FrameKind kind, std::span<const std::uint8_t> payload) {
  const auto bytes = encode_frame(kind, payload);
  std::size_t sent = 0;
  while (sent < bytes.size()) {
    const auto n = ::send(fd_, bytes.data() + sent, bytes.size() - sent, MSG_NOSIGNAL);
    if (n < 0) {
      if (errno == EINTR)
        continue;
      throw ConnectionClosed(std::string("send failed: ") + std::strerror(errno));
    }
    sent += static_cast<std::size_t>(n);
  }
}

void Socket::read_exact(std::uint8_t *dst, std::size_t n) {
  std::size_t got = 0;
  while (got < n) {
    const auto k = ::recv(fd_, dst + got, n - got, 0);
    if (k == 0)
      throw ConnectionClosed("peer closed the connection");
    if (k < 0) {
      if (errno == EINTR)
        continue;
      throw ConnectionClosed(std::string("recv failed: ") + std::strerror(errno));
    }
    got += static_cast<std::size_t>(k);
  }
}

Frame Socket::recv_frame(std::uint32_t cap) {
  std::uint8_t prefix[5];
  read_exact(prefix, 4);
  const std::uint32_t length = read_u32_le(prefix);
  if (length == 0)
    throw ProtocolError("zero-length frame");
  if (length > cap)
    throw ProtocolError("frame of " + std::to_string(length) + " bytes exceeds cap");
  read_exact(prefix + 4, 1);
  if (!known_kind(prefix[4]))
    throw ProtocolError("unknown frame kind " + std::to_string(prefix[4]));
  Frame f;
  f.kind = static_cast<FrameKind>(prefix[4]);
  f.payload.resize(length - 1);
  if (!f.payload.empty())
    read_exact(f.payload.data(), f.payload.size());
  return f;
}

bool Socket::wait_readable(std::chrono::milliseconds timeout) {
  pollfd p{fd_, POLLIN, 0};
  for (;;) {
    const int rc = ::poll(&p, 1, static_cast<int>(timeout.count()));
    if (rc < 0 && errno == EINTR)
      continue;
    return rc > 0;
  }
}

Endpoint parse_endpoint(const std::string &text) {
  const auto colon = text.rfind(':');
  if (colon == std::string::npos)
    throw std::invalid_argument("endpoint must be host:port, got '" + text + "'");
  Endpoint ep;
  ep.host = text.substr(0, colon);
  if (ep.host.empty())
    ep.host = "127.0.0.1";
  const auto port = std::stoul(text.substr(colon + 1));
  if (port > 65535)
    throw std::invalid_argument("port out of range in '" + text + "'");
  ep.port = static_cast<std::uint16_t>(port);
  return ep;
}

namespace {

sockaddr_in resolve(const Endpoint &ep) {
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(ep.port);
  if (::inet_pton(AF_INET, ep.host.c_str(), &addr.sin_addr) == 1)
    return addr;
  addrinfo hints{};
  hints.ai_family = AF_INET;
  addrinfo *res = nullptr;
  if (::getaddrinfo(ep.host.c_str(), nullptr, &hints, &res) != 0 || !res)
    throw std::runtime_error("cannot resolve host '" + ep.host + "'");
  addr.sin_addr = reinterpret_cast<sockaddr_in *>(res->ai_addr)->sin_addr;
  ::freeaddrinfo(res);
  return addr;
}

} // namespace

Socket listen_on(const Endpoint &ep, int backlog) {
  Socket s(::socket(AF_INET, SOCK_STREAM, 0));
  if (!s.valid())
    throw std::runtime_error(std::string("socket: ") + std::strerror(errno));
  const int one = 1;
  ::setsockopt(s.fd(), SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
  const auto addr = resolve(ep);
  if (::bind(s.fd(), reinterpret_cast<const sockaddr *>(&addr), sizeof addr) != 0)
    throw std::runtime_error("bind " + ep.str() + ": " + std::strerror(errno));
  if (::listen(s.fd(), backlog) != 0)
    throw std::runtime_error("listen " + ep.str() + ": " + std::strerror(errno));
  return s;
}

std::uint16_t local_port(const Socket &s) {
  sockaddr_in addr{};
  socklen_t len = sizeof addr;
  if (::getsockname(s.fd(), reinterpret_cast<sockaddr *>(&addr), &len) != 0)
    throw std::runtime_error(std::string("getsockname: ") + std::strerror(errno));
  return ntohs(addr.sin_port);
}

Socket accept_from(Socket &listener) {
  for (;;) {
    const int fd = ::accept(listener.fd(), nullptr, nullptr);
    if (fd >= 0) {
      const int one = 1;
      ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
      return Socket(fd);
    }
    if (errno != EINTR)
      throw ConnectionClosed(std::string("accept: ") + std::strerror(errno));
  }
}

Socket connect_to(const Endpoint &ep, std::chrono::milliseconds timeout) {
  const auto addr = resolve(ep);
  const auto deadline = std::chrono::steady_clock::now() + timeout;
  for (;;) {
    Socket s(::socket(AF_INET, SOCK_STREAM, 0));
    if (!s.valid())
      throw std::runtime_error(std::string("socket: ") + std::strerror(errno));
    if (::connect(s.fd(), reinterpret_cast<const sockaddr *>(&addr), sizeof addr) == 0) {
      const int one = 1;
      ::setsockopt(s.fd(), IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
      return s;
    }
    if (std::chrono::steady_clock::now() >= deadline)
      throw ConnectionClosed("cannot connect to " + ep.str() + ": " + std::strerror(errno));
    std::this_thread::sleep_for(std::chrono::milliseconds(20));
  }
}

} // namespace bpcc::wire
