#include "bpcc/rng.hpp"
#include "bpcc/wire.hpp"

#include "doctest.h"

#include <sys/socket.h>

#include <cstring>
#include <thread>

using namespace bpcc;
using namespace bpcc::wire;

namespace {

std::vector<std::uint8_t> le32(std::uint32_t v) {
  return {static_cast<std::uint8_t>(v), static_cast<std::uint8_t>(v >> 8),
          static_cast<std::uint8_t>(v >> 16), static_cast<std::uint8_t>(v >> 24)};
}

} // namespace

TEST_CASE("frame layout is length, kind, payload") {
  const std::vector<std::uint8_t> payload{0xAA, 0xBB};
  const auto bytes = encode_frame(FrameKind::stats, payload);
  CHECK(bytes == std::vector<std::uint8_t>{3, 0, 0, 0, 0x05, 0xAA, 0xBB});
  const auto stop = encode_frame(FrameKind::stop, {});
  CHECK(stop == std::vector<std::uint8_t>{1, 0, 0, 0, 0x04});
}

TEST_CASE("hello and stats payloads are little-endian u32 fields") {
  const auto h = encode_payload(Hello{1, 2, 3, 4});
  CHECK(h == std::vector<std::uint8_t>{1, 0, 0, 0, 2, 0, 0, 0, 3, 0, 0, 0, 4, 0, 0, 0});
  const auto back = parse_hello(h);
  CHECK(back.worker_id == 1);
  CHECK(back.batch_count == 4);
  const auto s = parse_stats(encode_payload(Stats{7, 8, 900}));
  CHECK(s.worker_id == 7);
  CHECK(s.batches_computed == 8);
  CHECK(s.rows_computed == 900);
}

TEST_CASE("input vector and batch result round-trip bit-exactly") {
  SplitMix64 gen(1);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> x(gen() % 300);
    for (auto &v : x) {
      const auto bits = gen();
      std::memcpy(&v, &bits, sizeof v);
    }
    const auto back = parse_input_vector(encode_input_vector(x));
    REQUIRE(back.size() == x.size());
    CHECK(std::memcmp(back.data(), x.data(), x.size() * sizeof(double)) == 0);

    BatchResult b{static_cast<std::uint32_t>(gen()), static_cast<std::uint32_t>(gen() % 1000),
                  static_cast<std::uint32_t>(gen()), x};
    const auto frame = encode_frame(FrameKind::batch_result, encode_payload(b));
    const auto parsed = decode_frame(frame);
    REQUIRE(parsed.has_value());
    CHECK(parsed->second == frame.size());
    CHECK(parsed->first.kind == FrameKind::batch_result);
    const auto rb = parse_batch_result(parsed->first.payload);
    CHECK(rb.worker_id == b.worker_id);
    CHECK(rb.batch_index == b.batch_index);
    CHECK(rb.row_start == b.row_start);
    CHECK(std::memcmp(rb.values.data(), x.data(), x.size() * sizeof(double)) == 0);
  }
}

TEST_CASE("decode_frame handles prefixes and concatenated frames") {
  auto bytes = encode_frame(FrameKind::hello, encode_payload(Hello{9, 0, 10, 2}));
  for (std::size_t n = 0; n < bytes.size(); ++n)
    CHECK_FALSE(decode_frame(std::span(bytes).first(n)).has_value());
  const auto second = encode_frame(FrameKind::stop, {});
  bytes.insert(bytes.end(), second.begin(), second.end());
  const auto first = decode_frame(bytes);
  REQUIRE(first.has_value());
  const auto next = decode_frame(std::span(bytes).subspan(first->second));
  REQUIRE(next.has_value());
  CHECK(next->first.kind == FrameKind::stop);
}

TEST_CASE("malformed frames are rejected") {
  // Zero length: no room for the kind byte.
  CHECK_THROWS_AS(decode_frame(le32(0)), ProtocolError);
  // Unknown kind.
  auto unknown = le32(1);
  unknown.push_back(0x7F);
  CHECK_THROWS_AS(decode_frame(unknown), ProtocolError);
  // Over the cap, rejected from the prefix alone.
  CHECK_THROWS_AS(decode_frame(le32(1000), 999), ProtocolError);
  auto big = le32(kDefaultFrameCap + 1);
  CHECK_THROWS_AS(decode_frame(big), ProtocolError);

  // Payload parsers reject truncation and trailing bytes.
  auto hello = encode_payload(Hello{1, 2, 3, 4});
  CHECK_THROWS_AS(parse_hello(std::span(hello).first(15)), ProtocolError);
  hello.push_back(0);
  CHECK_THROWS_AS(parse_hello(hello), ProtocolError);
  auto input = encode_input_vector(std::vector<double>{1.0, 2.0});
  input.pop_back();
  CHECK_THROWS_AS(parse_input_vector(input), ProtocolError);
  auto batch = encode_payload(BatchResult{0, 0, 0, {1.0}});
  batch.push_back(1);
  CHECK_THROWS_AS(parse_batch_result(batch), ProtocolError);
  CHECK_THROWS_AS(parse_stats({}), ProtocolError);
}

TEST_CASE("endpoints") {
  const auto e = parse_endpoint("10.1.2.3:4567");
  CHECK(e.host == "10.1.2.3");
  CHECK(e.port == 4567);
  CHECK(parse_endpoint(":80").host == "127.0.0.1");
  CHECK(parse_endpoint("localhost:0").port == 0);
  CHECK(e.str() == "10.1.2.3:4567");
  CHECK_THROWS(parse_endpoint("nohost"));
  CHECK_THROWS(parse_endpoint("h:99999"));
  CHECK_THROWS(parse_endpoint("h:x1"));
}

TEST_CASE("frames travel over loopback TCP") {
  auto listener = listen_on({"127.0.0.1", 0});
  const auto port = local_port(listener);
  CHECK(port != 0);
  std::vector<double> big(100000);
  for (std::size_t i = 0; i < big.size(); ++i)
    big[i] = static_cast<double>(i) * 0.5;

  std::thread server([&] {
    auto conn = accept_from(listener);
    const auto f = conn.recv_frame();
    CHECK(f.kind == FrameKind::input_vector);
    const auto x = parse_input_vector(f.payload);
    conn.send_frame(FrameKind::batch_result, encode_payload(BatchResult{3, 1, 10, x}));
    conn.send_frame(FrameKind::stop, {});
  });
  auto client = connect_to({"127.0.0.1", port});
  client.send_frame(FrameKind::input_vector, encode_input_vector(big));
  CHECK(client.wait_readable(std::chrono::milliseconds(5000)));
  const auto reply = parse_batch_result(client.recv_frame().payload);
  CHECK(reply.values == big);
  CHECK(client.recv_frame().kind == FrameKind::stop);
  server.join();
  CHECK_THROWS_AS(client.recv_frame(), ConnectionClosed);
}

TEST_CASE("oversized frames on a socket raise ProtocolError") {
  auto listener = listen_on({"127.0.0.1", 0});
  const auto port = local_port(listener);
  std::thread server([&] {
    auto conn = accept_from(listener);
    conn.send_frame(FrameKind::input_vector, encode_input_vector(std::vector<double>(100)));
  });
  auto client = connect_to({"127.0.0.1", port});
  CHECK_THROWS_AS(client.recv_frame(64), ProtocolError);
  server.join();
}

TEST_CASE("connect_to gives up after its timeout") {
  auto listener = listen_on({"127.0.0.1", 0});
  const auto port = local_port(listener);
  listener.close();
  const auto start = std::chrono::steady_clock::now();
  CHECK_THROWS(connect_to({"127.0.0.1", port}, std::chrono::milliseconds(200)));
  CHECK(std::chrono::steady_clock::now() - start < std::chrono::seconds(5));
}
