#include "bpcc/net.hpp"

#include <condition_variable>
#include <deque>

namespace bpcc::net {

namespace {

using Clock = std::chrono::steady_clock;

double seconds(Clock::duration d) { return std::chrono::duration<double>(d).count(); }

struct Event {
  std::size_t worker = 0;
  bool lost = false;
  wire::Frame frame;
  std::string error;
};

class EventQueue {
public:
  void push(Event e) {
    {
      std::lock_guard lock(mutex_);
      events_.push_back(std::move(e));
    }
    cv_.notify_one();
  }

  std::optional<Event> pop_until(Clock::time_point deadline) {
    std::unique_lock lock(mutex_);
    if (!cv_.wait_until(lock, deadline, [this] { return !events_.empty(); }))
      return std::nullopt;
    auto e = std::move(events_.front());
    events_.pop_front();
    return e;
  }

private:
  std::mutex mutex_;
  std::condition_variable cv_;
  std::deque<Event> events_;
};

struct Link {
  wire::Socket socket;
  WorkerReport *report = nullptr;
  const WorkerRange *range = nullptr;
  bool stop_sent = false;

  bool live() const { return socket.valid() && !report->lost; }
};

void handshake(Link &link, const wire::Endpoint &ep, const CodedTask &task,
               const MasterOptions &options) {
  try {
    link.socket = wire::connect_to(ep, options.connect_timeout);
    if (!link.socket.wait_readable(options.connect_timeout))
      throw wire::ProtocolError("no HELLO within the connect timeout");
    const auto frame = link.socket.recv_frame(options.frame_cap);
    if (frame.kind != wire::FrameKind::hello)
      throw wire::ProtocolError("expected HELLO");
    const auto hello = wire::parse_hello(frame.payload);
    if (hello.worker_id >= task.worker_ranges.size())
      throw wire::ProtocolError("unknown worker id " + std::to_string(hello.worker_id));
    const auto &range = task.worker_ranges[hello.worker_id];
    if (hello.row_start != range.row_start || hello.row_count != range.row_count ||
        hello.batch_count != range.batch_count())
      throw wire::ProtocolError("worker " + std::to_string(hello.worker_id) +
                                " holds rows that do not match the task");
    link.report->worker_id = hello.worker_id;
    link.range = &range;
  } catch (const std::exception &e) {
    link.socket.close();
    link.report->lost = true;
    link.report->error = e.what();
  }
}

} // namespace

std::int64_t RunMetrics::rows_computed() const {
  std::int64_t total = 0;
  for (const auto &w : workers)
    total += w.rows_computed.value_or(0);
  return total;
}

MasterResult run_master(std::span<const wire::Endpoint> workers, const CodedTask &task,
                        std::span<const double> x, const MasterOptions &options) {
  task.validate();
  MasterResult result;
  auto &metrics = result.metrics;
  metrics.threshold = task.recovery_threshold();
  metrics.workers.resize(workers.size());
  for (std::size_t i = 0; i < workers.size(); ++i)
    metrics.workers[i].address = workers[i].str();

  std::vector<Link> links(workers.size());
  {
    std::vector<std::thread> connectors;
    for (std::size_t i = 0; i < workers.size(); ++i) {
      links[i].report = &metrics.workers[i];
      connectors.emplace_back(
          [&, i] { handshake(links[i], workers[i], task, options); });
    }
    for (auto &t : connectors)
      t.join();
  }
  std::vector<char> seen_id(task.worker_ranges.size(), 0);
  for (auto &link : links) {
    if (!link.live())
      continue;
    if (seen_id[*link.report->worker_id]++) {
      link.socket.close();
      link.report->lost = true;
      link.report->error = "duplicate worker id " + std::to_string(*link.report->worker_id);
    }
  }

  EventQueue queue;
  std::vector<std::thread> readers;
  for (std::size_t i = 0; i < links.size(); ++i) {
    if (!links[i].live())
      continue;
    readers.emplace_back([&queue, &links, i, cap = options.frame_cap] {
      try {
        for (;;)
          queue.push({i, false, links[i].socket.recv_frame(cap), {}});
      } catch (const std::exception &e) {
        queue.push({i, true, {}, e.what()});
      }
    });
  }

  auto drop_link = [&](Link &link, const std::string &why) {
    if (link.report->lost)
      return;
    link.report->lost = true;
    link.report->error = why;
    link.socket.shutdown();
  };
  auto send_stop = [&](Link &link) {
    if (link.stop_sent || !link.live())
      return;
    link.stop_sent = true;
    try {
      link.socket.send_frame(wire::FrameKind::stop, {});
    } catch (const std::exception &) {
    }
  };

  Decoder decoder(task);
  Clock::duration decode_clock{};
  const auto input = wire::encode_input_vector(x);
  const auto start = Clock::now();
  const auto deadline = start + options.run_timeout;
  for (auto &link : links) {
    if (!link.live())
      continue;
    try {
      link.socket.send_frame(wire::FrameKind::input_vector, input);
    } catch (const std::exception &e) {
      drop_link(link, e.what());
    }
  }

  auto handle = [&](const Event &ev) {
    auto &link = links[ev.worker];
    auto &report = *link.report;
    if (ev.lost) {
      if (!report.finished && !link.stop_sent)
        drop_link(link, ev.error);
      return;
    }
    try {
      switch (ev.frame.kind) {
      case wire::FrameKind::batch_result: {
        const auto b = wire::parse_batch_result(ev.frame.payload);
        const auto &range = *link.range;
        if (b.worker_id != *report.worker_id || b.batch_index >= range.batch_count())
          throw wire::ProtocolError("batch result does not belong to this worker");
        const auto off = range.batch_offsets[b.batch_index];
        const auto rows = range.batch_offsets[b.batch_index + 1] - off;
        if (b.row_start != range.row_start + off || static_cast<std::int64_t>(b.values.size()) != rows)
          throw wire::ProtocolError("batch result rows do not match the batch layout");
        const auto t0 = Clock::now();
        for (std::int64_t k = 0; k < rows; ++k)
          decoder.add_row(b.row_start + k, b.values[static_cast<std::size_t>(k)]);
        decode_clock += Clock::now() - t0;
        ++report.batches_delivered;
        report.rows_delivered += rows;
        break;
      }
      case wire::FrameKind::stats: {
        const auto s = wire::parse_stats(ev.frame.payload);
        report.rows_computed = s.rows_computed;
        if (!link.stop_sent)
          report.finished = true;
        break;
      }
      default:
        throw wire::ProtocolError("unexpected frame from worker");
      }
    } catch (const wire::ProtocolError &e) {
      drop_link(link, e.what());
    }
  };

  // Rows still obtainable: received plus what live, unfinished workers hold.
  auto reachable = [&] {
    std::int64_t total = decoder.rows_received();
    for (const auto &link : links)
      if (link.live() && !link.report->finished)
        total += link.range->row_count - link.report->rows_delivered;
    return total;
  };
  auto anyone_working = [&] {
    for (const auto &link : links)
      if (link.live() && !link.report->finished)
        return true;
    return false;
  };

  std::optional<Vector<double>> y;
  while (!y) {
    if (decoder.rows_received() >= metrics.threshold) {
      if (task.codec == Codec::dense)
        for (auto &link : links)
          send_stop(link);
      try {
        const auto t0 = Clock::now();
        y = decoder.try_decode();
        decode_clock += Clock::now() - t0;
      } catch (const DecodeFailure &e) {
        metrics.failure = e.what();
        break;
      }
      if (y)
        break;
    }
    if (reachable() < metrics.threshold || !anyone_working()) {
      metrics.failure = "recovery threshold of " + std::to_string(metrics.threshold) +
                        " rows is unreachable: " + std::to_string(decoder.rows_received()) +
                        " received, no more rows can arrive";
      break;
    }
    auto ev = queue.pop_until(deadline);
    if (!ev) {
      metrics.failure = "timed out after " + std::to_string(options.run_timeout.count()) + " ms";
      break;
    }
    handle(*ev);
  }
  const auto done = Clock::now();
  for (auto &link : links)
    send_stop(link);

  // Collect STATS from workers that were still running.
  const auto grace = Clock::now() + options.stats_grace;
  auto waiting = [&] {
    for (const auto &link : links)
      if (link.live() && !link.report->rows_computed)
        return true;
    return false;
  };
  while (waiting()) {
    auto ev = queue.pop_until(grace);
    if (!ev)
      break;
    if (ev->lost) {
      links[ev->worker].socket.shutdown();
      if (!links[ev->worker].report->rows_computed && !links[ev->worker].stop_sent)
        drop_link(links[ev->worker], ev->error);
      else if (!links[ev->worker].report->rows_computed)
        links[ev->worker].report->error = "closed before reporting stats";
      links[ev->worker].socket.close();
      continue;
    }
    if (ev->frame.kind == wire::FrameKind::stats)
      handle(*ev);
  }
  for (auto &link : links)
    link.socket.shutdown();
  for (auto &t : readers)
    t.join();
  for (auto &link : links)
    link.socket.close();

  metrics.rows_received = decoder.rows_received();
  metrics.wall_time = seconds(done - start);
  metrics.decode_time = seconds(decode_clock);
  metrics.success = y.has_value();
  result.y = std::move(y);
  return result;
}

} // namespace bpcc::net
