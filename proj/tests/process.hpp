#pragma once

// Child processes for the CLI tests: spawn with stdout/stderr captured,
// read lines, wait with a deadline.

#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

#include <chrono>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

extern char **environ;

namespace proc {

class Child {
public:
  Child(const std::vector<std::string> &argv, const std::vector<std::string> &extra_env = {}) {
    int out[2], errp[2];
    if (::pipe(out) != 0 || ::pipe(errp) != 0)
      throw std::runtime_error("pipe failed");
    posix_spawn_file_actions_t fa;
    posix_spawn_file_actions_init(&fa);
    posix_spawn_file_actions_adddup2(&fa, out[1], 1);
    posix_spawn_file_actions_adddup2(&fa, errp[1], 2);
    posix_spawn_file_actions_addclose(&fa, out[0]);
    posix_spawn_file_actions_addclose(&fa, errp[0]);

    std::vector<char *> args;
    for (const auto &a : argv)
      args.push_back(const_cast<char *>(a.c_str()));
    args.push_back(nullptr);
    // getenv returns the first match, so overrides go first.
    std::vector<std::string> env_store(extra_env);
    for (char **e = environ; *e; ++e)
      env_store.emplace_back(*e);
    std::vector<char *> env;
    for (auto &e : env_store)
      env.push_back(e.data());
    env.push_back(nullptr);

    const int rc = posix_spawn(&pid_, args[0], &fa, nullptr, args.data(), env.data());
    posix_spawn_file_actions_destroy(&fa);
    ::close(out[1]);
    ::close(errp[1]);
    out_fd_ = out[0];
    err_fd_ = errp[0];
    if (rc != 0) {
      pid_ = -1;
      throw std::runtime_error("posix_spawn failed for " + argv[0]);
    }
  }

  ~Child() {
    if (pid_ > 0 && !status_) {
      ::kill(pid_, SIGKILL);
      int st = 0;
      ::waitpid(pid_, &st, 0);
    }
    if (out_fd_ >= 0)
      ::close(out_fd_);
    if (err_fd_ >= 0)
      ::close(err_fd_);
  }

  Child(const Child &) = delete;
  Child &operator=(const Child &) = delete;

  /// Next stdout line, or nullopt at EOF or after `timeout`.
  std::optional<std::string> read_line(std::chrono::milliseconds timeout) {
    const auto deadline = std::chrono::steady_clock::now() + timeout;
    for (;;) {
      if (const auto nl = out_buf_.find('\n'); nl != std::string::npos) {
        auto line = out_buf_.substr(0, nl);
        out_buf_.erase(0, nl + 1);
        return line;
      }
      const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(
          deadline - std::chrono::steady_clock::now());
      if (left.count() <= 0)
        return std::nullopt;
      pollfd p{out_fd_, POLLIN, 0};
      if (::poll(&p, 1, static_cast<int>(left.count())) <= 0)
        continue;
      char buf[4096];
      const auto n = ::read(out_fd_, buf, sizeof buf);
      if (n <= 0)
        return std::nullopt;
      out_buf_.append(buf, static_cast<std::size_t>(n));
    }
  }

  /// Waits for exit and collects the remaining output. Returns the exit
  /// code, 128 + signal for a signalled child, or nullopt on timeout.
  std::optional<int> wait(std::chrono::milliseconds timeout) {
    const auto deadline = std::chrono::steady_clock::now() + timeout;
    for (;;) {
      drain(out_fd_, out_buf_);
      drain(err_fd_, err_buf_);
      int st = 0;
      const auto r = ::waitpid(pid_, &st, WNOHANG);
      if (r == pid_) {
        drain(out_fd_, out_buf_, true);
        drain(err_fd_, err_buf_, true);
        status_ = WIFEXITED(st) ? WEXITSTATUS(st) : 128 + WTERMSIG(st);
        return status_;
      }
      if (std::chrono::steady_clock::now() > deadline)
        return std::nullopt;
      std::this_thread::sleep_for(std::chrono::milliseconds(5));
    }
  }

  void kill() {
    if (pid_ > 0 && !status_)
      ::kill(pid_, SIGKILL);
  }

  const std::string &out() const { return out_buf_; }
  const std::string &err() const { return err_buf_; }

private:
  static void drain(int fd, std::string &buf, bool to_eof = false) {
    for (;;) {
      pollfd p{fd, POLLIN, 0};
      if (!to_eof && ::poll(&p, 1, 0) <= 0)
        return;
      char tmp[4096];
      const auto n = ::read(fd, tmp, sizeof tmp);
      if (n <= 0)
        return;
      buf.append(tmp, static_cast<std::size_t>(n));
    }
  }

  pid_t pid_ = -1;
  int out_fd_ = -1;
  int err_fd_ = -1;
  std::string out_buf_;
  std::string err_buf_;
  std::optional<int> status_;
};

/// Runs to completion; returns (exit code, stdout, stderr).
struct Result {
  int code = -1;
  std::string out;
  std::string err;
};

inline Result run(const std::vector<std::string> &argv, const std::vector<std::string> &env = {},
                  std::chrono::milliseconds timeout = std::chrono::seconds(120)) {
  Child c(argv, env);
  const auto code = c.wait(timeout);
  if (!code)
    throw std::runtime_error("timed out: " + argv[0]);
  return {*code, c.out(), c.err()};
}

/// Starts `bpcc worker` and returns it with the endpoint it printed.
inline std::pair<std::unique_ptr<Child>, std::string>
start_worker(const std::string &exe, std::vector<std::string> args) {
  std::vector<std::string> argv{exe, "worker", "--listen", "127.0.0.1:0"};
  argv.insert(argv.end(), args.begin(), args.end());
  auto child = std::make_unique<Child>(argv);
  const auto line = child->read_line(std::chrono::seconds(20));
  const std::string prefix = "listening on ";
  if (!line || line->rfind(prefix, 0) != 0)
    throw std::runtime_error("worker did not report its address");
  return {std::move(child), line->substr(prefix.size())};
}

} // namespace proc
