#pragma once

// Seed-fixed worker rosters shared by the unit and acceptance tests.

#include "bpcc/model.hpp"
#include "bpcc/rng.hpp"

#include <unistd.h>

#include <atomic>
#include <filesystem>
#include <string>
#include <vector>

namespace fixture {

/// mu_i ~ U[1, 50], alpha_i = 1 / mu_i, p_i = p.
inline std::vector<bpcc::WorkerProfile> roster(std::uint64_t seed, std::size_t n, int p = 1) {
  bpcc::SplitMix64 gen(bpcc::derive_seed(seed, 0x5EEDULL));
  std::vector<bpcc::WorkerProfile> out;
  for (std::size_t i = 0; i < n; ++i) {
    const double mu = 1.0 + 49.0 * gen.uniform();
    out.push_back({mu, 1.0 / mu, p});
  }
  return out;
}

/// Independent mu_i ~ U[1, 50] and alpha_i ~ U[0.01, 0.5].
inline std::vector<bpcc::WorkerProfile> mixed_roster(std::uint64_t seed, std::size_t n, int p = 1) {
  bpcc::SplitMix64 gen(bpcc::derive_seed(seed, 0xA11CEULL));
  std::vector<bpcc::WorkerProfile> out;
  for (std::size_t i = 0; i < n; ++i) {
    const double mu = 1.0 + 49.0 * gen.uniform();
    const double alpha = 0.01 + 0.49 * gen.uniform();
    out.push_back({mu, alpha, p});
  }
  return out;
}

inline std::vector<bpcc::WorkerProfile> with_p(std::vector<bpcc::WorkerProfile> ws, int p) {
  for (auto &w : ws)
    w.p = p;
  return ws;
}

/// Fresh directory under the system temp dir, removed on destruction.
struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string &tag) {
    static std::atomic<int> counter{0};
    path = std::filesystem::temp_directory_path() /
           ("bpcc_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  TempDir(const TempDir &) = delete;
  TempDir &operator=(const TempDir &) = delete;
};

} // namespace fixture
