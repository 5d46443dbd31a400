#pragma once

#include "bpcc/allocation.hpp"
#include "bpcc/rng.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string_view>
#include <utility>
#include <vector>

namespace bpcc {

template <class Scalar> using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <class Scalar> using RowMajorMatrix =
    Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class Scalar> using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

enum class Codec { dense, lt };

std::string_view to_string(Codec codec);
Codec codec_from_string(std::string_view name);

/// Gaussian layout: every coefficient i.i.d. N(0, 1).
/// Systematic layout: identity on the first r rows, Gaussian below. Any r
/// rows are still linearly independent with probability one, and only the
/// q - r parity rows cost a product with A.
enum class DenseLayout { gaussian, systematic };

class InsufficientRedundancy : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

class DecodeFailure : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Robust soliton degree distribution parameters.
struct RobustSoliton {
  double c = 0.03;
  double delta = 0.5;
};

/// Slice of the encoded rows one worker holds.
struct WorkerRange {
  std::int64_t row_start = 0;
  std::int64_t row_count = 0;
  /// Batch boundaries relative to row_start: batch k covers
  /// [batch_offsets[k], batch_offsets[k + 1]).
  std::vector<std::int64_t> batch_offsets;

  std::size_t batch_count() const { return batch_offsets.empty() ? 0 : batch_offsets.size() - 1; }
};

/// Encoding metadata needed to decode y = A x from coded inner products.
struct CodedTask {
  Codec codec = Codec::dense;
  std::int64_t r = 0; ///< source rows
  std::int64_t q = 0; ///< encoded rows
  double epsilon = 0.0;
  Matrix<double> coefficients;                   ///< dense: q x r
  std::vector<std::vector<std::uint32_t>> neighbors; ///< lt: source rows summed per encoded row
  std::vector<WorkerRange> worker_ranges;

  /// r for dense, ceil(r (1 + epsilon)) for LT.
  std::int64_t recovery_threshold() const;
  void validate() const;
};

/// Integer ceil(r (1 + epsilon)) that ignores rounding noise in the product.
std::int64_t lt_threshold(std::int64_t r, double epsilon);

/// Partial inner products for a contiguous block of encoded rows.
struct PartialResult {
  std::uint32_t worker_id = 0;
  std::uint32_t batch_index = 0;
  std::int64_t row_start = 0; ///< global encoded row index
  Vector<double> values;
};

Matrix<double> dense_coefficients(std::int64_t q, std::int64_t r, SplitMix64 &gen,
                                  DenseLayout layout = DenseLayout::gaussian);

/// A_hat = H A with H drawn per `layout`.
std::pair<CodedTask, Matrix<double>> encode_dense(const Matrix<double> &a, std::int64_t q,
                                                  SplitMix64 &gen,
                                                  DenseLayout layout = DenseLayout::gaussian);

/// Encodes with caller-provided coefficients (q x r).
std::pair<CodedTask, Matrix<double>> encode_with_coefficients(const Matrix<double> &a,
                                                              Matrix<double> h);

/// Uncoded task: H = I, q = r.
std::pair<CodedTask, Matrix<double>> encode_identity(const Matrix<double> &a);

/// Cumulative distribution over degrees 1..r (entry d-1 = Pr(degree <= d)).
std::vector<double> robust_soliton_cdf(std::int64_t r, const RobustSoliton &params = {});

/// q neighbor sets, each of a robust-soliton degree drawn without
/// replacement from [0, r).
std::vector<std::vector<std::uint32_t>> lt_neighbors(std::int64_t r, std::int64_t q,
                                                     SplitMix64 &gen,
                                                     const RobustSoliton &params = {});

/// Each encoded row is the real sum of its source rows.
std::pair<CodedTask, Matrix<double>> encode_lt(const Matrix<double> &a, std::int64_t q_cap,
                                               double epsilon, SplitMix64 &gen,
                                               const RobustSoliton &params = {});

std::pair<CodedTask, Matrix<double>>
encode_lt_with_neighbors(const Matrix<double> &a, std::vector<std::vector<std::uint32_t>> neighbors,
                         double epsilon);

/// Splits [0, q) into contiguous worker slices following the allocation's
/// loads and batch counts. Requires task.q == alloc.total_load().
void assign_worker_ranges(CodedTask &task, const Allocation &alloc);

/// Incremental decoder. Rows may be added in any order between calls to
/// try_decode(); LT peeling resumes from its previous state.
class Decoder {
public:
  explicit Decoder(const CodedTask &task, std::uint64_t resample_seed = 0x5eed);

  void add(const PartialResult &part);
  void add_row(std::int64_t encoded_row, double value);

  std::int64_t rows_received() const { return static_cast<std::int64_t>(rows_.size()); }
  /// Distinct source rows recovered so far by peeling (LT only).
  std::int64_t resolved_sources() const { return resolved_count_; }

  /// Returns y once enough rows have arrived, std::nullopt otherwise.
  /// Throws DecodeFailure when a dense system stays singular after resampling.
  std::optional<Vector<double>> try_decode();

private:
  void peel_row(std::size_t slot);
  void resolve_source(std::uint32_t source, double value);
  void refine();
  std::optional<Vector<double>> solve_dense();

  const CodedTask *task_;
  std::uint64_t resample_seed_;
  std::vector<std::int64_t> rows_; ///< arrival order
  std::vector<double> values_;
  std::vector<char> seen_;

  // LT peeling state.
  std::vector<char> resolved_;
  std::vector<double> source_values_;
  std::int64_t resolved_count_ = 0;
  std::vector<double> residual_;
  std::vector<std::uint32_t> unresolved_;
  std::vector<std::int64_t> unresolved_sum_;
  std::vector<std::vector<std::uint32_t>> waiting_; ///< source -> received slots
  std::vector<std::size_t> ripple_;
  /// (source, slot) in the order peeling resolved them.
  std::vector<std::pair<std::uint32_t, std::uint32_t>> schedule_;
  bool refined_ = false;
};

/// One-shot decode. Returns std::nullopt when too few rows arrived or LT
/// peeling stalls.
std::optional<Vector<double>> decode(const CodedTask &task, std::span<const PartialResult> parts);

/// Writes task.json plus coefficients.bin (dense) or neighbors.bin (LT).
void save_task(const std::filesystem::path &dir, const CodedTask &task);
CodedTask load_task(const std::filesystem::path &dir);

} // namespace bpcc
