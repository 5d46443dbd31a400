#pragma once

// Matrix block files: a 16-byte header (8-byte magic "BPCCMTX\0", u32 rows,
// u32 cols) followed by rows*cols little-endian IEEE-754 doubles, row-major.

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <stdexcept>

namespace bpcc {

inline constexpr std::array<char, 8> kMatrixMagic = {'B', 'P', 'C', 'C', 'M', 'T', 'X', '\0'};
inline constexpr std::size_t kMatrixHeaderBytes = 16;

class IoError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

using RowMajorMatrixXd = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

void write_matrix(const std::filesystem::path &path, const Eigen::Ref<const RowMajorMatrixXd> &m);
RowMajorMatrixXd read_matrix(const std::filesystem::path &path);

/// Random-access writer for a preallocated matrix file.
class MatrixFileWriter {
public:
  MatrixFileWriter(const std::filesystem::path &path, std::uint32_t rows, std::uint32_t cols);

  /// Writes values into row `row` starting at column `col`.
  void write(std::uint32_t row, std::uint32_t col, std::span<const double> values);
  void close();

  std::uint32_t rows() const { return rows_; }
  std::uint32_t cols() const { return cols_; }

private:
  std::filesystem::path path_;
  std::ofstream out_;
  std::uint32_t rows_;
  std::uint32_t cols_;
};

class MatrixFileReader {
public:
  explicit MatrixFileReader(const std::filesystem::path &path);

  std::uint32_t rows() const { return rows_; }
  std::uint32_t cols() const { return cols_; }
  RowMajorMatrixXd read_rows(std::uint32_t start, std::uint32_t count);

private:
  std::filesystem::path path_;
  std::ifstream in_;
  std::uint32_t rows_ = 0;
  std::uint32_t cols_ = 0;
};

} // namespace bpcc
