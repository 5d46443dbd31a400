#include "bpcc/matrix_io.hpp"

#include <algorithm>
#include <bit>
#include <cstring>

namespace bpcc {

static_assert(std::endian::native == std::endian::little,
              "matrix files are little-endian; big-endian hosts are unsupported");

namespace {

void put_u32(char *dst, std::uint32_t v) { std::memcpy(dst, &v, sizeof v); }

std::uint32_t get_u32(const char *src) {
  std::uint32_t v;
  std::memcpy(&v, src, sizeof v);
  return v;
}

std::array<char, kMatrixHeaderBytes> make_header(std::uint32_t rows, std::uint32_t cols) {
  std::array<char, kMatrixHeaderBytes> h{};
  std::copy(kMatrixMagic.begin(), kMatrixMagic.end(), h.begin());
  put_u32(h.data() + 8, rows);
  put_u32(h.data() + 12, cols);
  return h;
}

std::pair<std::uint32_t, std::uint32_t> read_header(std::ifstream &in,
                                                    const std::filesystem::path &path) {
  std::array<char, kMatrixHeaderBytes> h{};
  if (!in.read(h.data(), h.size()))
    throw IoError("truncated matrix header in " + path.string());
  if (!std::equal(kMatrixMagic.begin(), kMatrixMagic.end(), h.begin()))
    throw IoError("bad matrix magic in " + path.string());
  return {get_u32(h.data() + 8), get_u32(h.data() + 12)};
}

std::uint32_t checked_dim(Eigen::Index n) {
  if (n < 0 || n > static_cast<Eigen::Index>(UINT32_MAX))
    throw IoError("matrix dimension does not fit the file header");
  return static_cast<std::uint32_t>(n);
}

} // namespace

void write_matrix(const std::filesystem::path &path, const Eigen::Ref<const RowMajorMatrixXd> &m) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out)
    throw IoError("cannot open " + path.string() + " for writing");
  const auto header = make_header(checked_dim(m.rows()), checked_dim(m.cols()));
  out.write(header.data(), header.size());
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    out.write(reinterpret_cast<const char *>(m.row(i).data()),
              static_cast<std::streamsize>(m.cols() * sizeof(double)));
  if (!out)
    throw IoError("write failed for " + path.string());
}

RowMajorMatrixXd read_matrix(const std::filesystem::path &path) {
  MatrixFileReader reader(path);
  return reader.read_rows(0, reader.rows());
}

MatrixFileWriter::MatrixFileWriter(const std::filesystem::path &path, std::uint32_t rows,
                                   std::uint32_t cols)
    : path_(path), rows_(rows), cols_(cols) {
  out_.open(path, std::ios::binary | std::ios::trunc);
  if (!out_)
    throw IoError("cannot open " + path.string() + " for writing");
  const auto header = make_header(rows, cols);
  out_.write(header.data(), header.size());
  out_.close();
  std::filesystem::resize_file(path, kMatrixHeaderBytes + std::uint64_t(rows) * cols * 8);
  out_.open(path, std::ios::binary | std::ios::in | std::ios::out);
  if (!out_)
    throw IoError("cannot reopen " + path.string());
}

void MatrixFileWriter::write(std::uint32_t row, std::uint32_t col, std::span<const double> values) {
  if (row >= rows_ || col + values.size() > cols_)
    throw IoError("write outside matrix bounds in " + path_.string());
  out_.seekp(static_cast<std::streamoff>(kMatrixHeaderBytes +
                                         (std::uint64_t(row) * cols_ + col) * sizeof(double)));
  out_.write(reinterpret_cast<const char *>(values.data()),
             static_cast<std::streamsize>(values.size() * sizeof(double)));
  if (!out_)
    throw IoError("write failed for " + path_.string());
}

void MatrixFileWriter::close() {
  out_.close();
  if (out_.fail())
    throw IoError("close failed for " + path_.string());
}

MatrixFileReader::MatrixFileReader(const std::filesystem::path &path)
    : path_(path), in_(path, std::ios::binary) {
  if (!in_)
    throw IoError("cannot open " + path.string());
  std::tie(rows_, cols_) = read_header(in_, path);
  const auto expected = kMatrixHeaderBytes + std::uint64_t(rows_) * cols_ * sizeof(double);
  if (std::filesystem::file_size(path) != expected)
    throw IoError("matrix file " + path.string() + " has the wrong size for its header");
}

RowMajorMatrixXd MatrixFileReader::read_rows(std::uint32_t start, std::uint32_t count) {
  if (std::uint64_t(start) + count > rows_)
    throw IoError("row range outside matrix in " + path_.string());
  RowMajorMatrixXd m(count, cols_);
  in_.seekg(static_cast<std::streamoff>(kMatrixHeaderBytes +
                                        std::uint64_t(start) * cols_ * sizeof(double)));
  in_.read(reinterpret_cast<char *>(m.data()),
           static_cast<std::streamsize>(std::uint64_t(count) * cols_ * sizeof(double)));
  if (!in_)
    throw IoError("short read from " + path_.string());
  return m;
}

} // namespace bpcc
