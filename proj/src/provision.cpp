#include "bpcc/matrix_io.hpp"
#include "bpcc/net.hpp"
#include "bpcc/rng.hpp"

#include "json.hpp"

#include <fstream>

namespace bpcc::net {

namespace {

constexpr std::uint64_t kCodeStream = 0xC0DEC0DEULL;

void write_text(const fs::path &path, const std::string &text) {
  std::ofstream out(path, std::ios::trunc);
  out << text << '\n';
  if (!out)
    throw IoError("cannot write " + path.string());
}

CodedTask build_task(const ProvisionConfig &config, const Allocation &alloc) {
  CodedTask task;
  task.r = config.r;
  task.q = alloc.total_load();
  if (!is_coded(config.scheme)) {
    task.codec = Codec::dense;
    task.coefficients = Matrix<double>::Identity(config.r, config.r);
  } else if (config.codec == Codec::dense) {
    if (task.q < config.r)
      throw InsufficientRedundancy("allocation holds " + std::to_string(task.q) +
                                   " rows, fewer than r = " + std::to_string(config.r));
    SplitMix64 gen(derive_seed(config.seed, kCodeStream));
    task.codec = Codec::dense;
    task.coefficients = dense_coefficients(task.q, config.r, gen, config.layout);
  } else {
    task.codec = Codec::lt;
    task.epsilon = config.epsilon;
    const auto need = lt_threshold(config.r, config.epsilon);
    if (task.q < need)
      throw InsufficientRedundancy("allocation holds " + std::to_string(task.q) +
                                   " rows, LT decoding needs " + std::to_string(need));
    SplitMix64 gen(derive_seed(config.seed, kCodeStream));
    task.neighbors = lt_neighbors(config.r, task.q, gen);
  }
  assign_worker_ranges(task, alloc);
  task.validate();
  return task;
}

// Encoded rows for columns of one block of A.
Matrix<double> encode_block(const CodedTask &task, bool systematic, const Matrix<double> &a) {
  const auto r = task.r;
  if (task.codec == Codec::lt) {
    Matrix<double> out = Matrix<double>::Zero(task.q, a.cols());
    for (std::int64_t i = 0; i < task.q; ++i)
      for (auto s : task.neighbors[i])
        out.row(i) += a.row(s);
    return out;
  }
  if (task.q == r && systematic)
    return a;
  if (!systematic)
    return task.coefficients * a;
  Matrix<double> out(task.q, a.cols());
  out.topRows(r) = a;
  out.bottomRows(task.q - r).noalias() = task.coefficients.bottomRows(task.q - r) * a;
  return out;
}

bool has_identity_top(const CodedTask &task) {
  if (task.codec != Codec::dense || task.q < task.r)
    return false;
  return task.coefficients.topRows(task.r).isIdentity(0.0);
}

} // namespace

void write_worker_meta(const fs::path &path, const WorkerMeta &meta) {
  const nlohmann::json j = {{"worker_id", meta.worker_id},
                            {"codec", std::string(to_string(meta.codec))},
                            {"row_start", meta.row_start},
                            {"row_count", meta.row_count},
                            {"batch_offsets", meta.batch_offsets},
                            {"m", meta.m},
                            {"mu", meta.mu},
                            {"alpha", meta.alpha}};
  write_text(path, j.dump(2));
}

WorkerMeta read_worker_meta(const fs::path &path) {
  std::ifstream in(path);
  if (!in)
    throw IoError("cannot open " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception &e) {
    throw IoError(path.string() + ": " + e.what());
  }
  WorkerMeta meta;
  meta.worker_id = j.at("worker_id").get<std::uint32_t>();
  meta.codec = codec_from_string(j.at("codec").get<std::string>());
  meta.row_start = j.at("row_start").get<std::int64_t>();
  meta.row_count = j.at("row_count").get<std::int64_t>();
  meta.batch_offsets = j.at("batch_offsets").get<std::vector<std::int64_t>>();
  meta.m = j.at("m").get<std::int64_t>();
  meta.mu = j.value("mu", 1.0);
  meta.alpha = j.value("alpha", 1.0);
  if (meta.batch_offsets.size() < 2 || meta.batch_offsets.front() != 0 ||
      meta.batch_offsets.back() != meta.row_count)
    throw IoError(path.string() + ": batch offsets do not cover the slice");
  return meta;
}

Matrix<double> synthetic_block(std::uint64_t seed, std::int64_t r, std::int64_t m,
                               std::int64_t col, std::int64_t cols) {
  if (col < 0 || cols < 0 || col + cols > m)
    throw std::out_of_range("column block outside the matrix");
  std::vector<std::uint64_t> row_keys(static_cast<std::size_t>(r));
  for (std::int64_t i = 0; i < r; ++i)
    row_keys[i] = derive_seed(seed, static_cast<std::uint64_t>(i));
  Matrix<double> out(r, cols);
  for (std::int64_t j = 0; j < cols; ++j) {
    const auto cj = static_cast<std::uint64_t>(col + j) * 0x9E3779B97F4A7C15ULL;
    for (std::int64_t i = 0; i < r; ++i)
      out(i, j) = 2.0 * (static_cast<double>(mix64(row_keys[i] ^ cj) >> 11) * 0x1.0p-53) - 1.0;
  }
  return out;
}

Vector<double> synthetic_product(std::uint64_t seed, std::int64_t r, std::int64_t m,
                                 std::span<const double> x) {
  if (static_cast<std::int64_t>(x.size()) != m)
    throw std::invalid_argument("x has " + std::to_string(x.size()) + " entries, expected " +
                                std::to_string(m));
  Vector<double> y = Vector<double>::Zero(r);
  constexpr std::int64_t w = 2048;
  for (std::int64_t col = 0; col < m; col += w) {
    const auto cols = std::min(w, m - col);
    const Eigen::Map<const Vector<double>> xs(x.data() + col, cols);
    y.noalias() += synthetic_block(seed, r, m, col, cols) * xs;
  }
  return y;
}

Provisioned provision(const fs::path &root, const ProvisionConfig &config,
                      const ColumnBlockSource &source, const std::string &source_json) {
  if (config.r <= 0 || config.m <= 0)
    throw std::invalid_argument("r and m must be positive");
  if (config.block_cols <= 0)
    throw std::invalid_argument("block_cols must be positive");
  if (config.m > UINT32_MAX || config.r > UINT32_MAX)
    throw std::invalid_argument("matrix dimensions exceed the slice format");

  Provisioned out;
  out.allocation = allocate(config.scheme, config.r, config.profiles);
  out.task = build_task(config, out.allocation);
  const auto &task = out.task;
  const bool systematic = has_identity_top(task);

  out.master_dir = root / "master";
  try {
    fs::create_directories(out.master_dir);
    save_task(out.master_dir, task);
    write_text(out.master_dir / "allocation.json", allocation_to_json(out.allocation));
    auto src = nlohmann::json::parse(source_json);
    src["r"] = config.r;
    src["m"] = config.m;
    write_text(out.master_dir / "source.json", src.dump(2));
  } catch (const fs::filesystem_error &e) {
    throw IoError("master: " + std::string(e.what()));
  } catch (const IoError &e) {
    throw IoError("master: " + std::string(e.what()));
  }

  std::vector<MatrixFileWriter> writers;
  writers.reserve(task.worker_ranges.size());
  for (std::size_t i = 0; i < task.worker_ranges.size(); ++i) {
    const auto &range = task.worker_ranges[i];
    const auto dir = root / ("worker_" + std::to_string(i));
    try {
      fs::create_directories(dir);
      WorkerMeta meta{static_cast<std::uint32_t>(i), task.codec,       range.row_start,
                      range.row_count,               range.batch_offsets, config.m,
                      config.profiles[i].mu,         config.profiles[i].alpha};
      write_worker_meta(dir / "meta.json", meta);
      writers.emplace_back(dir / "slice.bin", static_cast<std::uint32_t>(range.row_count),
                           static_cast<std::uint32_t>(config.m));
    } catch (const std::exception &e) {
      throw IoError("worker " + std::to_string(i) + ": " + e.what());
    }
    out.worker_dirs.push_back(dir);
  }

  for (std::int64_t col = 0; col < config.m; col += config.block_cols) {
    const auto cols = std::min(config.block_cols, config.m - col);
    const Matrix<double> a = source(col, cols);
    if (a.rows() != config.r || a.cols() != cols)
      throw std::invalid_argument("matrix source returned a block of the wrong shape");
    const RowMajorMatrix<double> coded = encode_block(task, systematic, a);
    for (std::size_t i = 0; i < writers.size(); ++i) {
      const auto &range = task.worker_ranges[i];
      try {
        for (std::int64_t k = 0; k < range.row_count; ++k)
          writers[i].write(static_cast<std::uint32_t>(k), static_cast<std::uint32_t>(col),
                           {coded.row(range.row_start + k).data(), static_cast<std::size_t>(cols)});
      } catch (const std::exception &e) {
        throw IoError("worker " + std::to_string(i) + ": " + e.what());
      }
    }
  }
  for (std::size_t i = 0; i < writers.size(); ++i) {
    try {
      writers[i].close();
    } catch (const std::exception &e) {
      throw IoError("worker " + std::to_string(i) + ": " + e.what());
    }
  }
  return out;
}

Provisioned provision(const fs::path &root, const ProvisionConfig &config,
                      const Matrix<double> &a) {
  if (a.rows() != config.r || a.cols() != config.m)
    throw std::invalid_argument("matrix shape does not match r x m");
  return provision(
      root, config,
      [&a](std::int64_t col, std::int64_t cols) -> Matrix<double> { return a.middleCols(col, cols); },
      R"({"source": "inline"})");
}

Provisioned provision_synthetic(const fs::path &root, const ProvisionConfig &config) {
  const nlohmann::json src = {{"source", "synthetic"}, {"seed", config.seed}};
  return provision(
      root, config,
      [&config](std::int64_t col, std::int64_t cols) {
        return synthetic_block(config.seed, config.r, config.m, col, cols);
      },
      src.dump(2));
}

} // namespace bpcc::net
