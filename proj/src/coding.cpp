#include "bpcc/coding.hpp"
#include "bpcc/matrix_io.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>

namespace bpcc {

std::string_view to_string(Codec codec) { return codec == Codec::dense ? "dense" : "lt"; }

Codec codec_from_string(std::string_view name) {
  if (name == "dense")
    return Codec::dense;
  if (name == "lt")
    return Codec::lt;
  throw std::invalid_argument("unknown codec '" + std::string(name) + "'");
}

std::int64_t lt_threshold(std::int64_t r, double epsilon) {
  const double x = static_cast<double>(r) * (1.0 + epsilon);
  const double nearest = std::round(x);
  if (std::abs(x - nearest) <= 1e-9 * std::max(1.0, x))
    return static_cast<std::int64_t>(nearest);
  return static_cast<std::int64_t>(std::ceil(x));
}

std::int64_t CodedTask::recovery_threshold() const {
  return codec == Codec::dense ? r : lt_threshold(r, epsilon);
}

void CodedTask::validate() const {
  if (r < 1 || q < 1)
    throw std::invalid_argument("coded task needs r >= 1 and q >= 1");
  if (codec == Codec::dense) {
    if (coefficients.rows() != q || coefficients.cols() != r)
      throw std::invalid_argument("dense coefficient matrix must be q x r");
  } else {
    if (static_cast<std::int64_t>(neighbors.size()) != q)
      throw std::invalid_argument("LT task needs one neighbor set per encoded row");
    for (const auto &set : neighbors) {
      if (set.empty())
        throw std::invalid_argument("LT neighbor set is empty");
      for (auto j : set)
        if (j >= static_cast<std::uint64_t>(r))
          throw std::invalid_argument("LT neighbor index out of range");
    }
  }
  std::int64_t next = 0;
  for (const auto &w : worker_ranges) {
    if (w.row_start != next || w.row_count < 1)
      throw std::invalid_argument("worker ranges must partition [0, q)");
    if (w.batch_offsets.size() < 2 || w.batch_offsets.front() != 0 ||
        w.batch_offsets.back() != w.row_count ||
        !std::is_sorted(w.batch_offsets.begin(), w.batch_offsets.end()))
      throw std::invalid_argument("batch boundaries must cover the worker slice");
    next += w.row_count;
  }
  if (!worker_ranges.empty() && next != q)
    throw std::invalid_argument("worker ranges must partition [0, q)");
}

namespace {

double standard_normal(SplitMix64 &gen) {
  // Box-Muller; one variate per call keeps the stream position simple.
  const double u1 = 1.0 - gen.uniform();
  const double u2 = gen.uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

} // namespace

Matrix<double> dense_coefficients(std::int64_t q, std::int64_t r, SplitMix64 &gen,
                                  DenseLayout layout) {
  if (q < r)
    throw InsufficientRedundancy("encoded rows q=" + std::to_string(q) +
                                 " is fewer than source rows r=" + std::to_string(r));
  Matrix<double> h(q, r);
  std::int64_t first = 0;
  if (layout == DenseLayout::systematic) {
    h.topRows(r).setIdentity();
    first = r;
  }
  // Row-major draw order so the same seed gives the same rows regardless of q.
  for (std::int64_t i = first; i < q; ++i)
    for (std::int64_t j = 0; j < r; ++j)
      h(i, j) = standard_normal(gen);
  return h;
}

std::pair<CodedTask, Matrix<double>> encode_with_coefficients(const Matrix<double> &a,
                                                              Matrix<double> h) {
  if (h.cols() != a.rows())
    throw std::invalid_argument("coefficient matrix columns must equal rows of A");
  if (h.rows() < h.cols())
    throw InsufficientRedundancy("encoded rows fewer than source rows");
  CodedTask task;
  task.codec = Codec::dense;
  task.r = a.rows();
  task.q = h.rows();
  Matrix<double> encoded = h * a;
  task.coefficients = std::move(h);
  return {std::move(task), std::move(encoded)};
}

std::pair<CodedTask, Matrix<double>> encode_dense(const Matrix<double> &a, std::int64_t q,
                                                  SplitMix64 &gen, DenseLayout layout) {
  return encode_with_coefficients(a, dense_coefficients(q, a.rows(), gen, layout));
}

std::pair<CodedTask, Matrix<double>> encode_identity(const Matrix<double> &a) {
  CodedTask task;
  task.codec = Codec::dense;
  task.r = task.q = a.rows();
  task.coefficients = Matrix<double>::Identity(a.rows(), a.rows());
  return {std::move(task), a};
}

std::vector<double> robust_soliton_cdf(std::int64_t r, const RobustSoliton &params) {
  if (r < 1)
    throw std::invalid_argument("robust soliton needs r >= 1");
  const auto k = static_cast<double>(r);
  std::vector<double> mass(static_cast<std::size_t>(r), 0.0);
  mass[0] = 1.0 / k;
  for (std::int64_t d = 2; d <= r; ++d)
    mass[d - 1] = 1.0 / (double(d) * double(d - 1));

  const double big_r = params.c * std::log(k / params.delta) * std::sqrt(k);
  if (big_r > 0.0) {
    const auto pivot = std::clamp<std::int64_t>(static_cast<std::int64_t>(std::floor(k / big_r)),
                                                1, r);
    for (std::int64_t d = 1; d < pivot; ++d)
      mass[d - 1] += big_r / (double(d) * k);
    mass[pivot - 1] += std::max(0.0, big_r * std::log(big_r / params.delta) / k);
  }
  std::partial_sum(mass.begin(), mass.end(), mass.begin());
  const double total = mass.back();
  for (double &m : mass)
    m /= total;
  mass.back() = 1.0;
  return mass;
}

std::vector<std::vector<std::uint32_t>> lt_neighbors(std::int64_t r, std::int64_t q,
                                                     SplitMix64 &gen,
                                                     const RobustSoliton &params) {
  const auto cdf = robust_soliton_cdf(r, params);
  std::vector<std::vector<std::uint32_t>> sets(static_cast<std::size_t>(q));
  for (auto &set : sets) {
    const double u = gen.uniform();
    const auto degree =
        static_cast<std::size_t>(std::upper_bound(cdf.begin(), cdf.end(), u) - cdf.begin()) + 1;
    const auto d = std::min<std::size_t>(degree, static_cast<std::size_t>(r));
    set.reserve(d);
    while (set.size() < d) {
      const auto j = static_cast<std::uint32_t>(gen() % static_cast<std::uint64_t>(r));
      auto pos = std::lower_bound(set.begin(), set.end(), j);
      if (pos == set.end() || *pos != j)
        set.insert(pos, j);
    }
  }
  return sets;
}

std::pair<CodedTask, Matrix<double>>
encode_lt_with_neighbors(const Matrix<double> &a, std::vector<std::vector<std::uint32_t>> neighbors,
                         double epsilon) {
  CodedTask task;
  task.codec = Codec::lt;
  task.r = a.rows();
  task.q = static_cast<std::int64_t>(neighbors.size());
  task.epsilon = epsilon;
  task.neighbors = std::move(neighbors);
  task.validate();
  Matrix<double> encoded = Matrix<double>::Zero(task.q, a.cols());
  for (std::int64_t i = 0; i < task.q; ++i)
    for (auto j : task.neighbors[i])
      encoded.row(i) += a.row(j);
  return {std::move(task), std::move(encoded)};
}

std::pair<CodedTask, Matrix<double>> encode_lt(const Matrix<double> &a, std::int64_t q_cap,
                                               double epsilon, SplitMix64 &gen,
                                               const RobustSoliton &params) {
  if (epsilon < 0.0)
    throw std::invalid_argument("LT overhead epsilon must be nonnegative");
  const auto threshold = lt_threshold(a.rows(), epsilon);
  if (q_cap < threshold)
    throw InsufficientRedundancy("LT code needs at least " + std::to_string(threshold) +
                                 " encoded rows, got " + std::to_string(q_cap));
  return encode_lt_with_neighbors(a, lt_neighbors(a.rows(), q_cap, gen, params), epsilon);
}

void assign_worker_ranges(CodedTask &task, const Allocation &alloc) {
  if (alloc.total_load() != task.q)
    throw std::invalid_argument("allocation total " + std::to_string(alloc.total_load()) +
                                " does not match encoded rows " + std::to_string(task.q));
  task.worker_ranges.clear();
  std::int64_t start = 0;
  for (std::size_t i = 0; i < alloc.size(); ++i) {
    WorkerRange w;
    w.row_start = start;
    w.row_count = alloc.loads[i];
    w.batch_offsets.push_back(0);
    for (auto rows : batch_row_counts(alloc.loads[i], alloc.batches[i]))
      w.batch_offsets.push_back(w.batch_offsets.back() + rows);
    start += w.row_count;
    task.worker_ranges.push_back(std::move(w));
  }
}

Decoder::Decoder(const CodedTask &task, std::uint64_t resample_seed)
    : task_(&task), resample_seed_(resample_seed), seen_(static_cast<std::size_t>(task.q), 0) {
  if (task.codec == Codec::lt) {
    resolved_.assign(static_cast<std::size_t>(task.r), 0);
    source_values_.assign(static_cast<std::size_t>(task.r), 0.0);
    waiting_.resize(static_cast<std::size_t>(task.r));
  }
}

void Decoder::add(const PartialResult &part) {
  for (Eigen::Index k = 0; k < part.values.size(); ++k)
    add_row(part.row_start + k, part.values[k]);
}

void Decoder::add_row(std::int64_t encoded_row, double value) {
  if (encoded_row < 0 || encoded_row >= task_->q)
    throw std::out_of_range("encoded row " + std::to_string(encoded_row) + " outside [0, q)");
  if (seen_[encoded_row])
    return;
  seen_[encoded_row] = 1;
  rows_.push_back(encoded_row);
  values_.push_back(value);
  if (task_->codec != Codec::lt)
    return;

  const std::size_t slot = residual_.size();
  residual_.push_back(value);
  unresolved_.push_back(0);
  unresolved_sum_.push_back(0);
  for (auto j : task_->neighbors[encoded_row]) {
    if (resolved_[j]) {
      residual_[slot] -= source_values_[j];
    } else {
      ++unresolved_[slot];
      unresolved_sum_[slot] += j;
      waiting_[j].push_back(static_cast<std::uint32_t>(slot));
    }
  }
  if (unresolved_[slot] == 1)
    ripple_.push_back(slot);
  while (!ripple_.empty()) {
    const auto next = ripple_.back();
    ripple_.pop_back();
    peel_row(next);
  }
}

void Decoder::peel_row(std::size_t slot) {
  if (unresolved_[slot] != 1)
    return;
  const auto source = static_cast<std::uint32_t>(unresolved_sum_[slot]);
  schedule_.emplace_back(source, static_cast<std::uint32_t>(slot));
  resolve_source(source, residual_[slot]);
}

// Peeling is a triangular solve whose rounding error compounds along long
// chains. Two passes of iterative refinement through the same schedule,
// with residuals accumulated in long double, bring it back to working
// precision.
void Decoder::refine() {
  const auto &nb = task_->neighbors;
  std::vector<double> corr(source_values_.size());
  for (int pass = 0; pass < 2; ++pass) {
    for (const auto &[source, slot] : schedule_) {
      long double res = values_[slot];
      long double known = 0.0L;
      for (auto t : nb[rows_[slot]]) {
        res -= source_values_[t];
        if (t != source)
          known += corr[t];
      }
      corr[source] = static_cast<double>(res - known);
    }
    for (std::size_t s = 0; s < corr.size(); ++s)
      source_values_[s] += corr[s];
  }
}

void Decoder::resolve_source(std::uint32_t source, double value) {
  resolved_[source] = 1;
  source_values_[source] = value;
  ++resolved_count_;
  for (auto slot : waiting_[source]) {
    residual_[slot] -= value;
    --unresolved_[slot];
    unresolved_sum_[slot] -= source;
    if (unresolved_[slot] == 1)
      ripple_.push_back(slot);
  }
  waiting_[source].clear();
  waiting_[source].shrink_to_fit();
}

std::optional<Vector<double>> Decoder::try_decode() {
  if (rows_received() < task_->recovery_threshold())
    return std::nullopt;
  if (task_->codec == Codec::lt) {
    if (resolved_count_ < task_->r)
      return std::nullopt;
    if (!refined_) {
      refine();
      refined_ = true;
    }
    return Eigen::Map<const Vector<double>>(source_values_.data(), task_->r);
  }
  return solve_dense();
}

std::optional<Vector<double>> Decoder::solve_dense() {
  const auto r = task_->r;
  std::vector<std::size_t> pick(static_cast<std::size_t>(r));
  std::iota(pick.begin(), pick.end(), std::size_t{0});
  SplitMix64 gen(resample_seed_);
  constexpr int kResamples = 3;
  for (int attempt = 0; attempt <= kResamples; ++attempt) {
    if (attempt > 0) {
      if (rows_received() == r)
        break;
      // Random r-subset of everything received (partial Fisher-Yates).
      std::vector<std::size_t> all(rows_.size());
      std::iota(all.begin(), all.end(), std::size_t{0});
      for (std::int64_t i = 0; i < r; ++i) {
        const auto j = i + static_cast<std::int64_t>(gen() % (all.size() - i));
        std::swap(all[i], all[j]);
      }
      pick.assign(all.begin(), all.begin() + r);
    }
    Matrix<double> h(r, r);
    Vector<double> rhs(r);
    for (std::int64_t i = 0; i < r; ++i) {
      h.row(i) = task_->coefficients.row(rows_[pick[i]]);
      rhs[i] = values_[pick[i]];
    }
    Eigen::PartialPivLU<Matrix<double>> lu(h);
    const double rcond = lu.rcond();
    if (std::isfinite(rcond) && rcond > 1e-13) {
      Vector<double> y = lu.solve(rhs);
      if (y.allFinite())
        return y;
    }
  }
  throw DecodeFailure("dense decode: received coefficient submatrix is singular");
}

std::optional<Vector<double>> decode(const CodedTask &task, std::span<const PartialResult> parts) {
  Decoder decoder(task);
  for (const auto &part : parts)
    decoder.add(part);
  return decoder.try_decode();
}

namespace {

constexpr std::array<char, 8> kNeighborMagic = {'B', 'P', 'C', 'C', 'L', 'T', 'N', '\0'};

nlohmann::json ranges_to_json(const std::vector<WorkerRange> &ranges) {
  auto out = nlohmann::json::array();
  for (const auto &w : ranges)
    out.push_back({{"row_start", w.row_start},
                   {"row_count", w.row_count},
                   {"batch_offsets", w.batch_offsets}});
  return out;
}

} // namespace

void save_task(const std::filesystem::path &dir, const CodedTask &task) {
  std::filesystem::create_directories(dir);
  nlohmann::json meta = {{"codec", std::string(to_string(task.codec))},
                         {"r", task.r},
                         {"q", task.q},
                         {"epsilon", task.epsilon},
                         {"recovery_threshold", task.recovery_threshold()},
                         {"worker_ranges", ranges_to_json(task.worker_ranges)}};
  std::ofstream(dir / "task.json") << meta.dump(2) << '\n';
  if (task.codec == Codec::dense) {
    write_matrix(dir / "coefficients.bin", task.coefficients);
    return;
  }
  std::ofstream out(dir / "neighbors.bin", std::ios::binary | std::ios::trunc);
  if (!out)
    throw IoError("cannot write " + (dir / "neighbors.bin").string());
  out.write(kNeighborMagic.data(), kNeighborMagic.size());
  const auto q = static_cast<std::uint64_t>(task.q);
  out.write(reinterpret_cast<const char *>(&q), sizeof q);
  for (const auto &set : task.neighbors) {
    const auto d = static_cast<std::uint32_t>(set.size());
    out.write(reinterpret_cast<const char *>(&d), sizeof d);
    out.write(reinterpret_cast<const char *>(set.data()),
              static_cast<std::streamsize>(set.size() * sizeof(std::uint32_t)));
  }
  if (!out)
    throw IoError("write failed for " + (dir / "neighbors.bin").string());
}

CodedTask load_task(const std::filesystem::path &dir) {
  std::ifstream in(dir / "task.json");
  if (!in)
    throw IoError("cannot open " + (dir / "task.json").string());
  const auto meta = nlohmann::json::parse(in);
  CodedTask task;
  task.codec = codec_from_string(meta.at("codec").get<std::string>());
  task.r = meta.at("r").get<std::int64_t>();
  task.q = meta.at("q").get<std::int64_t>();
  task.epsilon = meta.at("epsilon").get<double>();
  for (const auto &w : meta.at("worker_ranges"))
    task.worker_ranges.push_back({w.at("row_start").get<std::int64_t>(),
                                  w.at("row_count").get<std::int64_t>(),
                                  w.at("batch_offsets").get<std::vector<std::int64_t>>()});
  if (task.codec == Codec::dense) {
    task.coefficients = read_matrix(dir / "coefficients.bin");
  } else {
    std::ifstream nb(dir / "neighbors.bin", std::ios::binary);
    std::array<char, 8> magic{};
    std::uint64_t q = 0;
    if (!nb.read(magic.data(), magic.size()) || magic != kNeighborMagic ||
        !nb.read(reinterpret_cast<char *>(&q), sizeof q) ||
        q != static_cast<std::uint64_t>(task.q))
      throw IoError("bad neighbor sidecar in " + dir.string());
    task.neighbors.resize(q);
    for (auto &set : task.neighbors) {
      std::uint32_t d = 0;
      if (!nb.read(reinterpret_cast<char *>(&d), sizeof d) || d > task.r)
        throw IoError("truncated neighbor sidecar in " + dir.string());
      set.resize(d);
      nb.read(reinterpret_cast<char *>(set.data()), static_cast<std::streamsize>(d * 4));
    }
    if (!nb)
      throw IoError("truncated neighbor sidecar in " + dir.string());
  }
  task.validate();
  return task;
}

} // namespace bpcc
