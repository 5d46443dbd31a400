#include "bpcc/cli.hpp"
#include "bpcc/matrix_io.hpp"

#include "json.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <initializer_list>
#include <map>
#include <sstream>

namespace bpcc::cli {

namespace {

using nlohmann::json;

void only_keys(const json &obj, std::initializer_list<std::string_view> allowed,
               const std::string &where) {
  if (!obj.is_object())
    throw SchemaError(where + " must be an object");
  for (const auto &[key, _] : obj.items()) {
    bool ok = false;
    for (auto a : allowed)
      ok = ok || key == a;
    if (!ok)
      throw SchemaError("unknown key '" + key + "' in " + where);
  }
}

double number(const json &j, const std::string &what) {
  if (!j.is_number())
    throw SchemaError(what + " must be a number");
  const double v = j.get<double>();
  if (!std::isfinite(v))
    throw SchemaError(what + " must be finite");
  return v;
}

std::int64_t integer(const json &j, const std::string &what) {
  if (!j.is_number_integer())
    throw SchemaError(what + " must be an integer");
  return j.get<std::int64_t>();
}

std::string read_file(const std::filesystem::path &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

} // namespace

std::vector<WorkerProfile> ScenarioFile::profiles() const {
  bool any_auto = false;
  for (bool a : auto_batches)
    any_auto = any_auto || a;
  if (!any_auto)
    return workers;
  const auto limit = with_limit_batches(r, workers);
  auto out = workers;
  for (std::size_t i = 0; i < out.size(); ++i)
    if (auto_batches[i])
      out[i].p = limit[i].p;
  return out;
}

Scenario ScenarioFile::scenario() const {
  Scenario s;
  s.r = r;
  s.profiles = profiles();
  s.scheme = scheme;
  s.straggler = straggler;
  s.trials = trials;
  s.seed = seed;
  if (codec == Codec::lt)
    s.recovery_rows = lt_threshold(r, epsilon);
  return s;
}

ScenarioFile parse_scenario(std::string_view json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error &e) {
    throw SchemaError(std::string("scenario is not valid JSON: ") + e.what());
  }
  only_keys(j, {"r", "m", "scheme", "codec", "epsilon", "workers", "straggler", "trials", "seed"},
            "scenario");
  ScenarioFile s;
  if (!j.contains("r"))
    throw SchemaError("scenario needs 'r'");
  s.r = integer(j["r"], "r");
  if (s.r <= 0)
    throw SchemaError("r must be positive");
  if (j.contains("m")) {
    s.m = integer(j["m"], "m");
    if (s.m <= 0)
      throw SchemaError("m must be positive");
  }
  try {
    if (j.contains("scheme"))
      s.scheme = scheme_from_string(j["scheme"].get<std::string>());
    if (j.contains("codec"))
      s.codec = codec_from_string(j["codec"].get<std::string>());
  } catch (const std::exception &e) {
    throw SchemaError(e.what());
  }
  if (j.contains("epsilon")) {
    s.epsilon = number(j["epsilon"], "epsilon");
    if (s.epsilon < 0.0)
      throw SchemaError("epsilon must be nonnegative");
  }
  if (!j.contains("workers") || !j["workers"].is_array() || j["workers"].empty())
    throw SchemaError("scenario needs a nonempty 'workers' array");
  for (std::size_t i = 0; i < j["workers"].size(); ++i) {
    const auto &w = j["workers"][i];
    const auto where = "workers[" + std::to_string(i) + "]";
    only_keys(w, {"mu", "alpha", "p"}, where);
    if (!w.contains("mu") || !w.contains("alpha"))
      throw SchemaError(where + " needs 'mu' and 'alpha'");
    WorkerProfile prof{number(w["mu"], where + ".mu"), number(w["alpha"], where + ".alpha"), 1};
    bool is_auto = false;
    if (w.contains("p")) {
      if (w["p"].is_string()) {
        if (w["p"].get<std::string>() != "auto")
          throw SchemaError(where + ".p must be a positive integer or \"auto\"");
        is_auto = true;
      } else {
        const auto p = integer(w["p"], where + ".p");
        if (p < 1 || p > 1'000'000)
          throw SchemaError(where + ".p must be a positive integer or \"auto\"");
        prof.p = static_cast<int>(p);
      }
    }
    try {
      prof.validate();
    } catch (const std::invalid_argument &e) {
      throw SchemaError(where + ": " + e.what());
    }
    s.workers.push_back(prof);
    s.auto_batches.push_back(is_auto);
  }
  if (j.contains("straggler")) {
    const auto &st = j["straggler"];
    only_keys(st, {"fraction", "delay_factor"}, "straggler");
    const double fraction = st.contains("fraction") ? number(st["fraction"], "straggler.fraction") : 0.0;
    if (fraction < 0.0 || fraction > 1.0)
      throw SchemaError("straggler.fraction must lie in [0, 1]");
    s.straggler.fraction = fraction;
    s.straggler.kind = StragglerKind::finite;
    if (st.contains("delay_factor")) {
      const auto &d = st["delay_factor"];
      if (d.is_string()) {
        if (d.get<std::string>() != "inf")
          throw SchemaError("straggler.delay_factor must be a number >= 1 or \"inf\"");
        s.straggler.kind = StragglerKind::infinite;
      } else {
        s.straggler.delay_factor = number(d, "straggler.delay_factor");
        if (s.straggler.delay_factor < 1.0)
          throw SchemaError("straggler.delay_factor must be a number >= 1 or \"inf\"");
      }
    }
    if (fraction == 0.0)
      s.straggler.kind = StragglerKind::none;
  }
  if (j.contains("trials")) {
    s.trials = integer(j["trials"], "trials");
    if (s.trials < 1)
      throw SchemaError("trials must be >= 1");
  }
  if (j.contains("seed")) {
    if (!j["seed"].is_number_unsigned() && !(j["seed"].is_number_integer() && j["seed"].get<std::int64_t>() >= 0))
      throw SchemaError("seed must be a nonnegative integer");
    s.seed = j["seed"].get<std::uint64_t>();
  }
  return s;
}

ScenarioFile load_scenario(const std::filesystem::path &path) {
  auto s = parse_scenario(read_file(path));
  if (const char *seed = std::getenv("BPCC_SEED"); seed && *seed) {
    char *end = nullptr;
    const auto v = std::strtoull(seed, &end, 10);
    if (*end != '\0')
      throw SchemaError("BPCC_SEED must be a nonnegative integer");
    s.seed = v;
  }
  return s;
}

static std::vector<TimingSample> group_samples(const std::vector<std::pair<std::int64_t, double>> &rows) {
  std::map<std::int64_t, std::vector<double>> by_size;
  for (const auto &[size, t] : rows)
    by_size[size].push_back(t);
  std::vector<TimingSample> out;
  for (auto &[size, ts] : by_size)
    out.push_back({size, std::move(ts)});
  return out;
}

std::vector<TimingSample> parse_timing_csv(std::string_view text) {
  std::vector<std::pair<std::int64_t, double>> rows;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t line_no = 0;
  bool header_seen = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r')
      line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos)
      continue;
    if (!header_seen) {
      header_seen = true;
      std::string h = line;
      h.erase(std::remove_if(h.begin(), h.end(), [](unsigned char c) { return std::isspace(c); }),
              h.end());
      if (h != "task_size,duration_seconds")
        throw SchemaError("timing CSV must start with the header task_size,duration_seconds");
      continue;
    }
    const auto comma = line.find(',');
    if (comma == std::string::npos)
      throw SchemaError("line " + std::to_string(line_no) + ": expected two columns");
    try {
      std::size_t used = 0;
      const auto size_text = line.substr(0, comma);
      const auto t_text = line.substr(comma + 1);
      const auto size = std::stoll(size_text, &used);
      if (size_text.find_first_not_of(" \t", used) != std::string::npos)
        throw std::invalid_argument("size");
      const auto t = std::stod(t_text, &used);
      if (t_text.find_first_not_of(" \t", used) != std::string::npos)
        throw std::invalid_argument("time");
      if (size <= 0 || !(t >= 0.0) || !std::isfinite(t))
        throw std::invalid_argument("range");
      rows.emplace_back(size, t);
    } catch (const std::exception &) {
      throw SchemaError("line " + std::to_string(line_no) + ": expected a positive integer task "
                        "size and a nonnegative duration");
    }
  }
  if (!header_seen)
    throw SchemaError("timing CSV is empty");
  return group_samples(rows);
}

std::vector<TimingSample> parse_timing_json(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error &e) {
    throw SchemaError(std::string("timing samples are not valid JSON: ") + e.what());
  }
  if (!j.is_array())
    throw SchemaError("timing samples must be a JSON array");
  std::vector<std::pair<std::int64_t, double>> rows;
  for (std::size_t i = 0; i < j.size(); ++i) {
    const auto where = "sample[" + std::to_string(i) + "]";
    only_keys(j[i], {"task_size", "duration_seconds"}, where);
    if (!j[i].contains("task_size") || !j[i].contains("duration_seconds"))
      throw SchemaError(where + " needs task_size and duration_seconds");
    const auto size = integer(j[i]["task_size"], where + ".task_size");
    const auto t = number(j[i]["duration_seconds"], where + ".duration_seconds");
    if (size <= 0 || t < 0.0)
      throw SchemaError(where + " is out of range");
    rows.emplace_back(size, t);
  }
  return group_samples(rows);
}

std::vector<TimingSample> load_timing_samples(const std::filesystem::path &path) {
  const auto text = read_file(path);
  const auto first = text.find_first_not_of(" \t\r\n");
  if (first != std::string::npos && text[first] == '[')
    return parse_timing_json(text);
  return parse_timing_csv(text);
}

} // namespace bpcc::cli
