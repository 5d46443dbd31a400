#include "bpcc/cli.hpp"
#include "bpcc/matrix_io.hpp"
#include "bpcc/net.hpp"
#include "bpcc/rng.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

namespace bpcc::cli {

namespace {

using nlohmann::json;

std::string fmt(double v) {
  if (std::isnan(v))
    return "nan";
  if (std::isinf(v))
    return v > 0 ? "inf" : "-inf";
  std::ostringstream ss;
  ss << std::setprecision(12) << v;
  return ss.str();
}

json number_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

std::ofstream open_output(const std::string &path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out)
    throw IoError("cannot write " + path);
  return out;
}

void finish_output(std::ofstream &out, const std::string &path) {
  out.flush();
  if (!out)
    throw IoError("write failed for " + path);
}

std::vector<int> default_p_values() {
  std::vector<int> p;
  for (int v = 1; v <= 1024; v *= 2)
    p.push_back(v);
  return p;
}

// ----------------------------------------------------------------- commands

int cmd_allocate(const std::string &file, const std::string &json_out, std::ostream &out) {
  const auto sf = load_scenario(file);
  const auto profiles = sf.profiles();
  const auto alloc = allocate(sf.scheme, sf.r, profiles);
  const auto text = allocation_to_json(alloc);
  out << text << '\n';
  out << "# worker  mu  alpha  p  load  lambda\n";
  for (std::size_t i = 0; i < alloc.size(); ++i) {
    out << "# " << i << "  " << fmt(profiles[i].mu) << "  " << fmt(profiles[i].alpha) << "  "
        << alloc.batches[i] << "  " << alloc.loads[i] << "  "
        << (alloc.lambdas.empty() ? std::string("-") : fmt(alloc.lambdas[i])) << '\n';
  }
  out << "# total load " << alloc.total_load();
  if (alloc.tau_star)
    out << ", tau* " << fmt(*alloc.tau_star);
  out << '\n';
  if (!json_out.empty()) {
    auto f = open_output(json_out);
    f << text << '\n';
    finish_output(f, json_out);
  }
  return kOk;
}

int cmd_bounds(const std::string &file, std::ostream &out) {
  const auto sf = load_scenario(file);
  const auto b = tau_bounds(sf.r, sf.workers);
  const json j = {{"inf_tau", b.inf_tau}, {"sup_tau", b.sup_tau}, {"l_hat", l_hat(sf.r, sf.workers)}};
  out << j.dump(2) << '\n';
  return kOk;
}

MonteCarloOptions mc_options(std::size_t points, unsigned threads) {
  MonteCarloOptions o;
  o.curve = true;
  o.curve_points = points;
  o.threads = threads;
  return o;
}

void write_trace(std::ostream &f, const MonteCarloSummary &s) {
  for (std::size_t k = 0; k < s.curve_times.size(); ++k)
    f << fmt(s.curve_times[k]) << ',' << fmt(s.curve_rows[k]) << ',' << to_string(s.scheme) << '\n';
}

int cmd_simulate(const std::string &file, const std::string &trace_out, std::size_t points,
                 unsigned threads, std::ostream &out) {
  const auto sf = load_scenario(file);
  const auto scenario = sf.scenario();
  const auto alloc = allocate(scenario.scheme, scenario.r, scenario.profiles);
  auto f = open_output(trace_out);
  const auto summary = monte_carlo(scenario, alloc, mc_options(points, threads));
  f << "time,mean_rows,scheme\n";
  write_trace(f, summary);
  finish_output(f, trace_out);
  const json j = {{"scheme", std::string(to_string(summary.scheme))},
                  {"mean_time", number_or_null(summary.mean_time)},
                  {"success_rate", summary.success_rate},
                  {"trials", summary.trials},
                  {"total_load", alloc.total_load()},
                  {"tau_star", alloc.tau_star ? json(*alloc.tau_star) : json(nullptr)}};
  out << j.dump(2) << '\n';
  return kOk;
}

int cmd_compare(const std::string &file, const std::string &csv_out, const std::string &trace_out,
                std::size_t points, unsigned threads, std::ostream &out) {
  const auto sf = load_scenario(file);
  auto f = open_output(csv_out);
  std::ofstream trace;
  if (!trace_out.empty())
    trace = open_output(trace_out);
  const auto rows = compare_schemes(sf.scenario(), mc_options(points, threads));
  f << "scheme,mean_time,success_rate\n";
  if (trace.is_open())
    trace << "time,mean_rows,scheme\n";
  for (const auto &row : rows) {
    f << to_string(row.summary.scheme) << ',' << fmt(row.summary.mean_time) << ','
      << fmt(row.summary.success_rate) << '\n';
    out << std::left << std::setw(14) << to_string(row.summary.scheme) << " mean_time "
        << fmt(row.summary.mean_time) << "  success_rate " << fmt(row.summary.success_rate) << '\n';
    if (trace.is_open())
      write_trace(trace, row.summary);
  }
  finish_output(f, csv_out);
  if (trace.is_open())
    finish_output(trace, trace_out);
  return kOk;
}

int cmd_sweep(const std::string &file, const std::string &csv_out, std::vector<int> p_values,
              std::ostream &out) {
  const auto sf = load_scenario(file);
  if (p_values.empty())
    p_values = default_p_values();
  for (int p : p_values)
    if (p < 1)
      throw SchemaError("p values must be >= 1");
  auto f = open_output(csv_out);
  const auto rows = sweep_p(sf.scenario(), p_values);
  f << "p,tau_star,mean_time,total_load\n";
  for (const auto &row : rows) {
    f << row.p << ',' << fmt(row.tau_star) << ',' << fmt(row.mean_time) << ',' << row.total_load
      << '\n';
    out << "p " << row.p << "  tau* " << fmt(row.tau_star) << "  mean_time " << fmt(row.mean_time)
        << "  q " << row.total_load << '\n';
  }
  finish_output(f, csv_out);
  return kOk;
}

int cmd_sensitivity(const std::string &file, const std::string &csv_out, std::vector<double> deltas,
                    std::int64_t trials, std::ostream &out) {
  const auto sf = load_scenario(file);
  if (deltas.empty())
    deltas = {0.05, 0.1, 0.2, 0.3, 0.4, 0.5};
  for (double d : deltas)
    if (!(d >= 0.0))
      throw SchemaError("deltas must be nonnegative");
  if (trials <= 0)
    trials = sf.trials;
  auto f = open_output(csv_out);
  f << "delta,which,relative_change\n";
  const auto scenario = sf.scenario();
  for (double d : deltas)
    for (auto which : {Parameter::mu, Parameter::alpha}) {
      const auto res = sensitivity(scenario, d, which, trials);
      const char *name = which == Parameter::mu ? "mu" : "alpha";
      f << fmt(d) << ',' << name << ',' << fmt(res.relative_change) << '\n';
      out << "delta " << fmt(d) << "  " << name << "  relative_change "
          << fmt(res.relative_change) << '\n';
    }
  finish_output(f, csv_out);
  return kOk;
}

int cmd_estimate(const std::string &file, std::ostream &out) {
  const auto samples = load_timing_samples(file);
  const auto fit = fit_shift_and_rate(samples);
  const json j = {{"mu_hat", fit.mu},
                  {"alpha_hat", fit.alpha},
                  {"task_sizes", fit.task_sizes},
                  {"shift_estimates", fit.shift_estimates},
                  {"tail_estimates", fit.tail_estimates},
                  {"fit_residuals", {{"shift", fit.shift_residuals}, {"tail", fit.tail_residuals}}}};
  out << j.dump(2) << '\n';
  return kOk;
}

int cmd_provision(const std::string &file, const std::string &dir, const std::string &matrix,
                  const std::string &layout, std::ostream &out) {
  const auto sf = load_scenario(file);
  if (sf.m <= 0)
    throw SchemaError("provisioning needs 'm' in the scenario");
  net::ProvisionConfig cfg;
  cfg.scheme = sf.scheme;
  cfg.codec = sf.codec;
  cfg.r = sf.r;
  cfg.m = sf.m;
  cfg.profiles = sf.profiles();
  cfg.epsilon = sf.epsilon;
  cfg.seed = sf.seed;
  if (layout == "gaussian")
    cfg.layout = DenseLayout::gaussian;
  else if (layout == "systematic")
    cfg.layout = DenseLayout::systematic;
  else
    throw SchemaError("layout must be systematic or gaussian");

  net::Provisioned prov;
  if (matrix.empty()) {
    prov = net::provision_synthetic(dir, cfg);
  } else {
    const auto a = read_matrix(matrix);
    if (a.rows() != sf.r || a.cols() != sf.m)
      throw SchemaError("matrix is " + std::to_string(a.rows()) + " x " + std::to_string(a.cols()) +
                        ", scenario says " + std::to_string(sf.r) + " x " + std::to_string(sf.m));
    const Matrix<double> dense = a;
    const json src = {{"source", "file"},
                      {"path", std::filesystem::absolute(matrix).string()}};
    prov = net::provision(
        dir, cfg,
        [&dense](std::int64_t col, std::int64_t cols) -> Matrix<double> {
          return dense.middleCols(col, cols);
        },
        src.dump());
  }
  json workers = json::array();
  for (const auto &w : prov.worker_dirs)
    workers.push_back(w.string());
  const json j = {{"scheme", std::string(to_string(prov.allocation.scheme))},
                  {"codec", std::string(to_string(prov.task.codec))},
                  {"r", prov.task.r},
                  {"q", prov.task.q},
                  {"recovery_threshold", prov.task.recovery_threshold()},
                  {"loads", prov.allocation.loads},
                  {"batches", prov.allocation.batches},
                  {"master_dir", prov.master_dir.string()},
                  {"worker_dirs", workers}};
  out << j.dump(2) << '\n';
  return kOk;
}

Vector<double> reference_product(const json &src, std::span<const double> x) {
  const auto kind = src.value("source", std::string());
  const auto r = src.at("r").get<std::int64_t>();
  const auto m = src.at("m").get<std::int64_t>();
  if (kind == "synthetic")
    return net::synthetic_product(src.at("seed").get<std::uint64_t>(), r, m, x);
  if (kind == "file") {
    const auto a = read_matrix(src.at("path").get<std::string>());
    return a * Eigen::Map<const Vector<double>>(x.data(), m);
  }
  throw SchemaError("source.json does not say where A came from; cannot --check");
}

int cmd_master(const std::string &task_dir, const std::vector<std::string> &connect,
               std::uint64_t x_seed, double timeout, bool check, const std::string &y_out,
               std::ostream &out, std::ostream &err) {
  const std::filesystem::path dir(task_dir);
  const auto task = load_task(dir);
  std::ifstream src_in(dir / "source.json");
  if (!src_in)
    throw IoError("cannot open " + (dir / "source.json").string());
  const auto src = json::parse(src_in);
  const auto m = src.at("m").get<std::int64_t>();

  std::vector<wire::Endpoint> endpoints;
  for (const auto &c : connect) {
    try {
      endpoints.push_back(wire::parse_endpoint(c));
    } catch (const std::exception &e) {
      throw SchemaError(e.what());
    }
  }
  std::vector<double> x(static_cast<std::size_t>(m));
  SplitMix64 gen(x_seed);
  for (auto &v : x)
    v = 2.0 * gen.uniform() - 1.0;

  net::MasterOptions opts;
  opts.run_timeout = std::chrono::milliseconds(static_cast<std::int64_t>(timeout * 1000.0));
  const auto res = net::run_master(endpoints, task, x, opts);
  const auto &met = res.metrics;

  json workers = json::array();
  for (const auto &w : met.workers)
    workers.push_back({{"address", w.address},
                       {"worker_id", w.worker_id ? json(*w.worker_id) : json(nullptr)},
                       {"batches_delivered", w.batches_delivered},
                       {"rows_delivered", w.rows_delivered},
                       {"rows_computed", w.rows_computed ? json(*w.rows_computed) : json(nullptr)},
                       {"lost", w.lost},
                       {"error", w.error}});
  json j = {{"success", met.success},
            {"wall_time", met.wall_time},
            {"decode_time", met.decode_time},
            {"rows_received", met.rows_received},
            {"threshold", met.threshold},
            {"rows_computed", met.rows_computed()},
            {"q", task.q},
            {"failure", met.failure},
            {"workers", workers}};
  bool check_ok = true;
  if (res.y && check) {
    const auto truth = reference_product(src, x);
    const double residual = (*res.y - truth).norm() / std::max(truth.norm(), 1e-300);
    j["residual"] = residual;
    check_ok = residual < 1e-8;
  }
  if (res.y && !y_out.empty())
    write_matrix(y_out, RowMajorMatrixXd(*res.y));
  out << j.dump(2) << '\n';

  if (!met.success) {
    err << "run failed: " << met.failure << '\n';
    for (const auto &w : met.workers)
      if (!w.error.empty())
        err << "  worker " << w.address << ": " << w.error << '\n';
    return kRunFailure;
  }
  if (!check_ok) {
    err << "decoded result does not match A x\n";
    return kRunFailure;
  }
  return kOk;
}

int cmd_worker(net::WorkerOptions opts, std::ostream &out) {
  net::WorkerServer server(std::move(opts));
  server.bind();
  out << "listening on " << server.endpoint().str() << std::endl;
  server.run();
  return server.crashed() ? kWorkerCrashed : kOk;
}

template <class Fn> int guarded(Fn &&fn, std::ostream &err) {
  try {
    return fn();
  } catch (const SchemaError &e) {
    err << "error: " << e.what() << '\n';
    return kSchema;
  } catch (const InfeasibleTask &e) {
    err << "infeasible: " << e.what() << '\n';
    return kInfeasible;
  } catch (const InsufficientRedundancy &e) {
    err << "infeasible: " << e.what() << '\n';
    return kInfeasible;
  } catch (const EstimationFailure &e) {
    err << "estimation failed: " << e.what() << '\n';
    return kInfeasible;
  } catch (const IoError &e) {
    err << "io error: " << e.what() << '\n';
    return kIo;
  } catch (const std::filesystem::filesystem_error &e) {
    err << "io error: " << e.what() << '\n';
    return kIo;
  } catch (const json::exception &e) {
    err << "error: " << e.what() << '\n';
    return kSchema;
  } catch (const std::exception &e) {
    err << "error: " << e.what() << '\n';
    return kError;
  }
}

} // namespace

int run(const std::vector<std::string> &args, std::ostream &out, std::ostream &err) {
  CLI::App app{"Batch-processing coded computing: allocation, simulation and desk-scale runs",
               "bpcc"};
  app.require_subcommand(1);

  std::string scenario, out_path, trace_path, json_path, samples, dir, matrix, layout = "systematic";
  std::string task_dir, y_out;
  std::vector<std::string> connect;
  std::vector<int> p_values;
  std::vector<double> deltas;
  std::int64_t trials = 0;
  std::size_t points = 1000;
  unsigned threads = 0;
  std::uint64_t x_seed = 7;
  double timeout = 60.0;
  bool check = false;

  auto *allocate_cmd = app.add_subcommand("allocate", "Print the allocation for the scenario's scheme");
  allocate_cmd->add_option("scenario", scenario, "Scenario JSON file")->required();
  allocate_cmd->add_option("--json", json_path, "Also write the allocation JSON here");

  auto *bounds_cmd = app.add_subcommand("bounds", "inf/sup of tau* and the limit loads");
  bounds_cmd->add_option("scenario", scenario, "Scenario JSON file")->required();

  auto *simulate_cmd = app.add_subcommand("simulate", "Monte-Carlo run of the scenario's scheme");
  simulate_cmd->add_option("scenario", scenario, "Scenario JSON file")->required();
  simulate_cmd->add_option("--out", out_path, "Trace CSV (time,mean_rows,scheme)")->required();
  simulate_cmd->add_option("--points", points, "Trace grid points");
  simulate_cmd->add_option("--threads", threads, "Worker threads (0 = all cores)");

  auto *compare_cmd = app.add_subcommand("compare", "All four schemes with common random numbers");
  compare_cmd->add_option("scenario", scenario, "Scenario JSON file")->required();
  compare_cmd->add_option("--out", out_path, "CSV (scheme,mean_time,success_rate)")->required();
  compare_cmd->add_option("--trace", trace_path, "Trace CSV for every scheme");
  compare_cmd->add_option("--points", points, "Trace grid points");
  compare_cmd->add_option("--threads", threads, "Worker threads (0 = all cores)");

  auto *sweep_cmd = app.add_subcommand("sweep-p", "BPCC with a common batch count p");
  sweep_cmd->add_option("scenario", scenario, "Scenario JSON file")->required();
  sweep_cmd->add_option("--out", out_path, "CSV (p,tau_star,mean_time,total_load)")->required();
  sweep_cmd->add_option("--p", p_values, "Batch counts (default 1,2,4,...,1024)")->delimiter(',');

  auto *sens_cmd = app.add_subcommand("sensitivity", "Allocate with perturbed mu or alpha");
  sens_cmd->add_option("scenario", scenario, "Scenario JSON file")->required();
  sens_cmd->add_option("--out", out_path, "CSV (delta,which,relative_change)")->required();
  sens_cmd->add_option("--deltas", deltas, "Degrees of deviation")->delimiter(',');
  sens_cmd->add_option("--trials", trials, "Trials per run (default: scenario trials)");

  auto *estimate_cmd = app.add_subcommand("estimate", "Fit mu and alpha to timing samples");
  estimate_cmd->add_option("samples", samples, "CSV or JSON timing samples")->required();

  auto *provision_cmd = app.add_subcommand("provision", "Encode A and write worker data directories");
  provision_cmd->add_option("scenario", scenario, "Scenario JSON file (needs m)")->required();
  provision_cmd->add_option("--out", dir, "Output directory")->required();
  provision_cmd->add_option("--matrix", matrix, "Matrix file for A (default: synthetic from seed)");
  provision_cmd->add_option("--layout", layout, "Dense layout: systematic or gaussian");

  auto *master_cmd = app.add_subcommand("master", "Run the master against provisioned workers");
  master_cmd->add_option("--task", task_dir, "Provisioned master directory")->required();
  master_cmd->add_option("--connect", connect, "Worker host:port (repeat)")->required();
  master_cmd->add_option("--x-seed", x_seed, "Seed of the random input vector");
  master_cmd->add_option("--timeout", timeout, "Run timeout in seconds");
  master_cmd->add_flag("--check", check, "Compare the result against A x");
  master_cmd->add_option("--y-out", y_out, "Write y as a matrix file");

  net::WorkerOptions wopts;
  std::string listen = "127.0.0.1:0";
  auto *worker_cmd = app.add_subcommand("worker", "Serve one provisioned worker slice");
  worker_cmd->add_option("--listen", listen, "host:port (port 0 picks one)");
  worker_cmd->add_option("--data", wopts.data_dir, "Worker data directory")->required();
  auto *delay_opt = worker_cmd->add_option("--delay-factor", wopts.delay_factor,
                                           "Hold each batch back to d times its compute time");
  auto *drop_opt = worker_cmd->add_flag("--drop", wopts.drop, "Never return results");
  worker_cmd->add_option("--crash-after", wopts.crash_after_batches,
                         "Exit abruptly after this many batch results");
  worker_cmd->add_flag("--emulate", wopts.emulate, "Pace batches by the latency model");
  worker_cmd->add_option("--emulate-seed", wopts.emulate_seed, "Seed of the emulated draws");
  worker_cmd->add_option("--sessions", wopts.max_sessions, "Sessions to serve (0 = forever)");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp &) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp &) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError &e) {
    if (e.get_exit_code() == 0) {
      out << e.what() << '\n';
      return kOk;
    }
    err << "error: " << e.what() << '\n';
    if (!app.get_subcommands().empty())
      err << app.get_subcommands().front()->help();
    return kSchema;
  }

  return guarded(
      [&]() -> int {
        if (*allocate_cmd)
          return cmd_allocate(scenario, json_path, out);
        if (*bounds_cmd)
          return cmd_bounds(scenario, out);
        if (*simulate_cmd)
          return cmd_simulate(scenario, out_path, points, threads, out);
        if (*compare_cmd)
          return cmd_compare(scenario, out_path, trace_path, points, threads, out);
        if (*sweep_cmd)
          return cmd_sweep(scenario, out_path, p_values, out);
        if (*sens_cmd)
          return cmd_sensitivity(scenario, out_path, deltas, trials, out);
        if (*estimate_cmd)
          return cmd_estimate(samples, out);
        if (*provision_cmd)
          return cmd_provision(scenario, dir, matrix, layout, out);
        if (*master_cmd)
          return cmd_master(task_dir, connect, x_seed, timeout, check, y_out, out, err);
        if (*worker_cmd) {
          const auto flag_delay = wopts.delay_factor;
          const auto flag_drop = wopts.drop;
          apply_worker_env(wopts);
          if (delay_opt->count() > 0)
            wopts.delay_factor = flag_delay;
          if (drop_opt->count() > 0)
            wopts.drop = flag_drop;
          try {
            wopts.listen = wire::parse_endpoint(listen);
          } catch (const std::exception &e) {
            throw SchemaError(e.what());
          }
          return cmd_worker(std::move(wopts), out);
        }
        return kSchema;
      },
      err);
}

} // namespace bpcc::cli
