// matopt command line: verify, train, sweep, plot.

#include <chrono>
#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "CLI11.hpp"
#include "matopt/config.hpp"
#include "matopt/verify.hpp"

namespace {

constexpr int kOk = 0;
constexpr int kFailed = 1;
constexpr int kUsage = 2;

struct VerifyArgs {
  std::string suite = "all";
  std::uint64_t seed = 0;
  std::string report;
  bool timings = false;
};

struct TrainArgs {
  std::string config;
  std::string out;
};

struct SweepArgs {
  std::string config;
  std::string grid;
  std::string out;
};

struct PlotArgs {
  std::vector<std::string> traces;
  std::string out;
  std::string title = "loss";
};

std::string report_line(const matopt::VerificationReport& r, bool timings) {
  nlohmann::ordered_json j;
  j["name"] = r.check_name;
  j["passed"] = r.passed;
  j["max_error"] = std::isfinite(r.max_error) ? nlohmann::ordered_json(r.max_error) : nlohmann::ordered_json(nullptr);
  j["tolerance"] = r.tolerance;
  if (timings) j["seconds"] = r.seconds;
  j["details"] = r.details;
  return j.dump();
}

int run_verify(const VerifyArgs& a) {
  const matopt::Suite suite = matopt::parse_suite(a.suite);
  const auto t0 = std::chrono::steady_clock::now();
  const auto reports = matopt::run_suite(suite, a.seed);
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  std::string jsonl;
  for (const auto& r : reports) jsonl += report_line(r, a.timings) + '\n';
  if (!a.report.empty()) matopt::write_text(a.report, jsonl);

  std::size_t failed = 0;
  std::printf("%-28s %-6s %-12s %-10s\n", "check", "status", "max_error", "tolerance");
  for (const auto& r : reports) {
    std::printf("%-28s %-6s %-12.3e %-10.1e\n", r.check_name.c_str(), r.passed ? "PASS" : "FAIL", r.max_error,
                r.tolerance);
    if (!r.passed) {
      ++failed;
      std::printf("    %s\n", r.details.c_str());
    }
  }
  std::printf("%zu/%zu checks passed\n", reports.size() - failed, reports.size());
  if (a.timings) std::printf("elapsed %.3f s\n", seconds);
  return failed == 0 ? kOk : kFailed;
}

int run_train(const TrainArgs& a) {
  const matopt::RunConfig config = matopt::load_run_config(a.config);
  const matopt::TrainResult r = matopt::train_run(config);
  const std::string csv = matopt::trace_csv(r.trace);
  const std::string out = a.out.empty() ? config.output_path : a.out;
  if (out.empty()) std::fputs(csv.c_str(), stdout);
  else matopt::write_text(out, csv);
  if (r.diverged) {
    std::fprintf(stderr, "diverged: %s\n", r.message.c_str());
    return kFailed;
  }
  std::fprintf(stderr, "final_loss %s\n", matopt::format_csv_real(r.final_loss).c_str());
  return kOk;
}

int run_sweep_cmd(const SweepArgs& a) {
  const matopt::RunConfig base = matopt::load_run_config(a.config);
  const matopt::SweepGrid grid = matopt::load_grid(a.grid);
  const matopt::SweepResult r = matopt::run_sweep(base, grid);
  const std::string csv = matopt::sweep_csv(r);
  if (a.out.empty()) std::fputs(csv.c_str(), stdout);
  else matopt::write_text(a.out, csv);
  if (r.best) std::fprintf(stderr, "best run %zu, final_loss %s\n", *r.best,
                           matopt::format_csv_real(r.rows[*r.best].final_loss).c_str());
  for (const auto& row : r.rows)
    if (row.status != "ok") std::fprintf(stderr, "run %zu: %s\n", row.index, row.status.c_str());
  return r.best ? kOk : kFailed;
}

int run_plot(const PlotArgs& a) {
  std::vector<matopt::PlotSeries> series;
  for (const auto& path : a.traces) {
    const auto slash = path.find_last_of('/');
    series.push_back({slash == std::string::npos ? path : path.substr(slash + 1), matopt::read_trace_csv(path)});
  }
  matopt::write_text(a.out, matopt::plot_svg(series, a.title));
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"matopt: matrix-structured optimizers, checks and training harness"};
  app.require_subcommand(1);

  VerifyArgs va;
  auto* verify = app.add_subcommand("verify", "run identity and proposition checks");
  verify->add_option("--suite", va.suite, "all | linalg | propositions | table1")
      ->check(CLI::IsMember({"all", "linalg", "propositions", "table1"}));
  verify->add_option("--seed", va.seed, "seed for random instances");
  verify->add_option("--report", va.report, "JSON-lines report path");
  verify->add_flag("--timings", va.timings, "include wall-clock seconds");

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "train one configuration and write its trace");
  train->add_option("--config", ta.config, "run config (TOML)")->required();
  train->add_option("--out", ta.out, "trace CSV path (default: run.output_path or stdout)");

  SweepArgs sa;
  auto* sweep = app.add_subcommand("sweep", "train every point of a grid");
  sweep->add_option("--config", sa.config, "base run config (TOML)")->required();
  sweep->add_option("--grid", sa.grid, "grid file (TOML arrays)")->required();
  sweep->add_option("--out", sa.out, "summary CSV path (default: stdout)");

  PlotArgs pa;
  auto* plot = app.add_subcommand("plot", "render loss curves to SVG");
  plot->add_option("--trace", pa.traces, "trace CSV (repeatable)")->required();
  plot->add_option("--out", pa.out, "SVG path")->required();
  plot->add_option("--title", pa.title, "plot title");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kUsage;
  }

  try {
    if (*verify) return run_verify(va);
    if (*train) return run_train(ta);
    if (*sweep) return run_sweep_cmd(sa);
    if (*plot) return run_plot(pa);
  } catch (const matopt::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return e.code() == matopt::ErrorCode::InvalidConfig || e.code() == matopt::ErrorCode::Io ? kUsage : kFailed;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kFailed;
  }
  return kUsage;
}
