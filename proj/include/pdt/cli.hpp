#pragma once

// pdtsim command line: simulate, trace, check.
//
// Output layout below --out:
//   config.yaml               effective configuration
//   summary.csv               one row per trial
//   report.csv, report.txt    batch statistics
//   traces/trial_<seed>.csv   per-trial traces (simulate, every --trace-stride ticks)
//   trace_<seed>.csv          full-rate trace (trace)

#include <chrono>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "pdt/config.hpp"
#include "pdt/io.hpp"
#include "pdt/selfcheck.hpp"

namespace pdt {

enum ExitCode : int { kExitOk = 0, kExitUsage = 1, kExitCheckFailed = 2, kExitTrialError = 3 };

struct CliOptions {
  std::string config_path;
  std::optional<std::uint64_t> trials;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  bool strict{false};
  bool serial{false};
  unsigned workers{0};
  int trace_stride{10};
};

// An exception escaped a trial; distinct from configuration errors.
struct TrialFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace detail {

template <class F>
auto guard_trials(F&& f) {
  try {
    return f();
  } catch (const std::exception& e) {
    throw TrialFailure(e.what());
  }
}

inline RunConfig effective_config(const CliOptions& o) {
  RunConfig c = o.config_path.empty() ? RunConfig{} : load_run_config(o.config_path);
  if (o.trials) c.n_trials = *o.trials;
  if (o.seed) c.base_seed = *o.seed;
  if (o.out) c.output_dir = *o.out;
  c.validate();
  return c;
}

inline std::string trial_file(const std::string& stem, std::uint64_t seed) {
  return stem + "_" + std::to_string(seed) + ".csv";
}

inline int cmd_simulate(const CliOptions& o, std::ostream& out) {
  const RunConfig c = effective_config(o);
  const SerialManipulator robot = load_robot_model(c.robot_model_path());
  const TrialSettings st = c.settings();
  const std::filesystem::path dir(c.output_dir);
  std::filesystem::create_directories(dir);
  RunConfig written = c;
  written.robot_model = std::filesystem::absolute(c.robot_model_path()).string();
  write_text_file(dir / "config.yaml", to_yaml(written));

  BatchOptions bo;
  bo.parallel = !o.serial;
  bo.workers = o.workers;
  if (o.trace_stride > 0) {
    bo.on_trial = [&](std::size_t, const Scenario& sc, TrialRecord& rec) {
      write_text_file(dir / "traces" / trial_file("trial", rec.seed), trace_csv(rec, sc, o.trace_stride));
    };
  }
  const auto t0 = std::chrono::steady_clock::now();
  const BatchResult res = guard_trials([&] { return run_batch(robot, c.n_trials, c.base_seed, st, bo); });
  const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  const BatchReport rep = batch_report(res.records, res.scenarios);
  write_text_file(dir / "summary.csv", summary_csv(res.records, res.scenarios));
  write_text_file(dir / "report.csv", report_csv(rep));
  const std::string text = report_text(rep);
  write_text_file(dir / "report.txt", text);
  out << text << "wall time " << elapsed << " s; outputs in " << dir.string() << '\n';
  return kExitOk;
}

inline int cmd_trace(const CliOptions& o, std::ostream& out) {
  const RunConfig c = effective_config(o);
  const SerialManipulator robot = load_robot_model(c.robot_model_path());
  const Scenario sc = generate_scenario(c.base_seed, c.settings());
  const TrialRecord rec = guard_trials([&] { return run_trial(robot, sc, true); });
  const std::filesystem::path path = std::filesystem::path(c.output_dir) / trial_file("trace", c.base_seed);
  write_text_file(path, trace_csv(rec, sc, 1));
  out << "seed " << c.base_seed << ": " << to_string(rec.status) << " after " << rec.duration << " s";
  if (rec.status == TrialStatus::completed) {
    const PunctureMetrics m = compute_metrics(rec, sc);
    out << ", position error " << 1e3 * m.position_error << " mm, guide angle " << rad2deg(m.guide_angle) << " deg";
  }
  out << "\ntrace written to " << path.string() << '\n';
  return kExitOk;
}

inline int cmd_check(const CliOptions& o, std::ostream& out) {
  const RunConfig c = effective_config(o);
  const SerialManipulator robot = load_robot_model(c.robot_model_path());
  CheckOptions co;
  co.strict = o.strict;
  bool ok = true;
  for (const CheckResult& r : run_self_checks(robot, co)) {
    out << format_check(r) << '\n';
    ok = ok && r.pass();
  }
  return ok ? kExitOk : kExitCheckFailed;
}

}  // namespace detail

inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Adaptive constrained needle-insertion simulator"};
  app.require_subcommand(1);
  CliOptions o;
  std::uint64_t trials = 0, seed = 0;
  std::string out_dir;

  const auto common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config_path, "YAML run configuration")->check(CLI::ExistingFile);
    sub->add_option("--seed", seed, "base seed (trace: the trial seed)");
    sub->add_option("--out", out_dir, "output directory");
  };
  CLI::App* sim = app.add_subcommand("simulate", "run a randomized batch and write traces, summary and report");
  common(sim);
  sim->add_option("--trials", trials, "number of trials")->check(CLI::PositiveNumber);
  sim->add_flag("--serial", o.serial, "run trials on one thread");
  sim->add_option("--workers", o.workers, "worker threads (0: one per core)");
  sim->add_option("--trace-stride", o.trace_stride, "write every n-th tick to the per-trial traces, 0 disables")
      ->check(CLI::NonNegativeNumber);
  CLI::App* trace = app.add_subcommand("trace", "run one trial and write its full per-tick trace");
  common(trace);
  CLI::App* check = app.add_subcommand("check", "run the Jacobian, QP and trajectory self-checks");
  check->add_option("--config", o.config_path, "YAML run configuration")->check(CLI::ExistingFile);
  check->add_flag("--strict", o.strict, "tighten the Jacobian tolerance to 1e-6");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }
  if (sim->count("--trials")) o.trials = trials;
  for (CLI::App* sub : {sim, trace}) {
    if (sub->count("--seed")) o.seed = seed;
    if (sub->count("--out")) o.out = out_dir;
  }

  try {
    if (*sim) return detail::cmd_simulate(o, out);
    if (*trace) return detail::cmd_trace(o, out);
    return detail::cmd_check(o, out);
  } catch (const TrialFailure& e) {
    err << "trial error: " << e.what() << '\n';
    return kExitTrialError;
  } catch (const InvalidInput& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "trial error: " << e.what() << '\n';
    return kExitTrialError;
  }
}

}  // namespace pdt
