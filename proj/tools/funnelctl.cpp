#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "fc/config.hpp"
#include "fc/errors.hpp"
#include "fc/scenarios.hpp"
#include "fc/sim.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitBreach = 2;       // step size collapsed at the tube boundary
constexpr int kExitInvalid = 3;      // config rejected or start outside the funnel
constexpr int kExitIntegration = 4;  // solver failed away from any guard
constexpr int kExitIo = 5;

int exit_code_for(fc::Errc code) {
  switch (code) {
    case fc::Errc::io_failure:
      return kExitIo;
    case fc::Errc::integration_failure:
      return kExitIntegration;
    default:
      return kExitInvalid;
  }
}

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  fc::require(static_cast<bool>(in), fc::Errc::io_failure, "cannot open " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

// a run request resolved to a config document; catalog checks are attached
// only when the document actually came from the built-in catalog
struct Resolved {
  std::string name;
  std::string config_json;
  std::vector<fc::InvariantCheck> checks;
};

Resolved resolve_scenario(const std::string& name) {
  if (const char* dir = std::getenv("FUNNELCTL_SCENARIO_DIR")) {
    std::string path = std::string(dir) + "/" + name + ".json";
    if (std::ifstream(path).good()) return {name, read_file(path), {}};
  }
  const fc::Scenario& s = fc::find_scenario(name);
  return {s.name, s.config_json, s.checks};
}

struct RunFlags {
  std::string scenario, config, out, report;
  std::optional<double> rtol, atol, t_end;
  std::optional<int> seed;
  bool all = false;
};

Resolved resolve(const RunFlags& flags) {
  if (!flags.config.empty()) {
    std::filesystem::path p(flags.config);
    return {p.stem().string(), read_file(flags.config), {}};
  }
  fc::require(!flags.scenario.empty(), fc::Errc::invalid_argument,
              "pass --scenario <name> or --config <file>");
  return resolve_scenario(flags.scenario);
}

struct Outcome {
  int code = kExitOk;
  std::string status;
};

Outcome run_one(const Resolved& r, const RunFlags& flags, const std::string& out_path,
                const std::string& report_path, bool report_to_stdout) {
  fc::RunConfig cfg = fc::build_run(r.config_json);
  if (flags.rtol) cfg.options.rtol = *flags.rtol;
  if (flags.atol) cfg.options.atol = *flags.atol;
  if (flags.t_end) cfg.problem.t_end = *flags.t_end;
  if (flags.seed) cfg.seed = *flags.seed;
  if (!out_path.empty()) cfg.csv_path = out_path;
  if (!report_path.empty()) cfg.report_path = report_path;

  auto started = std::chrono::steady_clock::now();
  fc::Trajectory traj = fc::integrate(cfg.problem, cfg.options);
  auto elapsed = std::chrono::steady_clock::now() - started;
  fc::RunReport report = fc::verify_invariants(traj, r.checks);
  report.wall_ms = std::chrono::duration<double, std::milli>(elapsed).count();
  if (!cfg.csv_path.empty()) fc::write_csv(cfg.csv_path, traj);
  if (!cfg.report_path.empty()) fc::write_report(cfg.report_path, report);
  if (report_to_stdout && cfg.report_path.empty()) fc::write_report(std::cout, report);

  Outcome out;
  switch (traj.termination) {
    case fc::Termination::Completed:
      out.code = kExitOk;
      out.status = r.name + ": completed at t=" + std::to_string(traj.t_final);
      break;
    case fc::Termination::MinStepReached:
      out.code = kExitBreach;
      out.status = r.name + ": funnel breach, step size collapsed at the tube boundary near t=" +
                   std::to_string(traj.t_final);
      break;
    case fc::Termination::GuardUnsatisfiableAtStart:
      out.code = kExitInvalid;
      out.status = r.name +
                   ": refused, the initial error must start strictly inside the funnel "
                   "(phi(0)*||e(0)|| < 1 at the start time)";
      break;
  }
  return out;
}

int cmd_run(const RunFlags& flags) {
  Resolved r = resolve(flags);
  Outcome out = run_one(r, flags, flags.out, flags.report, true);
  if (out.code != kExitOk) std::fprintf(stderr, "%s\n", out.status.c_str());
  return out.code;
}

int cmd_run_all(const RunFlags& flags) {
  if (!flags.out.empty()) std::filesystem::create_directories(flags.out);
  if (!flags.report.empty()) std::filesystem::create_directories(flags.report);

  const auto& catalog = fc::scenario_catalog();
  std::vector<Outcome> outcomes(catalog.size());
  std::vector<std::thread> workers;
  workers.reserve(catalog.size());
  for (std::size_t i = 0; i < catalog.size(); ++i) {
    workers.emplace_back([&, i] {
      const std::string& name = catalog[i].name;
      try {
        Resolved r = resolve_scenario(name);
        std::string out = flags.out.empty() ? "" : flags.out + "/" + name + ".csv";
        std::string rep = flags.report.empty() ? "" : flags.report + "/" + name + ".txt";
        outcomes[i] = run_one(r, flags, out, rep, false);
      } catch (const fc::Error& e) {
        outcomes[i] = {exit_code_for(e.code()), name + ": error: " + e.what()};
      } catch (const std::exception& e) {
        outcomes[i] = {kExitIntegration, name + ": error: " + e.what()};
      }
    });
  }
  for (auto& w : workers) w.join();

  int worst = kExitOk;
  for (const auto& o : outcomes) {
    std::printf("%s\n", o.status.c_str());
    worst = std::max(worst, o.code);
  }
  return worst;
}

int cmd_check(const RunFlags& flags) {
  Resolved r = resolve(flags);
  fc::RunConfig cfg = fc::build_run(r.config_json);
  bool all_ok = true;
  for (const auto& note : cfg.notes) {
    std::printf("%-4s %s\n", note.ok ? "ok" : "FAIL", note.line.c_str());
    all_ok = all_ok && note.ok;
  }

  // probe the closed loop once at the start time; a guard rejection here is
  // exactly the initial-condition rule phi(0)*||e(0)|| < 1 failing
  std::string why;
  bool inside = true;
  try {
    cfg.problem.rhs(cfg.problem.t0, cfg.problem.x0, nullptr, 0.0);
  } catch (const fc::Error& e) {
    inside = false;
    why = e.what();
  }
  std::printf("initial error inside the funnel: %s\n", inside ? "yes" : "no");
  if (!inside)
    std::printf("     the loop requires phi(0)*||e(0)|| < 1 at the start time (%s)\n",
                why.c_str());
  return all_ok && inside ? kExitOk : kExitInvalid;
}

int cmd_list() {
  for (const auto& s : fc::scenario_catalog()) std::printf("%-26s %s\n", s.name.c_str(), s.description.c_str());
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"funnel-control simulation driver"};
  app.require_subcommand(1);

  RunFlags flags;
  CLI::App* run = app.add_subcommand("run", "integrate a scenario or config and emit CSV/report");
  run->add_option("--scenario", flags.scenario, "catalog scenario name");
  run->add_option("--config", flags.config, "JSON config file");
  run->add_option("--out", flags.out, "CSV output path (directory with --all)");
  run->add_option("--report", flags.report, "report output path (directory with --all)");
  run->add_option("--rtol", flags.rtol, "relative tolerance override");
  run->add_option("--atol", flags.atol, "absolute tolerance override");
  run->add_option("--t-end", flags.t_end, "final time override");
  run->add_option("--seed", flags.seed, "seed override recorded in the config");
  run->add_flag("--all", flags.all, "run every catalog scenario concurrently");

  CLI::App* check = app.add_subcommand("check", "validate a config without integrating");
  check->add_option("--scenario", flags.scenario, "catalog scenario name");
  check->add_option("--config", flags.config, "JSON config file");

  CLI::App* list = app.add_subcommand("list", "print the scenario catalog");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitInvalid;
  }

  try {
    if (list->parsed()) return cmd_list();
    if (check->parsed()) {
      try {
        return cmd_check(flags);
      } catch (const fc::Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitInvalid;  // check reports only pass or fail
      }
    }
    return flags.all ? cmd_run_all(flags) : cmd_run(flags);
  } catch (const fc::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitInvalid;
  }
}
