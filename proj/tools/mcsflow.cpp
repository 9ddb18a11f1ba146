#include <cstdio>
#include <cstdlib>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "mcs/cli.hpp"
#include "mcs/util.hpp"

namespace {

// Exit codes: 0 success, 1 configuration error, 2 solver failure,
// 3 verification failure.
constexpr int kOk = 0;
constexpr int kConfigError = 1;
constexpr int kSolverError = 2;
constexpr int kVerifyError = 3;

int cmd_solve(const std::string& config_path, const std::vector<std::string>& sets) {
  mcs::RunConfig cfg = mcs::parse_config_file(config_path);
  for (const auto& s : sets) mcs::apply_override(cfg, s);
  mcs::RunResult res = mcs::run_case(cfg);
  std::printf("case %s finished: %d steps, t = %s, kinetic energy = %s\n", cfg.case_name.c_str(),
              res.steps, mcs::fmt_g17(res.t).c_str(), mcs::fmt_g17(res.kinetic).c_str());
  if (res.converged) std::printf("steady state reached (change %s)\n",
                                 mcs::fmt_g17(res.steady_change).c_str());
  if (res.error_l2 >= 0.0)
    std::printf("velocity error (L2) = %s\n", mcs::fmt_g17(res.error_l2).c_str());
  std::printf("artifacts in %s\n", cfg.output_dir.c_str());
  return kOk;
}

int cmd_verify(const std::string& suite) {
  bool all = true;
  std::string out;
  if (suite == "all") {
    for (const auto& name : mcs::suite_names()) {
      out += "[" + name + "]\n";
      all = mcs::verify_suite(name, out) && all;
    }
  } else {
    all = mcs::verify_suite(suite, out);
  }
  std::fputs(out.c_str(), stdout);
  std::printf(all ? "all checks passed\n" : "checks FAILED\n");
  return all ? kOk : kVerifyError;
}

int cmd_report(const std::string& dir) {
  std::fputs(mcs::summarize_run(dir).c_str(), stdout);
  return kOk;
}

} // namespace

int main(int argc, char** argv) {
  if (const char* env = std::getenv("MCSFLOW_WORKERS")) {
    char* end = nullptr;
    long n = std::strtol(env, &end, 10);
    if (end == env || *end != '\0' || n < 1) {
      std::fprintf(stderr, "config error: MCSFLOW_WORKERS must be a positive integer\n");
      return kConfigError;
    }
    mcs::set_worker_count(static_cast<int>(n));
  }

  CLI::App app{"mcsflow: high-order hybrid-mixed solver for incompressible flow"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> sets;
  auto* solve = app.add_subcommand("solve", "run a configured benchmark case");
  solve->add_option("--config", config_path, "INI-style run configuration")->required();
  solve->add_option("--set", sets, "override a config entry (section.key=value)");

  std::string suite;
  auto* verify = app.add_subcommand("verify", "run built-in invariant checks");
  std::string suite_help = "one of: all";
  for (const auto& n : mcs::suite_names()) suite_help += ", " + n;
  verify->add_option("--suite", suite, suite_help)->required();

  std::string dir;
  auto* report = app.add_subcommand("report", "summarize a run directory");
  report->add_option("--dir", dir, "output directory of a finished run")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? kOk : kConfigError;
  }

  try {
    if (solve->parsed()) return cmd_solve(config_path, sets);
    if (verify->parsed()) return cmd_verify(suite);
    if (report->parsed()) return cmd_report(dir);
  } catch (const mcs::config_error& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kConfigError;
  } catch (const mcs::solver_error& e) {
    std::fprintf(stderr, "solver error: %s\n", e.what());
    return kSolverError;
  }
  return kConfigError;
}
