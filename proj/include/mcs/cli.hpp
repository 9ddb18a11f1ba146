#pragma once

#include <Eigen/Dense>
#include <array>
#include <functional>
#include <string>
#include <vector>

#include "mcs/hopu.hpp"
#include "mcs/mesh.hpp"
#include "mcs/spaces.hpp"
#include "mcs/splitting.hpp"

namespace mcs {

// ---- worker pool ----

/// Number of workers used by the parallel element loops (output sampling,
/// error norms). Controlled by the MCSFLOW_WORKERS environment variable in
/// the command-line tool; results are independent of the worker count.
void set_worker_count(int n);
int worker_count();

/// Apply fn to contiguous index chunks [begin, end) covering [0, n) on the
/// worker pool. The chunking depends only on n and the worker count, and the
/// chunks are disjoint, so deterministic workloads stay deterministic.
void parallel_for(int n, const std::function<void(int, int)>& fn);

// ---- run configuration ----

/// Full description of a run, filled from an INI-style config file plus
/// --set overrides. Zero-valued nu/extent entries mean "use the case
/// default".
struct RunConfig {
  // [case]
  std::string case_name;
  int dim = 2;
  // [mesh]
  std::array<int, 3> cells{8, 8, 8};
  std::array<double, 3> extent{0.0, 0.0, 0.0};
  int k = 3;
  // [time]
  double dt = 1e-3;
  double t_end = 1.0;
  double cfl_guard = 0.5;
  // [fluid]
  double nu = 0.0;
  // [flux]
  FluxMode flux_mode = FluxMode::Upwind;
  int flux_order = 0;
  std::vector<double> thresholds; // adaptive mode; empty = degree defaults
  int flux_cadence = 10;
  // [solver]
  bool extrapolate = false;
  double momentum_tol = 1e-10;
  double pressure_tol = 1e-11;
  // [output]
  std::string output_dir = "out";
  int log_every = 1;
  int vtk_every = 0;        // 0 = no VTK snapshots
  int checkpoint_every = 0; // 0 = final checkpoint only
  bool log_timings = false; // keep the seconds column zero for determinism
  std::string restart;      // checkpoint to resume from
  // [stats]
  double stats_start = -1.0; // window disabled unless 0 <= start <= end
  double stats_end = -1.0;
  int stats_every = 10; // sampling cadence in steps
  // [ic]
  unsigned long seed = 0;
  double perturbation = 0.0; // divergence-free noise amplitude
  // [channel]
  double force = 1.0;
  // [kovasznay]
  double re = 40.0;
  bool steady = true;
  double steady_tol = 1e-9;
};

/// Parse config text; throws config_error with the offending line/key.
RunConfig parse_config_text(const std::string& text);
RunConfig parse_config_file(const std::string& path);

/// Apply a "section.key=value" override.
void apply_override(RunConfig& cfg, const std::string& spec);

/// Cross-field validation (case known, parameters positive, thresholds
/// strictly increasing, ...). Throws config_error.
void validate_config(const RunConfig& cfg);

const std::vector<std::string>& case_names();

// ---- benchmark cases ----

/// Everything run_case needs to build a FlowSolver: discretization, solver
/// settings, and the case's analytic fields. Field entries are empty
/// std::functions when a case does not define them.
struct CaseSetup {
  Mesh mesh;
  SpaceSet s;
  DofMap dm;
  TimeParams tp;
  SplittingConfig scfg;
  FluxPolicy flux;
  VectorField dirichlet;
  VectorField initial;
  VectorField body_force;
  VectorField exact; // steady exact solution, for error reporting
  bool steady = false;
  double steady_tol = 1e-9;
  std::vector<std::array<double, 3>> probes; // wall-normal line (channel)
  int homog_axis = -1;
  int wall_face = -1;
};

CaseSetup build_case(const RunConfig& cfg);

// ---- VTK output ----

/// Legacy ASCII VTK unstructured-grid snapshot: a (k+1)^dim point lattice
/// per element (k^dim sub-cells), point data for velocity (3 components,
/// zero-padded in 2D), physical pressure, and pointwise divergence, plus the
/// per-element local flux order as cell data when an order field is given.
void write_vtk(const Mesh& mesh, const SpaceSet& s, const DofMap& dm, const Eigen::VectorXd& u,
               const Eigen::VectorXd& p_physical, const OrderField* orders,
               const std::string& path);

/// L2 norm of u_h - f by element-wise quadrature (nonlinear-strength rule).
double velocity_error_l2(const Mesh& mesh, const SpaceSet& s, const DofMap& dm,
                         const Eigen::VectorXd& u, const VectorField& f);

// ---- run orchestration ----

struct RunResult {
  int steps = 0;        // total steps marched (including a restart's past)
  double t = 0.0;       // final time
  double kinetic = 0.0; // final kinetic energy
  bool converged = false;
  double steady_change = 0.0; // last step-to-step max coefficient change
  double error_l2 = -1.0;     // vs the exact solution; -1 when undefined
};

/// Run a configured case and write artifacts (energy.csv, solver.csv,
/// summary.txt, checkpoints, optional VTK/profile outputs) into
/// cfg.output_dir. Throws config_error for setup problems and solver_error
/// for aborted runs; partial artifacts are kept on abort.
RunResult run_case(const RunConfig& cfg);

// ---- verification suites and report ----

const std::vector<std::string>& suite_names();

/// Run one invariant suite ("spaces", "forms", "solvers", "splitting");
/// appends one line per check to out and returns true when all pass.
bool verify_suite(const std::string& name, std::string& out);

/// Human-readable digest of a finished run directory's artifacts.
std::string summarize_run(const std::string& dir);

} // namespace mcs
