#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <memory>
#include <random>
#include <sstream>

#include "mcs/cli.hpp"
#include "mcs/quadrature.hpp"
#include "mcs/stats.hpp"
#include "mcs/util.hpp"

namespace mcs {

namespace {

constexpr double kPi = 3.14159265358979323846;

std::string step_name(const char* stem, int step, const char* ext) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%s_%06d.%s", stem, step, ext);
  return buf;
}

/// Seeded divergence-free perturbation: white noise on the interior velocity
/// dofs (Dirichlet facet dofs stay untouched), projected and scaled to the
/// requested max-norm amplitude.
Eigen::VectorXd perturb(const FlowSolver& solver, const Eigen::VectorXd& u, double amplitude,
                        unsigned long seed) {
  const Mesh& mesh = solver.mesh();
  const DofMap& dm = solver.dof_map();
  std::mt19937 gen(seed);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  Eigen::VectorXd noise = Eigen::VectorXd::Zero(dm.nV);
  for (int i = 0; i < dm.nV; ++i) noise[i] = dist(gen);
  for (const auto& f : mesh.facets)
    if (f.tag == FacetTag::Wall || f.tag == FacetTag::Inlet || f.tag == FacetTag::Outlet)
      for (int t = 0; t < dm.tpf; ++t) noise[dm.v_facet_dof(f.id, t)] = 0.0;
  noise = solver.make_divergence_free(noise);
  double peak = solver.max_speed(noise);
  if (peak > 0.0) noise *= amplitude / peak;
  return u + noise;
}

void write_energy_row(std::ofstream& out, const FlowSolver& solver, const State& st,
                      double ke) {
  FluxConfig fc;
  fc.mode = solver.flux_policy().mode;
  fc.fixed_order = solver.flux_policy().fixed_order;
  if (fc.mode == FluxMode::HopuAdaptive) fc.orders = &solver.order_field();
  double diss = solver.config().convection ? solver.convection().dissipation(st.u, fc) : 0.0;
  out << fmt_g17(st.t) << ',' << fmt_g17(ke) << ',' << fmt_g17(diss) << '\n';
}

void write_solver_rows(std::ofstream& out, int step, const StepWorkspace& ws, bool timings) {
  auto row = [&](const char* stage, const SolverReport& r) {
    out << step << ',' << stage << ',' << r.iterations << ',' << fmt_g17(r.residual) << ','
        << fmt_g17(timings ? r.seconds : 0.0) << '\n';
  };
  row("momentum", ws.momentum);
  row("pressure", ws.pressure);
}

} // namespace

RunResult run_case(const RunConfig& cfg) {
  CaseSetup setup = build_case(cfg);
  std::filesystem::create_directories(cfg.output_dir);
  auto artifact = [&](const std::string& name) {
    return (std::filesystem::path(cfg.output_dir) / name).string();
  };

  FlowSolver solver(setup.mesh, setup.s, setup.dm, setup.tp, setup.scfg, setup.flux,
                    setup.dirichlet);

  State st;
  if (!cfg.restart.empty()) {
    st = solver.load_checkpoint(cfg.restart);
  } else {
    st = solver.initial_state(setup.initial);
    if (cfg.perturbation > 0.0) {
      st.u = perturb(solver, st.u, cfg.perturbation, cfg.seed);
      st.u = solver.make_divergence_free(st.u);
    }
  }

  const long long total = std::llround(cfg.t_end / cfg.dt);
  if (std::abs(total * cfg.dt - cfg.t_end) > 1e-9 * std::max(cfg.dt, cfg.t_end))
    throw config_error("time.t_end must be an integer multiple of time.dt");
  if (st.step_index > total)
    throw config_error("restart checkpoint is already past time.t_end");

  std::unique_ptr<StatAccumulator> acc;
  if (cfg.stats_start >= 0.0 && !setup.probes.empty())
    acc = std::make_unique<StatAccumulator>(setup.mesh, setup.s, setup.dm, setup.probes,
                                            cfg.stats_start, cfg.stats_end, setup.homog_axis);

  std::ofstream energy(artifact("energy.csv"));
  std::ofstream reports(artifact("solver.csv"));
  if (!energy || !reports) throw config_error("cannot write into '" + cfg.output_dir + "'");
  energy << "t,ke,dissipation\n";
  reports << "step,stage,iterations,residual,seconds\n";

  int last_energy_step = -1;
  auto log_energy = [&](double ke) {
    if (st.step_index == last_energy_step) return;
    write_energy_row(energy, solver, st, ke);
    last_energy_step = st.step_index;
  };

  RunResult res;
  res.kinetic = kinetic_energy(setup.mesh, setup.s, setup.dm, st.u);
  log_energy(res.kinetic);
  if (cfg.vtk_every > 0 && st.step_index == 0)
    write_vtk(setup.mesh, setup.s, setup.dm, st.u, Eigen::VectorXd::Zero(setup.dm.nQg),
              cfg.flux_mode == FluxMode::HopuAdaptive ? &solver.order_field() : nullptr,
              artifact(step_name("fields", 0, "vtk")));

  StepWorkspace ws;
  std::string warned;
  const VectorField* force = setup.body_force ? &setup.body_force : nullptr;
  const OrderField* orders =
      cfg.flux_mode == FluxMode::HopuAdaptive ? &solver.order_field() : nullptr;

  while (st.step_index < total) {
    State next = solver.advance(st, ws, force);
    res.steady_change = (next.u - st.u).lpNorm<Eigen::Infinity>();
    st = std::move(next);

    if (!solver.last_warning().empty() && solver.last_warning() != warned) {
      warned = solver.last_warning();
      std::fprintf(stderr, "%s\n", warned.c_str());
    }
    write_solver_rows(reports, st.step_index, ws, cfg.log_timings);
    if (!ws.momentum.converged || !ws.pressure.converged) {
      const char* stage = ws.momentum.converged ? "pressure" : "momentum";
      const SolverReport& r = ws.momentum.converged ? ws.pressure : ws.momentum;
      throw solver_error(std::string(stage) + " solve failed to converge at step " +
                         std::to_string(st.step_index) + " (residual " + fmt_g17(r.residual) +
                         " after " + std::to_string(r.iterations) + " iterations)");
    }

    res.kinetic = kinetic_energy(setup.mesh, setup.s, setup.dm, st.u);
    if (st.step_index % cfg.log_every == 0 || st.step_index == total) log_energy(res.kinetic);

    if (acc && st.step_index % cfg.stats_every == 0) {
      Eigen::VectorXd pphys = physical_pressure(ws.p, cfg.dt);
      acc->sample(st.u, st.t, &pphys, &ws.sigma);
    }
    if (cfg.vtk_every > 0 && st.step_index % cfg.vtk_every == 0)
      write_vtk(setup.mesh, setup.s, setup.dm, st.u, physical_pressure(ws.p, cfg.dt), orders,
                artifact(step_name("fields", st.step_index, "vtk")));
    if (cfg.checkpoint_every > 0 && st.step_index % cfg.checkpoint_every == 0)
      solver.save_checkpoint(artifact(step_name("checkpoint", st.step_index, "chk")), st);

    if (setup.steady && res.steady_change < setup.steady_tol) {
      res.converged = true;
      break;
    }
  }
  log_energy(res.kinetic);
  solver.save_checkpoint(artifact("final.chk"), st);
  res.steps = st.step_index;
  res.t = st.t;

  if (acc && acc->snapshots() > 0) {
    acc->close();
    if (setup.wall_face >= 0) {
      WallProfile wp = wall_profile(*acc, setup.wall_face, setup.tp.nu);
      if (wp.defined) {
        std::ofstream prof(artifact("profiles.csv"));
        prof << wall_profile_csv(wp);
        try {
          Thicknesses th = boundary_layer_thicknesses(wp.n, wp.ut);
          std::ofstream thick(artifact("thickness.csv"));
          thick << "delta_star,theta,shape,edge_velocity\n";
          thick << fmt_g17(th.delta_star) << ',' << fmt_g17(th.theta) << ','
                << fmt_g17(th.shape_defined ? th.shape : 0.0) << ',' << fmt_g17(th.edge_velocity)
                << '\n';
        } catch (const solver_error& e) {
          std::fprintf(stderr, "thickness skipped: %s\n", e.what());
        }
      }
    }
  }
  if (setup.exact)
    res.error_l2 = velocity_error_l2(setup.mesh, setup.s, setup.dm, st.u, setup.exact);

  std::ofstream summary(artifact("summary.txt"));
  summary << "case = " << cfg.case_name << '\n';
  summary << "dim = " << setup.mesh.dim << '\n';
  summary << "cells =";
  for (int a = 0; a < setup.mesh.dim; ++a) summary << ' ' << setup.mesh.cells[a];
  summary << '\n';
  summary << "k = " << setup.s.k << '\n';
  summary << "dt = " << fmt_g17(cfg.dt) << '\n';
  summary << "nu = " << fmt_g17(setup.tp.nu) << '\n';
  summary << "steps = " << res.steps << '\n';
  summary << "t_final = " << fmt_g17(res.t) << '\n';
  summary << "kinetic_energy = " << fmt_g17(res.kinetic) << '\n';
  summary << "converged = " << (res.converged ? 1 : 0) << '\n';
  summary << "steady_change = " << fmt_g17(res.steady_change) << '\n';
  if (res.error_l2 >= 0.0) summary << "error_l2 = " << fmt_g17(res.error_l2) << '\n';
  if (cfg.flux_mode == FluxMode::HopuAdaptive)
    summary << "order_updates = " << solver.order_updates() << '\n';
  if (acc) summary << "snapshots = " << acc->snapshots() << '\n';
  return res;
}

// ---- verification suites ----

namespace {

struct SuiteLog {
  std::string* out;
  bool all = true;
  void check(bool ok, const std::string& what, const std::string& detail = "") {
    *out += (ok ? "ok: " : "FAIL: ") + what;
    if (!ok && !detail.empty()) *out += " (" + detail + ")";
    *out += '\n';
    all &= ok;
  }
};

Eigen::VectorXd seeded_vector(int n, unsigned seed) {
  std::mt19937 gen(seed);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  Eigen::VectorXd v(n);
  for (int i = 0; i < n; ++i) v[i] = dist(gen);
  return v;
}

void suite_spaces(SuiteLog& log) {
  // Facet enumeration against the closed-form count.
  {
    BoundarySpec bc;
    bc.periodic[0] = true;
    Mesh m2 = build_box_mesh(2, {4, 3, 1}, {0, 0, 0}, {1, 1, 1}, bc);
    Mesh m3 = build_box_mesh(3, {3, 2, 2}, {0, 0, 0}, {1, 1, 1}, BoundarySpec{});
    bool ok = m2.n_facets() == expected_facet_count(2, m2.cells, m2.bc.periodic) &&
              m3.n_facets() == expected_facet_count(3, m3.cells, m3.bc.periodic);
    log.check(ok, "facet enumeration matches the closed-form count");
  }
  // Dof layout bookkeeping.
  {
    Mesh mesh = build_box_mesh(2, {3, 2, 1}, {0, 0, 0}, {1.5, 1, 1}, BoundarySpec{});
    SpaceSet s = build_space_set(2, 3, mesh.h);
    DofMap dm = build_dof_map(mesh, s);
    bool ok = dm.nVfacet == mesh.n_facets() * dm.tpf &&
              dm.nV == dm.nVfacet + mesh.n_elements * dm.nVbub &&
              dm.nQg == mesh.n_elements * dm.nQ && dm.nVhat == mesh.n_facets() * dm.tvf;
    log.check(ok, "dof counts are consistent with the mesh");
  }
  // div V is contained in the pressure space: the pointwise divergence of a
  // random field equals its element-wise L2 projection onto the pressures.
  {
    Mesh mesh = build_box_mesh(2, {3, 2, 1}, {0, 0, 0}, {1.2, 0.8, 1}, BoundarySpec{});
    SpaceSet s = build_space_set(2, 2, mesh.h);
    DofMap dm = build_dof_map(mesh, s);
    Eigen::VectorXd u = seeded_vector(dm.nV, 11u);
    TensorRule rule = tensor_rule(2, s.points_per_axis_bilinear());
    VelTable vt = velocity_table(s, rule.points);
    Eigen::MatrixXd pt = pressure_table(s, rule.points);
    Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(s.nQ, s.nQ);
    for (int q = 0; q < rule.npts; ++q)
      gram += rule.weights[q] * pt.col(q) * pt.col(q).transpose();
    std::vector<int> dofs;
    double worst = 0.0, scale = 0.0;
    for (int e = 0; e < mesh.n_elements; ++e) {
      dm.v_elem_dofs(mesh, e, dofs);
      Eigen::VectorXd loc(s.nV);
      for (int i = 0; i < s.nV; ++i) loc[i] = u[dofs[i]];
      Eigen::VectorXd divq(rule.npts), rhs = Eigen::VectorXd::Zero(s.nQ);
      for (int q = 0; q < rule.npts; ++q) {
        divq[q] = vt.div.col(q).dot(loc);
        rhs += rule.weights[q] * divq[q] * pt.col(q);
        scale = std::max(scale, std::abs(divq[q]));
      }
      Eigen::VectorXd proj = gram.ldlt().solve(rhs);
      for (int q = 0; q < rule.npts; ++q)
        worst = std::max(worst, std::abs(divq[q] - pt.col(q).dot(proj)));
    }
    log.check(worst <= 1e-11 * std::max(1.0, scale),
              "velocity divergence lies in the pressure space",
              "max deviation " + fmt_g17(worst));
  }
}

void suite_forms(SuiteLog& log) {
  BoundarySpec bc;
  bc.periodic = {true, true, true};
  Mesh mesh = build_box_mesh(2, {3, 3, 1}, {0, 0, 0}, {1, 1, 1}, bc);
  SpaceSet s = build_space_set(2, 2, mesh.h);
  DofMap dm = build_dof_map(mesh, s);
  FlowSolver solver(mesh, s, dm, TimeParams{1e-3, 0.1, 1.0, 0.5});
  Eigen::VectorXd u = solver.make_divergence_free(seeded_vector(dm.nV, 23u));
  double scale = std::pow(1.0 + solver.max_speed(u), 3) * mesh.domain_volume();
  const ConvectionOperator& conv = solver.convection();

  double central = u.dot(conv.apply(u, FluxConfig{FluxMode::Central}));
  log.check(std::abs(central) <= 1e-10 * scale,
            "central flux is energy neutral on divergence-free fields",
            "u^T C(u) = " + fmt_g17(central));

  double upwind = u.dot(conv.apply(u, FluxConfig{FluxMode::Upwind}));
  double diss = conv.dissipation(u, FluxConfig{FluxMode::Upwind});
  log.check(std::abs(upwind - central - diss) <= 1e-10 * scale,
            "upwind minus central equals the stabilization integral");

  double d_k = conv.dissipation(u, FluxConfig{FluxMode::HopuFixed, s.k});
  double d_0 = conv.dissipation(u, FluxConfig{FluxMode::HopuFixed, 0});
  double slack = 1e-12 * scale;
  log.check(d_k >= -slack && d_k <= d_0 + slack && d_0 <= diss + slack,
            "stabilization grows monotonically toward standard upwind");
}

void suite_solvers(SuiteLog& log) {
  // A single element with an outlet face: the condensed operator is the
  // preconditioner's coarse block, so CG must converge in one iteration.
  {
    BoundarySpec bc;
    bc.face_tag[1] = FacetTag::Outlet;
    Mesh mesh = build_box_mesh(2, {1, 1, 1}, {0, 0, 0}, {1, 1, 1}, bc);
    SpaceSet s = build_space_set(2, 2, mesh.h);
    DofMap dm = build_dof_map(mesh, s);
    FlowSolver solver(mesh, s, dm, TimeParams{1e-2, 0.5, 1.0, 0.5});
    VectorField force = [](const std::array<double, 3>&) {
      return std::array<double, 3>{1.0, 0.0, 0.0};
    };
    State st = solver.initial_state(
        [](const std::array<double, 3>&) { return std::array<double, 3>{0, 0, 0}; });
    StepWorkspace ws;
    solver.predict_velocity(st, ws, &force);
    log.check(ws.momentum.converged && ws.momentum.iterations == 1,
              "single-element prediction solve needs exactly one iteration",
              std::to_string(ws.momentum.iterations) + " iterations");
  }
  // A forced closed box: both stage solvers converge and the projected state
  // stays pointwise divergence free.
  {
    Mesh mesh = build_box_mesh(2, {4, 4, 1}, {0, 0, 0}, {1, 1, 1}, BoundarySpec{});
    SpaceSet s = build_space_set(2, 2, mesh.h);
    DofMap dm = build_dof_map(mesh, s);
    FlowSolver solver(mesh, s, dm, TimeParams{1e-3, 0.05, 1.0, 0.5});
    VectorField force = [](const std::array<double, 3>& x) {
      return std::array<double, 3>{std::sin(2.0 * kPi * x[1]), std::cos(kPi * x[0]),
                                   0.0};
    };
    State st = solver.initial_state(
        [](const std::array<double, 3>&) { return std::array<double, 3>{0, 0, 0}; });
    StepWorkspace ws;
    bool conv_ok = true;
    for (int n = 0; n < 3; ++n) {
      st = solver.advance(st, ws, &force);
      conv_ok = conv_ok && ws.momentum.converged && ws.pressure.converged;
    }
    log.check(conv_ok, "momentum and pressure solves converge on the forced box");
    double div = solver.max_divergence(st.u);
    double bound = 1e-9 * (1.0 + solver.max_speed(st.u));
    log.check(div <= bound, "projected velocity is pointwise divergence free",
              "max divergence " + fmt_g17(div));
    Eigen::VectorXd again = solver.make_divergence_free(st.u);
    log.check((again - st.u).lpNorm<Eigen::Infinity>() <= 1e-10 * (1.0 + solver.max_speed(st.u)),
              "projection is idempotent on projected fields");
  }
}

void suite_splitting(SuiteLog& log) {
  // Taylor-Green energy decay against the closed-form law.
  {
    BoundarySpec bc;
    bc.periodic = {true, true, true};
    const double two_pi = 2.0 * kPi;
    Mesh mesh = build_box_mesh(2, {8, 8, 1}, {0, 0, 0}, {two_pi, two_pi, 1}, bc);
    SpaceSet s = build_space_set(2, 2, mesh.h);
    DofMap dm = build_dof_map(mesh, s);
    double nu = 0.01, dt = 2e-3;
    FluxPolicy flux;
    flux.mode = FluxMode::Central;
    FlowSolver solver(mesh, s, dm, TimeParams{dt, nu, 1.0, 1.0}, SplittingConfig{}, flux);
    State st = solver.initial_state([](const std::array<double, 3>& x) {
      return std::array<double, 3>{std::sin(x[0]) * std::cos(x[1]),
                                   -std::cos(x[0]) * std::sin(x[1]), 0.0};
    });
    StepWorkspace ws;
    double div_worst = 0.0;
    for (int n = 0; n < 10; ++n) {
      st = solver.advance(st, ws);
      div_worst = std::max(div_worst, solver.max_divergence(st.u));
    }
    double ke = kinetic_energy(mesh, s, dm, st.u);
    double exact = kPi * kPi * std::exp(-4.0 * nu * st.t);
    log.check(std::abs(ke - exact) <= 0.01 * exact, "Taylor-Green energy follows the decay law",
              "ke " + fmt_g17(ke) + " vs " + fmt_g17(exact));
    log.check(div_worst <= 1e-9 * (1.0 + solver.max_speed(st.u)),
              "divergence-free invariant holds along the trajectory",
              "max divergence " + fmt_g17(div_worst));

    std::string path =
        (std::filesystem::temp_directory_path() / "mcsflow_suite_checkpoint.chk").string();
    solver.save_checkpoint(path, st);
    State back = solver.load_checkpoint(path);
    log.check(back.u.size() == st.u.size() && back.u == st.u && back.t == st.t &&
                  back.step_index == st.step_index,
              "checkpoint round-trip restores the state bitwise");
    std::filesystem::remove(path);
  }
  // Closed-domain mass conservation under forcing.
  {
    Mesh mesh = build_box_mesh(2, {3, 3, 1}, {0, 0, 0}, {1, 1, 1}, BoundarySpec{});
    SpaceSet s = build_space_set(2, 2, mesh.h);
    DofMap dm = build_dof_map(mesh, s);
    FlowSolver solver(mesh, s, dm, TimeParams{1e-3, 0.05, 1.0, 0.5});
    VectorField force = [](const std::array<double, 3>& x) {
      return std::array<double, 3>{x[1], -x[0], 0.0};
    };
    State st = solver.initial_state(
        [](const std::array<double, 3>&) { return std::array<double, 3>{0, 0, 0}; });
    StepWorkspace ws;
    for (int n = 0; n < 3; ++n) st = solver.advance(st, ws, &force);
    double flux = std::abs(solver.boundary_flux(st.u));
    log.check(flux <= 1e-12 * (1.0 + solver.max_speed(st.u)),
              "net boundary flux vanishes on the closed box", "flux " + fmt_g17(flux));
  }
}

} // namespace

const std::vector<std::string>& suite_names() {
  static const std::vector<std::string> names{"spaces", "forms", "solvers", "splitting"};
  return names;
}

bool verify_suite(const std::string& name, std::string& out) {
  SuiteLog log{&out};
  if (name == "spaces")
    suite_spaces(log);
  else if (name == "forms")
    suite_forms(log);
  else if (name == "solvers")
    suite_solvers(log);
  else if (name == "splitting")
    suite_splitting(log);
  else {
    std::string list;
    for (const auto& n : suite_names()) list += (list.empty() ? "" : ", ") + n;
    throw config_error("unknown suite '" + name + "' (available: " + list + ")");
  }
  return log.all;
}

// ---- run directory report ----

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string tok;
  std::istringstream in(line);
  while (std::getline(in, tok, ',')) out.push_back(tok);
  return out;
}

} // namespace

std::string summarize_run(const std::string& dir) {
  namespace fs = std::filesystem;
  fs::path root(dir);
  if (!fs::exists(root / "summary.txt"))
    throw config_error("'" + dir + "' has no summary.txt (not a finished run directory)");

  std::ostringstream out;
  out << "run directory: " << dir << '\n';
  {
    std::ifstream in(root / "summary.txt");
    std::string line;
    while (std::getline(in, line)) out << "  " << line << '\n';
  }
  if (fs::exists(root / "energy.csv")) {
    std::ifstream in(root / "energy.csv");
    std::string line;
    std::getline(in, line); // header
    int rows = 0;
    std::vector<std::string> first, last;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      ++rows;
      if (first.empty()) first = split_csv(line);
      last = split_csv(line);
    }
    out << "energy.csv: " << rows << " rows";
    if (rows > 0)
      out << ", t in [" << first[0] << ", " << last[0] << "], ke " << first[1] << " -> "
          << last[1];
    out << '\n';
  }
  if (fs::exists(root / "solver.csv")) {
    std::ifstream in(root / "solver.csv");
    std::string line;
    std::getline(in, line);
    long momentum_max = 0, pressure_max = 0, rows = 0;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      auto f = split_csv(line);
      if (f.size() < 4) continue;
      ++rows;
      long it = std::strtol(f[2].c_str(), nullptr, 10);
      long& slot = f[1] == "momentum" ? momentum_max : pressure_max;
      slot = std::max(slot, it);
    }
    out << "solver.csv: " << rows << " rows, max iterations momentum " << momentum_max
        << ", pressure " << pressure_max << '\n';
  }
  for (const char* name : {"profiles.csv", "thickness.csv"}) {
    if (!fs::exists(root / name)) continue;
    std::ifstream in(root / name);
    std::string line;
    int rows = -1; // skip the header
    while (std::getline(in, line))
      if (!line.empty()) ++rows;
    out << name << ": " << std::max(rows, 0) << " rows\n";
  }
  int vtk = 0, chk = 0;
  for (const auto& entry : fs::directory_iterator(root)) {
    if (entry.path().extension() == ".vtk") ++vtk;
    if (entry.path().extension() == ".chk") ++chk;
  }
  out << "snapshots: " << vtk << " vtk, " << chk << " checkpoints\n";
  return out.str();
}

} // namespace mcs
