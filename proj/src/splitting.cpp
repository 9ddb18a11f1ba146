#include "mcs/splitting.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <utility>

#include "mcs/util.hpp"

namespace mcs {

namespace {

TimeParams validated(const TimeParams& p) {
  if (!(p.dt > 0.0)) throw config_error("splitting: dt must be positive");
  if (!(p.nu > 0.0)) throw config_error("splitting: nu must be positive");
  if (!(p.cfl_guard > 0.0)) throw config_error("splitting: cfl_guard must be positive");
  return p;
}

FluxPolicy normalized_flux(FluxPolicy flux, int k) {
  if (flux.update_cadence < 1)
    throw config_error("splitting: order update cadence must be at least 1");
  if (flux.mode == FluxMode::HopuFixed && (flux.fixed_order < -1 || flux.fixed_order > k))
    throw config_error("splitting: fixed projection order must lie in [-1, k]");
  if (flux.mode == FluxMode::HopuAdaptive) {
    if (flux.thresholds.eta.empty()) flux.thresholds = EtaThresholds::defaults(k);
    flux.thresholds.validate(k);
  }
  return flux;
}

bool is_dirichlet(FacetTag tag) { return tag == FacetTag::Wall || tag == FacetTag::Inlet; }

} // namespace

FlowSolver::FlowSolver(const Mesh& mesh, const SpaceSet& s, const DofMap& dm,
                       const TimeParams& params, SplittingConfig cfg, FluxPolicy flux,
                       VectorField dirichlet)
    : mesh_(mesh),
      s_(s),
      dm_(dm),
      params_(validated(params)),
      cfg_(cfg),
      flux_(normalized_flux(std::move(flux), s.k)),
      dirichlet_(std::move(dirichlet)),
      blocks_(assemble_system_blocks(mesh, s, dm, params.nu, params.dt)),
      conv_(mesh, s, dm),
      cs_(mesh, s, dm, params.nu, params.dt, cfg.elimination),
      prec_(std::make_unique<BddcPreconditioner>(cs_, cs_.dirichlet_mask())),
      ps_(mesh, s, dm),
      orders_(initial_order_field(mesh, s.k)),
      vol_rule_(tensor_rule(s.dim, s.points_per_axis_bilinear())),
      vol_tab_(velocity_table(s, vol_rule_.points)) {
  if (!(cfg_.momentum_tol > 0.0) || !(cfg_.pressure_tol > 0.0))
    throw config_error("splitting: solver tolerances must be positive");
  if (cfg_.momentum_max_iter < 1 || cfg_.pressure_max_iter < 1)
    throw config_error("splitting: iteration limits must be positive");
  for (std::size_t i = 0; i < s_.pres_shapes.size(); ++i)
    if (s_.pres_shapes[i] == std::array<int, 3>{0, 0, 0}) {
      q0_ = static_cast<int>(i);
      break;
    }
  check(q0_ >= 0, "splitting: constant pressure mode not found");
  build_boundary_values();
}

void FlowSolver::build_boundary_values() {
  bnd_ = Eigen::VectorXd::Zero(cs_.retained_size());
  if (!mesh_.any_dirichlet() || !dirichlet_) return;

  int d = mesh_.dim;
  TensorRule frule = tensor_rule(d - 1, s_.points_per_axis_bilinear());
  Eigen::MatrixXd sc = facet_scalar_table(s_, frule.points);

  // Per local face: outward normal traces of that face's velocity shapes and
  // the Gram factor of the trace basis; the scalar facet basis is orthogonal,
  // so the tangential projection only needs the diagonal norms.
  std::vector<Eigen::MatrixXd> ntrace(2 * d);
  std::vector<Eigen::LLT<Eigen::MatrixXd>> gram(2 * d);
  std::vector<Eigen::VectorXd> sc_norm(2 * d);
  std::vector<std::vector<std::array<double, 3>>> ref_pts(2 * d);
  std::vector<double> wfac(2 * d);

  for (int face = 0; face < 2 * d; ++face) {
    int a = face / 2;
    double sgn = face % 2 == 0 ? -1.0 : 1.0;
    wfac[face] = mesh_.facet_measure(a) / (1 << (d - 1));
    ref_pts[face].resize(frule.npts);
    for (int q = 0; q < frule.npts; ++q)
      ref_pts[face][q] = embed_face_point(d, face, frule.points[q]);
    VelTable fv = velocity_table(s_, ref_pts[face]);
    Eigen::MatrixXd n(s_.tpf, frule.npts);
    for (int t = 0; t < s_.tpf; ++t)
      for (int q = 0; q < frule.npts; ++q) n(t, q) = sgn * fv.val[a](face * s_.tpf + t, q);
    Eigen::MatrixXd g = Eigen::MatrixXd::Zero(s_.tpf, s_.tpf);
    Eigen::VectorXd sn = Eigen::VectorXd::Zero(s_.tqf);
    for (int q = 0; q < frule.npts; ++q) {
      double w = frule.weights[q] * wfac[face];
      g += w * n.col(q) * n.col(q).transpose();
      sn += w * sc.col(q).cwiseAbs2();
    }
    ntrace[face] = std::move(n);
    gram[face].compute(g);
    sc_norm[face] = sn;
  }

  for (const Facet& fac : mesh_.facets) {
    if (fac.tag != FacetTag::Inlet) continue;
    int face = fac.owner_face;
    int a = face / 2;
    double sgn = face % 2 == 0 ? -1.0 : 1.0;
    int t1 = -1, t2 = -1;
    for (int b = 0; b < d; ++b)
      if (b != a) (t1 < 0 ? t1 : t2) = b;

    Eigen::VectorXd bn = Eigen::VectorXd::Zero(s_.tpf);
    Eigen::MatrixXd bt = Eigen::MatrixXd::Zero(s_.tqf, d - 1);
    for (int q = 0; q < frule.npts; ++q) {
      double w = frule.weights[q] * wfac[face];
      std::array<double, 3> x = mesh_.to_physical(fac.owner, ref_pts[face][q]);
      std::array<double, 3> g = dirichlet_(x);
      bn += w * (sgn * g[a]) * ntrace[face].col(q);
      for (int tc = 0; tc < d - 1; ++tc) {
        int r = tc == 0 ? t1 : t2;
        bt.col(tc) += w * g[r] * sc.col(q);
      }
    }
    Eigen::VectorXd cn = gram[face].solve(bn);
    for (int t = 0; t < s_.tpf; ++t) bnd_[dm_.v_facet_dof(fac.id, t)] = cn[t];
    for (int tc = 0; tc < d - 1; ++tc)
      for (int i = 0; i < s_.tqf; ++i)
        bnd_[cs_.velocity_retained() + dm_.vhat_dof(fac.id, tc * s_.tqf + i)] =
            bt(i, tc) / sc_norm[face][i];
  }
}

FluxConfig FlowSolver::flux_config() const {
  FluxConfig cfg;
  cfg.mode = flux_.mode;
  cfg.fixed_order = flux_.fixed_order;
  cfg.orders = &orders_;
  return cfg;
}

const VectorField* FlowSolver::inlet_field() const { return dirichlet_ ? &dirichlet_ : nullptr; }

void FlowSolver::refresh_orders(const Eigen::VectorXd& u) {
  orders_ = update_order_field(conv_, u, flux_.thresholds, orders_, inlet_field(), &etas_);
  ++order_updates_;
}

void FlowSolver::predict_velocity(const State& state, StepWorkspace& ws,
                                  const VectorField* body_force) {
  if (state.u.size() != dm_.nV)
    throw config_error("predict: velocity vector has size " + std::to_string(state.u.size()) +
                       ", expected " + std::to_string(dm_.nV));
  warning_.clear();
  double cfl = cfl_number(state.u);
  if (cfl > params_.cfl_guard) {
    warning_ = "cfl estimate " + fmt_g17(cfl) + " exceeds the guard " +
               fmt_g17(params_.cfl_guard) + " at step " + std::to_string(state.step_index);
    std::fprintf(stderr, "warning: %s\n", warning_.c_str());
  }

  Eigen::VectorXd ru = blocks_.Muu * state.u; // (1/dt) M u^n
  if (cfg_.convection) {
    if (cfg_.extrapolate_convection && has_prev_) {
      Eigen::VectorXd uc = 1.5 * state.u - 0.5 * prev_u_;
      ru -= conv_.apply(uc, flux_config(), inlet_field());
    } else {
      ru -= conv_.apply(state.u, flux_config(), inlet_field());
    }
  }
  if (body_force) ru += velocity_moments(mesh_, s_, dm_, *body_force);

  Eigen::VectorXd rsig = Eigen::VectorXd::Zero(dm_.nSigmaG);
  Eigen::VectorXd rgam = Eigen::VectorXd::Zero(dm_.nWg);
  Eigen::VectorXd ruhat = Eigen::VectorXd::Zero(dm_.nVhat);
  StepOneSolution sol = cs_.solve(rsig, rgam, ru, ruhat, bnd_, *prec_, cfg_.momentum_tol,
                                  cfg_.momentum_max_iter, ws.momentum);
  ws.sigma = std::move(sol.sigma);
  ws.gamma = std::move(sol.gamma);
  ws.ustar = std::move(sol.u);
  ws.uhat = std::move(sol.uhat);
}

Eigen::VectorXd FlowSolver::divergence_moments(const Eigen::VectorXd& u) const {
  Eigen::VectorXd rq = -(blocks_.Bpu * u); // (div u, q_i)
  if (ps_.singular()) {
    double net = 0.0;
    for (int e = 0; e < mesh_.n_elements; ++e) net += rq[dm_.q_dof(e, q0_)];
    if (std::abs(net) > 1e-8 * (1.0 + u.lpNorm<Eigen::Infinity>()))
      throw solver_error("projection: net boundary flux " + fmt_g17(net) +
                         " on a closed domain");
    for (int e = 0; e < mesh_.n_elements; ++e)
      rq[dm_.q_dof(e, q0_)] -= net / mesh_.n_elements;
  }
  return rq;
}

void FlowSolver::pressure_projection(const Eigen::VectorXd& ustar, StepWorkspace& ws) const {
  Eigen::VectorXd rq = divergence_moments(ustar);
  if (rq.lpNorm<Eigen::Infinity>() <= 1e-14 * (1.0 + ustar.lpNorm<Eigen::Infinity>())) {
    // Already divergence-free to roundoff: skip the solve instead of feeding
    // a pure-noise right-hand side to the facet system.
    ws.utilde = Eigen::VectorXd::Zero(dm_.nVdisc);
    ws.p = Eigen::VectorXd::Zero(dm_.nQg);
    ws.phat = Eigen::VectorXd::Zero(dm_.nQhat);
    ws.pressure = SolverReport{};
    ws.pressure.converged = true;
    return;
  }
  Eigen::VectorXd b = ps_.condense_rhs(rq);
  ws.phat = ps_.solve(b, cfg_.pressure_prec, cfg_.pressure_tol, cfg_.pressure_max_iter,
                      ws.pressure);
  ps_.recover(ws.phat, rq, ws.utilde, ws.p);
}

State FlowSolver::advance(const State& state, StepWorkspace& ws, const VectorField* body_force) {
  if (flux_.mode == FluxMode::HopuAdaptive && state.step_index % flux_.update_cadence == 0)
    refresh_orders(state.u);

  predict_velocity(state, ws, body_force);
  pressure_projection(ws.ustar, ws);

  Eigen::VectorXd corr = lift_broken(ws.utilde);
  State next;
  if (cfg_.update == UpdateFormula::Difference)
    next.u = ws.ustar - corr;
  else
    next.u = state.u + params_.dt * (ws.ustar - corr);
  next.t = state.t + params_.dt;
  next.step_index = state.step_index + 1;

  if (cfg_.extrapolate_convection) {
    prev_u_ = state.u;
    has_prev_ = true;
  }

  double dv = max_divergence(next.u);
  double sp = max_speed(next.u);
  if (dv > 1e-9 * sp + 1e-13)
    throw solver_error("advance: pointwise divergence " + fmt_g17(dv) +
                       " exceeds 1e-9 times the maximum speed " + fmt_g17(sp));
  return next;
}

State FlowSolver::initial_state(const VectorField& u0) const {
  Eigen::VectorXd up = l2_project_velocity_plain(mesh_, s_, dm_, u0);
  // Pin the Dirichlet trace dofs to the same facet projections the stepper
  // enforces; this also balances the net boundary flux on closed domains.
  for (const Facet& fac : mesh_.facets) {
    if (!is_dirichlet(fac.tag)) continue;
    for (int t = 0; t < s_.tpf; ++t) {
      int dof = dm_.v_facet_dof(fac.id, t);
      up[dof] = bnd_[dof];
    }
  }
  State st;
  st.u = make_divergence_free(up);
  return st;
}

Eigen::VectorXd FlowSolver::make_divergence_free(const Eigen::VectorXd& u) const {
  Eigen::VectorXd rq = divergence_moments(u);
  if (rq.lpNorm<Eigen::Infinity>() <= 1e-14 * (1.0 + u.lpNorm<Eigen::Infinity>())) return u;
  Eigen::VectorXd b = ps_.condense_rhs(rq);
  SolverReport rep;
  Eigen::VectorXd phat =
      ps_.solve(b, cfg_.pressure_prec, cfg_.pressure_tol, cfg_.pressure_max_iter, rep);
  Eigen::VectorXd ut, p;
  ps_.recover(phat, rq, ut, p);
  return u - lift_broken(ut);
}

Eigen::VectorXd FlowSolver::lift_broken(const Eigen::VectorXd& utilde) const {
  if (utilde.size() != dm_.nVdisc)
    throw config_error("lift: broken vector has size " + std::to_string(utilde.size()) +
                       ", expected " + std::to_string(dm_.nVdisc));
  Eigen::VectorXd out = Eigen::VectorXd::Zero(dm_.nV);
  for (const Facet& fac : mesh_.facets) {
    for (int t = 0; t < s_.tpf; ++t) {
      double v = utilde[dm_.vdisc_dof(fac.owner, fac.owner_face * s_.tpf + t)];
      if (fac.neighbor >= 0)
        v = 0.5 * (v + utilde[dm_.vdisc_dof(fac.neighbor, fac.neighbor_face * s_.tpf + t)]);
      out[dm_.v_facet_dof(fac.id, t)] = v;
    }
  }
  int bub0 = 2 * mesh_.dim * s_.tpf;
  for (int e = 0; e < mesh_.n_elements; ++e)
    for (int b = 0; b < s_.nVbub; ++b)
      out[dm_.v_bubble_dof(e, b)] = utilde[dm_.vdisc_dof(e, bub0 + b)];
  return out;
}

double FlowSolver::normal_jump(const Eigen::VectorXd& utilde) const {
  double m = 0.0;
  for (const Facet& fac : mesh_.facets) {
    if (fac.neighbor < 0) continue;
    for (int t = 0; t < s_.tpf; ++t) {
      double a = utilde[dm_.vdisc_dof(fac.owner, fac.owner_face * s_.tpf + t)];
      double b = utilde[dm_.vdisc_dof(fac.neighbor, fac.neighbor_face * s_.tpf + t)];
      m = std::max(m, std::abs(a - b));
    }
  }
  return m;
}

double FlowSolver::max_divergence(const Eigen::VectorXd& u) const {
  std::vector<int> dofs;
  Eigen::VectorXd loc(s_.nV);
  double m = 0.0;
  for (int e = 0; e < mesh_.n_elements; ++e) {
    dm_.v_elem_dofs(mesh_, e, dofs);
    for (int i = 0; i < s_.nV; ++i) loc[i] = u[dofs[i]];
    for (int q = 0; q < vol_rule_.npts; ++q)
      m = std::max(m, std::abs(vol_tab_.div.col(q).dot(loc)));
  }
  return m;
}

double FlowSolver::max_speed(const Eigen::VectorXd& u) const {
  std::vector<int> dofs;
  Eigen::VectorXd loc(s_.nV);
  double m = 0.0;
  for (int e = 0; e < mesh_.n_elements; ++e) {
    dm_.v_elem_dofs(mesh_, e, dofs);
    for (int i = 0; i < s_.nV; ++i) loc[i] = u[dofs[i]];
    for (int q = 0; q < vol_rule_.npts; ++q) {
      double s2 = 0.0;
      for (int c = 0; c < mesh_.dim; ++c) {
        double v = vol_tab_.val[c].col(q).dot(loc);
        s2 += v * v;
      }
      m = std::max(m, s2);
    }
  }
  return std::sqrt(m);
}

double FlowSolver::cfl_number(const Eigen::VectorXd& u) const {
  double hmin = mesh_.h[0];
  for (int a = 1; a < mesh_.dim; ++a) hmin = std::min(hmin, mesh_.h[a]);
  return max_speed(u) * params_.dt / hmin;
}

double FlowSolver::boundary_flux(const Eigen::VectorXd& u) const {
  int d = mesh_.dim;
  TensorRule frule = tensor_rule(d - 1, s_.points_per_axis_bilinear());
  // Integral of each facet shape's outward normal trace over its own face.
  std::array<Eigen::VectorXd, 6> int_n;
  for (int face = 0; face < 2 * d; ++face) {
    int a = face / 2;
    double sgn = face % 2 == 0 ? -1.0 : 1.0;
    double wf = mesh_.facet_measure(a) / (1 << (d - 1));
    std::vector<std::array<double, 3>> pts(frule.npts);
    for (int q = 0; q < frule.npts; ++q) pts[q] = embed_face_point(d, face, frule.points[q]);
    VelTable fv = velocity_table(s_, pts);
    int_n[face] = Eigen::VectorXd::Zero(s_.tpf);
    for (int q = 0; q < frule.npts; ++q)
      for (int t = 0; t < s_.tpf; ++t)
        int_n[face][t] += frule.weights[q] * wf * sgn * fv.val[a](face * s_.tpf + t, q);
  }
  double flux = 0.0;
  for (const Facet& fac : mesh_.facets) {
    if (!fac.is_boundary()) continue;
    for (int t = 0; t < s_.tpf; ++t)
      flux += int_n[fac.owner_face][t] * u[dm_.v_facet_dof(fac.id, t)];
  }
  return flux;
}

void FlowSolver::set_time_params(const TimeParams& params) {
  TimeParams p = validated(params);
  bool refactor = p.dt != params_.dt || p.nu != params_.nu;
  params_ = p;
  if (refactor) {
    blocks_ = assemble_system_blocks(mesh_, s_, dm_, params_.nu, params_.dt);
    cs_.recondense(params_.nu, params_.dt);
    prec_ = std::make_unique<BddcPreconditioner>(cs_, cs_.dirichlet_mask());
  }
}

void FlowSolver::save_checkpoint(const std::string& path, const State& state) const {
  std::ofstream out(path);
  if (!out) throw config_error("checkpoint: cannot open '" + path + "' for writing");
  out << "mcsflow-checkpoint 1\n";
  out << "dim " << mesh_.dim << " k " << s_.k << "\n";
  out << "cells " << mesh_.cells[0] << " " << mesh_.cells[1] << " " << mesh_.cells[2] << "\n";
  out << "lo " << fmt_g17(mesh_.lo[0]) << " " << fmt_g17(mesh_.lo[1]) << " "
      << fmt_g17(mesh_.lo[2]) << "\n";
  out << "hi " << fmt_g17(mesh_.hi[0]) << " " << fmt_g17(mesh_.hi[1]) << " "
      << fmt_g17(mesh_.hi[2]) << "\n";
  out << "periodic " << mesh_.bc.periodic[0] << " " << mesh_.bc.periodic[1] << " "
      << mesh_.bc.periodic[2] << "\n";
  out << "tags";
  for (int i = 0; i < 6; ++i) out << " " << static_cast<int>(mesh_.bc.face_tag[i]);
  out << "\n";
  out << "time " << fmt_g17(state.t) << "\n";
  out << "step " << state.step_index << "\n";
  out << "orders " << orders_.order.size();
  for (int v : orders_.order) out << " " << v;
  out << "\n";
  out << "updates " << order_updates_ << "\n";
  out << "u " << state.u.size() << "\n";
  for (Eigen::Index i = 0; i < state.u.size(); ++i) out << fmt_g17(state.u[i]) << "\n";
  out << "prev " << (has_prev_ ? prev_u_.size() : 0) << "\n";
  if (has_prev_)
    for (Eigen::Index i = 0; i < prev_u_.size(); ++i) out << fmt_g17(prev_u_[i]) << "\n";
  out.flush();
  if (!out) throw config_error("checkpoint: failed writing '" + path + "'");
}

State FlowSolver::load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw config_error("checkpoint: cannot open '" + path + "'");
  auto expect = [&](const std::string& keyword) {
    std::string tok;
    if (!(in >> tok) || tok != keyword)
      throw config_error("checkpoint: expected '" + keyword + "' in '" + path + "'");
  };
  auto require = [&](bool ok, const std::string& what) {
    if (!ok) throw config_error("checkpoint: " + what + " does not match the solver setup");
  };

  expect("mcsflow-checkpoint");
  int version = 0;
  in >> version;
  if (version != 1) throw config_error("checkpoint: unsupported version in '" + path + "'");

  int dim = 0, k = 0;
  expect("dim");
  in >> dim;
  expect("k");
  in >> k;
  require(dim == mesh_.dim && k == s_.k, "dimension or polynomial order");

  expect("cells");
  std::array<int, 3> cells{};
  in >> cells[0] >> cells[1] >> cells[2];
  require(cells == mesh_.cells, "cell count");

  std::array<double, 3> lo{}, hi{};
  expect("lo");
  in >> lo[0] >> lo[1] >> lo[2];
  expect("hi");
  in >> hi[0] >> hi[1] >> hi[2];
  require(lo == mesh_.lo && hi == mesh_.hi, "domain box");

  expect("periodic");
  std::array<int, 3> per{};
  in >> per[0] >> per[1] >> per[2];
  for (int a = 0; a < 3; ++a) require((per[a] != 0) == mesh_.bc.periodic[a], "periodicity");

  expect("tags");
  for (int i = 0; i < 6; ++i) {
    int tag = 0;
    in >> tag;
    require(tag == static_cast<int>(mesh_.bc.face_tag[i]), "face tags");
  }

  State state;
  expect("time");
  in >> state.t;
  expect("step");
  in >> state.step_index;

  expect("orders");
  std::size_t norders = 0;
  in >> norders;
  require(norders == orders_.order.size(), "facet count");
  for (std::size_t i = 0; i < norders; ++i) in >> orders_.order[i];
  expect("updates");
  in >> order_updates_;

  expect("u");
  Eigen::Index n = 0;
  in >> n;
  require(n == static_cast<Eigen::Index>(dm_.nV), "velocity dof count");
  state.u.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) in >> state.u[i];

  expect("prev");
  Eigen::Index nprev = 0;
  in >> nprev;
  has_prev_ = nprev > 0;
  prev_u_.resize(nprev);
  for (Eigen::Index i = 0; i < nprev; ++i) in >> prev_u_[i];

  if (!in) throw config_error("checkpoint: truncated file '" + path + "'");
  return state;
}

Eigen::VectorXd physical_pressure(const Eigen::VectorXd& p, double dt) {
  if (!(dt > 0.0)) throw config_error("physical_pressure: dt must be positive");
  return p / dt;
}

} // namespace mcs
