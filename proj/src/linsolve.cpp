#include "mcs/linsolve.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>

#include "mcs/util.hpp"

namespace mcs {

namespace {

double now_seconds() {
  using clock = std::chrono::steady_clock;
  return std::chrono::duration<double>(clock::now().time_since_epoch()).count();
}

/// Orthonormalize the deflation vectors (modified Gram-Schmidt, near-zero
/// directions dropped).
std::vector<Eigen::VectorXd> orthonormalize(const std::vector<Eigen::VectorXd>& vs) {
  std::vector<Eigen::VectorXd> q;
  for (Eigen::VectorXd v : vs) {
    for (const auto& u : q) v -= u.dot(v) * u;
    double n = v.norm();
    if (n > 1e-14) q.push_back(v / n);
  }
  return q;
}

} // namespace

std::pair<Eigen::VectorXd, SolverReport> pcg(const LinOp& op, const Eigen::VectorXd& rhs,
                                             const LinOp& prec, double tol, int max_iter,
                                             const std::vector<Eigen::VectorXd>& deflation) {
  const double t0 = now_seconds();
  SolverReport rep;
  const auto q = orthonormalize(deflation);
  auto project = [&q](Eigen::VectorXd& v) {
    for (const auto& u : q) v -= u.dot(v) * u;
  };

  Eigen::VectorXd x = Eigen::VectorXd::Zero(rhs.size());
  Eigen::VectorXd r = rhs;
  project(r);
  Eigen::VectorXd z = prec(r);
  project(z);
  double rho = r.dot(z);
  if (rho < 0.0) throw solver_error("pcg: preconditioner is not positive definite");
  const double norm0 = std::sqrt(rho);
  if (norm0 == 0.0) {
    rep.converged = true;
    rep.seconds = now_seconds() - t0;
    return {x, rep};
  }

  Eigen::VectorXd p = z;
  for (int it = 1; it <= max_iter; ++it) {
    Eigen::VectorXd ap = op(p);
    ++rep.op_applies;
    project(ap);
    const double pap = p.dot(ap);
    if (pap <= 0.0) throw solver_error("pcg: operator is not positive definite");
    const double alpha = rho / pap;
    x += alpha * p;
    r -= alpha * ap;
    z = prec(r);
    project(z);
    const double rho_next = r.dot(z);
    if (rho_next < 0.0) throw solver_error("pcg: preconditioner is not positive definite");
    const double rel = std::sqrt(rho_next) / norm0;
    rep.iterations = it;
    rep.residual = rel;
    rep.history.push_back(rel);
    if (rel <= tol) {
      rep.converged = true;
      break;
    }
    p = z + (rho_next / rho) * p;
    rho = rho_next;
  }
  project(x);
  rep.seconds = now_seconds() - t0;
  return {x, rep};
}

// ---- CondensedSystem ----

CondensedSystem::CondensedSystem(const Mesh& mesh, const SpaceSet& s, const DofMap& dm, double nu,
                                 double dt, Elimination elim)
    : mesh_(mesh), s_(s), dm_(dm), elim_(elim) {
  build(nu, dt);
}

void CondensedSystem::recondense(double nu, double dt) {
  build(nu, dt);
  ++revision_;
}

void CondensedSystem::build(double nu, double dt) {
  if (nu <= 0.0) throw config_error("condense: viscosity must be positive");
  if (dt <= 0.0) throw config_error("condense: time step must be positive");
  nu_ = nu;
  dt_ = dt;
  warning_.clear();
  if (nu * dt > 0.1) {
    warning_ = "condense: nu*dt > 0.1, the local preconditioner may degrade "
               "without a coarse space";
    std::fprintf(stderr, "warning: %s\n", warning_.c_str());
  }

  const LocalBlocks lb = build_local_blocks(s_);
  const int d = s_.dim;
  const int nfaces = 2 * d;
  const int n_vfac_loc = nfaces * s_.tpf;
  const int n_uhat_loc = nfaces * s_.tvf;
  const int osig = 0, ogam = s_.nSigma, ou = s_.nSigma + s_.nW;
  const int ouhat = ou + s_.nV;
  const int n_loc = ouhat + n_uhat_loc;

  // full symmetric element matrix over [sigma, gamma, u, uhat]
  Eigen::MatrixXd K = Eigen::MatrixXd::Zero(n_loc, n_loc);
  K.block(osig, osig, s_.nSigma, s_.nSigma) = -lb.m_sig / (2.0 * nu);
  K.block(ogam, osig, s_.nW, s_.nSigma) = lb.b_gam;
  K.block(osig, ogam, s_.nSigma, s_.nW) = lb.b_gam.transpose();
  K.block(ou, osig, s_.nV, s_.nSigma) = lb.b_u;
  K.block(osig, ou, s_.nSigma, s_.nV) = lb.b_u.transpose();
  K.block(ou, ou, s_.nV, s_.nV) = lb.m_vel / dt;
  for (int f = 0; f < nfaces; ++f) {
    K.block(ouhat + f * s_.tvf, osig, s_.tvf, s_.nSigma) = lb.b_uhat[f];
    K.block(osig, ouhat + f * s_.tvf, s_.nSigma, s_.tvf) = lb.b_uhat[f].transpose();
  }

  std::vector<int> interior, retained;
  for (int i = 0; i < s_.nSigma + s_.nW; ++i) interior.push_back(i);
  if (elim_ == Elimination::StressGammaAndBubbles) {
    for (int b = n_vfac_loc; b < s_.nV; ++b) interior.push_back(ou + b);
    for (int a = 0; a < n_vfac_loc; ++a) retained.push_back(ou + a);
  } else {
    for (int a = 0; a < s_.nV; ++a) retained.push_back(ou + a);
  }
  for (int a = 0; a < n_uhat_loc; ++a) retained.push_back(ouhat + a);

  ni_loc_ = static_cast<int>(interior.size());
  nr_loc_ = static_cast<int>(retained.size());
  n_vret_ = elim_ == Elimination::StressGammaAndBubbles ? dm_.nVfacet : dm_.nV;
  n_ret_ = n_vret_ + dm_.nVhat;

  K_ii_.resize(ni_loc_, ni_loc_);
  K_ir_.resize(ni_loc_, nr_loc_);
  Eigen::MatrixXd K_rr(nr_loc_, nr_loc_);
  for (int i = 0; i < ni_loc_; ++i) {
    for (int j = 0; j < ni_loc_; ++j) K_ii_(i, j) = K(interior[i], interior[j]);
    for (int j = 0; j < nr_loc_; ++j) K_ir_(i, j) = K(interior[i], retained[j]);
  }
  for (int i = 0; i < nr_loc_; ++i)
    for (int j = 0; j < nr_loc_; ++j) K_rr(i, j) = K(retained[i], retained[j]);

  // Symmetric equilibration: the stress block scales like 1/(2 nu) and the
  // spin multiplier couples only through it, so scaling stress slots by
  // sqrt(2 nu) and spin slots by its inverse keeps the factorization (and
  // the singularity check) well conditioned across extreme viscosities.
  dscale_ = Eigen::VectorXd::Ones(ni_loc_);
  const double sq = std::sqrt(2.0 * nu);
  for (int i = 0; i < ni_loc_; ++i) {
    if (interior[i] < s_.nSigma)
      dscale_[i] = sq;
    else if (interior[i] < s_.nSigma + s_.nW)
      dscale_[i] = 1.0 / sq;
  }
  lu_ii_.compute(dscale_.asDiagonal() * K_ii_ * dscale_.asDiagonal());
  const Eigen::ArrayXd diag_u = lu_ii_.matrixLU().diagonal().array().abs();
  if ((diag_u < 1e-14 * diag_u.maxCoeff()).any())
    throw solver_error("condense: singular interior block on the reference element");
  rec_ = dscale_.asDiagonal() * lu_ii_.solve(dscale_.asDiagonal() * K_ir_);
  S_loc_ = K_rr - K_ir_.transpose() * rec_;
  S_loc_ = 0.5 * (S_loc_ + S_loc_.transpose()).eval();

  std::vector<Eigen::Triplet<double>> trips;
  trips.reserve(static_cast<size_t>(mesh_.n_elements) * nr_loc_ * nr_loc_);
  for (int e = 0; e < mesh_.n_elements; ++e)
    for (int a = 0; a < nr_loc_; ++a) {
      const int ga = retained_gdof(e, a);
      for (int b = 0; b < nr_loc_; ++b)
        trips.emplace_back(ga, retained_gdof(e, b), S_loc_(a, b));
    }
  S_.resize(n_ret_, n_ret_);
  S_.setFromTriplets(trips.begin(), trips.end());
  S_.makeCompressed();
}

int CondensedSystem::retained_gdof(int e, int slot) const {
  const int nfaces = 2 * s_.dim;
  const int n_vfac_loc = nfaces * s_.tpf;
  const int n_v_loc = elim_ == Elimination::StressGammaAndBubbles ? n_vfac_loc : s_.nV;
  if (slot < n_v_loc) {
    if (slot < n_vfac_loc) {
      const int face = slot / s_.tpf;
      return dm_.v_facet_dof(mesh_.elem_facet[e][face], slot % s_.tpf);
    }
    return dm_.v_bubble_dof(e, slot - n_vfac_loc);
  }
  const int a = slot - n_v_loc;
  const int face = a / s_.tvf;
  return n_vret_ + dm_.vhat_dof(mesh_.elem_facet[e][face], a % s_.tvf);
}

std::vector<char> CondensedSystem::dirichlet_mask() const {
  std::vector<char> mask(n_ret_, 0);
  for (const Facet& f : mesh_.facets) {
    if (f.tag != FacetTag::Wall && f.tag != FacetTag::Inlet) continue;
    for (int t = 0; t < s_.tpf; ++t) mask[dm_.v_facet_dof(f.id, t)] = 1;
    for (int t = 0; t < s_.tvf; ++t) mask[n_vret_ + dm_.vhat_dof(f.id, t)] = 1;
  }
  return mask;
}

void CondensedSystem::gather_interior_rhs(int e, const Eigen::VectorXd& rsig,
                                          const Eigen::VectorXd& rgam, const Eigen::VectorXd& ru,
                                          Eigen::VectorXd& ri) const {
  ri.resize(ni_loc_);
  int at = 0;
  for (int i = 0; i < s_.nSigma; ++i) ri[at++] = rsig[dm_.sigma_dof(e, i)];
  for (int i = 0; i < s_.nW; ++i) ri[at++] = rgam[dm_.w_dof(e, i)];
  if (elim_ == Elimination::StressGammaAndBubbles)
    for (int b = 0; b < s_.nVbub; ++b) ri[at++] = ru[dm_.v_bubble_dof(e, b)];
}

Eigen::VectorXd CondensedSystem::condense_rhs(const Eigen::VectorXd& rsig,
                                              const Eigen::VectorXd& rgam,
                                              const Eigen::VectorXd& ru,
                                              const Eigen::VectorXd& ruhat) const {
  Eigen::VectorXd b = Eigen::VectorXd::Zero(n_ret_);
  b.head(n_vret_) = ru.head(n_vret_);
  b.tail(dm_.nVhat) = ruhat;
  Eigen::VectorXd ri, w;
  for (int e = 0; e < mesh_.n_elements; ++e) {
    gather_interior_rhs(e, rsig, rgam, ru, ri);
    w = K_ir_.transpose() * (dscale_.asDiagonal() * lu_ii_.solve(dscale_.asDiagonal() * ri));
    for (int a = 0; a < nr_loc_; ++a) b[retained_gdof(e, a)] -= w[a];
  }
  return b;
}

Eigen::VectorXd CondensedSystem::apply_masked(const Eigen::VectorXd& x,
                                              const std::vector<char>& dirichlet) const {
  Eigen::VectorXd xm = x;
  for (int i = 0; i < n_ret_; ++i)
    if (dirichlet[i]) xm[i] = 0.0;
  Eigen::VectorXd y = S_ * xm;
  for (int i = 0; i < n_ret_; ++i)
    if (dirichlet[i]) y[i] = 0.0;
  return y;
}

void CondensedSystem::split_retained(const Eigen::VectorXd& xr, Eigen::VectorXd& u,
                                     Eigen::VectorXd& uhat) const {
  u = Eigen::VectorXd::Zero(dm_.nV);
  u.head(n_vret_) = xr.head(n_vret_);
  uhat = xr.tail(dm_.nVhat);
}

StepOneSolution CondensedSystem::solve(const Eigen::VectorXd& rsig, const Eigen::VectorXd& rgam,
                                       const Eigen::VectorXd& ru, const Eigen::VectorXd& ruhat,
                                       const Eigen::VectorXd& boundary,
                                       const BddcPreconditioner& prec, double tol, int max_iter,
                                       SolverReport& report) const {
  const std::vector<char> dir = dirichlet_mask();
  Eigen::VectorXd xd = Eigen::VectorXd::Zero(n_ret_);
  for (int i = 0; i < n_ret_; ++i)
    if (dir[i]) xd[i] = boundary[i];

  Eigen::VectorXd b = condense_rhs(rsig, rgam, ru, ruhat);
  b -= S_ * xd;
  for (int i = 0; i < n_ret_; ++i)
    if (dir[i]) b[i] = 0.0;

  auto op = [&](const Eigen::VectorXd& v) { return apply_masked(v, dir); };
  auto pc = [&](const Eigen::VectorXd& v) { return prec.apply(v); };
  auto [xf, rep] = pcg(op, b, pc, tol, max_iter, {});
  report = rep;
  if (!rep.converged) throw solver_error("condense: momentum solve did not converge");
  Eigen::VectorXd xr = xf + xd;

  StepOneSolution sol;
  sol.sigma.resize(dm_.nSigmaG);
  sol.gamma.resize(dm_.nWg);
  split_retained(xr, sol.u, sol.uhat);

  Eigen::VectorXd ri, xr_loc(nr_loc_), xi;
  for (int e = 0; e < mesh_.n_elements; ++e) {
    gather_interior_rhs(e, rsig, rgam, ru, ri);
    for (int a = 0; a < nr_loc_; ++a) xr_loc[a] = xr[retained_gdof(e, a)];
    xi = dscale_.asDiagonal() * lu_ii_.solve(dscale_.asDiagonal() * ri) - rec_ * xr_loc;
    int at = 0;
    for (int i = 0; i < s_.nSigma; ++i) sol.sigma[dm_.sigma_dof(e, i)] = xi[at++];
    for (int i = 0; i < s_.nW; ++i) sol.gamma[dm_.w_dof(e, i)] = xi[at++];
    if (elim_ == Elimination::StressGammaAndBubbles)
      for (int b2 = 0; b2 < s_.nVbub; ++b2) sol.u[dm_.v_bubble_dof(e, b2)] = xi[at++];
  }
  return sol;
}

// ---- BddcPreconditioner ----

BddcPreconditioner::BddcPreconditioner(const CondensedSystem& cs,
                                       const std::vector<char>& dirichlet)
    : cs_(cs), revision_(cs.revision()) {
  const int nr = cs.local_retained();
  const int n = cs.retained_size();
  if (static_cast<int>(dirichlet.size()) != n)
    throw config_error("bddc: dirichlet mask size mismatch");

  std::vector<int> mult(n, 0);
  for (int e = 0; e < cs.mesh().n_elements; ++e)
    for (int a = 0; a < nr; ++a) ++mult[cs.retained_gdof(e, a)];
  inv_mult_.assign(n, 0.0);
  for (int i = 0; i < n; ++i)
    if (mult[i] > 0 && !dirichlet[i]) inv_mult_[i] = 1.0 / mult[i];

  elem_inv_.resize(cs.mesh().n_elements, nullptr);
  std::string key(nr, '0');
  for (int e = 0; e < cs.mesh().n_elements; ++e) {
    for (int a = 0; a < nr; ++a) key[a] = dirichlet[cs.retained_gdof(e, a)] ? '1' : '0';
    auto it = cache_.find(key);
    if (it == cache_.end()) {
      Eigen::MatrixXd sl = cs.local_schur();
      for (int a = 0; a < nr; ++a) {
        if (key[a] != '1') continue;
        sl.row(a).setZero();
        sl.col(a).setZero();
        sl(a, a) = 1.0;
      }
      // Regularized inverse: the singular multiplier modes of a floating
      // element are mapped to the stiffest local eigenvalue. The cutoff must
      // sit below the smallest genuine eigenvalue, which scales like
      // nu*dt relative to the mass-dominated top of the spectrum, yet above
      // the numerical zeros of the exact kernel (~ eps * emax).
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sl);
      const double emax = es.eigenvalues().maxCoeff();
      if (emax <= 0.0)
        throw solver_error("bddc: local block of element " + std::to_string(e) +
                           " is not positive semidefinite");
      Eigen::VectorXd winv = es.eigenvalues();
      for (int i = 0; i < nr; ++i) winv[i] = winv[i] > 1e-13 * emax ? 1.0 / winv[i] : 1.0 / emax;
      auto inv = std::make_unique<Eigen::MatrixXd>(es.eigenvectors() * winv.asDiagonal() *
                                                   es.eigenvectors().transpose());
      it = cache_.emplace(key, std::move(inv)).first;
    }
    elem_inv_[e] = it->second.get();
  }
}

Eigen::VectorXd BddcPreconditioner::apply(const Eigen::VectorXd& r) const {
  if (revision_ != cs_.revision())
    throw solver_error("bddc: preconditioner built against stale blocks (nu or dt changed)");
  const int nr = cs_.local_retained();
  Eigen::VectorXd y = Eigen::VectorXd::Zero(cs_.retained_size());
  Eigen::VectorXd rl(nr), xl;
  for (int e = 0; e < cs_.mesh().n_elements; ++e) {
    for (int a = 0; a < nr; ++a) {
      const int g = cs_.retained_gdof(e, a);
      rl[a] = r[g] * inv_mult_[g];
    }
    xl = (*elem_inv_[e]) * rl;
    for (int a = 0; a < nr; ++a) {
      const int g = cs_.retained_gdof(e, a);
      y[g] += xl[a] * inv_mult_[g];
    }
  }
  return y;
}

// ---- PressureSchur ----

PressureSchur::PressureSchur(const Mesh& mesh, const SpaceSet& s, const DofMap& dm)
    : mesh_(mesh), s_(s), dm_(dm) {
  const LocalBlocks lb = build_local_blocks(s);
  const int nfaces = 2 * s.dim;
  nl_ = s.nV + s.nQ;

  // paper-sign element block over [utilde, p]: [[-M, B^t], [B, 0]] with
  // B = (div v, q) = -b1
  Eigen::MatrixXd mp = Eigen::MatrixXd::Zero(nl_, nl_);
  mp.block(0, 0, s.nV, s.nV) = -lb.m_vel;
  mp.block(s.nV, 0, s.nQ, s.nV) = -lb.b1;
  mp.block(0, s.nV, s.nV, s.nQ) = -lb.b1.transpose();
  lu_mp_.compute(mp);
  const Eigen::ArrayXd diag_u = lu_mp_.matrixLU().diagonal().array().abs();
  if ((diag_u < 1e-14 * diag_u.maxCoeff()).any())
    throw solver_error("pressure schur: singular element block on the reference element");

  bhat_ = Eigen::MatrixXd::Zero(nfaces * s.tqf, nl_);
  for (int f = 0; f < nfaces; ++f)
    bhat_.block(f * s.tqf, 0, s.tqf, s.nV) = lb.b3[f];
  S_loc_ = -bhat_ * lu_mp_.solve(Eigen::MatrixXd(bhat_.transpose()));
  S_loc_ = 0.5 * (S_loc_ + S_loc_.transpose()).eval();

  active_.assign(dm.nQhat, 1);
  for (const Facet& f : mesh.facets)
    if (f.tag == FacetTag::Outlet)
      for (int t = 0; t < s.tqf; ++t) active_[dm.qhat_dof(f.id, t)] = 0;

  diag_ = Eigen::VectorXd::Ones(dm.nQhat);
  Eigen::VectorXd acc = Eigen::VectorXd::Zero(dm.nQhat);
  for (int e = 0; e < mesh.n_elements; ++e)
    for (int f = 0; f < nfaces; ++f)
      for (int t = 0; t < s.tqf; ++t)
        acc[dm.qhat_dof(mesh.elem_facet[e][f], t)] += S_loc_(f * s.tqf + t, f * s.tqf + t);
  for (int i = 0; i < dm.nQhat; ++i)
    if (active_[i]) diag_[i] = acc[i];

  for (const Facet& f : mesh.facets)
    if (f.tag != FacetTag::Outlet) coarse_fac_.push_back(f.id);
}

Eigen::VectorXd PressureSchur::apply(const Eigen::VectorXd& x) const {
  const int nfaces = 2 * s_.dim;
  Eigen::VectorXd y = Eigen::VectorXd::Zero(dm_.nQhat);
  Eigen::VectorXd xl(nfaces * s_.tqf), yl;
  for (int e = 0; e < mesh_.n_elements; ++e) {
    for (int f = 0; f < nfaces; ++f)
      for (int t = 0; t < s_.tqf; ++t) {
        const int g = dm_.qhat_dof(mesh_.elem_facet[e][f], t);
        xl[f * s_.tqf + t] = active_[g] ? x[g] : 0.0;
      }
    yl = S_loc_ * xl;
    for (int f = 0; f < nfaces; ++f)
      for (int t = 0; t < s_.tqf; ++t) {
        const int g = dm_.qhat_dof(mesh_.elem_facet[e][f], t);
        if (active_[g]) y[g] += yl[f * s_.tqf + t];
      }
  }
  return y;
}

Eigen::VectorXd PressureSchur::condense_rhs(const Eigen::VectorXd& rq) const {
  const int nfaces = 2 * s_.dim;
  Eigen::VectorXd b = Eigen::VectorXd::Zero(dm_.nQhat);
  Eigen::VectorXd rl = Eigen::VectorXd::Zero(nl_), wl;
  for (int e = 0; e < mesh_.n_elements; ++e) {
    for (int i = 0; i < s_.nQ; ++i) rl[s_.nV + i] = rq[dm_.q_dof(e, i)];
    wl = -bhat_ * lu_mp_.solve(rl);
    for (int f = 0; f < nfaces; ++f)
      for (int t = 0; t < s_.tqf; ++t) {
        const int g = dm_.qhat_dof(mesh_.elem_facet[e][f], t);
        if (active_[g]) b[g] += wl[f * s_.tqf + t];
      }
  }
  return b;
}

Eigen::VectorXd PressureSchur::solve(const Eigen::VectorXd& rhs, PressurePrec prec, double tol,
                                     int max_iter, SolverReport& report) const {
  Eigen::VectorXd b = rhs;
  for (int i = 0; i < dm_.nQhat; ++i)
    if (!active_[i]) b[i] = 0.0;

  std::vector<Eigen::VectorXd> deflation;
  if (singular()) {
    // the constant facet pressure: coefficient 1 on every constant mode
    Eigen::VectorXd c = Eigen::VectorXd::Zero(dm_.nQhat);
    for (int f = 0; f < dm_.n_facets; ++f)
      if (active_[dm_.qhat_dof(f, 0)]) c[dm_.qhat_dof(f, 0)] = 1.0;
    c.normalize();
    const double bn = b.norm();
    if (bn > 0.0 && std::abs(c.dot(b)) > 1e-8 * bn)
      throw solver_error("pressure schur: right-hand side is inconsistent with the "
                         "singular operator");
    deflation.push_back(c);
  }

  if (prec == PressurePrec::TwoLevel && !coarse_built_) {
    const int nc = static_cast<int>(coarse_fac_.size());
    Eigen::MatrixXd ac(nc, nc);
    for (int j = 0; j < nc; ++j) {
      Eigen::VectorXd ej = Eigen::VectorXd::Zero(dm_.nQhat);
      ej[dm_.qhat_dof(coarse_fac_[j], 0)] = 1.0;
      const Eigen::VectorXd col = apply(ej);
      for (int i = 0; i < nc; ++i) ac(i, j) = col[dm_.qhat_dof(coarse_fac_[i], 0)];
    }
    // pseudo-inverse via eigendecomposition; handles the constant nullspace
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (ac + ac.transpose()));
    const double cut = es.eigenvalues().cwiseAbs().maxCoeff() * 1e-12;
    Eigen::VectorXd inv = es.eigenvalues();
    for (int i = 0; i < nc; ++i) inv[i] = inv[i] > cut ? 1.0 / inv[i] : 0.0;
    coarse_inv_ = es.eigenvectors() * inv.asDiagonal() * es.eigenvectors().transpose();
    coarse_built_ = true;
  }

  auto pc = [&](const Eigen::VectorXd& r) {
    Eigen::VectorXd z = Eigen::VectorXd::Zero(dm_.nQhat);
    for (int i = 0; i < dm_.nQhat; ++i)
      if (active_[i]) z[i] = r[i] / diag_[i];
    if (prec == PressurePrec::TwoLevel) {
      const int nc = static_cast<int>(coarse_fac_.size());
      Eigen::VectorXd rc(nc);
      for (int i = 0; i < nc; ++i) rc[i] = r[dm_.qhat_dof(coarse_fac_[i], 0)];
      Eigen::VectorXd zc = coarse_inv_ * rc;
      for (int i = 0; i < nc; ++i) z[dm_.qhat_dof(coarse_fac_[i], 0)] += zc[i];
    }
    return z;
  };
  auto op = [&](const Eigen::VectorXd& v) { return apply(v); };
  auto [x, rep] = pcg(op, b, pc, tol, max_iter, deflation);
  report = rep;
  if (!rep.converged) throw solver_error("pressure schur: solve did not converge");
  return x;
}

void PressureSchur::recover(const Eigen::VectorXd& phat, const Eigen::VectorXd& rq,
                            Eigen::VectorXd& utilde, Eigen::VectorXd& p) const {
  const int nfaces = 2 * s_.dim;
  utilde = Eigen::VectorXd::Zero(dm_.nVdisc);
  p = Eigen::VectorXd::Zero(dm_.nQg);
  Eigen::VectorXd ph(nfaces * s_.tqf), rl(nl_), xl;
  for (int e = 0; e < mesh_.n_elements; ++e) {
    for (int f = 0; f < nfaces; ++f)
      for (int t = 0; t < s_.tqf; ++t) {
        const int g = dm_.qhat_dof(mesh_.elem_facet[e][f], t);
        ph[f * s_.tqf + t] = active_[g] ? phat[g] : 0.0;
      }
    rl.setZero();
    for (int i = 0; i < s_.nQ; ++i) rl[s_.nV + i] = rq[dm_.q_dof(e, i)];
    xl = lu_mp_.solve((rl - bhat_.transpose() * ph).eval());
    for (int i = 0; i < s_.nV; ++i) utilde[dm_.vdisc_dof(e, i)] = xl[i];
    for (int i = 0; i < s_.nQ; ++i) p[dm_.q_dof(e, i)] = xl[s_.nV + i];
  }
  return;
}

} // namespace mcs
