#include "mcs/stats.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "mcs/quadrature.hpp"
#include "mcs/util.hpp"

namespace mcs {

namespace {

int ipow(int b, int e) {
  int r = 1;
  for (int i = 0; i < e; ++i) r *= b;
  return r;
}

/// Locate the element containing a physical point of the structured box.
int locate_element(const Mesh& mesh, const std::array<double, 3>& x) {
  std::array<int, 3> idx{0, 0, 0};
  for (int a = 0; a < mesh.dim; ++a) {
    double tol = 1e-9 * mesh.h[a];
    if (x[a] < mesh.lo[a] - tol || x[a] > mesh.hi[a] + tol)
      throw config_error("stats: probe point lies outside the mesh");
    int i = static_cast<int>(std::floor((x[a] - mesh.lo[a]) / mesh.h[a]));
    idx[a] = std::clamp(i, 0, mesh.cells[a] - 1);
  }
  return mesh.element_id(idx);
}

} // namespace

double kinetic_energy(const Mesh& mesh, const SpaceSet& s, const DofMap& dm,
                      const Eigen::VectorXd& u) {
  if (u.size() != dm.nV) throw config_error("kinetic_energy: wrong coefficient count");
  TensorRule rule = tensor_rule(s.dim, s.points_per_axis_bilinear());
  VelTable tab = velocity_table(s, rule.points);
  double detJ = mesh.element_volume() / ipow(2, s.dim);

  std::vector<int> dofs;
  Eigen::VectorXd loc(s.nV);
  double ke = 0.0;
  for (int e = 0; e < mesh.n_elements; ++e) {
    dm.v_elem_dofs(mesh, e, dofs);
    for (int i = 0; i < s.nV; ++i) loc[i] = u[dofs[i]];
    for (int q = 0; q < rule.npts; ++q) {
      double s2 = 0.0;
      for (int c = 0; c < s.dim; ++c) {
        double v = tab.val[c].col(q).dot(loc);
        s2 += v * v;
      }
      ke += 0.5 * rule.weights[q] * detJ * s2;
    }
  }
  return ke;
}

// ---- StatAccumulator ----

StatAccumulator::StatAccumulator(int dim, std::vector<std::array<double, 3>> probes,
                                 double t_start, double t_end)
    : dim_(dim), probes_(std::move(probes)), t_start_(t_start), t_end_(t_end) {
  if (dim_ < 1 || dim_ > 3) throw config_error("stats: dimension must be 1, 2 or 3");
  if (probes_.empty()) throw config_error("stats: at least one probe is required");
  if (!(t_start_ <= t_end_)) throw config_error("stats: empty averaging window");
  mean_u_ = Eigen::MatrixXd::Zero(dim_, n_probes());
  m2_.assign(probes_.size(), Eigen::MatrixXd::Zero(dim_, dim_));
  mean_p_ = Eigen::VectorXd::Zero(n_probes());
}

StatAccumulator::StatAccumulator(const Mesh& mesh, const SpaceSet& s, const DofMap& dm,
                                 std::vector<std::array<double, 3>> probes, double t_start,
                                 double t_end, int homogeneous_axis, int homogeneous_stations)
    : StatAccumulator(mesh.dim, std::move(probes), t_start, t_end) {
  mesh_ = &mesh;
  s_ = &s;
  dm_ = &dm;
  homog_axis_ = homogeneous_axis;
  if (homog_axis_ >= mesh.dim) throw config_error("stats: homogeneous axis out of range");
  int m = homog_axis_ >= 0 ? homogeneous_stations : 1;
  if (m < 1) throw config_error("stats: homogeneous station count must be positive");

  stations_.resize(probes_.size());
  for (std::size_t i = 0; i < probes_.size(); ++i) {
    for (int j = 0; j < m; ++j) {
      std::array<double, 3> x = probes_[i];
      if (homog_axis_ >= 0)
        x[homog_axis_] = mesh.lo[homog_axis_] +
                         (j + 0.5) * (mesh.hi[homog_axis_] - mesh.lo[homog_axis_]) / m;
      Station st;
      st.element = locate_element(mesh, x);
      auto ref = mesh.to_reference(st.element, x);
      VelTable vt = velocity_table(s, {ref});
      st.eval_v.resize(dim_, s.nV);
      for (int c = 0; c < dim_; ++c) st.eval_v.row(c) = vt.val[c].col(0).transpose();
      st.eval_p = pressure_table(s, {ref}).col(0).transpose();
      dm.v_elem_dofs(mesh, st.element, st.vdofs);
      stations_[i].push_back(std::move(st));
    }
  }
}

void StatAccumulator::check_probe_index(int probe) const {
  if (probe < 0 || probe >= n_probes()) throw config_error("stats: probe index out of range");
  if (snapshots_ == 0) throw config_error("stats: no samples accumulated");
}

void StatAccumulator::accumulate(int probe, const Eigen::VectorXd& v, const double* pval) {
  // Symmetrized multivariate Welford update: exact means for constant
  // signals and nonnegative diagonal co-moment increments.
  Eigen::VectorXd delta = v - mean_u_.col(probe);
  mean_u_.col(probe) += delta / static_cast<double>(count_);
  Eigen::VectorXd delta2 = v - mean_u_.col(probe);
  m2_[probe] += 0.5 * (delta * delta2.transpose() + delta2 * delta.transpose());
  if (pval) mean_p_[probe] += (*pval - mean_p_[probe]) / static_cast<double>(count_);
}

bool StatAccumulator::sample(const Eigen::VectorXd& u, double t, const Eigen::VectorXd* p,
                             const Eigen::VectorXd* sigma) {
  if (!mesh_) throw config_error("stats: value-driven accumulator cannot sample fields");
  if (closed_) throw config_error("stats: sample after the window was closed");
  if (u.size() != dm_->nV) throw config_error("stats: wrong velocity coefficient count");
  if (p && p->size() != dm_->nQg) throw config_error("stats: wrong pressure coefficient count");
  if (sigma && sigma->size() != dm_->nSigmaG)
    throw config_error("stats: wrong stress coefficient count");
  if (snapshots_ > 0 && (p != nullptr) != has_pressure_)
    throw config_error("stats: pressure must be supplied consistently");
  if (snapshots_ > 0 && (sigma != nullptr) != has_stress_)
    throw config_error("stats: stress must be supplied consistently");
  if (t < t_start_ || t > t_end_) return false;

  has_pressure_ = p != nullptr;
  has_stress_ = sigma != nullptr;
  ++snapshots_;
  if (sigma) {
    if (mean_sigma_.size() == 0) mean_sigma_ = Eigen::VectorXd::Zero(dm_->nSigmaG);
    mean_sigma_ += (*sigma - mean_sigma_) / static_cast<double>(snapshots_);
  }

  // Every probe has the same station count; advance the shared sample
  // counter once per station and fold that station into every probe.
  int m = static_cast<int>(stations_[0].size());
  Eigen::VectorXd loc(s_->nV), v(dim_);
  for (int j = 0; j < m; ++j) {
    ++count_;
    for (int i = 0; i < n_probes(); ++i) {
      const Station& st = stations_[i][j];
      for (int a = 0; a < s_->nV; ++a) loc[a] = u[st.vdofs[a]];
      v = st.eval_v * loc;
      double pv = 0.0;
      if (p) pv = st.eval_p.dot(p->segment(st.element * s_->nQ, s_->nQ));
      accumulate(i, v, p ? &pv : nullptr);
    }
  }
  return true;
}

bool StatAccumulator::sample_values(const Eigen::MatrixXd& uvals, double t,
                                    const Eigen::VectorXd* pvals) {
  if (closed_) throw config_error("stats: sample after the window was closed");
  if (uvals.rows() != dim_ || uvals.cols() != n_probes())
    throw config_error("stats: value matrix must be dim x n_probes");
  if (pvals && pvals->size() != n_probes())
    throw config_error("stats: pressure values must match the probe count");
  if (snapshots_ > 0 && (pvals != nullptr) != has_pressure_)
    throw config_error("stats: pressure must be supplied consistently");
  if (snapshots_ > 0 && has_stress_)
    throw config_error("stats: cannot mix value samples with stress-carrying samples");
  if (t < t_start_ || t > t_end_) return false;

  has_pressure_ = pvals != nullptr;
  ++snapshots_;
  ++count_;
  for (int i = 0; i < n_probes(); ++i) {
    double pv = pvals ? (*pvals)[i] : 0.0;
    accumulate(i, uvals.col(i), pvals ? &pv : nullptr);
  }
  return true;
}

Eigen::VectorXd StatAccumulator::mean_velocity(int probe) const {
  check_probe_index(probe);
  return mean_u_.col(probe);
}

Eigen::MatrixXd StatAccumulator::covariance(int probe) const {
  check_probe_index(probe);
  return m2_[probe] / static_cast<double>(count_);
}

Eigen::MatrixXd StatAccumulator::second_moment(int probe) const {
  check_probe_index(probe);
  return m2_[probe] / static_cast<double>(count_) +
         mean_u_.col(probe) * mean_u_.col(probe).transpose();
}

double StatAccumulator::turbulent_energy(int probe) const {
  // The diagonal co-moments are nonnegative up to the last rounding; clamp so
  // the reported energy never dips below zero.
  return std::max(0.0, 0.5 * covariance(probe).trace());
}

double StatAccumulator::mean_pressure(int probe) const {
  check_probe_index(probe);
  if (!has_pressure_) throw config_error("stats: no pressure was accumulated");
  return mean_p_[probe];
}

const Eigen::VectorXd& StatAccumulator::mean_stress() const {
  if (snapshots_ == 0) throw config_error("stats: no samples accumulated");
  if (!has_stress_) throw config_error("stats: no stress was accumulated");
  return mean_sigma_;
}

// ---- wall profiles ----

double WallProfile::log_law(double np) const { return std::log(np) / kappa + c_plus; }

namespace {

/// Derivative at 0 of the polynomial through (0,0) and the given points.
double one_sided_slope(const std::vector<double>& n, const std::vector<double>& u) {
  int q = static_cast<int>(n.size());
  Eigen::MatrixXd vand = Eigen::MatrixXd::Zero(q + 1, q + 1);
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(q + 1);
  vand(0, 0) = 1.0;
  for (int i = 0; i < q; ++i) {
    double piv = 1.0;
    for (int j = 0; j <= q; ++j) {
      vand(i + 1, j) = piv;
      piv *= n[i];
    }
    rhs[i + 1] = u[i];
  }
  Eigen::VectorXd coef = vand.colPivHouseholderQr().solve(rhs);
  return coef[1];
}

/// Mean stress nt-component at the wall foot of the probe line, averaged over
/// the homogeneous stations when present.
double wall_stress_nt(const StatAccumulator& acc, const WallGeometry& wall,
                      const std::array<double, 3>& foot, const Eigen::VectorXd& tdir) {
  const Mesh& mesh = *acc.mesh();
  const SpaceSet& s = *acc.spaces();
  const DofMap& dm = *acc.dof_map();
  const Eigen::VectorXd& sig = acc.mean_stress();

  int m = 1;
  if (acc.homogeneous_axis() >= 0) m = 8;
  double total = 0.0;
  for (int j = 0; j < m; ++j) {
    std::array<double, 3> x = foot;
    x[wall.axis] = wall.coord;
    int az = acc.homogeneous_axis();
    if (az >= 0) x[az] = mesh.lo[az] + (j + 0.5) * (mesh.hi[az] - mesh.lo[az]) / m;
    int e = locate_element(mesh, x);
    auto ref = mesh.to_reference(e, x);
    for (int a = 0; a < mesh.dim; ++a) ref[a] = std::clamp(ref[a], -1.0, 1.0);
    SigmaTable tab = sigma_table(s, {ref});
    // outward wall normal seen from the fluid: -e_axis on the low side
    double sgn_out = wall.side == 0 ? -1.0 : 1.0;
    double v = 0.0;
    for (int c = 0; c < mesh.dim; ++c) {
      if (tdir[c] == 0.0) continue;
      const Eigen::MatrixXd& comp = tab.val[wall.axis * mesh.dim + c];
      for (int i = 0; i < s.nSigma; ++i) v += sig[dm.sigma_dof(e, i)] * comp(i, 0) * tdir[c];
    }
    total += sgn_out * v;
  }
  return total / m;
}

} // namespace

WallProfile wall_profile(const StatAccumulator& acc, const WallGeometry& wall, double nu) {
  if (!acc.closed()) throw config_error("wall_profile: averaging window is still open");
  if (!(nu > 0.0)) throw config_error("wall_profile: viscosity must be positive");
  if (wall.axis < 0 || wall.axis >= acc.dim())
    throw config_error("wall_profile: wall axis out of range");
  if (wall.side != 0 && wall.side != 1) throw config_error("wall_profile: side must be 0 or 1");

  int np = acc.n_probes();
  double inward = wall.side == 0 ? 1.0 : -1.0;
  std::vector<int> order(np);
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> dist(np);
  for (int i = 0; i < np; ++i) {
    dist[i] = inward * (acc.probes()[i][wall.axis] - wall.coord);
    if (dist[i] < 0.0) throw config_error("wall_profile: probe lies behind the wall");
  }
  std::sort(order.begin(), order.end(), [&](int a, int b) { return dist[a] < dist[b]; });
  for (int i = 1; i < np; ++i)
    if (dist[order[i]] == dist[order[i - 1]])
      throw config_error("wall_profile: duplicate wall-normal probe distances");

  WallProfile prof;
  prof.n.resize(np);
  for (int i = 0; i < np; ++i) prof.n[i] = dist[order[i]];

  // Flow direction: mean tangential velocity at the outermost probe with a
  // nonzero one; used for the profile component and the shear stress pairing.
  Eigen::VectorXd tdir = Eigen::VectorXd::Zero(acc.dim());
  for (int i = np - 1; i >= 0; --i) {
    Eigen::VectorXd mt = acc.mean_velocity(order[i]);
    mt[wall.axis] = 0.0;
    if (mt.norm() > 0.0) {
      tdir = mt / mt.norm();
      break;
    }
  }
  if (tdir.norm() == 0.0) tdir[wall.axis == 0 ? (acc.dim() > 1 ? 1 : 0) : 0] = 1.0;

  prof.ut.resize(np);
  for (int i = 0; i < np; ++i) {
    Eigen::VectorXd mt = acc.mean_velocity(order[i]);
    mt[wall.axis] = 0.0;
    prof.ut[i] = tdir.dot(mt);
  }

  if (acc.has_stress() && acc.mesh()) {
    prof.from_stress = true;
    double snt = wall_stress_nt(acc, wall, acc.probes()[order[0]], tdir);
    prof.u_tau = std::sqrt(std::abs(snt));
  } else {
    std::vector<double> fn, fu;
    for (int i = 0; i < np && static_cast<int>(fn.size()) < 3; ++i) {
      if (prof.n[i] <= 0.0) continue;
      fn.push_back(prof.n[i]);
      fu.push_back(prof.ut[i]);
    }
    if (fn.empty()) throw config_error("wall_profile: no probes off the wall");
    prof.u_tau = std::sqrt(nu * std::abs(one_sided_slope(fn, fu)));
  }

  prof.defined = prof.u_tau > 0.0;
  if (!prof.defined) return prof;

  prof.n_plus = prof.n * (prof.u_tau / nu);
  prof.ut_plus = prof.ut / prof.u_tau;
  prof.k_plus.resize(np);
  prof.uv_plus.resize(np);
  Eigen::VectorXd ndir = Eigen::VectorXd::Zero(acc.dim());
  ndir[wall.axis] = inward;
  for (int i = 0; i < np; ++i) {
    prof.k_plus[i] = acc.turbulent_energy(order[i]) / (prof.u_tau * prof.u_tau);
    prof.uv_plus[i] = tdir.dot(acc.covariance(order[i]) * ndir) / (prof.u_tau * prof.u_tau);
  }
  return prof;
}

WallProfile wall_profile(const StatAccumulator& acc, int wall_face, double nu) {
  if (!acc.mesh()) throw config_error("wall_profile: face lookup needs a field accumulator");
  const Mesh& mesh = *acc.mesh();
  if (wall_face < 0 || wall_face >= 2 * mesh.dim)
    throw config_error("wall_profile: face index out of range");
  int axis = wall_face / 2;
  if (mesh.bc.periodic[axis])
    throw config_error("wall_profile: the requested face lies on a periodic axis");
  if (mesh.bc.face_tag[wall_face] != FacetTag::Wall)
    throw config_error("wall_profile: the requested face is not tagged Wall");
  WallGeometry g;
  g.axis = axis;
  g.side = wall_face % 2;
  g.coord = g.side == 0 ? mesh.lo[axis] : mesh.hi[axis];
  return wall_profile(acc, g, nu);
}

std::string wall_profile_csv(const WallProfile& prof) {
  if (!prof.defined) throw config_error("wall_profile_csv: profile has zero wall shear");
  std::string out = "n,n_plus,ut_plus,k_plus,uv_plus\n";
  for (int i = 0; i < prof.n.size(); ++i) {
    out += fmt_g17(prof.n[i]) + ',' + fmt_g17(prof.n_plus[i]) + ',' + fmt_g17(prof.ut_plus[i]) +
           ',' + fmt_g17(prof.k_plus[i]) + ',' + fmt_g17(prof.uv_plus[i]) + '\n';
  }
  return out;
}

// ---- boundary-layer thicknesses ----

Thicknesses boundary_layer_thicknesses(const Eigen::VectorXd& n, const Eigen::VectorXd& ut,
                                       double edge_fraction) {
  if (n.size() != ut.size()) throw config_error("thicknesses: mismatched profile arrays");
  if (n.size() < 2) throw config_error("thicknesses: at least two samples are required");
  for (int i = 1; i < n.size(); ++i)
    if (!(n[i] > n[i - 1]))
      throw config_error("thicknesses: wall-normal coordinates must increase");
  if (!(edge_fraction > 0.0 && edge_fraction <= 1.0))
    throw config_error("thicknesses: edge fraction must lie in (0, 1]");

  Thicknesses th;
  int imax = 0;
  ut.maxCoeff(&imax);
  double ue = ut[imax];
  if (!(ue > 0.0)) throw config_error("thicknesses: nonpositive edge velocity");
  th.edge_velocity = ue;

  double thr = edge_fraction * ue;
  int ie = 0;
  while (ie < n.size() && ut[ie] < thr) ++ie;
  for (int j = ie; j <= imax; ++j) {
    if (ut[j] < thr) {
      std::string dump = "thicknesses: profile is not monotone near the edge; samples:";
      for (int i = 0; i < n.size(); ++i) {
        char line[80];
        std::snprintf(line, sizeof(line), "\n  n=%.9g u=%.9g", n[i], ut[i]);
        dump += line;
      }
      throw solver_error(dump);
    }
  }
  if (ie == 0)
    th.edge_position = n[0];
  else
    th.edge_position = n[ie - 1] + (thr - ut[ie - 1]) / (ut[ie] - ut[ie - 1]) * (n[ie] - n[ie - 1]);

  // Exact integrals of the piecewise-linear profile segment by segment.
  for (int i = 0; i + 1 < n.size(); ++i) {
    double h = n[i + 1] - n[i];
    double a = ut[i] / ue, b = ut[i + 1] / ue;
    double mean = 0.5 * (a + b);
    double meansq = (a * a + a * b + b * b) / 3.0;
    th.delta_star += h * (1.0 - mean);
    th.theta += h * (mean - meansq);
  }
  th.shape_defined = th.theta > 0.0;
  th.shape = th.shape_defined ? th.delta_star / th.theta
                              : std::numeric_limits<double>::quiet_NaN();
  return th;
}

} // namespace mcs
