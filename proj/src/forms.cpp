#include "mcs/forms.hpp"

#include <cmath>

#include "mcs/util.hpp"

namespace mcs {

namespace {

int ipow(int b, int e) {
  int r = 1;
  while (e-- > 0) r *= b;
  return r;
}

double element_volume(const SpaceSet& s) {
  double v = 1.0;
  for (int a = 0; a < s.dim; ++a) v *= s.h[a];
  return v;
}

double face_measure(const SpaceSet& s, int axis) {
  double m = 1.0;
  for (int a = 0; a < s.dim; ++a)
    if (a != axis) m *= s.h[a];
  return m;
}

std::vector<std::array<double, 3>> embedded_face_points(int dim, int face,
                                                        const TensorRule& frule) {
  std::vector<std::array<double, 3>> pts;
  pts.reserve(frule.npts);
  for (int q = 0; q < frule.npts; ++q) pts.push_back(embed_face_point(dim, face, frule.points[q]));
  return pts;
}

} // namespace

LocalBlocks build_local_blocks(const SpaceSet& s) {
  int d = s.dim;
  LocalBlocks lb;
  TensorRule vol = tensor_rule(d, s.points_per_axis_bilinear());
  double detJ = element_volume(s) / ipow(2, d);

  VelTable vt = velocity_table(s, vol.points);
  SigmaTable st = sigma_table(s, vol.points);
  MatTable wt = spin_table(s, vol.points);
  Eigen::MatrixXd pt = pressure_table(s, vol.points);

  lb.m_sig = Eigen::MatrixXd::Zero(s.nSigma, s.nSigma);
  lb.m_vel = Eigen::MatrixXd::Zero(s.nV, s.nV);
  lb.b_gam = Eigen::MatrixXd::Zero(s.nW, s.nSigma);
  lb.b_u = Eigen::MatrixXd::Zero(s.nV, s.nSigma);
  lb.b1 = Eigen::MatrixXd::Zero(s.nQ, s.nV);

  for (int q = 0; q < vol.npts; ++q) {
    double w = vol.weights[q] * detJ;
    for (int c = 0; c < d * d; ++c)
      lb.m_sig += w * st.val[c].col(q) * st.val[c].col(q).transpose();
    for (int c = 0; c < d; ++c) lb.m_vel += w * vt.val[c].col(q) * vt.val[c].col(q).transpose();
    for (int c = 0; c < d * d; ++c)
      lb.b_gam -= w * wt.val[c].col(q) * st.val[c].col(q).transpose();
    for (int r = 0; r < d; ++r) lb.b_u -= w * vt.val[r].col(q) * st.divrow[r].col(q).transpose();
    lb.b1 -= w * pt.col(q) * vt.div.col(q).transpose();
  }

  TensorRule frule = tensor_rule(d - 1, s.points_per_axis_bilinear());
  Eigen::MatrixXd sc = facet_scalar_table(s, frule.points);
  for (int face = 0; face < 2 * d; ++face) {
    int a = face / 2;
    double sgn = face % 2 == 0 ? -1.0 : 1.0;
    double wfac = face_measure(s, a) / ipow(2, d - 1);
    auto pts = embedded_face_points(d, face, frule);
    VelTable fv = velocity_table(s, pts);
    SigmaTable fs = sigma_table(s, pts);

    lb.b_uhat[face] = Eigen::MatrixXd::Zero(s.tvf, s.nSigma);
    lb.b3[face] = Eigen::MatrixXd::Zero(s.tqf, s.nV);
    int t1 = -1, t2 = -1;
    for (int b = 0; b < d; ++b)
      if (b != a) (t1 < 0 ? t1 : t2) = b;

    for (int q = 0; q < frule.npts; ++q) {
      double w = frule.weights[q] * wfac;
      // sigma_nn (v.n) boundary part of the velocity row
      lb.b_u += w * (sgn * fv.val[a].col(q)) * fs.val[a * d + a].col(q).transpose();
      // sigma_nt . vhat, componentwise over the tangential axes
      for (int tc = 0; tc < d - 1; ++tc) {
        int r = tc == 0 ? t1 : t2;
        lb.b_uhat[face].block(tc * s.tqf, 0, s.tqf, s.nSigma) +=
            w * sc.col(q) * (sgn * fs.val[r * d + a].col(q)).transpose();
      }
      // (v.n_out) qhat
      lb.b3[face] += w * sc.col(q) * (sgn * fv.val[a].col(q)).transpose();
    }
  }
  return lb;
}

SystemBlocks assemble_system_blocks(const Mesh& mesh, const SpaceSet& s, const DofMap& dm,
                                    double nu, double dt) {
  if (nu <= 0.0) throw config_error("forms: viscosity must be positive");
  if (dt <= 0.0) throw config_error("forms: time step must be positive");
  LocalBlocks lb = build_local_blocks(s);
  int d = s.dim;

  using T = Eigen::Triplet<double>;
  std::vector<T> t_msig, t_bgam, t_bu, t_buhat, t_muu, t_mut, t_bput, t_bphat, t_bpu;
  std::vector<int> vd;

  for (int e = 0; e < mesh.n_elements; ++e) {
    dm.v_elem_dofs(mesh, e, vd);
    for (int i = 0; i < s.nSigma; ++i)
      for (int j = 0; j < s.nSigma; ++j)
        t_msig.emplace_back(dm.sigma_dof(e, i), dm.sigma_dof(e, j),
                            -lb.m_sig(i, j) / (2.0 * nu));
    for (int i = 0; i < s.nW; ++i)
      for (int j = 0; j < s.nSigma; ++j)
        t_bgam.emplace_back(dm.w_dof(e, i), dm.sigma_dof(e, j), lb.b_gam(i, j));
    for (int i = 0; i < s.nV; ++i)
      for (int j = 0; j < s.nSigma; ++j)
        t_bu.emplace_back(vd[i], dm.sigma_dof(e, j), lb.b_u(i, j));
    for (int face = 0; face < 2 * d; ++face) {
      int f = mesh.elem_facet[e][face];
      for (int i = 0; i < s.tvf; ++i)
        for (int j = 0; j < s.nSigma; ++j)
          t_buhat.emplace_back(dm.vhat_dof(f, i), dm.sigma_dof(e, j), lb.b_uhat[face](i, j));
      if (mesh.facets[f].tag != FacetTag::Outlet)
        for (int i = 0; i < s.tqf; ++i)
          for (int j = 0; j < s.nV; ++j)
            t_bphat.emplace_back(dm.qhat_dof(f, i), dm.vdisc_dof(e, j), lb.b3[face](i, j));
    }
    for (int i = 0; i < s.nV; ++i)
      for (int j = 0; j < s.nV; ++j) {
        t_muu.emplace_back(vd[i], vd[j], lb.m_vel(i, j) / dt);
        t_mut.emplace_back(dm.vdisc_dof(e, i), dm.vdisc_dof(e, j), lb.m_vel(i, j));
      }
    for (int i = 0; i < s.nQ; ++i)
      for (int j = 0; j < s.nV; ++j) {
        t_bput.emplace_back(dm.q_dof(e, i), dm.vdisc_dof(e, j), lb.b1(i, j));
        t_bpu.emplace_back(dm.q_dof(e, i), vd[j], lb.b1(i, j));
      }
  }

  SystemBlocks sb;
  auto build = [](Eigen::SparseMatrix<double>& m, int rows, int cols, std::vector<T>& t) {
    m.resize(rows, cols);
    m.setFromTriplets(t.begin(), t.end());
    m.makeCompressed();
  };
  build(sb.Msigsig, dm.nSigmaG, dm.nSigmaG, t_msig);
  build(sb.Bgamsig, dm.nWg, dm.nSigmaG, t_bgam);
  build(sb.Busig, dm.nV, dm.nSigmaG, t_bu);
  build(sb.Buhatsig, dm.nVhat, dm.nSigmaG, t_buhat);
  build(sb.Muu, dm.nV, dm.nV, t_muu);
  build(sb.Mutut, dm.nVdisc, dm.nVdisc, t_mut);
  build(sb.Bput, dm.nQg, dm.nVdisc, t_bput);
  build(sb.Bphatut, dm.nQhat, dm.nVdisc, t_bphat);
  build(sb.Bpu, dm.nQg, dm.nV, t_bpu);
  return sb;
}

Eigen::SparseMatrix<double> assemble_velocity_mass(const Mesh& mesh, const SpaceSet& s,
                                                   const DofMap& dm) {
  LocalBlocks lb = build_local_blocks(s);
  std::vector<Eigen::Triplet<double>> trips;
  std::vector<int> vd;
  for (int e = 0; e < mesh.n_elements; ++e) {
    dm.v_elem_dofs(mesh, e, vd);
    for (int i = 0; i < s.nV; ++i)
      for (int j = 0; j < s.nV; ++j) trips.emplace_back(vd[i], vd[j], lb.m_vel(i, j));
  }
  Eigen::SparseMatrix<double> m(dm.nV, dm.nV);
  m.setFromTriplets(trips.begin(), trips.end());
  m.makeCompressed();
  return m;
}

ConvectionOperator::ConvectionOperator(const Mesh& mesh, const SpaceSet& s, const DofMap& dm)
    : mesh_(mesh), s_(s), dm_(dm),
      vol_rule_(tensor_rule(s.dim, s.points_per_axis_nonlinear())),
      vol_tab_(velocity_table(s, vol_rule_.points, true)),
      projector_(s, s.points_per_axis_nonlinear()) {
  w_vol_ = element_volume(s) / ipow(2, s.dim);
  for (int face = 0; face < 2 * s.dim; ++face) {
    face_pts_[face] = embedded_face_points(s.dim, face, projector_.rule());
    face_tab_[face] = velocity_table(s, face_pts_[face]);
  }
}

int ConvectionOperator::effective_order(const FluxConfig& cfg, int facet) const {
  switch (cfg.mode) {
    case FluxMode::Central: return s_.k;
    case FluxMode::Upwind: return -1;
    case FluxMode::HopuFixed:
      if (cfg.fixed_order < 0 || cfg.fixed_order > s_.k)
        throw config_error("convection: fixed projection order out of range");
      return cfg.fixed_order;
    case FluxMode::HopuAdaptive:
      if (cfg.orders == nullptr)
        throw config_error("convection: adaptive flux requires an order field");
      return cfg.orders->order[facet];
  }
  return -1;
}

void ConvectionOperator::facet_traces(const Eigen::VectorXd& u, int facet,
                                      const VectorField* inlet, Eigen::MatrixXd& owner,
                                      Eigen::MatrixXd& neighbor) const {
  const Facet& f = mesh_.facets[facet];
  int d = s_.dim;
  int nq = projector_.rule().npts;
  owner.resize(nq, d);
  neighbor.resize(nq, d);

  std::vector<int> vd;
  Eigen::VectorXd ul(s_.nV);
  dm_.v_elem_dofs(mesh_, f.owner, vd);
  for (int i = 0; i < s_.nV; ++i) ul[i] = u[vd[i]];
  for (int c = 0; c < d; ++c) owner.col(c) = face_tab_[f.owner_face].val[c].transpose() * ul;

  if (f.neighbor >= 0) {
    dm_.v_elem_dofs(mesh_, f.neighbor, vd);
    for (int i = 0; i < s_.nV; ++i) ul[i] = u[vd[i]];
    for (int c = 0; c < d; ++c)
      neighbor.col(c) = face_tab_[f.neighbor_face].val[c].transpose() * ul;
  } else if (f.tag == FacetTag::Inlet && inlet != nullptr) {
    for (int q = 0; q < nq; ++q) {
      auto x = mesh_.to_physical(f.owner, face_pts_[f.owner_face][q]);
      auto v = (*inlet)(x);
      for (int c = 0; c < d; ++c) neighbor(q, c) = v[c];
    }
  } else {
    neighbor.setZero();
  }
}

Eigen::VectorXd ConvectionOperator::apply(const Eigen::VectorXd& u, const FluxConfig& cfg,
                                          const VectorField* inlet) const {
  int d = s_.dim;
  int nqv = vol_rule_.npts;
  int nqf = projector_.rule().npts;
  Eigen::VectorXd r = Eigen::VectorXd::Zero(dm_.nV);
  std::vector<int> vd;
  Eigen::VectorXd ul(s_.nV);

  // volume term: ((grad u) u, v) per element
  Eigen::MatrixXd uval(nqv, d), gval(nqv, d * d);
  for (int e = 0; e < mesh_.n_elements; ++e) {
    dm_.v_elem_dofs(mesh_, e, vd);
    for (int i = 0; i < s_.nV; ++i) ul[i] = u[vd[i]];
    for (int c = 0; c < d; ++c) {
      uval.col(c) = vol_tab_.val[c].transpose() * ul;
      for (int a = 0; a < d; ++a)
        gval.col(c * d + a) = vol_tab_.grad[c][a].transpose() * ul;
    }
    Eigen::VectorXd dens(nqv);
    for (int c = 0; c < d; ++c) {
      for (int q = 0; q < nqv; ++q) {
        double v = 0.0;
        for (int a = 0; a < d; ++a) v += gval(q, c * d + a) * uval(q, a);
        dens[q] = vol_rule_.weights[q] * w_vol_ * v;
      }
      Eigen::VectorXd loc = vol_tab_.val[c] * dens;
      for (int i = 0; i < s_.nV; ++i) r[vd[i]] += loc[i];
    }
  }

  // facet terms
  Eigen::MatrixXd uo, un, jump(nqf, d), dens(nqf, d), resid, pres;
  for (const auto& f : mesh_.facets) {
    if (!f.is_convective()) continue;
    int l = effective_order(cfg, f.id);
    facet_traces(u, f.id, inlet, uo, un);
    double wfac = face_measure(s_, f.axis) / ipow(2, d - 1);
    const auto& frule = projector_.rule();

    Eigen::VectorXd unorm = f.sign * uo.col(f.axis); // single-valued normal velocity
    jump = uo - un;

    // central part: -(u.n) [[u]] . <v>, with <v> = (v_own + v_nei)/2
    for (int c = 0; c < d; ++c)
      for (int q = 0; q < nqf; ++q)
        dens(q, c) = -frule.weights[q] * wfac * unorm[q] * jump(q, c) * 0.5;
    // upwind part: 1/2 |u.n| (I-Pi)[[u]] . (I-Pi)[[v]]; the projector is
    // self-adjoint in the facet quadrature inner product, so fold (I-Pi)
    // into the density and test against the plain jump [[v]]
    bool penalty = l < s_.k;
    if (penalty) {
      projector_.residual(l, jump, resid);
      for (int c = 0; c < d; ++c)
        for (int q = 0; q < nqf; ++q) resid(q, c) *= 0.5 * std::abs(unorm[q]);
      projector_.residual(l, resid, pres);
    }

    dm_.v_elem_dofs(mesh_, f.owner, vd);
    for (int c = 0; c < d; ++c) {
      Eigen::VectorXd g = dens.col(c);
      if (penalty) {
        for (int q = 0; q < nqf; ++q) g[q] += frule.weights[q] * wfac * pres(q, c);
      }
      Eigen::VectorXd loc = face_tab_[f.owner_face].val[c] * g;
      for (int i = 0; i < s_.nV; ++i) r[vd[i]] += loc[i];
    }
    if (f.neighbor >= 0) {
      dm_.v_elem_dofs(mesh_, f.neighbor, vd);
      for (int c = 0; c < d; ++c) {
        Eigen::VectorXd g = dens.col(c);
        if (penalty) {
          for (int q = 0; q < nqf; ++q) g[q] -= frule.weights[q] * wfac * pres(q, c);
        }
        Eigen::VectorXd loc = face_tab_[f.neighbor_face].val[c] * g;
        for (int i = 0; i < s_.nV; ++i) r[vd[i]] += loc[i];
      }
    }
  }
  return r;
}

double ConvectionOperator::dissipation(const Eigen::VectorXd& u, const FluxConfig& cfg,
                                       const VectorField* inlet) const {
  int d = s_.dim;
  int nqf = projector_.rule().npts;
  double total = 0.0;
  Eigen::MatrixXd uo, un, resid;
  for (const auto& f : mesh_.facets) {
    if (!f.is_convective()) continue;
    int l = effective_order(cfg, f.id);
    if (l >= s_.k) continue; // identity projection: no stabilization
    facet_traces(u, f.id, inlet, uo, un);
    Eigen::MatrixXd jump = uo - un;
    projector_.residual(l, jump, resid);
    double wfac = face_measure(s_, f.axis) / ipow(2, d - 1);
    for (int q = 0; q < nqf; ++q) {
      double un_q = std::abs(f.sign * uo(q, f.axis));
      total += 0.5 * projector_.rule().weights[q] * wfac * un_q * resid.row(q).squaredNorm();
    }
  }
  return total;
}

double ConvectionOperator::rms_velocity(const Eigen::VectorXd& u) const {
  int d = s_.dim;
  double total = 0.0;
  std::vector<int> vd;
  Eigen::VectorXd ul(s_.nV);
  for (int e = 0; e < mesh_.n_elements; ++e) {
    dm_.v_elem_dofs(mesh_, e, vd);
    for (int i = 0; i < s_.nV; ++i) ul[i] = u[vd[i]];
    for (int c = 0; c < d; ++c) {
      Eigen::VectorXd v = vol_tab_.val[c].transpose() * ul;
      for (int q = 0; q < vol_rule_.npts; ++q)
        total += vol_rule_.weights[q] * w_vol_ * v[q] * v[q];
    }
  }
  return std::sqrt(total / mesh_.domain_volume());
}

} // namespace mcs
