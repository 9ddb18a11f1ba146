#include <cmath>
#include <random>

#include "doctest.h"
#include "mcs/forms.hpp"
#include "mcs/hopu.hpp"
#include "mcs/mesh.hpp"
#include "mcs/quadrature.hpp"
#include "mcs/spaces.hpp"
#include "mcs/util.hpp"

using namespace mcs;

namespace {

int sigma_index(const SpaceSet& s, int gen, std::array<int, 3> leg) {
  for (int i = 0; i < s.nSigma; ++i)
    if (s.sigma_shapes[i].gen == gen && s.sigma_shapes[i].leg == leg) return i;
  return -1;
}

double max_abs(const Eigen::MatrixXd& m) { return m.size() == 0 ? 0.0 : m.cwiseAbs().maxCoeff(); }

/// Gather element coefficients and evaluate the velocity at reference points.
Eigen::MatrixXd velocity_values(const Mesh& mesh, const SpaceSet& s, const DofMap& dm,
                                const Eigen::VectorXd& u, int e,
                                const std::vector<std::array<double, 3>>& pts) {
  VelTable tab = velocity_table(s, pts);
  std::vector<int> vd;
  dm.v_elem_dofs(mesh, e, vd);
  Eigen::MatrixXd out(static_cast<int>(pts.size()), s.dim);
  for (int c = 0; c < s.dim; ++c)
    for (int q = 0; q < static_cast<int>(pts.size()); ++q) {
      double acc = 0.0;
      for (int i = 0; i < s.nV; ++i) acc += u[vd[i]] * tab.val[c](i, q);
      out(q, c) = acc;
    }
  return out;
}

/// Copy a V coefficient vector into the broken space (both sides of every
/// facet receive the shared normal dof).
Eigen::VectorXd embed_broken(const Mesh& mesh, const SpaceSet& s, const DofMap& dm,
                             const Eigen::VectorXd& u) {
  Eigen::VectorXd ud(dm.nVdisc);
  std::vector<int> vd;
  for (int e = 0; e < mesh.n_elements; ++e) {
    dm.v_elem_dofs(mesh, e, vd);
    for (int i = 0; i < s.nV; ++i) ud[dm.vdisc_dof(e, i)] = u[vd[i]];
  }
  return ud;
}

/// Kernel of the assembled divergence constraint: a basis of discretely
/// divergence-free velocity fields.
Eigen::MatrixXd divergence_kernel(const Eigen::SparseMatrix<double>& Bpu) {
  Eigen::FullPivLU<Eigen::MatrixXd> lu{Eigen::MatrixXd(Bpu)};
  return lu.kernel();
}

} // namespace

TEST_CASE("local blocks: stress mass hand values") {
  auto s = build_space_set(2, 1, {1.0, 1.0, 1.0});
  LocalBlocks lb = build_local_blocks(s);

  // generator diag(1,-1) contracted with itself is 2, so the constant shape
  // integrates to 2 * volume on the unit element
  int i0 = sigma_index(s, 0, {0, 0, 0});
  int i1 = sigma_index(s, 1, {0, 0, 0});
  REQUIRE(i0 >= 0);
  REQUIRE(i1 >= 0);
  CHECK(lb.m_sig(i0, i0) == doctest::Approx(2.0).epsilon(1e-14));
  // distinct generators are pointwise orthogonal
  CHECK(std::abs(lb.m_sig(i0, i1)) < 1e-14);

  // anisotropic element: entries scale with the volume only (no Piola map)
  auto sa = build_space_set(2, 1, {0.5, 0.25, 1.0});
  LocalBlocks lba = build_local_blocks(sa);
  CHECK(lba.m_sig(i0, i0) == doctest::Approx(2.0 * 0.125).epsilon(1e-14));
}

TEST_CASE("assembled stress block: scaling and sign") {
  BoundarySpec bc;
  auto mesh = build_box_mesh(2, {1, 1, 1}, {0.0, 0.0, 0.0}, {1.0, 1.0, 1.0}, bc);
  auto s = build_space_set(2, 1, mesh.h);
  auto dm = build_dof_map(mesh, s);

  auto sb = assemble_system_blocks(mesh, s, dm, 0.5, 1.0);
  int i0 = sigma_index(s, 0, {0, 0, 0});
  // -1/(2 nu) * 2 = -2 at nu = 1/2
  CHECK(sb.Msigsig.coeff(i0, i0) == doctest::Approx(-2.0).epsilon(1e-14));

  // doubling the viscosity halves the block
  auto sb2 = assemble_system_blocks(mesh, s, dm, 1.0, 1.0);
  Eigen::MatrixXd d1(sb.Msigsig), d2(sb2.Msigsig);
  CHECK(max_abs(d1 - 2.0 * d2) < 1e-13);

  // symmetric negative definite
  CHECK(max_abs(d1 - d1.transpose()) < 1e-14);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(-d1);
  CHECK(es.eigenvalues().minCoeff() > 0.0);

  CHECK_THROWS_AS(assemble_system_blocks(mesh, s, dm, -1.0, 1.0), config_error);
  CHECK_THROWS_AS(assemble_system_blocks(mesh, s, dm, 1.0, 0.0), config_error);
}

TEST_CASE("velocity mass blocks: SPD and time-step scaling") {
  BoundarySpec bc;
  bc.periodic = {true, false, false};
  auto mesh = build_box_mesh(2, {2, 2, 1}, {0.0, 0.0, 0.0}, {1.0, 1.0, 1.0}, bc);
  auto s = build_space_set(2, 2, mesh.h);
  auto dm = build_dof_map(mesh, s);

  double dt = 0.02;
  auto sb = assemble_system_blocks(mesh, s, dm, 1.0, dt);
  auto M = assemble_velocity_mass(mesh, s, dm);

  Eigen::MatrixXd muu(sb.Muu), m(M);
  CHECK(max_abs(muu - muu.transpose()) < 1e-12);
  CHECK(max_abs(dt * muu - m) < 1e-13 * max_abs(m));
  Eigen::LLT<Eigen::MatrixXd> llt(muu);
  CHECK(llt.info() == Eigen::Success);

  // the broken mass carries one unscaled element mass block per element
  LocalBlocks lb = build_local_blocks(s);
  Eigen::MatrixXd mut(sb.Mutut);
  for (int e = 0; e < mesh.n_elements; ++e) {
    Eigen::MatrixXd blk = mut.block(e * s.nV, e * s.nV, s.nV, s.nV);
    CHECK(max_abs(blk - lb.m_vel) < 1e-14);
  }

  // embedding V into the broken space preserves the quadratic form
  std::mt19937 rng(3);
  std::normal_distribution<double> dist;
  Eigen::VectorXd u(dm.nV);
  for (int i = 0; i < dm.nV; ++i) u[i] = dist(rng);
  Eigen::VectorXd ud = embed_broken(mesh, s, dm, u);
  CHECK(ud.dot(mut * ud) == doctest::Approx(u.dot(m * u)).epsilon(1e-13));
  CHECK(max_abs(sb.Bput * ud - sb.Bpu * u) < 1e-13 * u.cwiseAbs().maxCoeff());
}

TEST_CASE("divergence constraint: hand values") {
  BoundarySpec bc;
  auto mesh = build_box_mesh(2, {2, 2, 1}, {0.0, 0.0, 0.0}, {1.0, 1.0, 1.0}, bc);
  auto s = build_space_set(2, 1, mesh.h);
  auto dm = build_dof_map(mesh, s);
  auto sb = assemble_system_blocks(mesh, s, dm, 1.0, 1.0);

  // u = (x, y): div u = 2, so only the constant pressure mode of each
  // element responds, with -2 * element volume = -0.5
  VectorField lin = [](const std::array<double, 3>& x) {
    return std::array<double, 3>{x[0], x[1], 0.0};
  };
  Eigen::VectorXd u = l2_project_velocity_plain(mesh, s, dm, lin);
  Eigen::VectorXd r = sb.Bpu * u;
  for (int e = 0; e < mesh.n_elements; ++e) {
    CHECK(r[dm.q_dof(e, 0)] == doctest::Approx(-0.5).epsilon(1e-13));
    for (int i = 1; i < s.nQ; ++i) CHECK(std::abs(r[dm.q_dof(e, i)]) < 1e-13);
  }

  // constants and the rotation (y, x) are divergence free
  VectorField cst = [](const std::array<double, 3>&) {
    return std::array<double, 3>{1.0, 2.0, 0.0};
  };
  VectorField rot = [](const std::array<double, 3>& x) {
    return std::array<double, 3>{x[1], x[0], 0.0};
  };
  CHECK((sb.Bpu * l2_project_velocity_plain(mesh, s, dm, cst)).cwiseAbs().maxCoeff() < 1e-13);
  CHECK((sb.Bpu * l2_project_velocity_plain(mesh, s, dm, rot)).cwiseAbs().maxCoeff() < 1e-13);
}

TEST_CASE("facet pressure coupling: hand value and conforming cancellation") {
  auto s = build_space_set(2, 2, {1.0, 1.0, 1.0});
  LocalBlocks lb = build_local_blocks(s);
  // first velocity shape: low x face, constant transverse profile; its
  // outward normal trace there is -1, tested against the constant multiplier
  CHECK(lb.b3[0](0, 0) == doctest::Approx(-1.0).epsilon(1e-14));
  // the same shape leaves no trace on the opposite face
  CHECK(std::abs(lb.b3[1](0, 0)) < 1e-14);

  // a normal-continuous field drops out of every interior facet row
  BoundarySpec bc;
  auto mesh = build_box_mesh(2, {2, 1, 1}, {0.0, 0.0, 0.0}, {2.0, 1.0, 1.0}, bc);
  auto dm = build_dof_map(mesh, s);
  auto sb = assemble_system_blocks(mesh, s, dm, 1.0, 1.0);

  std::mt19937 rng(5);
  std::normal_distribution<double> dist;
  Eigen::VectorXd u(dm.nV);
  for (int i = 0; i < dm.nV; ++i) u[i] = dist(rng);
  Eigen::VectorXd r = sb.Bphatut * embed_broken(mesh, s, dm, u);
  for (const auto& f : mesh.facets) {
    double row = 0.0;
    for (int i = 0; i < s.tqf; ++i) row = std::max(row, std::abs(r[dm.qhat_dof(f.id, i)]));
    CAPTURE(f.id);
    if (f.tag == FacetTag::Interior) CHECK(row < 1e-13);
  }
}

TEST_CASE("facet pressure coupling: outlet rows are removed") {
  BoundarySpec bc;
  bc.face_tag[0] = FacetTag::Inlet;
  bc.face_tag[1] = FacetTag::Outlet;
  auto mesh = build_box_mesh(2, {2, 1, 1}, {0.0, 0.0, 0.0}, {2.0, 1.0, 1.0}, bc);
  auto s = build_space_set(2, 1, mesh.h);
  auto dm = build_dof_map(mesh, s);
  auto sb = assemble_system_blocks(mesh, s, dm, 1.0, 1.0);

  Eigen::MatrixXd dense(sb.Bphatut);
  bool saw_outlet = false;
  for (const auto& f : mesh.facets) {
    double row = 0.0;
    for (int i = 0; i < s.tqf; ++i)
      row = std::max(row, dense.row(dm.qhat_dof(f.id, i)).cwiseAbs().maxCoeff());
    if (f.tag == FacetTag::Outlet) {
      CHECK(row == 0.0);
      saw_outlet = true;
    } else {
      CHECK(row > 0.0);
    }
  }
  CHECK(saw_outlet);
}

TEST_CASE("spin coupling: symmetric stresses drop out") {
  BoundarySpec bc;
  auto mesh = build_box_mesh(2, {1, 1, 1}, {0.0, 0.0, 0.0}, {1.0, 1.0, 1.0}, bc);
  for (int k : {1, 2}) {
    CAPTURE(k);
    auto s = build_space_set(2, k, mesh.h);
    auto dm = build_dof_map(mesh, s);
    auto sb = assemble_system_blocks(mesh, s, dm, 1.0, 1.0);

    // equal coefficients on the E01/E10 generators give a symmetric field;
    // (the top-degree tier is excluded: the two generators prune different
    // multi-indices there)
    std::mt19937 rng(17 + k);
    std::normal_distribution<double> dist;
    Eigen::VectorXd sig = Eigen::VectorXd::Zero(dm.nSigmaG);
    for (int i = 0; i < s.nSigma; ++i) {
      const auto& sh = s.sigma_shapes[i];
      int total = sh.leg[0] + sh.leg[1] + sh.leg[2];
      if (sh.gen == 0) {
        sig[i] = dist(rng);
      } else if (sh.gen == 1 && total <= k) {
        double c = dist(rng);
        int partner = sigma_index(s, 2, sh.leg);
        REQUIRE(partner >= 0);
        sig[i] = c;
        sig[partner] = c;
      }
    }
    CHECK((sb.Bgamsig * sig).cwiseAbs().maxCoeff() < 1e-13);

    // a generic field does couple
    Eigen::VectorXd gen = Eigen::VectorXd::Zero(dm.nSigmaG);
    gen[sigma_index(s, 1, {0, 0, 0})] = 1.0;
    CHECK((sb.Bgamsig * gen).cwiseAbs().maxCoeff() > 0.1);
  }
}

TEST_CASE("weak tangential continuity across a shared facet") {
  BoundarySpec bc;
  auto mesh = build_box_mesh(2, {2, 1, 1}, {0.0, 0.0, 0.0}, {2.0, 1.0, 1.0}, bc);
  auto s = build_space_set(2, 2, mesh.h);
  auto dm = build_dof_map(mesh, s);
  auto sb = assemble_system_blocks(mesh, s, dm, 1.0, 1.0);

  std::mt19937 rng(23);
  std::normal_distribution<double> dist;
  Eigen::VectorXd sig(dm.nSigmaG);
  for (int i = 0; i < dm.nSigmaG; ++i) sig[i] = dist(rng);
  Eigen::VectorXd r = sb.Buhatsig * sig;

  int shared = -1;
  for (const auto& f : mesh.facets)
    if (f.tag == FacetTag::Interior) shared = f.id;
  REQUIRE(shared >= 0);
  const Facet& f = mesh.facets[shared];

  // direct quadrature of the tangential-trace jump against the multiplier
  GaussRule g = gauss_legendre(s.k + 4);
  int nq = static_cast<int>(g.points.size());
  double wfac = f.measure / 2.0;
  Eigen::VectorXd oracle = Eigen::VectorXd::Zero(s.tvf);
  for (auto [elem, face] : {std::pair{f.owner, f.owner_face}, {f.neighbor, f.neighbor_face}}) {
    std::vector<std::array<double, 3>> pts(nq);
    for (int q = 0; q < nq; ++q) pts[q] = embed_face_point(2, face, {g.points[q], 0.0, 0.0});
    Eigen::MatrixXd nt = eval_basis(s, Space::Stress, pts, EvalKind::NtTrace);
    Eigen::MatrixXd fv = eval_basis(s, Space::FacetVelocity, pts, EvalKind::Value);
    for (int q = 0; q < nq; ++q)
      for (int c = 0; c < 2; ++c) {
        double trace = 0.0;
        for (int j = 0; j < s.nSigma; ++j)
          trace += sig[dm.sigma_dof(elem, j)] * nt(j, q * 2 + c);
        for (int i = 0; i < s.tvf; ++i)
          oracle[i] += g.weights[q] * wfac * fv(i, q * 2 + c) * trace;
      }
  }
  for (int i = 0; i < s.tvf; ++i)
    CHECK(r[dm.vhat_dof(shared, i)] == doctest::Approx(oracle[i]).epsilon(1e-12));
}

TEST_CASE("dense one-element oracle reproduces every block") {
  BoundarySpec bc;
  auto mesh = build_box_mesh(2, {1, 1, 1}, {0.2, -0.1, 0.0}, {0.9, 0.3, 1.0}, bc);
  auto s = build_space_set(2, 2, mesh.h);
  auto dm = build_dof_map(mesh, s);
  double nu = 0.3, dt = 0.05;
  auto sb = assemble_system_blocks(mesh, s, dm, nu, dt);

  int d = 2;
  double detj = mesh.element_volume() / 4.0;
  TensorRule vol = tensor_rule(d, s.k + 4); // one size up from the assembly rule
  Eigen::MatrixXd S = eval_basis(s, Space::Stress, vol.points, EvalKind::Value);
  Eigen::MatrixXd Sdiv = eval_basis(s, Space::Stress, vol.points, EvalKind::Divergence);
  Eigen::MatrixXd W = eval_basis(s, Space::Spin, vol.points, EvalKind::Value);
  Eigen::MatrixXd V = eval_basis(s, Space::Velocity, vol.points, EvalKind::Value);
  Eigen::MatrixXd Vdiv = eval_basis(s, Space::Velocity, vol.points, EvalKind::Divergence);
  Eigen::MatrixXd P = eval_basis(s, Space::Pressure, vol.points, EvalKind::Value);

  Eigen::MatrixXd msig = Eigen::MatrixXd::Zero(s.nSigma, s.nSigma);
  Eigen::MatrixXd mvel = Eigen::MatrixXd::Zero(s.nV, s.nV);
  Eigen::MatrixXd bgam = Eigen::MatrixXd::Zero(s.nW, s.nSigma);
  Eigen::MatrixXd bu = Eigen::MatrixXd::Zero(s.nV, s.nSigma);
  Eigen::MatrixXd b1 = Eigen::MatrixXd::Zero(s.nQ, s.nV);
  for (int q = 0; q < vol.npts; ++q) {
    double w = vol.weights[q] * detj;
    for (int c = 0; c < d * d; ++c) {
      msig += w * S.col(q * d * d + c) * S.col(q * d * d + c).transpose();
      bgam -= w * W.col(q * d * d + c) * S.col(q * d * d + c).transpose();
    }
    for (int c = 0; c < d; ++c) {
      mvel += w * V.col(q * d + c) * V.col(q * d + c).transpose();
      bu -= w * V.col(q * d + c) * Sdiv.col(q * d + c).transpose();
    }
    b1 -= w * P.col(q) * Vdiv.col(q).transpose();
  }

  std::array<Eigen::MatrixXd, 6> buhat, b3;
  GaussRule g = gauss_legendre(s.k + 4);
  int nq = static_cast<int>(g.points.size());
  for (int face = 0; face < 2 * d; ++face) {
    const Facet& f = mesh.facets[mesh.elem_facet[0][face]];
    double wfac = f.measure / 2.0;
    std::vector<std::array<double, 3>> pts(nq);
    for (int q = 0; q < nq; ++q) pts[q] = embed_face_point(d, face, {g.points[q], 0.0, 0.0});
    Eigen::MatrixXd Snn = eval_basis(s, Space::Stress, pts, EvalKind::NnTrace);
    Eigen::MatrixXd Snt = eval_basis(s, Space::Stress, pts, EvalKind::NtTrace);
    Eigen::MatrixXd Vn = eval_basis(s, Space::Velocity, pts, EvalKind::NormalTrace);
    Eigen::MatrixXd Fv = eval_basis(s, Space::FacetVelocity, pts, EvalKind::Value);
    Eigen::MatrixXd Fp = eval_basis(s, Space::FacetPressure, pts, EvalKind::Value);
    buhat[face] = Eigen::MatrixXd::Zero(s.tvf, s.nSigma);
    b3[face] = Eigen::MatrixXd::Zero(s.tqf, s.nV);
    for (int q = 0; q < nq; ++q) {
      double w = g.weights[q] * wfac;
      bu += w * Vn.col(q) * Snn.col(q).transpose();
      b3[face] += w * Fp.col(q) * Vn.col(q).transpose();
      for (int c = 0; c < d; ++c)
        buhat[face] += w * Fv.col(q * d + c) * Snt.col(q * d + c).transpose();
    }
  }

  std::vector<int> vd;
  dm.v_elem_dofs(mesh, 0, vd);
  Eigen::MatrixXd Msig(sb.Msigsig), Bgam(sb.Bgamsig), Bu(sb.Busig), Buh(sb.Buhatsig);
  Eigen::MatrixXd Muu(sb.Muu), Mut(sb.Mutut), Bput(sb.Bput), Bph(sb.Bphatut), Bpu(sb.Bpu);

  CHECK(max_abs(Msig + msig / (2.0 * nu)) < 1e-13);
  CHECK(max_abs(Bgam - bgam) < 1e-13);
  CHECK(max_abs(Mut - mvel) < 1e-13);
  for (int i = 0; i < s.nV; ++i)
    for (int j = 0; j < s.nV; ++j)
      CHECK(Muu(vd[i], vd[j]) == doctest::Approx(mvel(i, j) / dt).epsilon(1e-12));
  for (int i = 0; i < s.nV; ++i)
    for (int j = 0; j < s.nSigma; ++j)
      CHECK(Bu(vd[i], j) == doctest::Approx(bu(i, j)).epsilon(1e-12));
  for (int i = 0; i < s.nQ; ++i)
    for (int j = 0; j < s.nV; ++j) {
      CHECK(Bput(i, j) == doctest::Approx(b1(i, j)).epsilon(1e-12));
      CHECK(Bpu(i, vd[j]) == doctest::Approx(b1(i, j)).epsilon(1e-12));
    }
  for (int face = 0; face < 2 * d; ++face) {
    int f = mesh.elem_facet[0][face];
    for (int i = 0; i < s.tvf; ++i)
      for (int j = 0; j < s.nSigma; ++j)
        CHECK(Buh(dm.vhat_dof(f, i), j) == doctest::Approx(buhat[face](i, j)).epsilon(1e-12));
    for (int i = 0; i < s.tqf; ++i)
      for (int j = 0; j < s.nV; ++j)
        CHECK(Bph(dm.qhat_dof(f, i), j) == doctest::Approx(b3[face](i, j)).epsilon(1e-12));
  }
}

TEST_CASE("assembly is bitwise reproducible") {
  BoundarySpec bc;
  bc.periodic = {true, true, false};
  auto mesh = build_box_mesh(2, {2, 2, 1}, {0.0, 0.0, 0.0}, {1.0, 1.0, 1.0}, bc);
  auto s = build_space_set(2, 2, mesh.h);
  auto dm = build_dof_map(mesh, s);

  auto a = assemble_system_blocks(mesh, s, dm, 0.7, 0.01);
  auto b = assemble_system_blocks(mesh, s, dm, 0.7, 0.01);
  CHECK(max_abs(Eigen::MatrixXd(a.Msigsig) - Eigen::MatrixXd(b.Msigsig)) == 0.0);
  CHECK(max_abs(Eigen::MatrixXd(a.Busig) - Eigen::MatrixXd(b.Busig)) == 0.0);
  CHECK(max_abs(Eigen::MatrixXd(a.Buhatsig) - Eigen::MatrixXd(b.Buhatsig)) == 0.0);
  CHECK(max_abs(Eigen::MatrixXd(a.Muu) - Eigen::MatrixXd(b.Muu)) == 0.0);
  CHECK(max_abs(Eigen::MatrixXd(a.Bpu) - Eigen::MatrixXd(b.Bpu)) == 0.0);

  ConvectionOperator op(mesh, s, dm);
  std::mt19937 rng(31);
  std::normal_distribution<double> dist;
  Eigen::VectorXd u(dm.nV);
  for (int i = 0; i < dm.nV; ++i) u[i] = dist(rng);
  FluxConfig up{FluxMode::Upwind, 0, nullptr};
  Eigen::VectorXd r1 = op.apply(u, up), r2 = op.apply(u, up);
  CHECK((r1 - r2).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("convection: zero and constant fields produce no force") {
  BoundarySpec bc;
  bc.periodic = {true, true, false};
  auto mesh = build_box_mesh(2, {2, 2, 1}, {0.0, 0.0, 0.0}, {1.0, 1.0, 1.0}, bc);
  auto s = build_space_set(2, 1, mesh.h);
  auto dm = build_dof_map(mesh, s);
  ConvectionOperator op(mesh, s, dm);

  FluxConfig cen{FluxMode::Central, 0, nullptr};
  FluxConfig up{FluxMode::Upwind, 0, nullptr};

  Eigen::VectorXd zero = Eigen::VectorXd::Zero(dm.nV);
  CHECK(op.apply(zero, cen).cwiseAbs().maxCoeff() == 0.0);
  CHECK(op.dissipation(zero, up) == 0.0);

  VectorField cst = [](const std::array<double, 3>&) {
    return std::array<double, 3>{1.5, -0.75, 0.0};
  };
  Eigen::VectorXd u = l2_project_velocity_plain(mesh, s, dm, cst);
  CHECK(op.apply(u, cen).cwiseAbs().maxCoeff() < 1e-13);
  CHECK(op.apply(u, up).cwiseAbs().maxCoeff() < 1e-13);
  CHECK(op.dissipation(u, up) < 1e-26);

  VectorField tf = [](const std::array<double, 3>&) {
    return std::array<double, 3>{3.0, 4.0, 0.0};
  };
  CHECK(op.rms_velocity(l2_project_velocity_plain(mesh, s, dm, tf)) ==
        doctest::Approx(5.0).epsilon(1e-12));
}

TEST_CASE("convection: smooth divergence-free field is energy neutral") {
  BoundarySpec bc;
  bc.periodic = {true, true, false};
  auto mesh = build_box_mesh(2, {3, 3, 1}, {0.0, 0.0, 0.0}, {1.0, 1.0, 1.0}, bc);
  auto s = build_space_set(2, 2, mesh.h);
  auto dm = build_dof_map(mesh, s);
  ConvectionOperator op(mesh, s, dm);

  VectorField uf = [](const std::array<double, 3>& x) {
    return std::array<double, 3>{x[1] * (1.0 - x[1]), x[0] * (1.0 - x[0]), 0.0};
  };
  Eigen::VectorXd u = l2_project_velocity_plain(mesh, s, dm, uf);

  FluxConfig cen{FluxMode::Central, 0, nullptr};
  CHECK(std::abs(u.dot(op.apply(u, cen))) < 1e-12);

  // the field is continuous, so upwinding adds nothing
  FluxConfig up{FluxMode::Upwind, 0, nullptr};
  CHECK(op.dissipation(u, up) < 1e-20);

  // a fixed order of k disables the penalty entirely: identical flux
  FluxConfig fk{FluxMode::HopuFixed, s.k, nullptr};
  CHECK((op.apply(u, fk) - op.apply(u, cen)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("convection: energy neutrality and dissipation ladder on random fields") {
  BoundarySpec bc;
  bc.periodic = {true, true, false};
  auto mesh = build_box_mesh(2, {3, 3, 1}, {0.0, 0.0, 0.0}, {1.0, 1.0, 1.0}, bc);
  auto s = build_space_set(2, 2, mesh.h);
  auto dm = build_dof_map(mesh, s);
  ConvectionOperator op(mesh, s, dm);
  auto sb = assemble_system_blocks(mesh, s, dm, 1.0, 1.0);
  auto M = assemble_velocity_mass(mesh, s, dm);

  Eigen::MatrixXd K = divergence_kernel(sb.Bpu);
  REQUIRE(K.cols() > 0);

  FluxConfig cen{FluxMode::Central, 0, nullptr};
  FluxConfig up{FluxMode::Upwind, 0, nullptr};
  FluxConfig f0{FluxMode::HopuFixed, 0, nullptr};
  FluxConfig f1{FluxMode::HopuFixed, 1, nullptr};
  FluxConfig f2{FluxMode::HopuFixed, 2, nullptr};

  std::mt19937 rng(7);
  std::normal_distribution<double> dist;
  for (int trial = 0; trial < 50; ++trial) {
    CAPTURE(trial);
    Eigen::VectorXd z(K.cols());
    for (int i = 0; i < z.size(); ++i) z[i] = dist(rng);
    Eigen::VectorXd u = K * z;
    u /= std::sqrt(u.dot(M * u)); // unit kinetic norm

    // skew symmetry of the central flux on divergence-free fields
    double c_cen = u.dot(op.apply(u, cen));
    CHECK(std::abs(c_cen) < 1e-11);

    // the upwind excess is exactly the dissipation functional
    double d_up = op.dissipation(u, up);
    CHECK(u.dot(op.apply(u, up)) - c_cen == doctest::Approx(d_up).epsilon(1e-11));
    double d_0 = op.dissipation(u, f0);
    CHECK(u.dot(op.apply(u, f0)) - c_cen == doctest::Approx(d_0).epsilon(1e-11));

    // monotone ladder: raising the projection order can only dissipate less
    double d_1 = op.dissipation(u, f1);
    double d_2 = op.dissipation(u, f2);
    CHECK(d_2 == 0.0);
    CHECK(d_1 >= 0.0);
    CHECK(d_1 <= d_0 + 1e-13);
    CHECK(d_0 <= d_up + 1e-13);
  }
}

TEST_CASE("convection: dissipation matches an independent facet quadrature") {
  BoundarySpec bc;
  bc.periodic = {true, true, false};
  auto mesh = build_box_mesh(2, {2, 2, 1}, {0.0, 0.0, 0.0}, {1.0, 1.0, 1.0}, bc);
  auto s = build_space_set(2, 2, mesh.h);
  auto dm = build_dof_map(mesh, s);
  ConvectionOperator op(mesh, s, dm);

  // strong drift keeps u.n single signed on every facet, so |u.n| stays a
  // polynomial and both quadratures are exact
  VectorField uf = [](const std::array<double, 3>& x) {
    return std::array<double, 3>{3.0 + x[0] * x[0] * x[1] * x[1], 2.0 + x[0] * x[1], 0.0};
  };
  Eigen::VectorXd u = l2_project_velocity_plain(mesh, s, dm, uf);

  GaussRule g = gauss_legendre(s.k + 4);
  int nq = static_cast<int>(g.points.size());
  std::vector<std::array<double, 3>> fpts(nq);
  for (int q = 0; q < nq; ++q) fpts[q] = {g.points[q], 0.0, 0.0};
  Eigen::MatrixXd basis = facet_scalar_table(s, fpts); // full degree-k basis

  auto oracle = [&](int l) {
    double total = 0.0;
    for (const auto& f : mesh.facets) {
      if (!f.is_convective()) continue;
      std::vector<std::array<double, 3>> po(nq), pn(nq);
      for (int q = 0; q < nq; ++q) {
        po[q] = embed_face_point(2, f.owner_face, fpts[q]);
        pn[q] = embed_face_point(2, f.neighbor_face, fpts[q]);
      }
      Eigen::MatrixXd uo = velocity_values(mesh, s, dm, u, f.owner, po);
      Eigen::MatrixXd un = velocity_values(mesh, s, dm, u, f.neighbor, pn);
      Eigen::MatrixXd jump = uo - un;
      REQUIRE(uo.col(f.axis).cwiseAbs().minCoeff() > 0.5); // single-signed drift

      // remove the degree-l part with this rule's (exact) Gram
      Eigen::MatrixXd resid = jump;
      int nb = l < 0 ? 0 : facet_scalar_count_degree(s, l);
      for (int j = 0; j < nb; ++j) {
        double gram = 0.0;
        for (int q = 0; q < nq; ++q) gram += g.weights[q] * basis(j, q) * basis(j, q);
        for (int c = 0; c < 2; ++c) {
          double coef = 0.0;
          for (int q = 0; q < nq; ++q) coef += g.weights[q] * basis(j, q) * jump(q, c);
          coef /= gram;
          for (int q = 0; q < nq; ++q) resid(q, c) -= coef * basis(j, q);
        }
      }
      double wfac = f.measure / 2.0;
      for (int q = 0; q < nq; ++q)
        total += 0.5 * g.weights[q] * wfac * std::abs(f.sign * uo(q, f.axis)) *
                 resid.row(q).squaredNorm();
    }
    return total;
  };

  FluxConfig up{FluxMode::Upwind, 0, nullptr};
  FluxConfig f0{FluxMode::HopuFixed, 0, nullptr};
  FluxConfig f1{FluxMode::HopuFixed, 1, nullptr};
  double d_up = op.dissipation(u, up);
  CHECK(d_up == doctest::Approx(oracle(-1)).epsilon(1e-12));
  CHECK(op.dissipation(u, f0) == doctest::Approx(oracle(0)).epsilon(1e-12));
  CHECK(op.dissipation(u, f1) == doctest::Approx(oracle(1)).epsilon(1e-12));
  CHECK(d_up > 1e-4); // the drift really produces jumps

  FluxConfig cen{FluxMode::Central, 0, nullptr};
  CHECK(u.dot(op.apply(u, up) - op.apply(u, cen)) == doctest::Approx(d_up).epsilon(1e-12));
}

TEST_CASE("convection: adaptive flux stitches per-facet penalties") {
  BoundarySpec bc;
  bc.periodic = {true, true, false};
  auto mesh = build_box_mesh(2, {2, 2, 1}, {0.0, 0.0, 0.0}, {1.0, 1.0, 1.0}, bc);
  auto s = build_space_set(2, 2, mesh.h);
  auto dm = build_dof_map(mesh, s);
  ConvectionOperator op(mesh, s, dm);

  std::mt19937 rng(41);
  std::normal_distribution<double> dist;
  Eigen::VectorXd u(dm.nV);
  for (int i = 0; i < dm.nV; ++i) u[i] = dist(rng); // generic tangential jumps

  OrderField field = initial_order_field(mesh, s.k);
  int cycle = 0;
  for (const auto& f : mesh.facets)
    if (f.is_convective()) field.order[f.id] = (cycle++ % 4) - 1; // -1,0,1,2,...

  FluxConfig cen{FluxMode::Central, 0, nullptr};
  FluxConfig ad{FluxMode::HopuAdaptive, 0, &field};
  Eigen::VectorXd r_cen = op.apply(u, cen);
  Eigen::VectorXd diff = op.apply(u, ad) - r_cen;

  Eigen::VectorXd stitched = Eigen::VectorXd::Zero(dm.nV);
  double d_total = 0.0;
  for (const auto& f : mesh.facets) {
    if (!f.is_convective()) continue;
    OrderField single = initial_order_field(mesh, s.k);
    for (const auto& g : mesh.facets)
      if (g.is_convective()) single.order[g.id] = (g.id == f.id) ? field.order[f.id] : s.k;
    FluxConfig one{FluxMode::HopuAdaptive, 0, &single};
    stitched += op.apply(u, one) - r_cen;
    d_total += op.dissipation(u, one);
  }
  double scale = diff.cwiseAbs().maxCoeff();
  CHECK(scale > 1e-6);
  CHECK((diff - stitched).cwiseAbs().maxCoeff() < 1e-12 * scale);
  CHECK(op.dissipation(u, ad) == doctest::Approx(d_total).epsilon(1e-12));

  // configuration errors
  FluxConfig bad_ad{FluxMode::HopuAdaptive, 0, nullptr};
  CHECK_THROWS_AS(op.apply(u, bad_ad), config_error);
  FluxConfig bad_fixed{FluxMode::HopuFixed, s.k + 1, nullptr};
  CHECK_THROWS_AS(op.apply(u, bad_fixed), config_error);
  FluxConfig bad_neg{FluxMode::HopuFixed, -1, nullptr};
  CHECK_THROWS_AS(op.dissipation(u, bad_neg), config_error);
}

TEST_CASE("convection: inlet data enters the jump") {
  BoundarySpec bc;
  bc.face_tag[0] = FacetTag::Inlet;
  bc.face_tag[1] = FacetTag::Outlet;
  auto mesh = build_box_mesh(2, {2, 1, 1}, {0.0, 0.0, 0.0}, {2.0, 1.0, 1.0}, bc);
  auto s = build_space_set(2, 2, mesh.h);
  auto dm = build_dof_map(mesh, s);
  ConvectionOperator op(mesh, s, dm);

  // exactly representable profile: traces match the inlet data pointwise
  VectorField uf = [](const std::array<double, 3>& x) {
    return std::array<double, 3>{2.0 + x[1] * (1.0 - x[1]), 0.0, 0.0};
  };
  Eigen::VectorXd u = l2_project_velocity_plain(mesh, s, dm, uf);

  FluxConfig up{FluxMode::Upwind, 0, nullptr};
  CHECK(op.dissipation(u, up, &uf) < 1e-13);

  // without data the ghost state is zero: the inlet jump is the full trace,
  // 1/2 int |u.n| |u|^2 = 1/2 int (2 + y(1-y))^3 dy
  GaussRule g = gauss_legendre(4);
  double ref = 0.0;
  for (size_t q = 0; q < g.points.size(); ++q) {
    double y = 0.5 * (g.points[q] + 1.0);
    double prof = 2.0 + y * (1.0 - y);
    ref += 0.5 * g.weights[q] * 0.5 * prof * prof * prof;
  }
  CHECK(op.dissipation(u, up, nullptr) == doctest::Approx(ref).epsilon(1e-12));

  // and the excess over the central flux still matches the functional
  FluxConfig cen{FluxMode::Central, 0, nullptr};
  CHECK(u.dot(op.apply(u, up, nullptr) - op.apply(u, cen, nullptr)) ==
        doctest::Approx(ref).epsilon(1e-12));
}
