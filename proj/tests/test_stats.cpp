#include <cmath>
#include <random>
#include <vector>

#include "doctest.h"
#include "mcs/forms.hpp"
#include "mcs/mesh.hpp"
#include "mcs/spaces.hpp"
#include "mcs/splitting.hpp"
#include "mcs/stats.hpp"
#include "mcs/util.hpp"

using namespace mcs;

namespace {

constexpr double pi = 3.14159265358979323846;

Eigen::VectorXd random_vec(int n, unsigned seed) {
  std::mt19937 gen(seed);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  Eigen::VectorXd v(n);
  for (int i = 0; i < n; ++i) v[i] = dist(gen);
  return v;
}

struct Disc {
  Mesh mesh;
  SpaceSet s;
  DofMap dm;
};

Disc make_disc(int dim, std::array<int, 3> cells, std::array<double, 3> lo,
               std::array<double, 3> hi, const BoundarySpec& bc, int k) {
  Disc d;
  d.mesh = build_box_mesh(dim, cells, lo, hi, bc);
  d.s = build_space_set(dim, k, d.mesh.h);
  d.dm = build_dof_map(d.mesh, d.s);
  return d;
}

std::array<double, 3> taylor_green(const std::array<double, 3>& x) {
  return {std::sin(x[0]) * std::cos(x[1]), -std::cos(x[0]) * std::sin(x[1]), 0.0};
}

/// Blasius boundary-layer solution integrated with RK4 shooting; serves as an
/// integrator independent of the module under test. f''' = -f f''/2 with
/// f(0) = f'(0) = 0 and f'(inf) = 1; u/u_e = f'(eta).
struct Blasius {
  std::vector<double> eta, fp;
  double delta_star = 0.0, theta = 0.0;

  Blasius() {
    auto shoot = [this](double fpp0, bool record) {
      double f = 0.0, fp1 = 0.0, fpp = fpp0;
      const double h = 0.004;
      const int nsteps = 3000; // eta up to 12
      if (record) {
        eta.assign(1, 0.0);
        fp.assign(1, 0.0);
      }
      double ds = 0.0, th = 0.0, g_prev = 1.0, t_prev = 0.0;
      for (int i = 0; i < nsteps; ++i) {
        auto rhs = [](double fv, double fpv, double fppv) {
          (void)fpv;
          return std::array<double, 3>{0.0, fppv, -0.5 * fv * fppv};
        };
        auto step = [&](double a1, double a2, double a3) {
          return rhs(f + a1, fp1 + a2, fpp + a3);
        };
        auto k1 = rhs(f, fp1, fpp);
        k1[0] = fp1;
        auto k2 = step(0.5 * h * k1[0], 0.5 * h * k1[1], 0.5 * h * k1[2]);
        k2[0] = fp1 + 0.5 * h * k1[1];
        auto k3 = step(0.5 * h * k2[0], 0.5 * h * k2[1], 0.5 * h * k2[2]);
        k3[0] = fp1 + 0.5 * h * k2[1];
        auto k4 = step(h * k3[0], h * k3[1], h * k3[2]);
        k4[0] = fp1 + h * k3[1];
        f += h / 6.0 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0]);
        fp1 += h / 6.0 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1]);
        fpp += h / 6.0 * (k1[2] + 2 * k2[2] + 2 * k3[2] + k4[2]);
        if (record) {
          eta.push_back((i + 1) * h);
          fp.push_back(fp1);
          double g = 1.0 - fp1, t = fp1 * (1.0 - fp1);
          ds += 0.5 * h * (g_prev + g);
          th += 0.5 * h * (t_prev + t);
          g_prev = g;
          t_prev = t;
        }
      }
      if (record) {
        delta_star = ds;
        theta = th;
      }
      return fp1;
    };
    double lo = 0.2, hi = 0.5;
    for (int it = 0; it < 60; ++it) {
      double mid = 0.5 * (lo + hi);
      (shoot(mid, false) < 1.0 ? lo : hi) = mid;
    }
    shoot(0.5 * (lo + hi), true);
  }
};

} // namespace

TEST_CASE("kinetic energy: constant field, mass-matrix cross-check, scaling") {
  Disc d = make_disc(2, {2, 2, 1}, {0, 0, 0}, {1, 1, 0}, BoundarySpec{}, 1);
  VectorField one = [](const std::array<double, 3>&) {
    return std::array<double, 3>{1.0, 0.0, 0.0};
  };
  Eigen::VectorXd u = l2_project_velocity_plain(d.mesh, d.s, d.dm, one);
  CHECK(kinetic_energy(d.mesh, d.s, d.dm, u) == doctest::Approx(0.5).epsilon(1e-13));

  Eigen::VectorXd r = random_vec(d.dm.nV, 11);
  Eigen::SparseMatrix<double> M = assemble_velocity_mass(d.mesh, d.s, d.dm);
  double ke = kinetic_energy(d.mesh, d.s, d.dm, r);
  CHECK(ke == doctest::Approx(0.5 * r.dot(M * r)).epsilon(1e-13));
  // doubling the field exactly quadruples the quadrature sum
  CHECK(kinetic_energy(d.mesh, d.s, d.dm, Eigen::VectorXd(2.0 * r)) == 4.0 * ke);

  CHECK_THROWS_AS(kinetic_energy(d.mesh, d.s, d.dm, random_vec(3, 1)), config_error);
}

TEST_CASE("kinetic energy of the Taylor-Green vortex") {
  Disc d = make_disc(2, {8, 8, 1}, {0, 0, 0}, {2 * pi, 2 * pi, 0}, BoundarySpec{}, 3);
  Eigen::VectorXd u = l2_project_velocity_plain(d.mesh, d.s, d.dm, taylor_green);
  CHECK(kinetic_energy(d.mesh, d.s, d.dm, u) ==
        doctest::Approx(pi * pi).epsilon(1e-3)); // closed form: half of 2 pi^2
}

TEST_CASE("constant signals have exact means and zero variance") {
  StatAccumulator acc(2, {{{0.2, 0.3, 0.0}}, {{0.6, 0.7, 0.0}}}, 0.0, 10.0);
  Eigen::MatrixXd v(2, 2);
  v << std::sqrt(2.0), pi / 3.0, -1.0 / 3.0, std::exp(1.0);
  for (int t = 0; t < 7; ++t) CHECK(acc.sample_values(v, static_cast<double>(t)));
  acc.close();
  CHECK(acc.sample_count() == 7);
  for (int i = 0; i < 2; ++i) {
    CHECK((acc.mean_velocity(i) - v.col(i)).norm() == 0.0);
    CHECK(acc.covariance(i).norm() <= 1e-14);
    CHECK(acc.turbulent_energy(i) == 0.0);
  }
}

TEST_CASE("time averaging is linear") {
  std::vector<std::array<double, 3>> probes{{{0.1, 0.1, 0.0}}};
  StatAccumulator ah(3, probes, 0.0, 100.0);
  StatAccumulator af(3, probes, 0.0, 100.0);
  StatAccumulator ag(3, probes, 0.0, 100.0);
  const double alpha = 0.7, beta = -1.3;
  std::mt19937 gen(99);
  std::uniform_real_distribution<double> dist(-2.0, 2.0);
  for (int t = 0; t < 64; ++t) {
    Eigen::MatrixXd f(3, 1), g(3, 1);
    for (int c = 0; c < 3; ++c) {
      f(c, 0) = dist(gen);
      g(c, 0) = dist(gen);
    }
    Eigen::MatrixXd h = alpha * f + beta * g;
    af.sample_values(f, t);
    ag.sample_values(g, t);
    ah.sample_values(h, t);
  }
  Eigen::VectorXd want = alpha * af.mean_velocity(0) + beta * ag.mean_velocity(0);
  CHECK((ah.mean_velocity(0) - want).norm() <= 1e-13 * (1.0 + want.norm()));
}

TEST_CASE("Reynolds decomposition consistency and nonnegative energy") {
  std::vector<std::array<double, 3>> probes{{{0.5, 0.5, 0.5}}};
  StatAccumulator acc(3, probes, 0.0, 1e9);
  std::mt19937 gen(7);
  std::normal_distribution<double> dist(0.3, 1.1);
  const int nt = 200;
  Eigen::MatrixXd samples(3, nt);
  for (int t = 0; t < nt; ++t) {
    for (int c = 0; c < 3; ++c) samples(c, t) = dist(gen);
    acc.sample_values(samples.col(t), t);
  }
  acc.close();

  Eigen::VectorXd mean = acc.mean_velocity(0);
  Eigen::MatrixXd cov = acc.covariance(0);

  // <u'v'> as <uv> - <u><v>
  Eigen::MatrixXd indirect = acc.second_moment(0) - mean * mean.transpose();
  CHECK((cov - indirect).norm() <= 1e-12 * (1.0 + cov.norm()));

  // direct two-pass fluctuation accumulation
  Eigen::VectorXd m2 = samples.rowwise().mean();
  Eigen::MatrixXd direct = Eigen::MatrixXd::Zero(3, 3);
  for (int t = 0; t < nt; ++t) {
    Eigen::VectorXd d = samples.col(t) - m2;
    direct += d * d.transpose();
  }
  direct /= nt;
  CHECK((cov - direct).norm() <= 1e-12 * (1.0 + cov.norm()));

  CHECK(acc.turbulent_energy(0) >= 0.0);
  for (int c = 0; c < 3; ++c) CHECK(cov(c, c) >= 0.0);
  CHECK(acc.turbulent_energy(0) == doctest::Approx(0.5 * cov.trace()).epsilon(1e-15));
}

TEST_CASE("field sampling matches direct evaluation, with homogeneous lines") {
  BoundarySpec bc;
  bc.periodic[0] = true;
  Disc d = make_disc(2, {4, 4, 1}, {0, 0, 0}, {1, 1, 0}, bc, 2);
  std::vector<std::array<double, 3>> probes{{{0.37, 0.61, 0.0}}, {{0.12, 0.33, 0.0}}};
  const int m = 5;
  StatAccumulator acc(d.mesh, d.s, d.dm, probes, 0.0, 10.0, 0, m);

  CHECK_FALSE(acc.sample(Eigen::VectorXd::Zero(d.dm.nV), -1.0)); // outside the window

  Eigen::VectorXd u1 = random_vec(d.dm.nV, 21);
  Eigen::VectorXd u2 = random_vec(d.dm.nV, 22);
  Eigen::VectorXd p1 = random_vec(d.dm.nQg, 23);
  Eigen::VectorXd p2 = random_vec(d.dm.nQg, 24);
  CHECK(acc.sample(u1, 1.0, &p1));
  CHECK(acc.sample(u2, 2.0, &p2));
  acc.close();
  CHECK(acc.snapshots() == 2);
  CHECK(acc.sample_count() == 2 * m);

  for (int i = 0; i < 2; ++i) {
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(2);
    double pmean = 0.0;
    for (const Eigen::VectorXd* u : {&u1, &u2}) {
      const Eigen::VectorXd& p = (u == &u1) ? p1 : p2;
      for (int j = 0; j < m; ++j) {
        std::array<double, 3> x = probes[i];
        x[0] = (j + 0.5) / m; // station pattern on the unit interval
        int ix = std::min(static_cast<int>(x[0] * 4), 3);
        int iy = std::min(static_cast<int>(x[1] * 4), 3);
        int e = d.mesh.element_id({ix, iy, 0});
        auto val = eval_velocity_field(d.mesh, d.s, d.dm, *u, e, d.mesh.to_reference(e, x));
        mean[0] += val[0];
        mean[1] += val[1];
        Eigen::MatrixXd pt = pressure_table(d.s, {d.mesh.to_reference(e, x)});
        pmean += pt.col(0).dot(p.segment(e * d.s.nQ, d.s.nQ));
      }
    }
    mean /= 2.0 * m;
    pmean /= 2.0 * m;
    CHECK((acc.mean_velocity(i) - mean).norm() <= 1e-13 * (1.0 + mean.norm()));
    CHECK(acc.mean_pressure(i) == doctest::Approx(pmean).epsilon(1e-13));
  }
}

TEST_CASE("viscous sublayer identity for a linear shear mean field") {
  std::vector<std::array<double, 3>> probes;
  std::vector<double> offs{0.05, 0.1, 0.17, 0.33, 0.4};
  for (double y : offs) probes.push_back({0.2, y, 0.0});
  StatAccumulator acc(2, probes, 0.0, 10.0);
  Eigen::MatrixXd v(2, 5);
  for (int i = 0; i < 5; ++i) {
    v(0, i) = offs[i];
    v(1, i) = 0.0;
  }
  for (int t = 0; t < 3; ++t) acc.sample_values(v, t);
  acc.close();

  WallProfile prof = wall_profile(acc, WallGeometry{1, 0, 0.0}, 1.0);
  CHECK(prof.defined);
  CHECK_FALSE(prof.from_stress);
  CHECK(prof.u_tau == doctest::Approx(1.0).epsilon(1e-13));
  REQUIRE(prof.n_plus.size() == 5);
  for (int i = 0; i < 5; ++i) {
    CHECK(std::abs(prof.ut_plus[i] - prof.n_plus[i]) <= 1e-13 * (1.0 + prof.n_plus[i]));
    CHECK(prof.k_plus[i] == 0.0);
    CHECK(prof.uv_plus[i] == 0.0);
  }
  CHECK(prof.log_law(100.0) == doctest::Approx(std::log(100.0) / 0.41 + 5.2));
}

TEST_CASE("zero mean flow gives zero friction velocity, flagged undefined") {
  StatAccumulator acc(2, {{{0.0, 0.1, 0.0}}, {{0.0, 0.2, 0.0}}}, 0.0, 1.0);
  acc.sample_values(Eigen::MatrixXd::Zero(2, 2), 0.0);
  acc.close();
  WallProfile prof = wall_profile(acc, WallGeometry{1, 0, 0.0}, 0.5);
  CHECK(prof.u_tau == 0.0);
  CHECK_FALSE(prof.defined);
  CHECK(prof.n_plus.size() == 0);
  CHECK_THROWS_AS(wall_profile_csv(prof), config_error);
}

TEST_CASE("thicknesses of linear and uniform profiles") {
  const double delta = 0.8, ue = 2.3;
  Eigen::VectorXd n(9), u(9);
  for (int i = 0; i < 9; ++i) {
    n[i] = delta * i / 8.0;
    u[i] = ue * n[i] / delta;
  }
  Thicknesses th = boundary_layer_thicknesses(n, u);
  CHECK(th.delta_star == doctest::Approx(delta / 2.0).epsilon(1e-13));
  CHECK(th.theta == doctest::Approx(delta / 6.0).epsilon(1e-13));
  CHECK(th.shape == doctest::Approx(3.0).epsilon(1e-12));
  CHECK(th.shape_defined);
  CHECK(th.edge_velocity == ue);
  CHECK(th.edge_position == doctest::Approx(0.99 * delta).epsilon(1e-12));

  Eigen::VectorXd uf = Eigen::VectorXd::Constant(9, ue);
  Thicknesses tu = boundary_layer_thicknesses(n, uf);
  CHECK(tu.delta_star == 0.0);
  CHECK(tu.theta == 0.0);
  CHECK_FALSE(tu.shape_defined);
  CHECK(std::isnan(tu.shape));
}

TEST_CASE("thicknesses of a Blasius profile against an independent integrator") {
  Blasius bl;
  CHECK(bl.fp.back() == doctest::Approx(1.0).epsilon(1e-6));
  double h_ref = bl.delta_star / bl.theta; // fine-grid reference, about 2.59
  CHECK(h_ref == doctest::Approx(2.59).epsilon(0.01));

  // coarse resampling every 125th node (spacing 0.5 in eta)
  Eigen::VectorXd n(25), u(25);
  for (int i = 0; i < 25; ++i) {
    n[i] = bl.eta[125 * i];
    u[i] = bl.fp[125 * i];
  }
  Thicknesses th = boundary_layer_thicknesses(n, u);
  CHECK(th.shape == doctest::Approx(h_ref).epsilon(0.02));
  CHECK(th.shape_defined);
}

TEST_CASE("non-monotone edge detection raises an error with a profile dump") {
  Eigen::VectorXd n(4), u(4);
  n << 0.0, 0.3, 0.5, 0.9;
  u << 0.0, 0.995, 0.97, 1.0;
  try {
    boundary_layer_thicknesses(n, u);
    FAIL("expected solver_error");
  } catch (const solver_error& err) {
    std::string msg = err.what();
    CHECK(msg.find("monotone") != std::string::npos);
    CHECK(msg.find("0.97") != std::string::npos); // the dump carries the samples
  }
}

TEST_CASE("forced channel friction velocity from stress and from differentiation") {
  // Poiseuille flow with body force g between no-slip walls a distance 2H
  // apart has wall shear nu |du/dy| = g H, so u_tau = sqrt(g H).
  BoundarySpec bc;
  bc.periodic[0] = true;
  TimeParams tp{0.05, 1.0, 1.0, 10.0};
  Mesh mesh = build_box_mesh(2, {2, 8, 1}, {0, 0, 0}, {1, 1, 0}, bc);
  SpaceSet s = build_space_set(2, 2, mesh.h);
  DofMap dm = build_dof_map(mesh, s);
  SplittingConfig cfg;
  cfg.convection = false; // the parabola transports nothing; keep the march linear
  FlowSolver fs(mesh, s, dm, tp, cfg);
  VectorField force = [](const std::array<double, 3>&) {
    return std::array<double, 3>{1.0, 0.0, 0.0};
  };

  std::vector<std::array<double, 3>> probes{
      {{0.25, 0.05, 0.0}}, {{0.25, 0.1, 0.0}}, {{0.25, 0.2, 0.0}}, {{0.25, 0.35, 0.0}}};
  StatAccumulator with_sig(mesh, s, dm, probes, 2.0, 3.0, 0, 4);
  StatAccumulator without(mesh, s, dm, probes, 2.0, 3.0, 0, 4);

  State st;
  st.u = Eigen::VectorXd::Zero(dm.nV);
  StepWorkspace ws;
  for (int step = 0; step < 50; ++step) {
    st = fs.advance(st, ws, &force);
    with_sig.sample(st.u, st.t, nullptr, &ws.sigma);
    without.sample(st.u, st.t);
  }
  with_sig.close();
  without.close();
  CHECK(with_sig.snapshots() == 11); // t = 2.0 ... 2.5 inclusive

  const double u_tau_exact = std::sqrt(0.5); // g = 1, H = 0.5
  WallProfile ps = wall_profile(with_sig, 2, 1.0);
  CHECK(ps.from_stress);
  CHECK(ps.defined);
  CHECK(ps.u_tau == doctest::Approx(u_tau_exact).epsilon(1e-3));

  WallProfile pd = wall_profile(without, 2, 1.0);
  CHECK_FALSE(pd.from_stress);
  CHECK(pd.u_tau == doctest::Approx(u_tau_exact).epsilon(1e-3));

  // the mean profile itself is the analytic parabola
  for (int i = 0; i < 4; ++i) {
    double y = probes[i][1];
    double exact = 0.5 * y * (1.0 - y) / ps.u_tau;
    CHECK(ps.ut_plus[i] == doctest::Approx(exact).epsilon(1e-3));
    CHECK(ps.k_plus[i] <= 1e-6); // statistically steady
  }

  std::string csv = wall_profile_csv(ps);
  CHECK(csv.rfind("n,n_plus,ut_plus,k_plus,uv_plus\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 5);
}

TEST_CASE("statistics validation errors") {
  std::vector<std::array<double, 3>> probes{{{0.1, 0.2, 0.0}}};
  CHECK_THROWS_AS(StatAccumulator(0, probes, 0.0, 1.0), config_error);
  CHECK_THROWS_AS(StatAccumulator(2, {}, 0.0, 1.0), config_error);
  CHECK_THROWS_AS(StatAccumulator(2, probes, 1.0, 0.0), config_error);

  StatAccumulator acc(2, probes, 0.0, 1.0);
  CHECK_THROWS_AS(acc.sample(Eigen::VectorXd::Zero(4), 0.0), config_error); // value-driven
  CHECK_THROWS_AS(acc.mean_velocity(0), config_error);                      // no samples yet
  acc.sample_values(Eigen::MatrixXd::Zero(2, 1), 0.0);
  CHECK_THROWS_AS(acc.sample_values(Eigen::MatrixXd::Zero(3, 1), 0.5), config_error);
  Eigen::VectorXd pv = Eigen::VectorXd::Zero(1);
  CHECK_THROWS_AS(acc.sample_values(Eigen::MatrixXd::Zero(2, 1), 0.5, &pv), config_error);
  CHECK_THROWS_AS(acc.mean_pressure(0), config_error);
  CHECK_THROWS_AS(acc.mean_stress(), config_error);
  CHECK_THROWS_AS(acc.mean_velocity(3), config_error);
  acc.close();
  CHECK_THROWS_AS(acc.sample_values(Eigen::MatrixXd::Zero(2, 1), 0.9), config_error);

  Disc d = make_disc(2, {2, 2, 1}, {0, 0, 0}, {1, 1, 0}, BoundarySpec{}, 1);
  CHECK_THROWS_AS(StatAccumulator(d.mesh, d.s, d.dm, {{{2.0, 0.5, 0.0}}}, 0.0, 1.0),
                  config_error); // probe outside the mesh
  CHECK_THROWS_AS(StatAccumulator(d.mesh, d.s, d.dm, probes, 0.0, 1.0, 2), config_error);

  StatAccumulator open_acc(d.mesh, d.s, d.dm, probes, 0.0, 1.0);
  open_acc.sample(Eigen::VectorXd::Zero(d.dm.nV), 0.0);
  CHECK_THROWS_AS(wall_profile(open_acc, 2, 0.1), config_error); // window still open
  open_acc.close();
  CHECK_THROWS_AS(wall_profile(open_acc, 2, 0.0), config_error);  // bad viscosity
  CHECK_THROWS_AS(wall_profile(open_acc, 9, 0.1), config_error); // face out of range
  CHECK_THROWS_AS(wall_profile(open_acc, WallGeometry{0, 0, 0.5}, 0.1),
                  config_error); // probe behind the wall plane

  BoundarySpec pbc;
  pbc.periodic[0] = true;
  pbc.face_tag[3] = FacetTag::Outlet;
  Disc dp = make_disc(2, {2, 2, 1}, {0, 0, 0}, {1, 1, 0}, pbc, 1);
  StatAccumulator pacc(dp.mesh, dp.s, dp.dm, probes, 0.0, 1.0);
  pacc.sample(Eigen::VectorXd::Zero(dp.dm.nV), 0.0);
  pacc.close();
  CHECK_THROWS_AS(wall_profile(pacc, 0, 0.1), config_error); // periodic axis
  CHECK_THROWS_AS(wall_profile(pacc, 3, 0.1), config_error); // outlet, not a wall

  // duplicate wall-normal distances
  StatAccumulator dup(2, {{{0.1, 0.2, 0.0}}, {{0.5, 0.2, 0.0}}}, 0.0, 1.0);
  dup.sample_values(Eigen::MatrixXd::Ones(2, 2), 0.0);
  dup.close();
  CHECK_THROWS_AS(wall_profile(dup, WallGeometry{1, 0, 0.0}, 1.0), config_error);

  Eigen::VectorXd n(3), u(3);
  n << 0.0, 0.5, 0.5;
  u << 0.0, 1.0, 1.0;
  CHECK_THROWS_AS(boundary_layer_thicknesses(n, u), config_error);
  n << 0.0, 0.5, 1.0;
  CHECK_THROWS_AS(boundary_layer_thicknesses(n, u, 0.0), config_error);
  CHECK_THROWS_AS(boundary_layer_thicknesses(n, Eigen::VectorXd::Zero(3)), config_error);
  CHECK_THROWS_AS(boundary_layer_thicknesses(n.head(1), u.head(1)), config_error);
}
