#include <cmath>
#include <random>

#include "doctest.h"
#include "mcs/forms.hpp"
#include "mcs/hopu.hpp"
#include "mcs/mesh.hpp"
#include "mcs/spaces.hpp"
#include "mcs/util.hpp"

using namespace mcs;

namespace {

// Two stacked unit squares with a piecewise-constant velocity: (1,0) below,
// (0,0) above. The shared facet is normal to y, so the normal component is
// continuous (zero) and the data lives in V. Jump magnitude 1, average 1/2.
struct ShearPair {
  Mesh mesh;
  SpaceSet s;
  DofMap dm;
  Eigen::VectorXd u;
  int shared = -1;

  ShearPair() {
    BoundarySpec bc; // all walls
    mesh = build_box_mesh(2, {1, 2, 1}, {0.0, 0.0, 0.0}, {1.0, 2.0, 1.0}, bc);
    s = build_space_set(2, 1, mesh.h);
    dm = build_dof_map(mesh, s);
    u = Eigen::VectorXd::Zero(dm.nV);
    // x-directed facets of the lower element carry u_x = 1 (both hdiv face
    // functions sum to the constant 1 across the element)
    u[dm.v_facet_dof(mesh.elem_facet[0][0], 0)] = 1.0;
    u[dm.v_facet_dof(mesh.elem_facet[0][1], 0)] = 1.0;
    for (const auto& f : mesh.facets)
      if (f.tag == FacetTag::Interior) shared = f.id;
    REQUIRE(shared >= 0);
  }
};

} // namespace

TEST_CASE("facet projector: degenerate orders and errors") {
  auto s = build_space_set(2, 3, {1.0, 1.0, 1.0});
  FacetProjector proj(s, s.points_per_axis_nonlinear());
  CHECK(proj.max_order() == 3);

  std::mt19937 rng(11);
  std::normal_distribution<double> dist;
  Eigen::MatrixXd vals(proj.rule().npts, 2);
  for (int q = 0; q < vals.rows(); ++q)
    for (int c = 0; c < 2; ++c) vals(q, c) = dist(rng);

  Eigen::MatrixXd out;
  proj.residual(-1, vals, out); // Pi = 0: the residual is the full value
  CHECK((out - vals).cwiseAbs().maxCoeff() == 0.0);
  proj.residual(3, vals, out); // Pi = identity: nothing survives
  CHECK(out.cwiseAbs().maxCoeff() == 0.0);
  CHECK((proj.project(3, vals) - vals).cwiseAbs().maxCoeff() == 0.0);
  CHECK_THROWS_AS(proj.residual(4, vals, out), config_error);
}

TEST_CASE("facet projector: order zero reproduces the facet mean") {
  auto s = build_space_set(2, 2, {1.0, 1.0, 1.0});
  FacetProjector proj(s, s.points_per_axis_nonlinear());
  const TensorRule& rule = proj.rule();

  Eigen::MatrixXd vals(rule.npts, 1);

  // sin(pi t) has zero mean over [-1,1]: the projection vanishes
  for (int q = 0; q < rule.npts; ++q) vals(q, 0) = std::sin(M_PI * rule.points[q][0]);
  Eigen::MatrixXd p = proj.project(0, vals);
  CHECK(p.cwiseAbs().maxCoeff() < 1e-13);

  // t^2 has mean 1/3
  for (int q = 0; q < rule.npts; ++q) vals(q, 0) = rule.points[q][0] * rule.points[q][0];
  p = proj.project(0, vals);
  for (int q = 0; q < rule.npts; ++q) CHECK(p(q, 0) == doctest::Approx(1.0 / 3.0).epsilon(1e-13));

  // constants are untouched by every order
  vals.setConstant(0.75);
  for (int l = 0; l <= 2; ++l) {
    p = proj.project(l, vals);
    CHECK((p.array() - 0.75).abs().maxCoeff() < 1e-14);
  }
}

TEST_CASE("facet projector: idempotence, orthogonality, contraction, nestedness") {
  for (int dim : {2, 3}) {
    CAPTURE(dim);
    auto s = build_space_set(dim, 3, {1.0, 1.0, 1.0});
    FacetProjector proj(s, s.points_per_axis_nonlinear());
    const TensorRule& rule = proj.rule();

    std::mt19937 rng(29 + dim);
    std::normal_distribution<double> dist;
    Eigen::MatrixXd vals(rule.npts, dim);
    for (int q = 0; q < rule.npts; ++q)
      for (int c = 0; c < dim; ++c) vals(q, c) = dist(rng);

    auto wnorm = [&](const Eigen::MatrixXd& m) {
      double acc = 0.0;
      for (int q = 0; q < rule.npts; ++q) acc += rule.weights[q] * m.row(q).squaredNorm();
      return std::sqrt(acc);
    };

    double prev = std::numeric_limits<double>::infinity();
    for (int l = 0; l <= 3; ++l) {
      CAPTURE(l);
      Eigen::MatrixXd p = proj.project(l, vals);
      Eigen::MatrixXd resid = vals - p;

      // idempotence
      CHECK((proj.project(l, p) - p).cwiseAbs().maxCoeff() < 1e-12);

      // the residual is orthogonal to every retained basis function
      Eigen::MatrixXd basis = facet_scalar_table_degree(s, l, rule.points);
      for (int j = 0; j < basis.rows(); ++j)
        for (int c = 0; c < dim; ++c) {
          double ip = 0.0;
          for (int q = 0; q < rule.npts; ++q)
            ip += rule.weights[q] * basis(j, q) * resid(q, c);
          CHECK(std::abs(ip) < 1e-12);
        }

      // residual norms shrink as the projection space grows
      double cur = wnorm(resid);
      CHECK(cur <= prev + 1e-12);
      prev = cur;

      // nestedness: projecting through a larger space first changes nothing
      for (int lp = l; lp <= 3; ++lp) {
        Eigen::MatrixXd via = proj.project(l, proj.project(lp, vals));
        CHECK((via - p).cwiseAbs().maxCoeff() < 1e-12);
      }
    }
  }
}

TEST_CASE("eta thresholds: defaults, validation, bracket lookup") {
  auto t = EtaThresholds::defaults(3);
  REQUIRE(t.eta.size() == 4);
  CHECK(t.eta[0] == doctest::Approx(0.1));
  CHECK(t.eta[1] == doctest::Approx(0.2));
  CHECK(t.eta[2] == doctest::Approx(0.3));
  CHECK(t.eta[3] == doctest::Approx(0.4));
  t.validate(3);

  CHECK(t.bracket(0.05) == -1); // at or below eta_0: standard upwind
  CHECK(t.bracket(0.1) == -1);
  CHECK(t.bracket(0.15) == 0);
  CHECK(t.bracket(0.2) == 0);
  CHECK(t.bracket(0.25) == 1);
  CHECK(t.bracket(0.35) == 2);
  CHECK(t.bracket(0.45) == 3); // above eta_k: no upwinding
  CHECK(t.bracket(2.0) == 3);  // indicator values above 1 clamp into the top

  EtaThresholds bad;
  bad.eta = {0.1, 0.2, 0.3};
  CHECK_THROWS_AS(bad.validate(3), config_error); // wrong count
  bad.eta = {0.1, 0.1, 0.2, 0.3};
  CHECK_THROWS_AS(bad.validate(3), config_error); // not strictly increasing
  bad.eta = {0.1, 0.2, 0.3, 1.0};
  CHECK_THROWS_AS(bad.validate(3), config_error); // must stay below 1
  bad.eta = {-0.1, 0.2, 0.3, 0.4};
  CHECK_THROWS_AS(bad.validate(3), config_error); // negative threshold
}

TEST_CASE("initial order field: convective facets start at standard upwind") {
  BoundarySpec bc;
  bc.periodic = {true, false, false};
  auto mesh = build_box_mesh(2, {3, 2, 1}, {0.0, 0.0, 0.0}, {3.0, 1.0, 1.0}, bc);
  auto field = initial_order_field(mesh, 2);
  CHECK(field.k == 2);
  REQUIRE(static_cast<int>(field.order.size()) == mesh.n_facets());
  for (const auto& f : mesh.facets)
    CHECK(field.order[f.id] == (f.is_convective() ? -1 : -2));
}

TEST_CASE("eta: hand-computed value on a tangential shear") {
  ShearPair sp;
  ConvectionOperator op(sp.mesh, sp.s, sp.dm);

  // jump (1,0), average (1/2,0): eta = 1 / (1/2) = 2 under standard upwind
  double eta = compute_eta(op, sp.u, sp.shared, -1, 1.0);
  CHECK(eta == doctest::Approx(2.0).epsilon(1e-13));

  // the indicator is invariant under scaling of the velocity
  Eigen::VectorXd u2 = 3.7 * sp.u;
  CHECK(compute_eta(op, u2, sp.shared, -1, 3.7) == doctest::Approx(eta).epsilon(1e-12));

  // a constant jump is fully captured already at order zero
  CHECK(compute_eta(op, sp.u, sp.shared, 0, 1.0) < 1e-13);

  // order k leaves no residual by definition
  CHECK(compute_eta(op, sp.u, sp.shared, sp.s.k, 1.0) == 0.0);

  // walls carry no convective flux
  for (const auto& f : sp.mesh.facets)
    if (!f.is_convective()) {
      CHECK_THROWS_AS(compute_eta(op, sp.u, f.id, -1, 1.0), solver_error);
      break;
    }
}

TEST_CASE("eta: continuous and stagnant fields report zero") {
  BoundarySpec bc;
  bc.periodic = {true, true, false};
  auto mesh = build_box_mesh(2, {2, 2, 1}, {0.0, 0.0, 0.0}, {1.0, 1.0, 1.0}, bc);
  auto s = build_space_set(2, 2, mesh.h);
  auto dm = build_dof_map(mesh, s);
  ConvectionOperator op(mesh, s, dm);

  // globally continuous, periodic-compatible, inside the space for k = 2
  VectorField uf = [](const std::array<double, 3>& x) {
    return std::array<double, 3>{x[1] * (1.0 - x[1]), x[0] * (1.0 - x[0]), 0.0};
  };
  Eigen::VectorXd u = l2_project_velocity_plain(mesh, s, dm, uf);
  double scale = op.rms_velocity(u);
  CHECK(scale > 0.1);
  for (const auto& f : mesh.facets) CHECK(compute_eta(op, u, f.id, -1, scale) < 1e-10);

  // a zero field is stagnant on every facet (no division blow-up)
  Eigen::VectorXd zero = Eigen::VectorXd::Zero(dm.nV);
  for (const auto& f : mesh.facets) CHECK(compute_eta(op, zero, f.id, -1, 0.0) == 0.0);
}

TEST_CASE("update order field: brackets applied facet by facet") {
  ShearPair sp;
  ConvectionOperator op(sp.mesh, sp.s, sp.dm);
  auto thresholds = EtaThresholds::defaults(sp.s.k);
  auto previous = initial_order_field(sp.mesh, sp.s.k);

  std::vector<double> etas;
  auto next = update_order_field(op, sp.u, thresholds, previous, nullptr, &etas);
  CHECK(next.k == sp.s.k);

  for (const auto& f : sp.mesh.facets) {
    CAPTURE(f.id);
    if (!f.is_convective()) {
      CHECK(next.order[f.id] == -2);
      continue;
    }
    if (f.id == sp.shared) {
      // eta = 2 clamps into the top bracket: no upwinding
      CHECK(etas[f.id] == doctest::Approx(2.0).epsilon(1e-12));
      CHECK(next.order[f.id] == sp.s.k);
    } else {
      // the flow is continuous (or stagnant) across every other facet
      CHECK(etas[f.id] < 1e-10);
      CHECK(next.order[f.id] == -1);
    }
  }

  // the previous order enters through the residual: at order k nothing
  // survives, so every facet relaxes back to standard upwind
  auto relaxed = update_order_field(op, sp.u, thresholds, next);
  for (const auto& f : sp.mesh.facets)
    if (f.is_convective()) CHECK(relaxed.order[f.id] == -1);
}

TEST_CASE("order field CSV lists convective facets only") {
  ShearPair sp;
  auto field = initial_order_field(sp.mesh, sp.s.k);
  field.order[sp.shared] = 1;

  std::string csv = order_field_csv(sp.mesh, field);
  CHECK(csv.rfind("facet_id,x,y,z,order\n", 0) == 0);

  int lines = 0;
  for (char c : csv)
    if (c == '\n') ++lines;
  int convective = 0;
  for (const auto& f : sp.mesh.facets)
    if (f.is_convective()) ++convective;
  CHECK(lines == convective + 1);
  CHECK(csv.find("," + std::to_string(1) + "\n") != std::string::npos);
}
