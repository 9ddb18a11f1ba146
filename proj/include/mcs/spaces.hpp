#pragma once

#include <Eigen/Dense>
#include <array>
#include <functional>
#include <string>
#include <vector>

#include "mcs/mesh.hpp"
#include "mcs/quadrature.hpp"

namespace mcs {

enum class Space {
  Velocity,       // H(div)-conforming Raviart-Thomas, tensor-product flavor
  VelocityBroken, // same element space, no interelement coupling
  FacetVelocity,  // tangential vector polynomials on facets (multiplier)
  Stress,         // trace-free matrix polynomials, facet nt-trace degree <= k
  Spin,           // skew-symmetric matrix polynomials of degree <= k
  Pressure,       // tensor-product Legendre, degree <= k per axis
  FacetPressure   // scalar facet polynomials of degree <= k
};

const char* to_string(Space s);

enum class EvalKind { Value, Divergence, Gradient, NormalTrace, TangentialTrace, NnTrace, NtTrace };

/// One velocity shape function: component `comp`, hdiv_axis_basis index along
/// that axis, Legendre indices along the transverse axes (increasing axis
/// order). local_face >= 0 marks a facet function, -1 an interior bubble.
struct VelShape {
  int comp = 0;
  int axis_index = 0;
  std::array<int, 2> trans{0, 0};
  int local_face = -1;
};

/// One stress shape function: constant generator matrix times a Legendre
/// product of total degree <= k+1.
struct SigmaShape {
  int gen = 0;
  std::array<int, 3> leg{0, 0, 0};
};

struct SpinShape {
  int gen = 0;
  std::array<int, 3> leg{0, 0, 0};
};

/// Reference element description shared by all (congruent) elements.
struct SpaceSet {
  int dim = 2;
  int k = 1;
  std::array<double, 3> h{1.0, 1.0, 1.0};

  // local dimensions
  int tpf = 0;    // V normal-trace dofs per facet = (k+1)^(dim-1)
  int nVbub = 0;  // interior V dofs per element
  int nV = 0;     // V dofs per element = 2*dim*tpf + nVbub
  int nSigma = 0;
  int nW = 0;
  int nQ = 0;
  int tvf = 0; // FacetVelocity dofs per facet
  int tqf = 0; // FacetPressure dofs per facet

  std::vector<VelShape> vel_shapes;     // facet functions first, then bubbles
  std::vector<SigmaShape> sigma_shapes;
  std::vector<SpinShape> spin_shapes;
  std::vector<std::array<int, 3>> pres_shapes;
  std::vector<std::array<int, 2>> facet_scalars; // indices over transverse axes

  std::vector<Eigen::Matrix3d> sigma_gens;
  std::vector<Eigen::Matrix3d> spin_gens;

  int points_per_axis_bilinear() const { return k + 2; }          // exact to 2k+3
  int points_per_axis_nonlinear() const { return (3 * k + 3) / 2 + 1; } // exact to 3k+3
};

SpaceSet build_space_set(int dim, int k, const std::array<double, 3>& h);

/// Map a facet-local point (coords along transverse axes, increasing axis
/// order) to element reference coordinates for the given local face.
std::array<double, 3> embed_face_point(int dim, int face, const std::array<double, 3>& fpt);

// ---- dense evaluation tables at arbitrary reference points ----

struct VelTable {
  std::array<Eigen::MatrixXd, 3> val;                 // comp -> (nV x npts)
  Eigen::MatrixXd div;                                // physical divergence
  std::array<std::array<Eigen::MatrixXd, 3>, 3> grad; // grad[c][a] = d v_c / d x_a
  bool has_grad = false;
};

struct SigmaTable {
  std::vector<Eigen::MatrixXd> val; // component i*dim+j -> (nSigma x npts)
  std::array<Eigen::MatrixXd, 3> divrow;
};

struct MatTable {
  std::vector<Eigen::MatrixXd> val; // component i*dim+j -> (nb x npts)
};

VelTable velocity_table(const SpaceSet& s, const std::vector<std::array<double, 3>>& pts,
                        bool with_grad = false);
SigmaTable sigma_table(const SpaceSet& s, const std::vector<std::array<double, 3>>& pts);
MatTable spin_table(const SpaceSet& s, const std::vector<std::array<double, 3>>& pts);
Eigen::MatrixXd pressure_table(const SpaceSet& s, const std::vector<std::array<double, 3>>& pts);

/// Scalar facet basis (shared by FacetPressure and each FacetVelocity
/// component): values at facet-local points, (tqf x npts).
Eigen::MatrixXd facet_scalar_table(const SpaceSet& s, const std::vector<std::array<double, 3>>& fpts);

/// Degree-l subset of the facet scalar basis (for projected-upwind fluxes);
/// rows are the facet scalars of total degree <= l.
Eigen::MatrixXd facet_scalar_table_degree(const SpaceSet& s, int l,
                                          const std::vector<std::array<double, 3>>& fpts);
int facet_scalar_count_degree(const SpaceSet& s, int l);

/// General basis evaluation; trace kinds require every point to lie on
/// exactly one reference facet (|coord| = 1 along a single axis).
Eigen::MatrixXd eval_basis(const SpaceSet& s, Space space,
                           const std::vector<std::array<double, 3>>& pts, EvalKind what);

// ---- global dof layout ----

struct DofMap {
  int dim = 2;
  int n_elements = 0;
  int n_facets = 0;
  int tpf = 0, nVbub = 0, nV_loc = 0, tvf = 0, tqf = 0, nSigma = 0, nW = 0, nQ = 0;

  int nVfacet = 0; // facet-normal dofs of V
  int nV = 0;      // total V dofs (facet + bubbles)
  int nVhat = 0;
  int nQhat = 0;
  int nQg = 0;
  int nSigmaG = 0;
  int nWg = 0;
  int nVdisc = 0;

  int v_facet_dof(int facet, int t) const { return facet * tpf + t; }
  int v_bubble_dof(int e, int b) const { return nVfacet + e * nVbub + b; }
  int vhat_dof(int facet, int t) const { return facet * tvf + t; }
  int qhat_dof(int facet, int t) const { return facet * tqf + t; }
  int q_dof(int e, int i) const { return e * nQ + i; }
  int sigma_dof(int e, int i) const { return e * nSigma + i; }
  int w_dof(int e, int i) const { return e * nW + i; }
  int vdisc_dof(int e, int i) const { return e * nV_loc + i; }

  /// Global V dofs of element e in local shape order (faces then bubbles).
  void v_elem_dofs(const Mesh& mesh, int e, std::vector<int>& out) const;
};

DofMap build_dof_map(const Mesh& mesh, const SpaceSet& s);

/// Human-readable summary: space dimensions, polynomial conventions, and the
/// condensed (facet) system size.
std::string build_report(const Mesh& mesh, const SpaceSet& s, const DofMap& dm);

// ---- analytic fields and plain L2 projections ----

using ScalarField = std::function<double(const std::array<double, 3>&)>;
using VectorField = std::function<std::array<double, 3>(const std::array<double, 3>&)>;

/// Plain L2 projection into Pressure (element-local, exact Gram solve).
Eigen::VectorXd l2_project_pressure(const Mesh& mesh, const SpaceSet& s, const DofMap& dm,
                                    const ScalarField& f);

/// Plain L2 projection into Velocity (global mass solve, CG). The
/// divergence-compatible projection used for initial data lives with the
/// splitting solver, which owns the discrete projection step.
Eigen::VectorXd l2_project_velocity_plain(const Mesh& mesh, const SpaceSet& s, const DofMap& dm,
                                          const VectorField& f);

/// Moment vector b_i = (f, phi_i) over V, integrated with the nonlinear rule.
Eigen::VectorXd velocity_moments(const Mesh& mesh, const SpaceSet& s, const DofMap& dm,
                                 const VectorField& f);

/// Evaluate a velocity coefficient vector at an arbitrary physical point
/// (element located from coordinates; used by probes and error norms).
std::array<double, 3> eval_velocity_field(const Mesh& mesh, const SpaceSet& s, const DofMap& dm,
                                          const Eigen::VectorXd& u, int e,
                                          const std::array<double, 3>& ref);

} // namespace mcs
