#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <array>
#include <vector>

#include "mcs/hopu.hpp"
#include "mcs/mesh.hpp"
#include "mcs/quadrature.hpp"
#include "mcs/spaces.hpp"

namespace mcs {

/// Reference-element matrices; every element is congruent, so one set is
/// shared by the whole mesh. Physical h-scalings are folded in, viscosity
/// and time-step scalings are not.
struct LocalBlocks {
  Eigen::MatrixXd m_sig; // (sigma_i : sigma_j), nSigma x nSigma
  Eigen::MatrixXd m_vel; // (v_i . v_j), nV x nV
  Eigen::MatrixXd b_gam; // -(sigma_j : eta_i), nW x nSigma
  /// -( (div sigma_j) . v_i ) + sum over faces of (sigma_nn,j (v_i.n)):
  /// the full velocity row of b_2h, nV x nSigma
  Eigen::MatrixXd b_u;
  /// per local face: (sigma_nt,j . vhat_i) with the element's outward
  /// normal, tvf x nSigma
  std::array<Eigen::MatrixXd, 6> b_uhat;
  Eigen::MatrixXd b1; // -( (div v_j) q_i ), nQ x nV
  /// per local face: ( (v_j . n_out) qhat_i ), tqf x nV
  std::array<Eigen::MatrixXd, 6> b3;
};

LocalBlocks build_local_blocks(const SpaceSet& s);

/// Globally assembled sparse blocks of the MCS system. Row/column spaces:
///   Msigsig  nSigmaG x nSigmaG   a_h block, scaled -1/(2 nu)
///   Bgamsig  nWg     x nSigmaG
///   Busig    nV      x nSigmaG
///   Buhatsig nVhat   x nSigmaG
///   Muu      nV      x nV        velocity mass scaled 1/dt
///   Mutut    nVdisc  x nVdisc    broken velocity mass (unscaled)
///   Bput     nQg     x nVdisc    b_1h on the broken space
///   Bphatut  nQhat   x nVdisc    b_3h (outlet facet rows are zero)
///   Bpu      nQg     x nV        b_1h on V
struct SystemBlocks {
  Eigen::SparseMatrix<double> Msigsig, Bgamsig, Busig, Buhatsig, Muu;
  Eigen::SparseMatrix<double> Mutut, Bput, Bphatut, Bpu;
};

SystemBlocks assemble_system_blocks(const Mesh& mesh, const SpaceSet& s, const DofMap& dm,
                                    double nu, double dt);

/// Unscaled global velocity mass on V (kinetic energy, residual norms).
Eigen::SparseMatrix<double> assemble_velocity_mass(const Mesh& mesh, const SpaceSet& s,
                                                   const DofMap& dm);

enum class FluxMode { Central, Upwind, HopuFixed, HopuAdaptive };

struct FluxConfig {
  FluxMode mode = FluxMode::Upwind;
  int fixed_order = 0;                   // HopuFixed
  const OrderField* orders = nullptr;    // HopuAdaptive
};

/// Matrix-free convection c_h(u; v) tested against all V basis functions,
/// with optional projected-upwind stabilization per facet.
class ConvectionOperator {
 public:
  ConvectionOperator(const Mesh& mesh, const SpaceSet& s, const DofMap& dm);

  /// Residual vector r_i = c_h(u, u, phi_i) over V dofs. inlet supplies the
  /// boundary data u_I on inlet facets (jump u^T - u_I, average the mean).
  Eigen::VectorXd apply(const Eigen::VectorXd& u, const FluxConfig& cfg,
                        const VectorField* inlet = nullptr) const;

  /// Stabilization value sum over facets of 1/2 int |u.n| |(I-Pi)[[u]]|^2.
  double dissipation(const Eigen::VectorXd& u, const FluxConfig& cfg,
                     const VectorField* inlet = nullptr) const;

  /// Velocity traces of both sides at the facet quadrature points, rows =
  /// points of projector().rule(), cols = components. On boundary facets the
  /// neighbor side is the inlet data (zero if no field is passed).
  void facet_traces(const Eigen::VectorXd& u, int facet, const VectorField* inlet,
                    Eigen::MatrixXd& owner, Eigen::MatrixXd& neighbor) const;

  /// Root-mean-square of |u| over the domain (velocity scale for eta).
  double rms_velocity(const Eigen::VectorXd& u) const;

  const FacetProjector& projector() const { return projector_; }
  const Mesh& mesh() const { return mesh_; }
  const SpaceSet& spaces() const { return s_; }
  const DofMap& dof_map() const { return dm_; }

  /// Effective projection order of a facet under the given flux mode
  /// (-1 standard upwind .. k central).
  int effective_order(const FluxConfig& cfg, int facet) const;

 private:
  const Mesh& mesh_;
  const SpaceSet& s_;
  const DofMap& dm_;
  TensorRule vol_rule_;
  VelTable vol_tab_;                      // with gradients
  FacetProjector projector_;              // shares the facet rule
  std::array<VelTable, 6> face_tab_;      // value tables at embedded face points
  std::array<std::vector<std::array<double, 3>>, 6> face_pts_; // reference points
  double w_vol_ = 0.0;                    // detJ
};

} // namespace mcs
