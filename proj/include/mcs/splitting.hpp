#pragma once

#include <Eigen/Dense>
#include <memory>
#include <string>
#include <vector>

#include "mcs/forms.hpp"
#include "mcs/hopu.hpp"
#include "mcs/linsolve.hpp"
#include "mcs/mesh.hpp"
#include "mcs/spaces.hpp"

namespace mcs {

/// Discrete flow state between steps: velocity coefficients on the
/// divergence-conforming space, physical time, and the step counter.
struct State {
  Eigen::VectorXd u;
  double t = 0.0;
  int step_index = 0;
};

/// Per-step scratch: the prediction-stage unknowns, the projection-stage
/// unknowns, and the solver reports of both stages.
struct StepWorkspace {
  Eigen::VectorXd sigma, gamma, uhat; // prediction auxiliaries
  Eigen::VectorXd ustar;              // predicted velocity (conforming)
  Eigen::VectorXd utilde;             // projection correction (broken space)
  Eigen::VectorXd p, phat;            // scaled pressure and facet pressure
  SolverReport momentum, pressure;
};

/// Time-stepping parameters. dt and nu must be positive; cfl_guard only
/// triggers a warning, never a hard stop.
struct TimeParams {
  double dt = 1e-3;
  double nu = 1.0;
  double t_end = 1.0;
  double cfl_guard = 0.5;
};

/// Velocity update at the end of a step. Difference is the default
/// u^{n+1} = u* - utilde; ScaledIncrement keeps the alternative form
/// u^{n+1} = u^n + dt (u* - utilde) for comparison.
enum class UpdateFormula { Difference, ScaledIncrement };

struct SplittingConfig {
  Elimination elimination = Elimination::StressGammaAndBubbles;
  UpdateFormula update = UpdateFormula::Difference;
  PressurePrec pressure_prec = PressurePrec::Jacobi;
  bool convection = true;               // include the convective term in step 1
  bool extrapolate_convection = false;  // evaluate it at (3u^n - u^{n-1})/2
  double momentum_tol = 1e-10;
  int momentum_max_iter = 500;
  double pressure_tol = 1e-11;
  int pressure_max_iter = 500;
};

/// Convective flux selection, including the adaptive-order refresh period
/// (in steps; the field is refreshed whenever step_index is a multiple).
struct FluxPolicy {
  FluxMode mode = FluxMode::Upwind;
  int fixed_order = 0;      // HopuFixed
  EtaThresholds thresholds; // HopuAdaptive; empty ladder means defaults(k)
  int update_cadence = 10;
};

/// Chorin-style splitting driver: a viscous prediction step solved through
/// the condensed saddle system with element-wise BDDC, followed by a
/// pressure projection onto the divergence-free subspace. Dirichlet data is
/// applied facet-wise (L2 trace projection): wall facets pin the normal and
/// tangential velocity to zero, inlet facets to the supplied field.
class FlowSolver {
 public:
  FlowSolver(const Mesh& mesh, const SpaceSet& s, const DofMap& dm, const TimeParams& params,
             SplittingConfig cfg = {}, FluxPolicy flux = {}, VectorField dirichlet = {});

  /// Viscous prediction: solve the stress/velocity saddle system for u*,
  /// sigma, gamma, uhat from the state and the optional body force. Emits a
  /// warning (not an error) when the convective CFL estimate exceeds the
  /// guard.
  void predict_velocity(const State& state, StepWorkspace& ws,
                        const VectorField* body_force = nullptr);

  /// Projection: remove the discrete gradient part of ustar. The broken
  /// correction utilde has a weakly continuous normal trace and vanishing
  /// normal component on Dirichlet facets.
  void pressure_projection(const Eigen::VectorXd& ustar, StepWorkspace& ws) const;

  /// One full step: refresh the adaptive order field on its cadence, predict,
  /// project, and combine. Verifies the divergence-free invariant of the new
  /// state and throws solver_error when it fails.
  State advance(const State& state, StepWorkspace& ws, const VectorField* body_force = nullptr);

  /// Initial data: plain L2 projection followed by the Dirichlet trace
  /// overwrite and a divergence-free projection.
  State initial_state(const VectorField& u0) const;

  /// u minus the lifted projection correction of u (leaves divergence-free
  /// fields untouched).
  Eigen::VectorXd make_divergence_free(const Eigen::VectorXd& u) const;

  /// Map the broken correction to the conforming space: shared facet dofs
  /// are averaged across the two copies, bubbles pass through.
  Eigen::VectorXd lift_broken(const Eigen::VectorXd& utilde) const;

  /// Largest coefficient jump of the broken facet dofs across interior and
  /// periodic facets (bounds the pointwise normal-trace jump up to the O(1)
  /// basis values).
  double normal_jump(const Eigen::VectorXd& utilde) const;

  /// Pointwise checks on the volume quadrature lattice.
  double max_divergence(const Eigen::VectorXd& u) const;
  double max_speed(const Eigen::VectorXd& u) const;
  double cfl_number(const Eigen::VectorXd& u) const; // max|u| dt / h_min

  /// Net outflow integral over the domain boundary (zero on closed domains).
  double boundary_flux(const Eigen::VectorXd& u) const;

  /// Change dt/nu (refactorizes the condensed system) or the guards.
  void set_time_params(const TimeParams& params);
  const TimeParams& time_params() const { return params_; }
  const SplittingConfig& config() const { return cfg_; }
  const FluxPolicy& flux_policy() const { return flux_; }

  const OrderField& order_field() const { return orders_; }
  const std::vector<double>& last_etas() const { return etas_; }
  int order_updates() const { return order_updates_; }
  const std::string& last_warning() const { return warning_; }

  const Mesh& mesh() const { return mesh_; }
  const SpaceSet& spaces() const { return s_; }
  const DofMap& dof_map() const { return dm_; }
  const SystemBlocks& blocks() const { return blocks_; }
  const CondensedSystem& condensed() const { return cs_; }
  const PressureSchur& pressure_schur() const { return ps_; }
  const ConvectionOperator& convection() const { return conv_; }
  const Eigen::VectorXd& boundary_values() const { return bnd_; }

  /// Versioned dump of the full restart state (mesh descriptor, k, velocity,
  /// time, step counter, adaptive orders, extrapolation history); reloading
  /// reproduces subsequent steps bit-identically.
  void save_checkpoint(const std::string& path, const State& state) const;
  State load_checkpoint(const std::string& path);

 private:
  void build_boundary_values();
  void refresh_orders(const Eigen::VectorXd& u);
  FluxConfig flux_config() const;
  const VectorField* inlet_field() const;
  /// Divergence moments (div u, q_i); on closed domains the constant-mode
  /// imbalance (net boundary flux) is verified small and balanced away so
  /// the singular facet-pressure system stays consistent.
  Eigen::VectorXd divergence_moments(const Eigen::VectorXd& u) const;

  const Mesh& mesh_;
  const SpaceSet& s_;
  const DofMap& dm_;
  TimeParams params_;
  SplittingConfig cfg_;
  FluxPolicy flux_;
  VectorField dirichlet_;

  SystemBlocks blocks_;
  ConvectionOperator conv_;
  CondensedSystem cs_;
  std::unique_ptr<BddcPreconditioner> prec_;
  PressureSchur ps_;

  OrderField orders_;
  std::vector<double> etas_;
  int order_updates_ = 0;
  std::string warning_;

  int q0_ = -1;             // index of the constant pressure shape
  Eigen::VectorXd bnd_;     // retained-layout Dirichlet values
  Eigen::VectorXd prev_u_;  // previous velocity for the extrapolated variant
  bool has_prev_ = false;

  TensorRule vol_rule_;
  VelTable vol_tab_;
};

/// The projection multiplier scaled back to physical pressure, p / dt.
Eigen::VectorXd physical_pressure(const Eigen::VectorXd& p, double dt);

} // namespace mcs
