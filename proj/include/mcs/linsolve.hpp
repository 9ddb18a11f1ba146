#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "mcs/forms.hpp"
#include "mcs/mesh.hpp"
#include "mcs/spaces.hpp"

namespace mcs {

struct SolverReport {
  int iterations = 0;
  double residual = 0.0; // final relative (preconditioned) residual
  double seconds = 0.0;
  int op_applies = 0;
  bool converged = false;
  std::vector<double> history; // relative residual per iteration
};

using LinOp = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;

/// Preconditioned conjugate gradients with optional deflation. Deflation
/// vectors span the (semidefinite) operator's nullspace; right-hand side and
/// iterates are kept orthogonal to them and the solution comes back
/// deflated. Throws solver_error when a negative curvature direction shows
/// up (operator or preconditioner not positive definite on the subspace).
std::pair<Eigen::VectorXd, SolverReport> pcg(
    const LinOp& op, const Eigen::VectorXd& rhs, const LinOp& prec, double tol, int max_iter,
    const std::vector<Eigen::VectorXd>& deflation = {});

/// Which local unknowns are eliminated per element before the global solve.
enum class Elimination { StressAndGamma, StressGammaAndBubbles };

/// Solution of the velocity prediction step in all four variables.
struct StepOneSolution {
  Eigen::VectorXd sigma, gamma, u, uhat;
};

class BddcPreconditioner;

/// Element-wise static condensation of the prediction-step saddle system.
/// The interior block (stress, spin, and optionally the velocity bubbles) is
/// factorized once -- every element is congruent -- and a global sparse
/// Schur complement is assembled over the retained unknowns:
///   [0, nVret)            velocity dofs kept in the global system
///   [nVret, nVret + nVhat) tangential facet velocity dofs
/// where nVret = nV for StressAndGamma and nVfacet when bubbles are
/// eliminated as well.
class CondensedSystem {
 public:
  CondensedSystem(const Mesh& mesh, const SpaceSet& s, const DofMap& dm, double nu, double dt,
                  Elimination elim);

  /// Refactorize after a viscosity or time-step change; invalidates any
  /// preconditioner built against the previous revision.
  void recondense(double nu, double dt);

  int retained_size() const { return n_ret_; }
  int velocity_retained() const { return n_vret_; }
  int local_retained() const { return nr_loc_; }
  Elimination elimination() const { return elim_; }
  double nu() const { return nu_; }
  double dt() const { return dt_; }
  int revision() const { return revision_; }
  const Mesh& mesh() const { return mesh_; }
  const SpaceSet& spaces() const { return s_; }
  const DofMap& dof_map() const { return dm_; }
  /// Non-empty when nu*dt leaves the mass-dominated regime the local
  /// preconditioner is designed for.
  const std::string& warning() const { return warning_; }

  /// Assembled global Schur complement over the retained unknowns.
  const Eigen::SparseMatrix<double>& schur() const { return S_; }
  /// Shared element Schur block (identical for every element).
  const Eigen::MatrixXd& local_schur() const { return S_loc_; }
  /// Global retained index of an element's local retained slot.
  int retained_gdof(int e, int slot) const;

  /// Retained dofs constrained by Dirichlet (wall/inlet) facets: the normal
  /// velocity facet dofs and the tangential multiplier dofs there.
  std::vector<char> dirichlet_mask() const;

  /// Condense the full right-hand side (given per variable) to the retained
  /// unknowns: b_r = r_r - K_ri K_ii^{-1} r_i.
  Eigen::VectorXd condense_rhs(const Eigen::VectorXd& rsig, const Eigen::VectorXd& rgam,
                               const Eigen::VectorXd& ru, const Eigen::VectorXd& ruhat) const;

  /// S * x with the constrained entries of x treated as zero and the
  /// constrained rows of the result cleared.
  Eigen::VectorXd apply_masked(const Eigen::VectorXd& x, const std::vector<char>& dirichlet) const;

  /// Solve the full saddle system: constrained retained dofs are pinned to
  /// `boundary` (same length as the retained vector, zero elsewhere), the
  /// free part runs through BDDC-preconditioned CG, and the interior
  /// variables are recovered element by element.
  StepOneSolution solve(const Eigen::VectorXd& rsig, const Eigen::VectorXd& rgam,
                        const Eigen::VectorXd& ru, const Eigen::VectorXd& ruhat,
                        const Eigen::VectorXd& boundary, const BddcPreconditioner& prec,
                        double tol, int max_iter, SolverReport& report) const;

  /// Split a retained vector into its velocity / facet-velocity parts,
  /// expanding eliminated bubbles with zeros.
  void split_retained(const Eigen::VectorXd& xr, Eigen::VectorXd& u, Eigen::VectorXd& uhat) const;

 private:
  void build(double nu, double dt);
  void gather_interior_rhs(int e, const Eigen::VectorXd& rsig, const Eigen::VectorXd& rgam,
                           const Eigen::VectorXd& ru, Eigen::VectorXd& ri) const;

  const Mesh& mesh_;
  const SpaceSet& s_;
  const DofMap& dm_;
  Elimination elim_;
  double nu_ = 0.0, dt_ = 0.0;
  int revision_ = 0;
  std::string warning_;

  int ni_loc_ = 0; // interior unknowns per element
  int nr_loc_ = 0; // retained unknowns per element
  int n_vret_ = 0; // global retained velocity dofs
  int n_ret_ = 0;  // total global retained dofs

  Eigen::MatrixXd K_ii_, K_ir_; // shared local blocks
  Eigen::VectorXd dscale_;      // symmetric equilibration of the interior block
  Eigen::PartialPivLU<Eigen::MatrixXd> lu_ii_; // of the equilibrated block
  Eigen::MatrixXd rec_;   // K_ii^{-1} K_ir
  Eigen::MatrixXd S_loc_; // K_rr - K_ri K_ii^{-1} K_ir, symmetrized
  Eigen::SparseMatrix<double> S_;

  friend class BddcPreconditioner;
};

/// Element-wise BDDC: the local Schur blocks are solved independently on a
/// facet-broken copy of the retained space and averaged back with inverse
/// multiplicity weights on both sides. Dirichlet-constrained slots are
/// pinned inside the local blocks, so on a single constrained element the
/// preconditioner is the exact inverse. A floating element's block is
/// singular (pure facet-velocity multiplier modes carry no mass); those
/// directions are regularized to the stiffest local mode, which keeps the
/// preconditioner symmetric positive definite without a coarse space.
class BddcPreconditioner {
 public:
  BddcPreconditioner(const CondensedSystem& cs, const std::vector<char>& dirichlet);

  Eigen::VectorXd apply(const Eigen::VectorXd& r) const;

 private:
  const CondensedSystem& cs_;
  int revision_ = 0;
  std::vector<double> inv_mult_;             // per retained dof
  std::vector<const Eigen::MatrixXd*> elem_inv_; // per element, cached by pin mask
  std::map<std::string, std::unique_ptr<Eigen::MatrixXd>> cache_;
};

enum class PressurePrec { Jacobi, TwoLevel };

/// Condensed pressure-projection operator: per element the broken velocity
/// and the element pressures are eliminated (one shared factorization) and
/// the facet-pressure Schur complement S_p = -B_p M_p^{-1} B_p^t is applied
/// matrix-free. Outlet facet pressures are pinned to zero (excluded from the
/// active set); without an outlet the constant facet pressure spans the
/// nullspace and is deflated.
class PressureSchur {
 public:
  PressureSchur(const Mesh& mesh, const SpaceSet& s, const DofMap& dm);

  int size() const { return dm_.nQhat; }
  bool singular() const { return !mesh_.has_outlet(); }
  const std::vector<char>& active() const { return active_; }

  /// S_p * x (inactive entries ignored and returned as zero).
  Eigen::VectorXd apply(const Eigen::VectorXd& x) const;

  /// Right-hand side of the facet-pressure system from the divergence
  /// moments rq of the predicted velocity, rq_i = (div u*, q_i):
  /// b = -B_p M_p^{-1} [0; rq].
  Eigen::VectorXd condense_rhs(const Eigen::VectorXd& rq) const;

  /// Solve S_p phat = rhs by PCG. Throws solver_error when the system is
  /// singular and the right-hand side has a component along the nullspace.
  Eigen::VectorXd solve(const Eigen::VectorXd& rhs, PressurePrec prec, double tol, int max_iter,
                        SolverReport& report) const;

  /// Recover the element unknowns (utilde on the broken space, pressure p)
  /// from the facet pressures and the projection right-hand side
  /// rq = B_pu u* (the divergence moments of the predicted velocity).
  void recover(const Eigen::VectorXd& phat, const Eigen::VectorXd& rq, Eigen::VectorXd& utilde,
               Eigen::VectorXd& p) const;

 private:
  const Mesh& mesh_;
  const SpaceSet& s_;
  const DofMap& dm_;
  int nl_ = 0; // local eliminated block size (nV + nQ)
  Eigen::PartialPivLU<Eigen::MatrixXd> lu_mp_;
  Eigen::MatrixXd bhat_;    // local facet-pressure coupling rows
  Eigen::MatrixXd S_loc_;   // -bhat mp^{-1} bhat^t, symmetrized
  std::vector<char> active_;
  Eigen::VectorXd diag_; // Jacobi diagonal of S_p
  // facet-constant coarse space for the two-level variant, built on demand
  mutable bool coarse_built_ = false;
  mutable Eigen::MatrixXd coarse_inv_;
  std::vector<int> coarse_fac_; // active facets carrying a coarse dof
};

} // namespace mcs
