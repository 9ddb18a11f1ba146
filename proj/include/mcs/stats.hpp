#pragma once

#include <Eigen/Dense>
#include <array>
#include <string>
#include <vector>

#include "mcs/mesh.hpp"
#include "mcs/spaces.hpp"

namespace mcs {

/// Kinetic energy 1/2 int |u|^2 of a velocity coefficient vector, integrated
/// element by element with the bilinear quadrature rule (exact for the
/// discrete space).
double kinetic_energy(const Mesh& mesh, const SpaceSet& s, const DofMap& dm,
                      const Eigen::VectorXd& u);

/// Single-writer running statistics of velocity (and optionally pressure and
/// viscous stress) at a set of probe points. Samples whose time lies inside
/// the averaging window [t_start, t_end] are folded in with Welford updates,
/// so the mean of a constant signal is exact and its variance is zero. With a
/// homogeneous axis every probe expands into a line of equally spaced
/// stations along that axis, and each station contributes one sample: the
/// running moments then realize the joint time/homogeneous-direction average.
class StatAccumulator {
 public:
  /// Value-driven accumulator: probes are bare coordinates and only
  /// sample_values is available (no field evaluation).
  StatAccumulator(int dim, std::vector<std::array<double, 3>> probes, double t_start,
                  double t_end);

  /// Field-driven accumulator over a discretization; probes must lie inside
  /// the mesh. homogeneous_axis < 0 disables line expansion.
  StatAccumulator(const Mesh& mesh, const SpaceSet& s, const DofMap& dm,
                  std::vector<std::array<double, 3>> probes, double t_start, double t_end,
                  int homogeneous_axis = -1, int homogeneous_stations = 8);

  int dim() const { return dim_; }
  int n_probes() const { return static_cast<int>(probes_.size()); }
  const std::vector<std::array<double, 3>>& probes() const { return probes_; }
  double t_start() const { return t_start_; }
  double t_end() const { return t_end_; }
  int homogeneous_axis() const { return homog_axis_; }
  bool closed() const { return closed_; }
  long long snapshots() const { return snapshots_; }
  long long sample_count() const { return count_; }

  /// Accumulate one snapshot of coefficient vectors. Returns false (and
  /// ignores the data) when t lies outside the averaging window. p is the
  /// physical pressure and sigma the viscous stress; each is optional but
  /// must be supplied consistently across all accepted snapshots.
  bool sample(const Eigen::VectorXd& u, double t, const Eigen::VectorXd* p = nullptr,
              const Eigen::VectorXd* sigma = nullptr);

  /// Accumulate explicit per-probe velocity values (dim x n_probes) and
  /// optional per-probe pressures; bypasses field evaluation and homogeneous
  /// expansion. Available on both accumulator flavors.
  bool sample_values(const Eigen::MatrixXd& uvals, double t,
                     const Eigen::VectorXd* pvals = nullptr);

  /// Close the averaging window; later samples are rejected with an error.
  void close() { closed_ = true; }

  // Readers; each requires at least one accepted snapshot.
  Eigen::VectorXd mean_velocity(int probe) const;
  Eigen::MatrixXd second_moment(int probe) const; // <u u^T>
  Eigen::MatrixXd covariance(int probe) const;    // <u' u'^T>
  double turbulent_energy(int probe) const;       // 1/2 tr <u' u'^T>, clamped at 0
  double mean_pressure(int probe) const;
  bool has_pressure() const { return has_pressure_; }
  bool has_stress() const { return has_stress_; }
  const Eigen::VectorXd& mean_stress() const; // mean stress coefficients

  const Mesh* mesh() const { return mesh_; }
  const SpaceSet* spaces() const { return s_; }
  const DofMap* dof_map() const { return dm_; }

 private:
  struct Station {
    int element = -1;
    Eigen::MatrixXd eval_v; // dim x nV, velocity values at the station
    Eigen::RowVectorXd eval_p;
    std::vector<int> vdofs;
  };

  void check_probe_index(int probe) const;
  void accumulate(int probe, const Eigen::VectorXd& v, const double* pval);

  const Mesh* mesh_ = nullptr;
  const SpaceSet* s_ = nullptr;
  const DofMap* dm_ = nullptr;

  int dim_ = 0;
  std::vector<std::array<double, 3>> probes_;
  double t_start_ = 0.0;
  double t_end_ = 0.0;
  int homog_axis_ = -1;
  bool closed_ = false;

  std::vector<std::vector<Station>> stations_; // per probe (field-driven only)

  long long snapshots_ = 0; // accepted snapshots
  long long count_ = 0;     // Welford samples per probe (snapshots x stations)
  bool has_pressure_ = false;
  bool has_stress_ = false;
  Eigen::MatrixXd mean_u_;            // dim x n_probes
  std::vector<Eigen::MatrixXd> m2_;   // per probe, dim x dim co-moments
  Eigen::VectorXd mean_p_;
  Eigen::VectorXd mean_sigma_;
};

/// Wall-unit profile with log-law reference constants. The arrays run over
/// the accumulator's probes sorted by ascending wall distance; the plus
/// arrays are empty when the wall shear vanishes (defined == false).
struct WallProfile {
  double kappa = 0.41;
  double c_plus = 5.2;
  double u_tau = 0.0;
  bool defined = false;     // false when the wall shear is zero
  bool from_stress = false; // gradient taken from the mean stress field
  Eigen::VectorXd n;        // wall-normal distances, ascending
  Eigen::VectorXd ut;       // mean velocity along the flow direction
  Eigen::VectorXd n_plus, ut_plus, k_plus, uv_plus;

  double log_law(double np) const;
};

/// Wall placement for profile extraction: the wall plane is coord along the
/// given axis, with side 0 when the fluid lies above it (low box face) and
/// side 1 when below (high box face).
struct WallGeometry {
  int axis = 0;
  int side = 0;
  double coord = 0.0;
};

/// Build the wall-unit profile of a closed accumulator whose probes sample a
/// wall-normal line. u_tau = sqrt(nu |d<u_t>/dn|) at the wall; the gradient
/// comes from the accumulated mean stress when available (sigma_nt equals
/// nu du_t/dn on a no-slip wall) and from one-sided polynomial
/// differentiation of the probe means otherwise. The flow direction is the
/// mean tangential velocity direction at the outermost probe.
WallProfile wall_profile(const StatAccumulator& acc, const WallGeometry& wall, double nu);

/// Same, with the wall identified as a box face (2*axis + side) of the
/// accumulator's mesh; the face must be tagged Wall.
WallProfile wall_profile(const StatAccumulator& acc, int wall_face, double nu);

/// CSV rendering (header n,n_plus,ut_plus,k_plus,uv_plus); requires a
/// defined profile.
std::string wall_profile_csv(const WallProfile& prof);

/// Integral boundary-layer measures of a sampled wall-normal profile.
struct Thicknesses {
  double delta_star = 0.0; // displacement thickness
  double theta = 0.0;      // momentum thickness
  double shape = 0.0;      // H = delta*/theta; NaN when theta == 0
  bool shape_defined = false;
  double edge_velocity = 0.0; // profile maximum
  double edge_position = 0.0; // first crossing of edge_fraction * maximum
};

/// delta* = int (1 - u/u_e) dn and theta = int (u/u_e)(1 - u/u_e) dn of the
/// piecewise-linear profile through the samples, each segment integrated in
/// closed form (for the linear delta* integrand this is the trapezoidal
/// rule). The edge velocity is the profile maximum; the profile must reach
/// the edge_fraction * maximum threshold monotonically.
Thicknesses boundary_layer_thicknesses(const Eigen::VectorXd& n, const Eigen::VectorXd& ut,
                                       double edge_fraction = 0.99);

} // namespace mcs
