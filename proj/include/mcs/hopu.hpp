#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "mcs/mesh.hpp"
#include "mcs/quadrature.hpp"
#include "mcs/spaces.hpp"

namespace mcs {

class ConvectionOperator; // forms.hpp

/// Facet-wise L2 projection onto scalar polynomials of total degree <= l over
/// the facet's transverse coordinates, evaluated at a fixed quadrature rule.
/// The Legendre facet basis makes the Gram matrix diagonal, so projecting is
/// a weighted sum per retained basis function. Columns of a value matrix are
/// projected independently (vector data is handled componentwise).
class FacetProjector {
 public:
  FacetProjector(const SpaceSet& s, int points_per_axis);

  const TensorRule& rule() const { return rule_; }
  int max_order() const { return k_; }

  /// out = (I - Pi^l) vals with vals of shape (npts x ncols).
  /// l < 0 encodes Pi = 0 (standard upwind, out = vals); l >= k encodes
  /// Pi = identity (no upwinding, out = 0).
  void residual(int l, const Eigen::MatrixXd& vals, Eigen::MatrixXd& out) const;

  /// Pi^l vals (same conventions as residual).
  Eigen::MatrixXd project(int l, const Eigen::MatrixXd& vals) const;

 private:
  int k_ = 0;
  TensorRule rule_;
  Eigen::MatrixXd table_;    // tqf x npts scalar basis values
  Eigen::VectorXd inv_norm_; // inverse diagonal Gram entries
};

/// Indicator thresholds eta_0 < ... < eta_k (with implicit eta_{-1} = 0 and
/// eta_{k+1} = 1) steering the adaptive projection order.
struct EtaThresholds {
  std::vector<double> eta;

  /// Evenly spaced defaults 0.1, 0.2, ... (the published ladder for k = 3).
  static EtaThresholds defaults(int k);

  void validate(int k) const; // throws config_error on a malformed ladder

  /// Bracket lookup: eta <= eta_0 -> -1 (standard upwind); eta_i < eta <=
  /// eta_{i+1} -> i; eta > eta_k -> k (values above 1 clamp into the top).
  int bracket(double eta_value) const;
};

/// Per-facet projection order: -1 = standard upwind, 0..k-1 = projected
/// upwind of that order, k = central (no upwinding); -2 marks facets that
/// carry no convective flux (walls, outlets).
struct OrderField {
  std::vector<int> order;
  int k = 0;
};

/// Fresh field: every convective facet starts at standard upwind.
OrderField initial_order_field(const Mesh& mesh, int k);

/// Indicator eta = integral |(I-Pi^l)[[u]]| / integral |<u>| on one facet,
/// with l the facet's current order and pointwise Euclidean norms. A
/// denominator below 1e-12 * measure * velocity_scale reports 0 (stagnant).
double compute_eta(const ConvectionOperator& op, const Eigen::VectorXd& u, int facet,
                   int current_order, double velocity_scale,
                   const VectorField* inlet = nullptr);

/// Recompute the order of every convective facet from the indicator.
OrderField update_order_field(const ConvectionOperator& op, const Eigen::VectorXd& u,
                              const EtaThresholds& thresholds, const OrderField& previous,
                              const VectorField* inlet = nullptr,
                              std::vector<double>* etas_out = nullptr);

/// CSV dump (facet id, center coordinates, order) of the convective facets.
std::string order_field_csv(const Mesh& mesh, const OrderField& field);

} // namespace mcs
