#include "mcs/hopu.hpp"

#include <cmath>

#include "mcs/forms.hpp"
#include "mcs/util.hpp"

namespace mcs {

FacetProjector::FacetProjector(const SpaceSet& s, int points_per_axis)
    : k_(s.k), rule_(tensor_rule(s.dim - 1, points_per_axis)) {
  table_ = facet_scalar_table(s, rule_.points);
  inv_norm_.resize(table_.rows());
  for (int j = 0; j < table_.rows(); ++j) {
    double g = 0.0;
    for (int q = 0; q < rule_.npts; ++q) g += rule_.weights[q] * table_(j, q) * table_(j, q);
    inv_norm_[j] = 1.0 / g;
  }
}

void FacetProjector::residual(int l, const Eigen::MatrixXd& vals, Eigen::MatrixXd& out) const {
  if (l > k_) throw config_error("facet projection: order exceeds the space degree");
  if (l < 0) { // Pi = 0 (standard upwind): keep the full value
    out = vals;
    return;
  }
  if (l == k_) { // Pi = identity: nothing survives
    out.setZero(vals.rows(), vals.cols());
    return;
  }
  // the scalar basis is enumerated by ascending total degree, so the
  // degree-<=l subspace is a leading block of rows
  int nb = rule_.dim == 1 ? l + 1 : (l + 1) * (l + 2) / 2;
  out = vals;
  for (int j = 0; j < nb; ++j) {
    for (int c = 0; c < vals.cols(); ++c) {
      double coeff = 0.0;
      for (int q = 0; q < rule_.npts; ++q)
        coeff += rule_.weights[q] * table_(j, q) * vals(q, c);
      coeff *= inv_norm_[j];
      for (int q = 0; q < rule_.npts; ++q) out(q, c) -= coeff * table_(j, q);
    }
  }
}

Eigen::MatrixXd FacetProjector::project(int l, const Eigen::MatrixXd& vals) const {
  Eigen::MatrixXd res;
  residual(l, vals, res);
  return vals - res;
}

EtaThresholds EtaThresholds::defaults(int k) {
  EtaThresholds t;
  for (int i = 0; i <= k; ++i) t.eta.push_back(0.1 * (i + 1));
  return t;
}

void EtaThresholds::validate(int k) const {
  if (static_cast<int>(eta.size()) != k + 1)
    throw config_error("eta thresholds: expected k+1 values");
  for (int i = 0; i <= k; ++i) {
    if (eta[i] < 0.0 || eta[i] >= 1.0)
      throw config_error("eta thresholds: values must lie in [0,1)");
    if (i > 0 && eta[i] <= eta[i - 1])
      throw config_error("eta thresholds: values must be strictly increasing");
  }
}

int EtaThresholds::bracket(double eta_value) const {
  int k = static_cast<int>(eta.size()) - 1;
  if (eta_value <= eta[0]) return -1; // standard upwind
  for (int i = 0; i < k; ++i)
    if (eta_value <= eta[i + 1]) return i;
  return k; // includes values above eta_{k+1} = 1 (clamped)
}

OrderField initial_order_field(const Mesh& mesh, int k) {
  OrderField of;
  of.k = k;
  of.order.assign(mesh.n_facets(), -2);
  for (const auto& f : mesh.facets)
    if (f.is_convective()) of.order[f.id] = -1;
  return of;
}

double compute_eta(const ConvectionOperator& op, const Eigen::VectorXd& u, int facet,
                   int current_order, double velocity_scale, const VectorField* inlet) {
  const Facet& f = op.mesh().facets[facet];
  check(f.is_convective(), "eta: facet carries no convective flux");
  Eigen::MatrixXd uo, un, resid;
  op.facet_traces(u, facet, inlet, uo, un);
  const FacetProjector& proj = op.projector();
  const TensorRule& rule = proj.rule();

  Eigen::MatrixXd jump = uo - un;
  proj.residual(current_order, jump, resid);

  double wfac = f.measure / std::pow(2.0, op.mesh().dim - 1);
  double num = 0.0, den = 0.0;
  for (int q = 0; q < rule.npts; ++q) {
    num += rule.weights[q] * wfac * resid.row(q).norm();
    den += rule.weights[q] * wfac * (0.5 * (uo.row(q) + un.row(q))).norm();
  }
  if (den <= 1e-12 * f.measure * velocity_scale) return 0.0; // stagnant facet
  return num / den;
}

OrderField update_order_field(const ConvectionOperator& op, const Eigen::VectorXd& u,
                              const EtaThresholds& thresholds, const OrderField& previous,
                              const VectorField* inlet, std::vector<double>* etas_out) {
  int k = op.spaces().k;
  thresholds.validate(k);
  OrderField next = initial_order_field(op.mesh(), k);
  double scale = op.rms_velocity(u);
  if (etas_out != nullptr) etas_out->assign(op.mesh().n_facets(), 0.0);
  for (const auto& f : op.mesh().facets) {
    if (!f.is_convective()) continue;
    double eta = compute_eta(op, u, f.id, previous.order[f.id], scale, inlet);
    next.order[f.id] = thresholds.bracket(eta);
    if (etas_out != nullptr) (*etas_out)[f.id] = eta;
  }
  return next;
}

std::string order_field_csv(const Mesh& mesh, const OrderField& field) {
  std::string out = "facet_id,x,y,z,order\n";
  for (const auto& f : mesh.facets) {
    if (field.order[f.id] == -2) continue;
    out += std::to_string(f.id);
    for (int a = 0; a < 3; ++a) {
      out += ',';
      out += fmt_g17(a < mesh.dim ? f.center[a] : 0.0);
    }
    out += ',' + std::to_string(field.order[f.id]) + '\n';
  }
  return out;
}

} // namespace mcs
