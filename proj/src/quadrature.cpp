#include "mcs/quadrature.hpp"

#include <cmath>
#include <stdexcept>

namespace mcs {

// Newton iteration on Legendre roots; standard Golub-Welsch-free construction.
GaussRule gauss_legendre(int n) {
  if (n < 1) throw std::invalid_argument("gauss_legendre: n must be >= 1");
  GaussRule rule;
  rule.points.resize(n);
  rule.weights.resize(n);
  const double pi = 3.14159265358979323846;
  for (int i = 0; i < (n + 1) / 2; ++i) {
    double x = std::cos(pi * (i + 0.75) / (n + 0.5));
    double pp = 0.0;
    for (int it = 0; it < 100; ++it) {
      // Evaluate P_n(x) and P_n'(x) by recurrence.
      double p0 = 1.0, p1 = x;
      for (int j = 2; j <= n; ++j) {
        double p2 = ((2 * j - 1) * x * p1 - (j - 1) * p0) / j;
        p0 = p1;
        p1 = p2;
      }
      pp = n * (x * p1 - p0) / (x * x - 1.0);
      double dx = p1 / pp;
      x -= dx;
      if (std::abs(dx) < 1e-15) break;
    }
    rule.points[i] = -x;
    rule.points[n - 1 - i] = x;
    double w = 2.0 / ((1.0 - x * x) * pp * pp);
    rule.weights[i] = w;
    rule.weights[n - 1 - i] = w;
  }
  if (n % 2 == 1) rule.points[n / 2] = 0.0; // symmetrize the midpoint exactly
  return rule;
}

GaussRule gauss_for_degree(int degree) {
  int n = degree / 2 + 1;
  return gauss_legendre(n);
}

TensorRule tensor_rule(int dim, int points_per_axis) {
  if (dim < 1 || dim > 3) throw std::invalid_argument("tensor_rule: dim must be 1..3");
  GaussRule g = gauss_legendre(points_per_axis);
  int n = points_per_axis;
  TensorRule r;
  r.dim = dim;
  r.npts = 1;
  for (int a = 0; a < dim; ++a) r.npts *= n;
  r.points.resize(r.npts);
  r.weights.resize(r.npts);
  int q = 0;
  int n2 = (dim > 1) ? n : 1;
  int n3 = (dim > 2) ? n : 1;
  for (int k = 0; k < n3; ++k)
    for (int j = 0; j < n2; ++j)
      for (int i = 0; i < n; ++i, ++q) {
        r.points[q] = {g.points[i], dim > 1 ? g.points[j] : 0.0, dim > 2 ? g.points[k] : 0.0};
        double w = g.weights[i];
        if (dim > 1) w *= g.weights[j];
        if (dim > 2) w *= g.weights[k];
        r.weights[q] = w;
      }
  return r;
}

} // namespace mcs
