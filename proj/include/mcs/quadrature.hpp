#pragma once

#include <array>
#include <vector>

namespace mcs {

/// Gauss-Legendre rule on [-1,1]; n points integrate degree <= 2n-1 exactly.
struct GaussRule {
  std::vector<double> points;
  std::vector<double> weights;
};

GaussRule gauss_legendre(int n);

/// Smallest Gauss rule exact for polynomials of the given degree.
GaussRule gauss_for_degree(int degree);

/// Tensor product of 1D Gauss rules over `dim` axes on [-1,1]^dim.
struct TensorRule {
  int dim = 0;
  int npts = 0;
  std::vector<std::array<double, 3>> points; // unused trailing coords are 0
  std::vector<double> weights;               // reference weights, sum = 2^dim
};

TensorRule tensor_rule(int dim, int points_per_axis);

} // namespace mcs
