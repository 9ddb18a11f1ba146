#include "mcs/basis1d.hpp"

namespace mcs {

void legendre_values(int n, double x, std::vector<double>& vals) {
  vals.resize(n + 1);
  vals[0] = 1.0;
  if (n >= 1) vals[1] = x;
  for (int j = 2; j <= n; ++j)
    vals[j] = ((2 * j - 1) * x * vals[j - 1] - (j - 1) * vals[j - 2]) / j;
}

void legendre_values_derivs(int n, double x, std::vector<double>& vals,
                            std::vector<double>& ders) {
  legendre_values(n, x, vals);
  ders.resize(n + 1);
  ders[0] = 0.0;
  if (n >= 1) ders[1] = 1.0;
  // L_j' = L_{j-2}' + (2j-1) L_{j-1}
  for (int j = 2; j <= n; ++j) ders[j] = ders[j - 2] + (2 * j - 1) * vals[j - 1];
}

void hdiv_axis_basis(int n, double x, std::vector<double>& vals,
                     std::vector<double>& ders) {
  std::vector<double> lv, ld;
  legendre_values_derivs(n, x, lv, ld);
  vals.resize(n + 1);
  ders.resize(n + 1);
  vals[0] = 0.5 * (1.0 - x);
  ders[0] = -0.5;
  if (n >= 1) {
    vals[1] = 0.5 * (1.0 + x);
    ders[1] = 0.5;
  }
  for (int m = 2; m <= n; ++m) {
    vals[m] = lv[m] - lv[m - 2];
    ders[m] = ld[m] - ld[m - 2]; // equals (2m-1) L_{m-1}
  }
}

std::vector<std::vector<int>> total_degree_multi_indices(int dim, int degree) {
  std::vector<std::vector<int>> out;
  if (dim == 1) {
    for (int a = 0; a <= degree; ++a) out.push_back({a});
  } else if (dim == 2) {
    for (int d = 0; d <= degree; ++d)
      for (int a = d; a >= 0; --a) out.push_back({a, d - a});
  } else {
    for (int d = 0; d <= degree; ++d)
      for (int a = d; a >= 0; --a)
        for (int b = d - a; b >= 0; --b) out.push_back({a, b, d - a - b});
  }
  return out;
}

} // namespace mcs
