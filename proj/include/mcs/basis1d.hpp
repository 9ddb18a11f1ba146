#pragma once

#include <vector>

namespace mcs {

/// Values of Legendre polynomials L_0..L_n at x in [-1,1].
void legendre_values(int n, double x, std::vector<double>& vals);

/// Values and first derivatives of L_0..L_n at x.
void legendre_values_derivs(int n, double x, std::vector<double>& vals,
                            std::vector<double>& ders);

/// 1D basis used along the normal axis of the H(div) velocity space.
///
/// Index 0: (1-x)/2 (value 1 at the low face), index 1: (1+x)/2 (value 1 at
/// the high face), index m>=2: L_m - L_{m-2}, which vanishes at both faces.
/// The degree-(k+1) space needs indices 0..k+1.
void hdiv_axis_basis(int n, double x, std::vector<double>& vals,
                     std::vector<double>& ders);

/// Exponent tuples (a_0..a_{dim-1}) with sum <= degree, lexicographic by
/// total degree then by trailing indices; deterministic enumeration.
std::vector<std::vector<int>> total_degree_multi_indices(int dim, int degree);

} // namespace mcs
