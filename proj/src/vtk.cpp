#include <algorithm>
#include <cmath>
#include <fstream>
#include <vector>

#include "mcs/cli.hpp"
#include "mcs/quadrature.hpp"
#include "mcs/util.hpp"

namespace mcs {

namespace {

int ipow(int b, int e) {
  int r = 1;
  for (int i = 0; i < e; ++i) r *= b;
  return r;
}

} // namespace

void write_vtk(const Mesh& mesh, const SpaceSet& s, const DofMap& dm, const Eigen::VectorXd& u,
               const Eigen::VectorXd& p_physical, const OrderField* orders,
               const std::string& path) {
  if (u.size() != dm.nV) throw config_error("write_vtk: wrong velocity coefficient count");
  if (p_physical.size() != dm.nQg)
    throw config_error("write_vtk: wrong pressure coefficient count");
  if (orders && static_cast<int>(orders->order.size()) != mesh.n_facets())
    throw config_error("write_vtk: order field does not match the mesh");

  const int dim = s.dim, k = s.k;
  const int m = k + 1;                  // lattice points per axis
  const int ppe = ipow(m, dim);         // points per element
  const int cpe = ipow(k, dim);         // sub-cells per element
  const int corners = dim == 3 ? 8 : 4;
  const int np = mesh.n_elements * ppe;
  const int nc = mesh.n_elements * cpe;

  // Element-local lattice in reference coordinates, x fastest.
  std::vector<std::array<double, 3>> ref(ppe, {0.0, 0.0, 0.0});
  for (int q = 0; q < ppe; ++q) {
    int rem = q;
    for (int a = 0; a < dim; ++a) {
      ref[q][a] = -1.0 + 2.0 * (rem % m) / k;
      rem /= m;
    }
  }
  VelTable vt = velocity_table(s, ref);
  Eigen::MatrixXd pt = pressure_table(s, ref);

  std::vector<std::array<double, 3>> coords(np);
  std::vector<std::array<double, 3>> vel(np, {0.0, 0.0, 0.0});
  std::vector<double> pres(np), dive(np);
  parallel_for(mesh.n_elements, [&](int begin, int end) {
    std::vector<int> dofs;
    Eigen::VectorXd loc(s.nV), ploc(s.nQ);
    for (int e = begin; e < end; ++e) {
      dm.v_elem_dofs(mesh, e, dofs);
      for (int i = 0; i < s.nV; ++i) loc[i] = u[dofs[i]];
      for (int i = 0; i < s.nQ; ++i) ploc[i] = p_physical[dm.q_dof(e, i)];
      for (int q = 0; q < ppe; ++q) {
        int g = e * ppe + q;
        coords[g] = mesh.to_physical(e, ref[q]);
        for (int c = 0; c < dim; ++c) vel[g][c] = vt.val[c].col(q).dot(loc);
        pres[g] = pt.col(q).dot(ploc);
        dive[g] = vt.div.col(q).dot(loc);
      }
    }
  });

  std::ofstream out(path);
  if (!out) throw config_error("write_vtk: cannot open '" + path + "'");
  out << "# vtk DataFile Version 3.0\n";
  out << "mcsflow fields\n";
  out << "ASCII\n";
  out << "DATASET UNSTRUCTURED_GRID\n";

  out << "POINTS " << np << " double\n";
  for (int g = 0; g < np; ++g)
    out << fmt_g17(coords[g][0]) << ' ' << fmt_g17(coords[g][1]) << ' ' << fmt_g17(coords[g][2])
        << '\n';

  auto lattice = [&](int i, int j, int l) { return (l * m + j) * m + i; };
  out << "CELLS " << nc << ' ' << nc * (corners + 1) << '\n';
  for (int e = 0; e < mesh.n_elements; ++e) {
    int base = e * ppe;
    for (int l = 0; l < (dim == 3 ? k : 1); ++l)
      for (int j = 0; j < k; ++j)
        for (int i = 0; i < k; ++i) {
          if (dim == 2) {
            out << "4 " << base + lattice(i, j, 0) << ' ' << base + lattice(i + 1, j, 0) << ' '
                << base + lattice(i + 1, j + 1, 0) << ' ' << base + lattice(i, j + 1, 0) << '\n';
          } else {
            out << "8 " << base + lattice(i, j, l) << ' ' << base + lattice(i + 1, j, l) << ' '
                << base + lattice(i + 1, j + 1, l) << ' ' << base + lattice(i, j + 1, l) << ' '
                << base + lattice(i, j, l + 1) << ' ' << base + lattice(i + 1, j, l + 1) << ' '
                << base + lattice(i + 1, j + 1, l + 1) << ' ' << base + lattice(i, j + 1, l + 1)
                << '\n';
          }
        }
  }
  out << "CELL_TYPES " << nc << '\n';
  for (int c = 0; c < nc; ++c) out << (dim == 3 ? 12 : 9) << '\n';

  out << "POINT_DATA " << np << '\n';
  out << "VECTORS velocity double\n";
  for (int g = 0; g < np; ++g)
    out << fmt_g17(vel[g][0]) << ' ' << fmt_g17(vel[g][1]) << ' ' << fmt_g17(vel[g][2]) << '\n';
  out << "SCALARS pressure double 1\n";
  out << "LOOKUP_TABLE default\n";
  for (int g = 0; g < np; ++g) out << fmt_g17(pres[g]) << '\n';
  out << "SCALARS divergence double 1\n";
  out << "LOOKUP_TABLE default\n";
  for (int g = 0; g < np; ++g) out << fmt_g17(dive[g]) << '\n';

  if (orders) {
    // Per element the most dissipative (lowest) order among its convective
    // facets; elements with no convective facet report k (central).
    out << "CELL_DATA " << nc << '\n';
    out << "SCALARS order int 1\n";
    out << "LOOKUP_TABLE default\n";
    for (int e = 0; e < mesh.n_elements; ++e) {
      int oe = orders->k;
      bool any = false;
      for (int f = 0; f < 2 * dim; ++f) {
        int o = orders->order[mesh.elem_facet[e][f]];
        if (o < -1) continue;
        oe = any ? std::min(oe, o) : o;
        any = true;
      }
      for (int c = 0; c < cpe; ++c) out << oe << '\n';
    }
  }
  if (!out) throw config_error("write_vtk: failed writing '" + path + "'");
}

double velocity_error_l2(const Mesh& mesh, const SpaceSet& s, const DofMap& dm,
                         const Eigen::VectorXd& u, const VectorField& f) {
  if (u.size() != dm.nV) throw config_error("velocity_error_l2: wrong coefficient count");
  if (!f) throw config_error("velocity_error_l2: empty reference field");
  TensorRule rule = tensor_rule(s.dim, s.points_per_axis_nonlinear());
  VelTable tab = velocity_table(s, rule.points);
  double detJ = mesh.element_volume() / ipow(2, s.dim);

  std::vector<double> partial(mesh.n_elements, 0.0);
  parallel_for(mesh.n_elements, [&](int begin, int end) {
    std::vector<int> dofs;
    Eigen::VectorXd loc(s.nV);
    for (int e = begin; e < end; ++e) {
      dm.v_elem_dofs(mesh, e, dofs);
      for (int i = 0; i < s.nV; ++i) loc[i] = u[dofs[i]];
      double acc = 0.0;
      for (int q = 0; q < rule.npts; ++q) {
        auto x = mesh.to_physical(e, rule.points[q]);
        auto fx = f(x);
        double s2 = 0.0;
        for (int c = 0; c < s.dim; ++c) {
          double d = tab.val[c].col(q).dot(loc) - fx[c];
          s2 += d * d;
        }
        acc += rule.weights[q] * detJ * s2;
      }
      partial[e] = acc;
    }
  });
  // Fixed-order reduction keeps the result independent of the worker count.
  double err2 = 0.0;
  for (double v : partial) err2 += v;
  return std::sqrt(err2);
}

} // namespace mcs
