#include "mcs/spaces.hpp"

#include <Eigen/Sparse>
#include <cmath>
#include <stdexcept>

#include "mcs/basis1d.hpp"
#include "mcs/util.hpp"

namespace mcs {

const char* to_string(Space s) {
  switch (s) {
    case Space::Velocity: return "velocity";
    case Space::VelocityBroken: return "velocity_broken";
    case Space::FacetVelocity: return "facet_velocity";
    case Space::Stress: return "stress";
    case Space::Spin: return "spin";
    case Space::Pressure: return "pressure";
    case Space::FacetPressure: return "facet_pressure";
  }
  return "?";
}

namespace {

int ipow(int b, int e) {
  int r = 1;
  while (e-- > 0) r *= b;
  return r;
}

// Per-point 1D factors for all axes.
struct AxisEval {
  std::vector<double> leg[3], dleg[3];   // Legendre up to k+1
  std::vector<double> hv[3], hd[3];      // hdiv axis basis up to k+1
};

AxisEval axis_eval(const SpaceSet& s, const std::array<double, 3>& p) {
  AxisEval ae;
  for (int a = 0; a < s.dim; ++a) {
    legendre_values_derivs(s.k + 1, p[a], ae.leg[a], ae.dleg[a]);
    hdiv_axis_basis(s.k + 1, p[a], ae.hv[a], ae.hd[a]);
  }
  return ae;
}

// Transverse axes of `axis` in increasing order.
void transverse_axes(int dim, int axis, int& t1, int& t2) {
  t1 = -1;
  t2 = -1;
  for (int b = 0; b < dim; ++b)
    if (b != axis) (t1 < 0 ? t1 : t2) = b;
}

} // namespace

SpaceSet build_space_set(int dim, int k, const std::array<double, 3>& h) {
  if (dim != 2 && dim != 3) throw std::invalid_argument("spaces: dim must be 2 or 3");
  if (k < 1) throw std::invalid_argument("spaces: polynomial order k must be >= 1");
  SpaceSet s;
  s.dim = dim;
  s.k = k;
  s.h = h;
  s.tpf = ipow(k + 1, dim - 1);

  // Velocity: per face, normal-trace functions with tensor Legendre transverse
  // factors; then interior bubbles vanishing on the whole boundary.
  for (int face = 0; face < 2 * dim; ++face) {
    int a = face / 2, side = face % 2;
    int n2 = (dim == 3) ? k + 1 : 1;
    for (int j2 = 0; j2 < n2; ++j2)
      for (int j1 = 0; j1 < k + 1; ++j1) {
        VelShape vs;
        vs.comp = a;
        vs.axis_index = side; // hdiv_axis_basis index 0/1 peaks at the low/high face
        vs.trans = {j1, j2};
        vs.local_face = face;
        s.vel_shapes.push_back(vs);
      }
  }
  for (int c = 0; c < dim; ++c)
    for (int m = 2; m <= k + 1; ++m) {
      int n2 = (dim == 3) ? k + 1 : 1;
      for (int j2 = 0; j2 < n2; ++j2)
        for (int j1 = 0; j1 < k + 1; ++j1)
          s.vel_shapes.push_back({c, m, {j1, j2}, -1});
    }
  s.nVbub = dim * k * s.tpf;
  s.nV = static_cast<int>(s.vel_shapes.size());
  check(s.nV == 2 * dim * s.tpf + s.nVbub, "spaces: velocity dimension mismatch");

  // Pressure: tensor-product Legendre of degree <= k per axis.
  {
    int n2 = dim > 1 ? k + 1 : 1, n3 = dim > 2 ? k + 1 : 1;
    for (int c = 0; c < (dim > 2 ? n3 : 1); ++c)
      for (int b = 0; b < n2; ++b)
        for (int a = 0; a < k + 1; ++a) s.pres_shapes.push_back({a, b, dim > 2 ? c : 0});
  }
  s.nQ = static_cast<int>(s.pres_shapes.size());

  // Stress generators: trace-free diagonal generators plus single off-diagonal
  // entries. Off-diagonal component (i,j) couples to facets normal to axis j;
  // its Legendre products with zero degree along axis j and total degree k+1
  // are removed so every nt-trace has degree <= k.
  auto gen_mat = [&](int i, int j, double vij, int i2, int j2, double v2) {
    Eigen::Matrix3d g = Eigen::Matrix3d::Zero();
    g(i, j) = vij;
    if (i2 >= 0) g(i2, j2) = v2;
    return g;
  };
  std::vector<std::pair<Eigen::Matrix3d, int>> gens; // matrix, constrained col (-1 diag)
  if (dim == 2) {
    gens.push_back({gen_mat(0, 0, 1.0, 1, 1, -1.0), -1});
    gens.push_back({gen_mat(0, 1, 1.0, -1, -1, 0.0), 1});
    gens.push_back({gen_mat(1, 0, 1.0, -1, -1, 0.0), 0});
  } else {
    gens.push_back({gen_mat(0, 0, 1.0, 1, 1, -1.0), -1});
    gens.push_back({gen_mat(1, 1, 1.0, 2, 2, -1.0), -1});
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j)
        if (i != j) gens.push_back({gen_mat(i, j, 1.0, -1, -1, 0.0), j});
  }
  auto mi_sigma = total_degree_multi_indices(dim, k + 1);
  for (int g = 0; g < static_cast<int>(gens.size()); ++g) {
    s.sigma_gens.push_back(gens[g].first);
    int col = gens[g].second;
    for (const auto& mi : mi_sigma) {
      int total = 0;
      for (int a = 0; a < dim; ++a) total += mi[a];
      if (col >= 0 && mi[col] == 0 && total == k + 1) continue;
      SigmaShape sh;
      sh.gen = g;
      for (int a = 0; a < dim; ++a) sh.leg[a] = mi[a];
      s.sigma_shapes.push_back(sh);
    }
  }
  s.nSigma = static_cast<int>(s.sigma_shapes.size());

  // Spin: skew generators times Legendre products of total degree <= k.
  auto mi_spin = total_degree_multi_indices(dim, k);
  std::vector<std::array<int, 2>> skew_pairs;
  if (dim == 2) skew_pairs = {{0, 1}};
  else skew_pairs = {{0, 1}, {0, 2}, {1, 2}};
  for (int g = 0; g < static_cast<int>(skew_pairs.size()); ++g) {
    Eigen::Matrix3d m = Eigen::Matrix3d::Zero();
    m(skew_pairs[g][0], skew_pairs[g][1]) = 1.0;
    m(skew_pairs[g][1], skew_pairs[g][0]) = -1.0;
    s.spin_gens.push_back(m);
    for (const auto& mi : mi_spin) {
      SpinShape sh;
      sh.gen = g;
      for (int a = 0; a < dim; ++a) sh.leg[a] = mi[a];
      s.spin_shapes.push_back(sh);
    }
  }
  s.nW = static_cast<int>(s.spin_shapes.size());

  // Facet scalars: total degree <= k over the transverse coordinates.
  auto mi_facet = total_degree_multi_indices(dim - 1, k);
  for (const auto& mi : mi_facet)
    s.facet_scalars.push_back({mi[0], dim == 3 ? mi[1] : 0});
  s.tqf = static_cast<int>(s.facet_scalars.size());
  s.tvf = (dim - 1) * s.tqf;

  return s;
}

std::array<double, 3> embed_face_point(int dim, int face, const std::array<double, 3>& fpt) {
  int a = face / 2, side = face % 2;
  int t1, t2;
  transverse_axes(dim, a, t1, t2);
  std::array<double, 3> p{0.0, 0.0, 0.0};
  p[a] = side == 0 ? -1.0 : 1.0;
  if (t1 >= 0) p[t1] = fpt[0];
  if (t2 >= 0) p[t2] = fpt[1];
  return p;
}

VelTable velocity_table(const SpaceSet& s, const std::vector<std::array<double, 3>>& pts,
                        bool with_grad) {
  int np = static_cast<int>(pts.size());
  VelTable t;
  t.has_grad = with_grad;
  for (int c = 0; c < s.dim; ++c) t.val[c] = Eigen::MatrixXd::Zero(s.nV, np);
  t.div = Eigen::MatrixXd::Zero(s.nV, np);
  if (with_grad)
    for (int c = 0; c < s.dim; ++c)
      for (int a = 0; a < s.dim; ++a) t.grad[c][a] = Eigen::MatrixXd::Zero(s.nV, np);

  for (int q = 0; q < np; ++q) {
    AxisEval ae = axis_eval(s, pts[q]);
    for (int i = 0; i < s.nV; ++i) {
      const VelShape& vs = s.vel_shapes[i];
      int c = vs.comp;
      int t1, t2;
      transverse_axes(s.dim, c, t1, t2);
      double f = ae.hv[c][vs.axis_index];
      double df = ae.hd[c][vs.axis_index];
      double g1 = t1 >= 0 ? ae.leg[t1][vs.trans[0]] : 1.0;
      double g2 = t2 >= 0 ? ae.leg[t2][vs.trans[1]] : 1.0;
      t.val[c](i, q) = f * g1 * g2;
      t.div(i, q) = (2.0 / s.h[c]) * df * g1 * g2;
      if (with_grad) {
        t.grad[c][c](i, q) = (2.0 / s.h[c]) * df * g1 * g2;
        if (t1 >= 0) t.grad[c][t1](i, q) = (2.0 / s.h[t1]) * f * ae.dleg[t1][vs.trans[0]] * g2;
        if (t2 >= 0) t.grad[c][t2](i, q) = (2.0 / s.h[t2]) * f * g1 * ae.dleg[t2][vs.trans[1]];
      }
    }
  }
  return t;
}

SigmaTable sigma_table(const SpaceSet& s, const std::vector<std::array<double, 3>>& pts) {
  int np = static_cast<int>(pts.size());
  SigmaTable t;
  t.val.assign(s.dim * s.dim, Eigen::MatrixXd::Zero(s.nSigma, np));
  for (int i = 0; i < s.dim; ++i) t.divrow[i] = Eigen::MatrixXd::Zero(s.nSigma, np);

  for (int q = 0; q < np; ++q) {
    AxisEval ae = axis_eval(s, pts[q]);
    for (int i = 0; i < s.nSigma; ++i) {
      const SigmaShape& sh = s.sigma_shapes[i];
      const Eigen::Matrix3d& G = s.sigma_gens[sh.gen];
      double v = 1.0;
      for (int a = 0; a < s.dim; ++a) v *= ae.leg[a][sh.leg[a]];
      for (int r = 0; r < s.dim; ++r)
        for (int c = 0; c < s.dim; ++c)
          if (G(r, c) != 0.0) t.val[r * s.dim + c](i, q) = G(r, c) * v;
      // (div sigma)_r = sum_c G(r,c) * d_c s
      for (int c = 0; c < s.dim; ++c) {
        double dv = (2.0 / s.h[c]) * ae.dleg[c][sh.leg[c]];
        for (int a = 0; a < s.dim; ++a)
          if (a != c) dv *= ae.leg[a][sh.leg[a]];
        for (int r = 0; r < s.dim; ++r)
          if (G(r, c) != 0.0) t.divrow[r](i, q) += G(r, c) * dv;
      }
    }
  }
  return t;
}

MatTable spin_table(const SpaceSet& s, const std::vector<std::array<double, 3>>& pts) {
  int np = static_cast<int>(pts.size());
  MatTable t;
  t.val.assign(s.dim * s.dim, Eigen::MatrixXd::Zero(s.nW, np));
  for (int q = 0; q < np; ++q) {
    AxisEval ae = axis_eval(s, pts[q]);
    for (int i = 0; i < s.nW; ++i) {
      const SpinShape& sh = s.spin_shapes[i];
      const Eigen::Matrix3d& G = s.spin_gens[sh.gen];
      double v = 1.0;
      for (int a = 0; a < s.dim; ++a) v *= ae.leg[a][sh.leg[a]];
      for (int r = 0; r < s.dim; ++r)
        for (int c = 0; c < s.dim; ++c)
          if (G(r, c) != 0.0) t.val[r * s.dim + c](i, q) = G(r, c) * v;
    }
  }
  return t;
}

Eigen::MatrixXd pressure_table(const SpaceSet& s, const std::vector<std::array<double, 3>>& pts) {
  int np = static_cast<int>(pts.size());
  Eigen::MatrixXd t = Eigen::MatrixXd::Zero(s.nQ, np);
  for (int q = 0; q < np; ++q) {
    AxisEval ae = axis_eval(s, pts[q]);
    for (int i = 0; i < s.nQ; ++i) {
      const auto& sh = s.pres_shapes[i];
      double v = 1.0;
      for (int a = 0; a < s.dim; ++a) v *= ae.leg[a][sh[a]];
      t(i, q) = v;
    }
  }
  return t;
}

Eigen::MatrixXd facet_scalar_table(const SpaceSet& s, const std::vector<std::array<double, 3>>& fpts) {
  int np = static_cast<int>(fpts.size());
  Eigen::MatrixXd t = Eigen::MatrixXd::Zero(s.tqf, np);
  std::vector<double> l1, l2;
  for (int q = 0; q < np; ++q) {
    legendre_values(s.k, fpts[q][0], l1);
    if (s.dim == 3) legendre_values(s.k, fpts[q][1], l2);
    for (int i = 0; i < s.tqf; ++i) {
      double v = l1[s.facet_scalars[i][0]];
      if (s.dim == 3) v *= l2[s.facet_scalars[i][1]];
      t(i, q) = v;
    }
  }
  return t;
}

int facet_scalar_count_degree(const SpaceSet& s, int l) {
  int n = 0;
  for (const auto& fs : s.facet_scalars)
    if (fs[0] + fs[1] <= l) ++n;
  return n;
}

Eigen::MatrixXd facet_scalar_table_degree(const SpaceSet& s, int l,
                                          const std::vector<std::array<double, 3>>& fpts) {
  // facet_scalars are enumerated by ascending total degree, so the degree-<=l
  // subset is a leading block.
  Eigen::MatrixXd full = facet_scalar_table(s, fpts);
  return full.topRows(facet_scalar_count_degree(s, l));
}

namespace {

// Identify the unique face a reference point lies on; throws otherwise.
int face_of_point(int dim, const std::array<double, 3>& p) {
  const double tol = 1e-12;
  int face = -1;
  for (int a = 0; a < dim; ++a) {
    if (std::abs(std::abs(p[a]) - 1.0) < tol) {
      if (face >= 0) throw std::invalid_argument("eval_basis: point lies on several facets");
      face = 2 * a + (p[a] > 0 ? 1 : 0);
    }
  }
  if (face < 0) throw std::invalid_argument("eval_basis: trace requested at interior point");
  return face;
}

} // namespace

Eigen::MatrixXd eval_basis(const SpaceSet& s, Space space,
                           const std::vector<std::array<double, 3>>& pts, EvalKind what) {
  int np = static_cast<int>(pts.size());
  int d = s.dim;

  auto facet_local = [&](int& axis, int& sign) {
    std::vector<std::array<double, 3>> fpts(np);
    axis = -1;
    for (int q = 0; q < np; ++q) {
      int face = face_of_point(d, pts[q]);
      int a = face / 2;
      if (axis < 0) {
        axis = a;
        sign = face % 2 == 0 ? -1 : +1;
      } else if (axis != a || sign != (face % 2 == 0 ? -1 : +1)) {
        throw std::invalid_argument("eval_basis: trace points must share one facet");
      }
      int t1, t2;
      transverse_axes(d, a, t1, t2);
      fpts[q] = {t1 >= 0 ? pts[q][t1] : 0.0, t2 >= 0 ? pts[q][t2] : 0.0, 0.0};
    }
    return fpts;
  };

  switch (space) {
    case Space::Velocity:
    case Space::VelocityBroken: {
      if (what == EvalKind::Value || what == EvalKind::Gradient) {
        VelTable t = velocity_table(s, pts, what == EvalKind::Gradient);
        if (what == EvalKind::Value) {
          Eigen::MatrixXd out(s.nV, np * d);
          for (int q = 0; q < np; ++q)
            for (int c = 0; c < d; ++c) out.col(q * d + c) = t.val[c].col(q);
          return out;
        }
        Eigen::MatrixXd out(s.nV, np * d * d);
        for (int q = 0; q < np; ++q)
          for (int c = 0; c < d; ++c)
            for (int a = 0; a < d; ++a) out.col(q * d * d + c * d + a) = t.grad[c][a].col(q);
        return out;
      }
      if (what == EvalKind::Divergence) {
        VelTable t = velocity_table(s, pts);
        Eigen::MatrixXd out(s.nV, np);
        for (int q = 0; q < np; ++q) out.col(q) = t.div.col(q);
        return out;
      }
      if (what == EvalKind::NormalTrace || what == EvalKind::TangentialTrace) {
        int axis, sign;
        facet_local(axis, sign);
        VelTable t = velocity_table(s, pts);
        if (what == EvalKind::NormalTrace) {
          Eigen::MatrixXd out(s.nV, np);
          for (int q = 0; q < np; ++q) out.col(q) = sign * t.val[axis].col(q);
          return out;
        }
        Eigen::MatrixXd out = Eigen::MatrixXd::Zero(s.nV, np * d);
        for (int q = 0; q < np; ++q)
          for (int c = 0; c < d; ++c)
            if (c != axis) out.col(q * d + c) = t.val[c].col(q);
        return out;
      }
      break;
    }
    case Space::Stress: {
      if (what == EvalKind::Value) {
        SigmaTable t = sigma_table(s, pts);
        Eigen::MatrixXd out(s.nSigma, np * d * d);
        for (int q = 0; q < np; ++q)
          for (int c = 0; c < d * d; ++c) out.col(q * d * d + c) = t.val[c].col(q);
        return out;
      }
      if (what == EvalKind::Divergence) {
        SigmaTable t = sigma_table(s, pts);
        Eigen::MatrixXd out(s.nSigma, np * d);
        for (int q = 0; q < np; ++q)
          for (int r = 0; r < d; ++r) out.col(q * d + r) = t.divrow[r].col(q);
        return out;
      }
      if (what == EvalKind::NnTrace || what == EvalKind::NtTrace) {
        int axis, sign;
        facet_local(axis, sign);
        SigmaTable t = sigma_table(s, pts);
        if (what == EvalKind::NnTrace) {
          // n^T sigma n = sigma_aa independent of the sign of n
          Eigen::MatrixXd out(s.nSigma, np);
          for (int q = 0; q < np; ++q) out.col(q) = t.val[axis * d + axis].col(q);
          return out;
        }
        Eigen::MatrixXd out = Eigen::MatrixXd::Zero(s.nSigma, np * d);
        for (int q = 0; q < np; ++q)
          for (int r = 0; r < d; ++r)
            if (r != axis) out.col(q * d + r) = sign * t.val[r * d + axis].col(q);
        return out;
      }
      break;
    }
    case Space::Spin: {
      if (what == EvalKind::Value) {
        MatTable t = spin_table(s, pts);
        Eigen::MatrixXd out(s.nW, np * d * d);
        for (int q = 0; q < np; ++q)
          for (int c = 0; c < d * d; ++c) out.col(q * d * d + c) = t.val[c].col(q);
        return out;
      }
      break;
    }
    case Space::Pressure: {
      if (what == EvalKind::Value) return pressure_table(s, pts);
      break;
    }
    case Space::FacetVelocity: {
      if (what == EvalKind::Value) {
        int axis, sign;
        auto fpts = facet_local(axis, sign);
        Eigen::MatrixXd sc = facet_scalar_table(s, fpts);
        int t1, t2;
        transverse_axes(d, axis, t1, t2);
        Eigen::MatrixXd out = Eigen::MatrixXd::Zero(s.tvf, np * d);
        for (int q = 0; q < np; ++q) {
          for (int i = 0; i < s.tqf; ++i) {
            out(i, q * d + t1) = sc(i, q);
            if (d == 3) out(s.tqf + i, q * d + t2) = sc(i, q);
          }
        }
        return out;
      }
      break;
    }
    case Space::FacetPressure: {
      if (what == EvalKind::Value) {
        int axis, sign;
        auto fpts = facet_local(axis, sign);
        return facet_scalar_table(s, fpts);
      }
      break;
    }
  }
  throw std::invalid_argument("eval_basis: unsupported space/kind combination");
}

void DofMap::v_elem_dofs(const Mesh& mesh, int e, std::vector<int>& out) const {
  out.resize(nV_loc);
  int d = mesh.dim;
  for (int face = 0; face < 2 * d; ++face) {
    int f = mesh.elem_facet[e][face];
    for (int t = 0; t < tpf; ++t) out[face * tpf + t] = v_facet_dof(f, t);
  }
  for (int b = 0; b < nVbub; ++b) out[2 * d * tpf + b] = v_bubble_dof(e, b);
}

DofMap build_dof_map(const Mesh& mesh, const SpaceSet& s) {
  DofMap dm;
  dm.dim = mesh.dim;
  dm.n_elements = mesh.n_elements;
  dm.n_facets = mesh.n_facets();
  dm.tpf = s.tpf;
  dm.nVbub = s.nVbub;
  dm.nV_loc = s.nV;
  dm.tvf = s.tvf;
  dm.tqf = s.tqf;
  dm.nSigma = s.nSigma;
  dm.nW = s.nW;
  dm.nQ = s.nQ;

  dm.nVfacet = dm.n_facets * s.tpf;
  dm.nV = dm.nVfacet + dm.n_elements * s.nVbub;
  dm.nVhat = dm.n_facets * s.tvf;
  dm.nQhat = dm.n_facets * s.tqf;
  dm.nQg = dm.n_elements * s.nQ;
  dm.nSigmaG = dm.n_elements * s.nSigma;
  dm.nWg = dm.n_elements * s.nW;
  dm.nVdisc = dm.n_elements * s.nV;
  return dm;
}

std::string build_report(const Mesh& mesh, const SpaceSet& s, const DofMap& dm) {
  std::string r;
  auto line = [&](const std::string& t) { r += t + "\n"; };
  line("discretization report");
  line("  dim = " + std::to_string(mesh.dim) + ", order k = " + std::to_string(s.k) +
       ", elements = " + std::to_string(mesh.n_elements) +
       ", facets = " + std::to_string(mesh.n_facets()));
  line("  velocity: tensor-product Raviart-Thomas; dofs = " + std::to_string(dm.nV) +
       " (facet " + std::to_string(dm.nVfacet) + ", interior " +
       std::to_string(dm.nV - dm.nVfacet) + ")");
  line("  pressure convention: tensor-product Legendre, degree <= k per axis; "
       "dofs per element = " + std::to_string(s.nQ) + ", total = " + std::to_string(dm.nQg));
  line("  stress: trace-free matrix polynomials, total degree <= k+1, nt-trace degree <= k; "
       "dofs per element = " + std::to_string(s.nSigma) + ", total = " + std::to_string(dm.nSigmaG));
  line("  spin: skew matrices, total degree <= k; per element = " + std::to_string(s.nW));
  line("  facet velocity (tangential, degree <= k): dofs = " + std::to_string(dm.nVhat));
  line("  facet pressure (degree <= k): dofs = " + std::to_string(dm.nQhat));
  line("  condensed facet system size (facet velocity + tangential multiplier) = " +
       std::to_string(dm.nVfacet + dm.nVhat));
  return r;
}

Eigen::VectorXd l2_project_pressure(const Mesh& mesh, const SpaceSet& s, const DofMap& dm,
                                    const ScalarField& f) {
  TensorRule rule = tensor_rule(s.dim, s.points_per_axis_nonlinear());
  Eigen::MatrixXd tab = pressure_table(s, rule.points);
  double detJ = mesh.element_volume() / ipow(2, s.dim);

  Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(s.nQ, s.nQ);
  for (int q = 0; q < rule.npts; ++q)
    gram += rule.weights[q] * detJ * tab.col(q) * tab.col(q).transpose();
  Eigen::LLT<Eigen::MatrixXd> llt(gram);

  Eigen::VectorXd out(dm.nQg);
  for (int e = 0; e < mesh.n_elements; ++e) {
    Eigen::VectorXd b = Eigen::VectorXd::Zero(s.nQ);
    for (int q = 0; q < rule.npts; ++q) {
      auto x = mesh.to_physical(e, rule.points[q]);
      b += rule.weights[q] * detJ * f(x) * tab.col(q);
    }
    out.segment(e * s.nQ, s.nQ) = llt.solve(b);
  }
  return out;
}

Eigen::VectorXd velocity_moments(const Mesh& mesh, const SpaceSet& s, const DofMap& dm,
                                 const VectorField& f) {
  TensorRule rule = tensor_rule(s.dim, s.points_per_axis_nonlinear());
  VelTable tab = velocity_table(s, rule.points);
  double detJ = mesh.element_volume() / ipow(2, s.dim);

  Eigen::VectorXd b = Eigen::VectorXd::Zero(dm.nV);
  std::vector<int> dofs;
  for (int e = 0; e < mesh.n_elements; ++e) {
    dm.v_elem_dofs(mesh, e, dofs);
    Eigen::VectorXd be = Eigen::VectorXd::Zero(s.nV);
    for (int q = 0; q < rule.npts; ++q) {
      auto x = mesh.to_physical(e, rule.points[q]);
      auto v = f(x);
      for (int c = 0; c < s.dim; ++c) be += rule.weights[q] * detJ * v[c] * tab.val[c].col(q);
    }
    for (int i = 0; i < s.nV; ++i) b[dofs[i]] += be[i];
  }
  return b;
}

Eigen::VectorXd l2_project_velocity_plain(const Mesh& mesh, const SpaceSet& s, const DofMap& dm,
                                          const VectorField& f) {
  TensorRule rule = tensor_rule(s.dim, s.points_per_axis_bilinear());
  VelTable tab = velocity_table(s, rule.points);
  double detJ = mesh.element_volume() / ipow(2, s.dim);

  Eigen::MatrixXd mloc = Eigen::MatrixXd::Zero(s.nV, s.nV);
  for (int q = 0; q < rule.npts; ++q)
    for (int c = 0; c < s.dim; ++c)
      mloc += rule.weights[q] * detJ * tab.val[c].col(q) * tab.val[c].col(q).transpose();

  std::vector<Eigen::Triplet<double>> trips;
  std::vector<int> dofs;
  for (int e = 0; e < mesh.n_elements; ++e) {
    dm.v_elem_dofs(mesh, e, dofs);
    for (int i = 0; i < s.nV; ++i)
      for (int j = 0; j < s.nV; ++j) trips.emplace_back(dofs[i], dofs[j], mloc(i, j));
  }
  Eigen::SparseMatrix<double> M(dm.nV, dm.nV);
  M.setFromTriplets(trips.begin(), trips.end());

  Eigen::VectorXd b = velocity_moments(mesh, s, dm, f);

  // Diagonally preconditioned CG; the mass matrix is well conditioned.
  Eigen::VectorXd diag = M.diagonal();
  Eigen::VectorXd x = Eigen::VectorXd::Zero(dm.nV);
  Eigen::VectorXd r = b;
  Eigen::VectorXd z = r.cwiseQuotient(diag);
  Eigen::VectorXd p = z;
  double rz = r.dot(z);
  double tol2 = 1e-28 * b.dot(b.cwiseQuotient(diag));
  for (int it = 0; it < 2000 && rz > tol2; ++it) {
    Eigen::VectorXd Ap = M * p;
    double alpha = rz / p.dot(Ap);
    x += alpha * p;
    r -= alpha * Ap;
    z = r.cwiseQuotient(diag);
    double rz_new = r.dot(z);
    p = z + (rz_new / rz) * p;
    rz = rz_new;
  }
  return x;
}

std::array<double, 3> eval_velocity_field(const Mesh& mesh, const SpaceSet& s, const DofMap& dm,
                                          const Eigen::VectorXd& u, int e,
                                          const std::array<double, 3>& ref) {
  VelTable t = velocity_table(s, {ref});
  std::vector<int> dofs;
  dm.v_elem_dofs(mesh, e, dofs);
  std::array<double, 3> out{0.0, 0.0, 0.0};
  for (int i = 0; i < s.nV; ++i)
    for (int c = 0; c < s.dim; ++c) out[c] += u[dofs[i]] * t.val[c](i, 0);
  return out;
}

} // namespace mcs
