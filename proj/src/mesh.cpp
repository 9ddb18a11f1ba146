#include "mcs/mesh.hpp"

#include <stdexcept>

namespace mcs {

const char* to_string(FacetTag tag) {
  switch (tag) {
    case FacetTag::Interior: return "interior";
    case FacetTag::Periodic: return "periodic";
    case FacetTag::Wall: return "wall";
    case FacetTag::Inlet: return "inlet";
    case FacetTag::Outlet: return "outlet";
  }
  return "?";
}

std::array<int, 3> Mesh::element_index(int e) const {
  std::array<int, 3> idx{0, 0, 0};
  idx[0] = e % cells[0];
  int r = e / cells[0];
  idx[1] = r % cells[1];
  idx[2] = r / cells[1];
  return idx;
}

int Mesh::element_id(const std::array<int, 3>& idx) const {
  return idx[0] + cells[0] * (idx[1] + cells[1] * idx[2]);
}

std::array<double, 3> Mesh::element_lo(int e) const {
  auto idx = element_index(e);
  std::array<double, 3> p{0.0, 0.0, 0.0};
  for (int a = 0; a < dim; ++a) p[a] = lo[a] + idx[a] * h[a];
  return p;
}

std::array<double, 3> Mesh::element_center(int e) const {
  auto p = element_lo(e);
  for (int a = 0; a < dim; ++a) p[a] += 0.5 * h[a];
  return p;
}

std::array<double, 3> Mesh::to_physical(int e, const std::array<double, 3>& ref) const {
  auto p = element_lo(e);
  std::array<double, 3> x{0.0, 0.0, 0.0};
  for (int a = 0; a < dim; ++a) x[a] = p[a] + 0.5 * h[a] * (ref[a] + 1.0);
  return x;
}

std::array<double, 3> Mesh::to_reference(int e, const std::array<double, 3>& x) const {
  auto p = element_lo(e);
  std::array<double, 3> r{0.0, 0.0, 0.0};
  for (int a = 0; a < dim; ++a) r[a] = 2.0 * (x[a] - p[a]) / h[a] - 1.0;
  return r;
}

double Mesh::element_volume() const {
  double v = 1.0;
  for (int a = 0; a < dim; ++a) v *= h[a];
  return v;
}

double Mesh::domain_volume() const { return element_volume() * n_elements; }

double Mesh::facet_measure(int axis) const {
  double m = 1.0;
  for (int a = 0; a < dim; ++a)
    if (a != axis) m *= h[a];
  return m;
}

bool Mesh::has_outlet() const {
  for (const auto& f : facets)
    if (f.tag == FacetTag::Outlet) return true;
  return false;
}

bool Mesh::any_dirichlet() const {
  for (const auto& f : facets)
    if (f.tag == FacetTag::Wall || f.tag == FacetTag::Inlet) return true;
  return false;
}

int expected_facet_count(int dim, const std::array<int, 3>& cells,
                         const std::array<bool, 3>& periodic) {
  int total = 0;
  for (int a = 0; a < dim; ++a) {
    int planes = periodic[a] ? cells[a] : cells[a] + 1;
    int transverse = 1;
    for (int b = 0; b < dim; ++b)
      if (b != a) transverse *= cells[b];
    total += planes * transverse;
  }
  return total;
}

Mesh build_box_mesh(int dim, std::array<int, 3> cells, std::array<double, 3> lo,
                    std::array<double, 3> hi, const BoundarySpec& bc) {
  if (dim != 2 && dim != 3) throw std::invalid_argument("mesh: dim must be 2 or 3");
  for (int a = 0; a < dim; ++a) {
    if (cells[a] < 1) throw std::invalid_argument("mesh: cells must be >= 1 per axis");
    if (!(hi[a] > lo[a])) throw std::invalid_argument("mesh: extent must be positive");
  }
  for (int a = dim; a < 3; ++a) {
    cells[a] = 1;
    lo[a] = 0.0;
    hi[a] = 1.0;
  }

  Mesh m;
  m.dim = dim;
  m.cells = cells;
  m.lo = lo;
  m.hi = hi;
  m.bc = bc;
  for (int a = 0; a < 3; ++a) m.h[a] = (hi[a] - lo[a]) / cells[a];
  m.n_elements = cells[0] * cells[1] * (dim > 2 ? cells[2] : 1);
  m.elem_facet.assign(m.n_elements, {-1, -1, -1, -1, -1, -1});

  // Deterministic enumeration: axis-major, then plane index, then transverse
  // cell indices in lexicographic order (lowest remaining axis fastest).
  for (int a = 0; a < dim; ++a) {
    int t1 = -1, t2 = -1; // transverse axes in increasing order
    for (int b = 0; b < dim; ++b)
      if (b != a) (t1 < 0 ? t1 : t2) = b;
    int n1 = t1 >= 0 ? cells[t1] : 1;
    int n2 = t2 >= 0 ? cells[t2] : 1;

    for (int p = 0; p <= cells[a]; ++p) {
      if (bc.periodic[a] && p == cells[a]) continue; // wrap stored at p == 0
      for (int j2 = 0; j2 < n2; ++j2)
        for (int j1 = 0; j1 < n1; ++j1) {
          Facet f;
          f.id = static_cast<int>(m.facets.size());
          f.axis = a;
          std::array<int, 3> idx{0, 0, 0};
          if (t1 >= 0) idx[t1] = j1;
          if (t2 >= 0) idx[t2] = j2;

          auto elem_at = [&](int layer) {
            auto e = idx;
            e[a] = layer;
            return m.element_id(e);
          };

          if (bc.periodic[a] && p == 0) {
            f.tag = FacetTag::Periodic;
            f.sign = +1;
            f.owner = elem_at(cells[a] - 1);
            f.neighbor = elem_at(0);
            f.owner_face = 2 * a + 1;
            f.neighbor_face = 2 * a;
          } else if (!bc.periodic[a] && p == 0) {
            f.tag = bc.face_tag[2 * a];
            f.sign = -1;
            f.owner = elem_at(0);
            f.owner_face = 2 * a;
          } else if (!bc.periodic[a] && p == cells[a]) {
            f.tag = bc.face_tag[2 * a + 1];
            f.sign = +1;
            f.owner = elem_at(cells[a] - 1);
            f.owner_face = 2 * a + 1;
          } else {
            f.tag = FacetTag::Interior;
            f.sign = +1;
            f.owner = elem_at(p - 1);
            f.neighbor = elem_at(p);
            f.owner_face = 2 * a + 1;
            f.neighbor_face = 2 * a;
          }

          f.measure = m.facet_measure(a);
          double plane_coord = lo[a] + (bc.periodic[a] && p == 0 ? cells[a] : p) * m.h[a];
          f.center[a] = plane_coord;
          if (t1 >= 0) f.center[t1] = lo[t1] + (j1 + 0.5) * m.h[t1];
          if (t2 >= 0) f.center[t2] = lo[t2] + (j2 + 0.5) * m.h[t2];

          m.elem_facet[f.owner][f.owner_face] = f.id;
          if (f.neighbor >= 0) m.elem_facet[f.neighbor][f.neighbor_face] = f.id;
          m.facets.push_back(f);
        }
    }
  }

  // Every local face of every element must be wired to exactly one facet.
  for (int e = 0; e < m.n_elements; ++e)
    for (int fl = 0; fl < 2 * dim; ++fl)
      if (m.elem_facet[e][fl] < 0) throw std::logic_error("mesh: unwired local face");

  return m;
}

} // namespace mcs
