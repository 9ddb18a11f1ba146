#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace mcs {

enum class FacetTag : std::uint8_t { Interior, Periodic, Wall, Inlet, Outlet };

const char* to_string(FacetTag tag);

/// A (d-1)-dimensional facet of the structured box mesh. The unit normal is
/// sign * e_axis and points outward from the owner element. For interior and
/// periodic facets the owner sits on the negative side of the plane.
struct Facet {
  int id = -1;
  int axis = 0;
  int sign = +1;
  int owner = -1;
  int neighbor = -1; // -1 on boundary facets
  int owner_face = -1;
  int neighbor_face = -1; // -1 on boundary facets
  FacetTag tag = FacetTag::Interior;
  double measure = 0.0;
  std::array<double, 3> center{0.0, 0.0, 0.0};

  bool is_boundary() const { return neighbor < 0; }
  /// Facets carrying convective flux terms: interior, periodic, inlet.
  bool is_convective() const {
    return tag == FacetTag::Interior || tag == FacetTag::Periodic || tag == FacetTag::Inlet;
  }
};

/// Per-axis boundary handling for the box: either the axis is periodic or
/// each of its two faces carries a Wall/Inlet/Outlet tag.
struct BoundarySpec {
  std::array<bool, 3> periodic{false, false, false};
  // face index 2*axis + side (side 0 = low, 1 = high); ignored on periodic axes
  std::array<FacetTag, 6> face_tag{FacetTag::Wall, FacetTag::Wall, FacetTag::Wall,
                                   FacetTag::Wall, FacetTag::Wall, FacetTag::Wall};
};

/// Uniform structured mesh of axis-aligned boxes; all elements are congruent.
struct Mesh {
  int dim = 2;
  std::array<int, 3> cells{1, 1, 1};
  std::array<double, 3> lo{0.0, 0.0, 0.0};
  std::array<double, 3> hi{1.0, 1.0, 1.0};
  std::array<double, 3> h{1.0, 1.0, 1.0};
  BoundarySpec bc;

  int n_elements = 0;
  std::vector<Facet> facets;
  /// element -> global facet id for each of its 2*dim local faces
  std::vector<std::array<int, 6>> elem_facet;

  int n_facets() const { return static_cast<int>(facets.size()); }

  std::array<int, 3> element_index(int e) const;
  int element_id(const std::array<int, 3>& idx) const;
  std::array<double, 3> element_center(int e) const;
  std::array<double, 3> element_lo(int e) const;

  /// Map element reference coordinates in [-1,1]^dim to physical coordinates.
  std::array<double, 3> to_physical(int e, const std::array<double, 3>& ref) const;
  /// Inverse of to_physical for points inside element e.
  std::array<double, 3> to_reference(int e, const std::array<double, 3>& x) const;

  double element_volume() const;
  double domain_volume() const;
  /// Facet measure for facets normal to the given axis.
  double facet_measure(int axis) const;

  bool has_outlet() const;
  bool any_dirichlet() const; // wall or inlet faces present
};

Mesh build_box_mesh(int dim, std::array<int, 3> cells, std::array<double, 3> lo,
                    std::array<double, 3> hi, const BoundarySpec& bc);

/// Closed-form facet count used as an independent check of the enumeration.
int expected_facet_count(int dim, const std::array<int, 3>& cells,
                         const std::array<bool, 3>& periodic);

} // namespace mcs
