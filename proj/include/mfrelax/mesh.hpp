#pragma once

#include <array>
#include <cstdint>
#include <vector>

namespace mfrelax {

struct CuboidDomain {
  double x_min = 0.0, x_max = 1.0;
  double y_min = 0.0, y_max = 1.0;
  double z_min = 0.0, z_max = 1.0;

  double volume() const {
    return (x_max - x_min) * (y_max - y_min) * (z_max - z_min);
  }
  /// (-4,4)^2 x (-z,z), the box used by both benchmark fields.
  static CuboidDomain centered_box(double half_xy, double half_z);
};

using Point = std::array<double, 3>;

struct EntityRef {
  int dimension = 0;
  std::int64_t index = 0;
  int sign = 1;

  bool operator==(const EntityRef &) const = default;
};

/// Boundary masks, one flag per global entity.
struct BoundaryFlags {
  std::vector<bool> vertices;
  std::vector<bool> edges;
  std::vector<bool> faces;
};

/// Axis-aligned structured hexahedral mesh.
///
/// All entities use lexicographic (x-fastest) numbering. Edges are grouped
/// by direction (x-edges, then y-edges, then z-edges) and faces by normal
/// direction in the same way. Edges point along increasing coordinate, faces
/// have their normal along increasing coordinate. Immutable after
/// construction.
class StructuredHexMesh {
public:
  StructuredHexMesh(const CuboidDomain &domain, int nx, int ny, int nz);

  const CuboidDomain &domain() const { return domain_; }
  int nx() const { return n_[0]; }
  int ny() const { return n_[1]; }
  int nz() const { return n_[2]; }
  std::array<int, 3> cells_per_axis() const { return n_; }
  /// Cell widths along x, y, z.
  std::array<double, 3> spacing() const { return h_; }

  std::int64_t num_vertices() const;
  std::int64_t num_edges() const;
  std::int64_t num_faces() const;
  std::int64_t num_cells() const;
  std::int64_t num_entities(int dimension) const;

  /// Number of edges (or faces) of direction d preceding direction d+1.
  std::int64_t num_edges(int direction) const { return edge_count_[direction]; }
  std::int64_t num_faces(int direction) const { return face_count_[direction]; }
  std::int64_t edge_offset(int direction) const;
  std::int64_t face_offset(int direction) const;

  std::int64_t vertex_index(int i, int j, int k) const;
  std::int64_t edge_index(int direction, int i, int j, int k) const;
  std::int64_t face_index(int direction, int i, int j, int k) const;
  std::int64_t cell_index(int i, int j, int k) const;

  /// Direction and lattice position (i,j,k) of an edge or face.
  std::pair<int, std::array<int, 3>> edge_position(std::int64_t e) const;
  std::pair<int, std::array<int, 3>> face_position(std::int64_t f) const;
  std::array<int, 3> cell_position(std::int64_t c) const;

  Point vertex_coordinates(int i, int j, int k) const;
  /// Lower corner of cell (i,j,k).
  Point cell_origin(int i, int j, int k) const;

  /// Signed boundary of an entity, one dimension down.
  /// Cells return 6 faces, faces 4 edges, edges 2 vertices.
  std::vector<EntityRef> incidence(const EntityRef &entity) const;

  /// Local entity tables of a cell, in the fixed local order used by the
  /// element basis (see feec.hpp).
  std::array<std::int64_t, 12> cell_edges(std::int64_t c) const;
  std::array<std::int64_t, 6> cell_faces(std::int64_t c) const;
  std::array<std::int64_t, 8> cell_vertices(std::int64_t c) const;

  /// Cells adjacent to a face (one for boundary faces, two otherwise).
  std::vector<std::int64_t> face_cells(std::int64_t f) const;

  BoundaryFlags boundary_flags() const;

private:
  CuboidDomain domain_;
  std::array<int, 3> n_;
  std::array<double, 3> h_;
  std::array<std::int64_t, 3> edge_count_;
  std::array<std::int64_t, 3> face_count_;
};

StructuredHexMesh build_mesh(const CuboidDomain &domain, int nx, int ny,
                             int nz);

} // namespace mfrelax
