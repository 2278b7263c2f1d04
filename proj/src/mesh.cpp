#include "mfrelax/mesh.hpp"

#include "mfrelax/errors.hpp"

#include <string>

namespace mfrelax {

namespace {

// Lattice extents of edges of direction d: one fewer point along d.
std::array<int, 3> edge_dims(const std::array<int, 3> &n, int d) {
  std::array<int, 3> dims{n[0] + 1, n[1] + 1, n[2] + 1};
  dims[d] -= 1;
  return dims;
}

// Lattice extents of faces with normal d: one more point along d only.
std::array<int, 3> face_dims(const std::array<int, 3> &n, int d) {
  std::array<int, 3> dims = n;
  dims[d] += 1;
  return dims;
}

std::int64_t lex(const std::array<int, 3> &dims, int i, int j, int k) {
  return i + static_cast<std::int64_t>(dims[0]) * (j + static_cast<std::int64_t>(dims[1]) * k);
}

std::array<int, 3> unlex(const std::array<int, 3> &dims, std::int64_t idx) {
  const int i = static_cast<int>(idx % dims[0]);
  idx /= dims[0];
  const int j = static_cast<int>(idx % dims[1]);
  const int k = static_cast<int>(idx / dims[1]);
  return {i, j, k};
}

// The two axes transverse to d, in increasing order.
std::array<int, 2> transverse(int d) {
  switch (d) {
  case 0: return {1, 2};
  case 1: return {0, 2};
  default: return {0, 1};
  }
}

} // namespace

CuboidDomain CuboidDomain::centered_box(double half_xy, double half_z) {
  return {-half_xy, half_xy, -half_xy, half_xy, -half_z, half_z};
}

StructuredHexMesh::StructuredHexMesh(const CuboidDomain &domain, int nx,
                                     int ny, int nz)
    : domain_(domain), n_{nx, ny, nz} {
  if (nx < 1 || ny < 1 || nz < 1)
    throw ConfigError("mesh: cell counts must be positive, got " +
                      std::to_string(nx) + "x" + std::to_string(ny) + "x" +
                      std::to_string(nz));
  if (!(domain.x_min < domain.x_max) || !(domain.y_min < domain.y_max) ||
      !(domain.z_min < domain.z_max))
    throw ConfigError("mesh: degenerate domain");
  h_ = {(domain.x_max - domain.x_min) / nx, (domain.y_max - domain.y_min) / ny,
        (domain.z_max - domain.z_min) / nz};
  for (int d = 0; d < 3; ++d) {
    const auto ed = edge_dims(n_, d);
    const auto fd = face_dims(n_, d);
    edge_count_[d] = static_cast<std::int64_t>(ed[0]) * ed[1] * ed[2];
    face_count_[d] = static_cast<std::int64_t>(fd[0]) * fd[1] * fd[2];
  }
}

std::int64_t StructuredHexMesh::num_vertices() const {
  return static_cast<std::int64_t>(n_[0] + 1) * (n_[1] + 1) * (n_[2] + 1);
}
std::int64_t StructuredHexMesh::num_edges() const {
  return edge_count_[0] + edge_count_[1] + edge_count_[2];
}
std::int64_t StructuredHexMesh::num_faces() const {
  return face_count_[0] + face_count_[1] + face_count_[2];
}
std::int64_t StructuredHexMesh::num_cells() const {
  return static_cast<std::int64_t>(n_[0]) * n_[1] * n_[2];
}

std::int64_t StructuredHexMesh::num_entities(int dimension) const {
  switch (dimension) {
  case 0: return num_vertices();
  case 1: return num_edges();
  case 2: return num_faces();
  case 3: return num_cells();
  default:
    throw IndexError("mesh: entity dimension " + std::to_string(dimension) +
                     " out of range");
  }
}

std::int64_t StructuredHexMesh::edge_offset(int direction) const {
  std::int64_t off = 0;
  for (int d = 0; d < direction; ++d) off += edge_count_[d];
  return off;
}

std::int64_t StructuredHexMesh::face_offset(int direction) const {
  std::int64_t off = 0;
  for (int d = 0; d < direction; ++d) off += face_count_[d];
  return off;
}

std::int64_t StructuredHexMesh::vertex_index(int i, int j, int k) const {
  return lex({n_[0] + 1, n_[1] + 1, n_[2] + 1}, i, j, k);
}

std::int64_t StructuredHexMesh::edge_index(int d, int i, int j, int k) const {
  return edge_offset(d) + lex(edge_dims(n_, d), i, j, k);
}

std::int64_t StructuredHexMesh::face_index(int d, int i, int j, int k) const {
  return face_offset(d) + lex(face_dims(n_, d), i, j, k);
}

std::int64_t StructuredHexMesh::cell_index(int i, int j, int k) const {
  return lex(n_, i, j, k);
}

std::pair<int, std::array<int, 3>>
StructuredHexMesh::edge_position(std::int64_t e) const {
  if (e < 0 || e >= num_edges())
    throw IndexError("mesh: edge index " + std::to_string(e) + " out of range");
  int d = 0;
  while (e >= edge_count_[d]) e -= edge_count_[d++];
  return {d, unlex(edge_dims(n_, d), e)};
}

std::pair<int, std::array<int, 3>>
StructuredHexMesh::face_position(std::int64_t f) const {
  if (f < 0 || f >= num_faces())
    throw IndexError("mesh: face index " + std::to_string(f) + " out of range");
  int d = 0;
  while (f >= face_count_[d]) f -= face_count_[d++];
  return {d, unlex(face_dims(n_, d), f)};
}

std::array<int, 3> StructuredHexMesh::cell_position(std::int64_t c) const {
  if (c < 0 || c >= num_cells())
    throw IndexError("mesh: cell index " + std::to_string(c) + " out of range");
  return unlex(n_, c);
}

Point StructuredHexMesh::vertex_coordinates(int i, int j, int k) const {
  return {domain_.x_min + i * h_[0], domain_.y_min + j * h_[1],
          domain_.z_min + k * h_[2]};
}

Point StructuredHexMesh::cell_origin(int i, int j, int k) const {
  return vertex_coordinates(i, j, k);
}

std::vector<EntityRef>
StructuredHexMesh::incidence(const EntityRef &entity) const {
  if (entity.dimension < 1 || entity.dimension > 3)
    throw IndexError("mesh: incidence requested for dimension " +
                     std::to_string(entity.dimension));
  if (entity.index < 0 || entity.index >= num_entities(entity.dimension))
    throw IndexError("mesh: entity index " + std::to_string(entity.index) +
                     " out of range for dimension " +
                     std::to_string(entity.dimension));
  const int s = entity.sign;
  std::vector<EntityRef> out;
  if (entity.dimension == 1) {
    auto [d, p] = edge_position(entity.index);
    auto q = p;
    q[d] += 1;
    out.push_back({0, vertex_index(p[0], p[1], p[2]), -s});
    out.push_back({0, vertex_index(q[0], q[1], q[2]), s});
  } else if (entity.dimension == 2) {
    // Circulation of a face with normal d runs t1 -> t2 where (d, t1, t2) is
    // a cyclic permutation of (x, y, z).
    auto [d, p] = face_position(entity.index);
    const int t1 = (d + 1) % 3;
    const int t2 = (d + 2) % 3;
    auto shifted = [&](int axis) {
      auto q = p;
      q[axis] += 1;
      return q;
    };
    const auto pt2 = shifted(t2);
    const auto pt1 = shifted(t1);
    out.push_back({1, edge_index(t1, p[0], p[1], p[2]), s});
    out.push_back({1, edge_index(t2, pt1[0], pt1[1], pt1[2]), s});
    out.push_back({1, edge_index(t1, pt2[0], pt2[1], pt2[2]), -s});
    out.push_back({1, edge_index(t2, p[0], p[1], p[2]), -s});
  } else {
    const auto p = cell_position(entity.index);
    for (int d = 0; d < 3; ++d) {
      auto q = p;
      q[d] += 1;
      out.push_back({2, face_index(d, p[0], p[1], p[2]), -s});
      out.push_back({2, face_index(d, q[0], q[1], q[2]), s});
    }
  }
  return out;
}

std::array<std::int64_t, 12>
StructuredHexMesh::cell_edges(std::int64_t c) const {
  const auto p = cell_position(c);
  std::array<std::int64_t, 12> out{};
  for (int d = 0; d < 3; ++d) {
    const auto t = transverse(d);
    for (int b = 0; b < 2; ++b)
      for (int a = 0; a < 2; ++a) {
        auto q = p;
        q[t[0]] += a;
        q[t[1]] += b;
        out[4 * d + a + 2 * b] = edge_index(d, q[0], q[1], q[2]);
      }
  }
  return out;
}

std::array<std::int64_t, 6>
StructuredHexMesh::cell_faces(std::int64_t c) const {
  const auto p = cell_position(c);
  std::array<std::int64_t, 6> out{};
  for (int d = 0; d < 3; ++d)
    for (int a = 0; a < 2; ++a) {
      auto q = p;
      q[d] += a;
      out[2 * d + a] = face_index(d, q[0], q[1], q[2]);
    }
  return out;
}

std::array<std::int64_t, 8>
StructuredHexMesh::cell_vertices(std::int64_t c) const {
  const auto p = cell_position(c);
  std::array<std::int64_t, 8> out{};
  for (int cc = 0; cc < 2; ++cc)
    for (int b = 0; b < 2; ++b)
      for (int a = 0; a < 2; ++a)
        out[a + 2 * b + 4 * cc] = vertex_index(p[0] + a, p[1] + b, p[2] + cc);
  return out;
}

std::vector<std::int64_t> StructuredHexMesh::face_cells(std::int64_t f) const {
  auto [d, p] = face_position(f);
  std::vector<std::int64_t> out;
  if (p[d] > 0) {
    auto q = p;
    q[d] -= 1;
    out.push_back(cell_index(q[0], q[1], q[2]));
  }
  if (p[d] < n_[d]) out.push_back(cell_index(p[0], p[1], p[2]));
  return out;
}

BoundaryFlags StructuredHexMesh::boundary_flags() const {
  BoundaryFlags flags;
  flags.faces.assign(num_faces(), false);
  flags.edges.assign(num_edges(), false);
  flags.vertices.assign(num_vertices(), false);
  for (std::int64_t f = 0; f < num_faces(); ++f) {
    auto [d, p] = face_position(f);
    if (p[d] != 0 && p[d] != n_[d]) continue;
    flags.faces[f] = true;
    for (const auto &e : incidence({2, f, 1})) {
      flags.edges[e.index] = true;
      for (const auto &v : incidence({1, e.index, 1}))
        flags.vertices[v.index] = true;
    }
  }
  return flags;
}

StructuredHexMesh build_mesh(const CuboidDomain &domain, int nx, int ny,
                             int nz) {
  return StructuredHexMesh(domain, nx, ny, nz);
}

} // namespace mfrelax
