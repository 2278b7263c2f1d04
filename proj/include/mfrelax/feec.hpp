#pragma once

#include "mfrelax/mesh.hpp"

#include <Eigen/Core>
#include <Eigen/SparseCore>

#include <array>
#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

namespace mfrelax {

using Vector = Eigen::VectorXd;
using SparseMatrix = Eigen::SparseMatrix<double>;
using Vec3 = std::array<double, 3>;
using VectorField = std::function<Vec3(const Point &)>;

enum class SpaceKind { H1, Hcurl, Hdiv, L2 };

const char *to_string(SpaceKind kind);

/// Lowest-order space on a mesh: one DOF per vertex/edge/face/cell.
///
/// Homogeneous boundary conditions are imposed by eliminating boundary
/// DOFs, so the constrained DOFs are the interior entities. L2 keeps every
/// cell.
class Space {
public:
  Space(SpaceKind kind, std::int64_t num_entities,
        const std::vector<bool> &boundary);

  SpaceKind kind() const { return kind_; }
  std::int64_t num_entities() const {
    return static_cast<std::int64_t>(to_local_.size());
  }
  /// Constrained (interior) DOF count.
  std::int64_t size() const {
    return static_cast<std::int64_t>(dof_entities_.size());
  }
  const std::vector<std::int64_t> &dof_entities() const { return dof_entities_; }
  /// Constrained DOF of a global entity, or -1 if eliminated.
  std::int64_t local(std::int64_t entity) const { return to_local_[entity]; }
  bool is_boundary(std::int64_t entity) const { return to_local_[entity] < 0; }

  /// Selection matrix P (entities x dofs) with full = P * constrained.
  SparseMatrix prolongation() const;
  Vector restrict_vector(const Vector &full) const;
  Vector extend_vector(const Vector &constrained) const;

private:
  SpaceKind kind_;
  std::vector<std::int64_t> dof_entities_;
  std::vector<std::int64_t> to_local_;
};

/// A coefficient vector over the constrained DOFs of a space.
struct FieldCoefficients {
  SpaceKind space = SpaceKind::Hdiv;
  Vector values;

  FieldCoefficients() = default;
  FieldCoefficients(SpaceKind s, Vector v) : space(s), values(std::move(v)) {}
};

/// Gauss-Legendre rule on [0, 1].
struct QuadratureRule1D {
  std::vector<double> points;
  std::vector<double> weights;
};
QuadratureRule1D gauss_legendre(int n);

/// Reference basis of the lowest-order tensor-product complex on one cell.
///
/// Local coordinates s in [0,1]^3; h is the cell size. Local edge e has
/// direction e/4 and sits at transverse offsets (a,b) = (e%2, (e/2)%2) along
/// the two remaining axes in increasing order. Local face f has normal f/2
/// and offset f%2. Every edge and face function has exactly one nonzero
/// Cartesian component, equal to its direction/normal.
namespace basis {
double vertex(int v, const Vec3 &s);
Vec3 vertex_gradient(int v, const Vec3 &s, const Vec3 &h);
double edge(int e, const Vec3 &s, const Vec3 &h);
double face(int f, const Vec3 &s, const Vec3 &h);
inline int edge_direction(int e) { return e / 4; }
inline int face_direction(int f) { return f / 2; }
} // namespace basis

/// Edge and face basis values at the tensor Gauss points of one cell.
/// Valid for every cell of a uniform structured mesh.
struct CellTabulation {
  int points_per_axis = 0;
  std::vector<double> weights;                  // already scaled by cell volume
  std::vector<std::array<double, 12>> edge;     // value of the single component
  std::vector<std::array<double, 6>> face;
  std::size_t size() const { return weights.size(); }

  CellTabulation(const Vec3 &h, int points_per_axis);

  /// Evaluate an edge field / face field (local coefficients) at point q.
  Vec3 edge_field(std::size_t q, const double *coef) const;
  Vec3 face_field(std::size_t q, const double *coef) const;
};

/// Discrete de Rham complex with homogeneous boundary conditions.
///
/// Unrestricted operators act on all entities; restricted ones act on the
/// constrained DOFs only. Incidence matrices hold the integers -1, 0, 1.
/// The L2 basis is the cell indicator, so `div` maps face fluxes to cell
/// integrals of the divergence.
struct OperatorSet {
  std::shared_ptr<const StructuredHexMesh> mesh;
  std::shared_ptr<const Space> h1, hcurl, hdiv, l2;

  SparseMatrix grad_full, curl_full, div_full;
  SparseMatrix grad, curl, div;

  SparseMatrix mass_h1_full, mass_curl_full, mass_div_full, mass_l2_full,
      mass_curl_div_full;
  SparseMatrix mass_h1, mass_curl, mass_div, mass_l2;
  /// (phi_edge, psi_face): H(curl) test rows times H(div) trial columns.
  SparseMatrix mass_curl_div;

  int mass_quadrature = 2;
};

/// Build spaces and the incidence part of the operator set.
OperatorSet assemble_incidence_operators(const StructuredHexMesh &mesh);

/// Fill the mass matrices of `ops` using q-point Gauss per axis.
void assemble_mass_matrices(OperatorSet &ops, int quadrature_points = 2);

/// Spaces, incidence and mass matrices in one call.
OperatorSet assemble_operators(const StructuredHexMesh &mesh,
                               int quadrature_points = 2);

/// Canonical DOFs: edge line integrals of F.t (Hcurl) or face fluxes of
/// F.n (Hdiv), all entities. Throws EvaluationError on non-finite values.
Vector interpolate_full(const StructuredHexMesh &mesh, const VectorField &field,
                        SpaceKind space, int quadrature_points = 5);

/// Interpolate and restrict to the constrained DOFs (boundary DOFs dropped).
FieldCoefficients interpolate(const OperatorSet &ops, const VectorField &field,
                              SpaceKind space, int quadrature_points = 5);

/// Constrained DOF indices of the local edges/faces of every cell, -1 where
/// the entity lies on the boundary.
struct CellDofMap {
  std::vector<std::array<std::int64_t, 12>> edges;
  std::vector<std::array<std::int64_t, 6>> faces;
};
CellDofMap build_cell_dofs(const OperatorSet &ops);

/// L2 projection of an H(div) field onto H0(curl): solves Mc H = Mcd B.
class CurlProjector {
public:
  explicit CurlProjector(const OperatorSet &ops);
  Vector apply(const Vector &b) const;

private:
  struct Impl;
  std::shared_ptr<const Impl> impl_;
  const OperatorSet *ops_;
};

FieldCoefficients l2_project_div_to_curl(const OperatorSet &ops,
                                         const FieldCoefficients &b);

} // namespace mfrelax
