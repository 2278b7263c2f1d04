#include "mfrelax/feec.hpp"

#include "mfrelax/errors.hpp"

#include <Eigen/SparseCholesky>

#include <cmath>
#include <numbers>
#include <string>

namespace mfrelax {

namespace {

using Triplet = Eigen::Triplet<double>;

double lin(int a, double t) { return a == 0 ? 1.0 - t : t; }
double dlin(int a) { return a == 0 ? -1.0 : 1.0; }

std::array<int, 2> transverse(int d) {
  switch (d) {
  case 0: return {1, 2};
  case 1: return {0, 2};
  default: return {0, 1};
  }
}

SparseMatrix incidence_matrix(const StructuredHexMesh &mesh, int dim) {
  std::vector<Triplet> t;
  const auto rows = mesh.num_entities(dim);
  t.reserve(static_cast<std::size_t>(rows) * (dim == 3 ? 6 : dim == 2 ? 4 : 2));
  for (std::int64_t r = 0; r < rows; ++r)
    for (const auto &b : mesh.incidence({dim, r, 1}))
      t.emplace_back(r, b.index, b.sign);
  SparseMatrix m(rows, mesh.num_entities(dim - 1));
  m.setFromTriplets(t.begin(), t.end());
  return m;
}

SparseMatrix restrict_matrix(const SparseMatrix &full, const Space &rows,
                             const Space &cols) {
  SparseMatrix r = rows.prolongation().transpose() * full * cols.prolongation();
  r.makeCompressed();
  return r;
}

} // namespace

const char *to_string(SpaceKind kind) {
  switch (kind) {
  case SpaceKind::H1: return "H1";
  case SpaceKind::Hcurl: return "Hcurl";
  case SpaceKind::Hdiv: return "Hdiv";
  case SpaceKind::L2: return "L2";
  }
  return "?";
}

Space::Space(SpaceKind kind, std::int64_t num_entities,
             const std::vector<bool> &boundary)
    : kind_(kind), to_local_(num_entities, -1) {
  for (std::int64_t e = 0; e < num_entities; ++e) {
    const bool eliminated = kind != SpaceKind::L2 && boundary[e];
    if (eliminated) continue;
    to_local_[e] = static_cast<std::int64_t>(dof_entities_.size());
    dof_entities_.push_back(e);
  }
}

SparseMatrix Space::prolongation() const {
  std::vector<Triplet> t;
  t.reserve(dof_entities_.size());
  for (std::size_t i = 0; i < dof_entities_.size(); ++i)
    t.emplace_back(dof_entities_[i], static_cast<Eigen::Index>(i), 1.0);
  SparseMatrix p(num_entities(), size());
  p.setFromTriplets(t.begin(), t.end());
  return p;
}

Vector Space::restrict_vector(const Vector &full) const {
  Vector out(size());
  for (std::int64_t i = 0; i < size(); ++i) out[i] = full[dof_entities_[i]];
  return out;
}

Vector Space::extend_vector(const Vector &constrained) const {
  Vector out = Vector::Zero(num_entities());
  for (std::int64_t i = 0; i < size(); ++i) out[dof_entities_[i]] = constrained[i];
  return out;
}

QuadratureRule1D gauss_legendre(int n) {
  if (n < 1) throw ConfigError("quadrature: point count must be >= 1");
  QuadratureRule1D rule;
  rule.points.resize(n);
  rule.weights.resize(n);
  for (int i = 0; i < n; ++i) {
    double x = std::cos(std::numbers::pi * (i + 0.75) / (n + 0.5));
    double dp = 0.0;
    for (int it = 0; it < 100; ++it) {
      double p0 = 1.0, p1 = x;
      for (int k = 2; k <= n; ++k) {
        const double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
      }
      dp = n * (x * p1 - p0) / (x * x - 1.0);
      const double dx = p1 / dp;
      x -= dx;
      if (std::abs(dx) < 1e-16) break;
    }
    // Legendre recursion above yields P_n in p1 and P_{n-1} in p0.
    rule.points[n - 1 - i] = 0.5 * (x + 1.0);
    rule.weights[n - 1 - i] = 1.0 / ((1.0 - x * x) * dp * dp);
  }
  return rule;
}

namespace basis {

double vertex(int v, const Vec3 &s) {
  return lin(v % 2, s[0]) * lin((v / 2) % 2, s[1]) * lin(v / 4, s[2]);
}

Vec3 vertex_gradient(int v, const Vec3 &s, const Vec3 &h) {
  const int a = v % 2, b = (v / 2) % 2, c = v / 4;
  return {dlin(a) * lin(b, s[1]) * lin(c, s[2]) / h[0],
          lin(a, s[0]) * dlin(b) * lin(c, s[2]) / h[1],
          lin(a, s[0]) * lin(b, s[1]) * dlin(c) / h[2]};
}

double edge(int e, const Vec3 &s, const Vec3 &h) {
  const int d = e / 4;
  const auto t = transverse(d);
  return lin(e % 2, s[t[0]]) * lin((e / 2) % 2, s[t[1]]) / h[d];
}

double face(int f, const Vec3 &s, const Vec3 &h) {
  const int d = f / 2;
  const auto t = transverse(d);
  return lin(f % 2, s[d]) / (h[t[0]] * h[t[1]]);
}

} // namespace basis

CellTabulation::CellTabulation(const Vec3 &h, int n) : points_per_axis(n) {
  const auto rule = gauss_legendre(n);
  const double vol = h[0] * h[1] * h[2];
  for (int k = 0; k < n; ++k)
    for (int j = 0; j < n; ++j)
      for (int i = 0; i < n; ++i) {
        const Vec3 s{rule.points[i], rule.points[j], rule.points[k]};
        weights.push_back(rule.weights[i] * rule.weights[j] * rule.weights[k] * vol);
        std::array<double, 12> ev{};
        for (int e = 0; e < 12; ++e) ev[e] = basis::edge(e, s, h);
        std::array<double, 6> fv{};
        for (int f = 0; f < 6; ++f) fv[f] = basis::face(f, s, h);
        edge.push_back(ev);
        face.push_back(fv);
      }
}

Vec3 CellTabulation::edge_field(std::size_t q, const double *coef) const {
  const auto &v = edge[q];
  Vec3 out{};
  for (int e = 0; e < 12; ++e) out[e / 4] += coef[e] * v[e];
  return out;
}

Vec3 CellTabulation::face_field(std::size_t q, const double *coef) const {
  const auto &v = face[q];
  Vec3 out{};
  for (int f = 0; f < 6; ++f) out[f / 2] += coef[f] * v[f];
  return out;
}

OperatorSet assemble_incidence_operators(const StructuredHexMesh &mesh) {
  OperatorSet ops;
  ops.mesh = std::make_shared<const StructuredHexMesh>(mesh);
  const auto flags = mesh.boundary_flags();
  ops.h1 = std::make_shared<const Space>(SpaceKind::H1, mesh.num_vertices(), flags.vertices);
  ops.hcurl = std::make_shared<const Space>(SpaceKind::Hcurl, mesh.num_edges(), flags.edges);
  ops.hdiv = std::make_shared<const Space>(SpaceKind::Hdiv, mesh.num_faces(), flags.faces);
  ops.l2 = std::make_shared<const Space>(SpaceKind::L2, mesh.num_cells(),
                                         std::vector<bool>(mesh.num_cells(), false));

  ops.grad_full = incidence_matrix(mesh, 1);
  ops.curl_full = incidence_matrix(mesh, 2);
  ops.div_full = incidence_matrix(mesh, 3);
  ops.grad = restrict_matrix(ops.grad_full, *ops.hcurl, *ops.h1);
  ops.curl = restrict_matrix(ops.curl_full, *ops.hdiv, *ops.hcurl);
  ops.div = restrict_matrix(ops.div_full, *ops.l2, *ops.hdiv);
  return ops;
}

void assemble_mass_matrices(OperatorSet &ops, int n) {
  const auto &mesh = *ops.mesh;
  const auto hs = mesh.spacing();
  const Vec3 h{hs[0], hs[1], hs[2]};
  const auto rule = gauss_legendre(n);
  const double vol = h[0] * h[1] * h[2];

  // The mesh is uniform, so one set of local matrices serves every cell.
  Eigen::Matrix<double, 8, 8> m1 = Eigen::Matrix<double, 8, 8>::Zero();
  Eigen::Matrix<double, 12, 12> mc = Eigen::Matrix<double, 12, 12>::Zero();
  Eigen::Matrix<double, 6, 6> md = Eigen::Matrix<double, 6, 6>::Zero();
  Eigen::Matrix<double, 12, 6> mcd = Eigen::Matrix<double, 12, 6>::Zero();
  double m0 = 0.0;
  for (int k = 0; k < n; ++k)
    for (int j = 0; j < n; ++j)
      for (int i = 0; i < n; ++i) {
        const Vec3 s{rule.points[i], rule.points[j], rule.points[k]};
        const double w = rule.weights[i] * rule.weights[j] * rule.weights[k] * vol;
        std::array<double, 8> vv{};
        std::array<double, 12> ev{};
        std::array<double, 6> fv{};
        for (int v = 0; v < 8; ++v) vv[v] = basis::vertex(v, s);
        for (int e = 0; e < 12; ++e) ev[e] = basis::edge(e, s, h);
        for (int f = 0; f < 6; ++f) fv[f] = basis::face(f, s, h);
        for (int a = 0; a < 8; ++a)
          for (int b = 0; b < 8; ++b) m1(a, b) += w * vv[a] * vv[b];
        for (int a = 0; a < 12; ++a)
          for (int b = 0; b < 12; ++b)
            if (a / 4 == b / 4) mc(a, b) += w * ev[a] * ev[b];
        for (int a = 0; a < 6; ++a)
          for (int b = 0; b < 6; ++b)
            if (a / 2 == b / 2) md(a, b) += w * fv[a] * fv[b];
        for (int a = 0; a < 12; ++a)
          for (int b = 0; b < 6; ++b)
            if (a / 4 == b / 2) mcd(a, b) += w * ev[a] * fv[b];
        m0 += w;
      }

  std::vector<Triplet> t1, tc, td, tcd, t0;
  for (std::int64_t c = 0; c < mesh.num_cells(); ++c) {
    const auto vs = mesh.cell_vertices(c);
    const auto es = mesh.cell_edges(c);
    const auto fs = mesh.cell_faces(c);
    for (int a = 0; a < 8; ++a)
      for (int b = 0; b < 8; ++b) t1.emplace_back(vs[a], vs[b], m1(a, b));
    for (int a = 0; a < 12; ++a)
      for (int b = 0; b < 12; ++b)
        if (mc(a, b) != 0.0) tc.emplace_back(es[a], es[b], mc(a, b));
    for (int a = 0; a < 6; ++a)
      for (int b = 0; b < 6; ++b)
        if (md(a, b) != 0.0) td.emplace_back(fs[a], fs[b], md(a, b));
    for (int a = 0; a < 12; ++a)
      for (int b = 0; b < 6; ++b)
        if (mcd(a, b) != 0.0) tcd.emplace_back(es[a], fs[b], mcd(a, b));
    t0.emplace_back(c, c, m0);
  }
  const auto nv = mesh.num_vertices(), ne = mesh.num_edges(),
             nf = mesh.num_faces(), nc = mesh.num_cells();
  ops.mass_h1_full = SparseMatrix(nv, nv);
  ops.mass_h1_full.setFromTriplets(t1.begin(), t1.end());
  ops.mass_curl_full = SparseMatrix(ne, ne);
  ops.mass_curl_full.setFromTriplets(tc.begin(), tc.end());
  ops.mass_div_full = SparseMatrix(nf, nf);
  ops.mass_div_full.setFromTriplets(td.begin(), td.end());
  ops.mass_curl_div_full = SparseMatrix(ne, nf);
  ops.mass_curl_div_full.setFromTriplets(tcd.begin(), tcd.end());
  ops.mass_l2_full = SparseMatrix(nc, nc);
  ops.mass_l2_full.setFromTriplets(t0.begin(), t0.end());

  ops.mass_h1 = restrict_matrix(ops.mass_h1_full, *ops.h1, *ops.h1);
  ops.mass_curl = restrict_matrix(ops.mass_curl_full, *ops.hcurl, *ops.hcurl);
  ops.mass_div = restrict_matrix(ops.mass_div_full, *ops.hdiv, *ops.hdiv);
  ops.mass_l2 = restrict_matrix(ops.mass_l2_full, *ops.l2, *ops.l2);
  ops.mass_curl_div = restrict_matrix(ops.mass_curl_div_full, *ops.hcurl, *ops.hdiv);
  ops.mass_quadrature = n;
}

OperatorSet assemble_operators(const StructuredHexMesh &mesh, int n) {
  auto ops = assemble_incidence_operators(mesh);
  assemble_mass_matrices(ops, n);
  return ops;
}

Vector interpolate_full(const StructuredHexMesh &mesh, const VectorField &field,
                        SpaceKind space, int n) {
  if (space != SpaceKind::Hcurl && space != SpaceKind::Hdiv)
    throw ConfigError("interpolate: only Hcurl and Hdiv are supported");
  const auto rule = gauss_legendre(n);
  const auto h = mesh.spacing();
  auto checked = [&](const Point &x) {
    const Vec3 v = field(x);
    if (!std::isfinite(v[0]) || !std::isfinite(v[1]) || !std::isfinite(v[2]))
      throw EvaluationError("interpolate: non-finite field value at (" +
                            std::to_string(x[0]) + ", " + std::to_string(x[1]) +
                            ", " + std::to_string(x[2]) + ")");
    return v;
  };

  if (space == SpaceKind::Hcurl) {
    Vector out(mesh.num_edges());
    for (std::int64_t e = 0; e < mesh.num_edges(); ++e) {
      const auto [d, p] = mesh.edge_position(e);
      const Point x0 = mesh.vertex_coordinates(p[0], p[1], p[2]);
      double acc = 0.0;
      for (int q = 0; q < n; ++q) {
        Point x = x0;
        x[d] += rule.points[q] * h[d];
        acc += rule.weights[q] * checked(x)[d];
      }
      out[e] = acc * h[d];
    }
    return out;
  }

  Vector out(mesh.num_faces());
  for (std::int64_t f = 0; f < mesh.num_faces(); ++f) {
    const auto [d, p] = mesh.face_position(f);
    const auto t = transverse(d);
    const Point x0 = mesh.vertex_coordinates(p[0], p[1], p[2]);
    double acc = 0.0;
    for (int qb = 0; qb < n; ++qb)
      for (int qa = 0; qa < n; ++qa) {
        Point x = x0;
        x[t[0]] += rule.points[qa] * h[t[0]];
        x[t[1]] += rule.points[qb] * h[t[1]];
        acc += rule.weights[qa] * rule.weights[qb] * checked(x)[d];
      }
    out[f] = acc * h[t[0]] * h[t[1]];
  }
  return out;
}

FieldCoefficients interpolate(const OperatorSet &ops, const VectorField &field,
                              SpaceKind space, int n) {
  const Vector full = interpolate_full(*ops.mesh, field, space, n);
  const auto &sp = space == SpaceKind::Hcurl ? *ops.hcurl : *ops.hdiv;
  return {space, sp.restrict_vector(full)};
}

CellDofMap build_cell_dofs(const OperatorSet &ops) {
  const auto &mesh = *ops.mesh;
  CellDofMap map;
  map.edges.resize(mesh.num_cells());
  map.faces.resize(mesh.num_cells());
  for (std::int64_t c = 0; c < mesh.num_cells(); ++c) {
    const auto es = mesh.cell_edges(c);
    const auto fs = mesh.cell_faces(c);
    for (int e = 0; e < 12; ++e) map.edges[c][e] = ops.hcurl->local(es[e]);
    for (int f = 0; f < 6; ++f) map.faces[c][f] = ops.hdiv->local(fs[f]);
  }
  return map;
}

struct CurlProjector::Impl {
  Eigen::SimplicialLDLT<SparseMatrix> ldlt;
};

CurlProjector::CurlProjector(const OperatorSet &ops) : ops_(&ops) {
  auto impl = std::make_shared<Impl>();
  impl->ldlt.compute(ops.mass_curl);
  if (impl->ldlt.info() != Eigen::Success)
    throw LinearAlgebraError("curl projector: H(curl) mass factorization failed");
  impl_ = std::move(impl);
}

Vector CurlProjector::apply(const Vector &b) const {
  const Vector rhs = ops_->mass_curl_div * b;
  Vector h = impl_->ldlt.solve(rhs);
  // One refinement sweep keeps the Galerkin residual at roundoff.
  const Vector r = rhs - ops_->mass_curl * h;
  h += impl_->ldlt.solve(r);
  return h;
}

FieldCoefficients l2_project_div_to_curl(const OperatorSet &ops,
                                         const FieldCoefficients &b) {
  if (b.space != SpaceKind::Hdiv)
    throw PreconditionError("l2_project_div_to_curl: input must be an H(div) field");
  return {SpaceKind::Hcurl, CurlProjector(ops).apply(b.values)};
}

} // namespace mfrelax
