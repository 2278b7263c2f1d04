#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "mfrelax/errors.hpp"
#include "mfrelax/feec.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <Eigen/QR>
#include <Eigen/SparseCholesky>

#include <cmath>

using namespace mfrelax;

namespace {

OperatorSet hopf_ops() {
  return assemble_operators(build_mesh(CuboidDomain::centered_box(4.0, 10.0), 4, 4, 10));
}

double max_abs(const SparseMatrix &m) {
  double v = 0.0;
  for (Eigen::Index c = 0; c < m.outerSize(); ++c)
    for (SparseMatrix::InnerIterator it(m, c); it; ++it) v = std::max(v, std::abs(it.value()));
  return v;
}

bool is_spd(const SparseMatrix &m) {
  const Eigen::MatrixXd d(m);
  if ((d - d.transpose()).cwiseAbs().maxCoeff() > 1e-14 * d.cwiseAbs().maxCoeff())
    return false;
  Eigen::LLT<Eigen::MatrixXd> llt(d);
  return llt.info() == Eigen::Success;
}

} // namespace

TEST_CASE("gauss-legendre integrates polynomials of degree 2n-1 exactly") {
  for (int n = 1; n <= 8; ++n) {
    const auto q = gauss_legendre(n);
    REQUIRE(q.points.size() == std::size_t(n));
    for (int p = 0; p <= 2 * n - 1; ++p) {
      double s = 0.0;
      for (int i = 0; i < n; ++i) s += q.weights[i] * std::pow(q.points[i], p);
      CHECK(s == doctest::Approx(1.0 / (p + 1)).epsilon(1e-14));
    }
  }
  CHECK_THROWS(gauss_legendre(0));
}

TEST_CASE("space restriction and prolongation") {
  const auto ops = hopf_ops();
  CHECK(ops.hdiv->size() == 384);
  CHECK(ops.hcurl->size() == 306);
  CHECK(ops.h1->size() == 81);
  CHECK(ops.l2->size() == 160);
  for (const auto *s : {ops.h1.get(), ops.hcurl.get(), ops.hdiv.get()}) {
    for (auto e : s->dof_entities()) CHECK_FALSE(s->is_boundary(e));
    const Vector x = Vector::LinSpaced(s->size(), 1.0, 2.0);
    CHECK((s->restrict_vector(s->extend_vector(x)) - x).norm() == 0.0);
    CHECK((SparseMatrix(s->prolongation()) * x - s->extend_vector(x)).norm() == 0.0);
  }
}

TEST_CASE("complex exactness, full and restricted") {
  const auto ops = hopf_ops();
  CHECK(max_abs(ops.curl_full * ops.grad_full) == 0.0);
  CHECK(max_abs(ops.div_full * ops.curl_full) == 0.0);
  CHECK(max_abs(ops.curl * ops.grad) == 0.0);
  CHECK(max_abs(ops.div * ops.curl) == 0.0);
  // Integer entries.
  for (const SparseMatrix *m : {&ops.grad_full, &ops.curl_full, &ops.div_full})
    for (Eigen::Index c = 0; c < m->outerSize(); ++c)
      for (SparseMatrix::InnerIterator it(*m, c); it; ++it)
        CHECK(std::abs(it.value()) == 1.0);
}

TEST_CASE("restricted divergence maps onto the zero-mean cell functions") {
  for (auto [nx, ny, nz] : {std::array{1, 1, 2}, std::array{2, 2, 2}, std::array{2, 3, 2}}) {
    const auto ops = assemble_operators(
        build_mesh(CuboidDomain::centered_box(1.0, 1.0), nx, ny, nz));
    const Eigen::MatrixXd d(ops.div);
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(d);
    CHECK(qr.rank() == nx * ny * nz - 1);
  }
}

TEST_CASE("mass matrices") {
  const auto ops = hopf_ops();
  CHECK(is_spd(ops.mass_h1));
  CHECK(is_spd(ops.mass_curl));
  CHECK(is_spd(ops.mass_div));
  CHECK(is_spd(ops.mass_l2));
  CHECK(ops.mass_l2.sum() == doctest::Approx(1280.0).epsilon(1e-14));
  CHECK(ops.mass_h1_full.sum() == doctest::Approx(1280.0).epsilon(1e-13));

  const auto unit = assemble_operators(build_mesh(CuboidDomain{0, 1, 0, 1, 0, 1}, 1, 1, 1));
  CHECK(unit.mass_l2_full.rows() == 1);
  CHECK(unit.mass_l2_full.coeff(0, 0) == doctest::Approx(1.0));

  // Independent 5-point quadrature oracle.
  OperatorSet hi = assemble_incidence_operators(*ops.mesh);
  assemble_mass_matrices(hi, 5);
  const auto rel = [](const SparseMatrix &a, const SparseMatrix &b) {
    return max_abs(a - b) / max_abs(b);
  };
  CHECK(rel(ops.mass_curl_full, hi.mass_curl_full) < 1e-13);
  CHECK(rel(ops.mass_div_full, hi.mass_div_full) < 1e-13);
  CHECK(rel(ops.mass_h1_full, hi.mass_h1_full) < 1e-13);
  CHECK(rel(ops.mass_curl_div_full, hi.mass_curl_div_full) < 1e-13);
}

TEST_CASE("edge and face functions are dual to their degrees of freedom") {
  const Vec3 h{2.0, 0.5, 3.0};
  const auto q = gauss_legendre(3);
  // Tangential integral along each local edge of each edge function.
  for (int e = 0; e < 12; ++e) {
    const int d = e / 4;
    const int t0 = (d + 1) % 3 < (d + 2) % 3 ? (d + 1) % 3 : (d + 2) % 3;
    const int t1 = 3 - d - t0;
    for (int f = 0; f < 12; ++f) {
      if (f / 4 != d) continue;
      Vec3 s{};
      s[t0] = f % 2;
      s[t1] = (f / 2) % 2;
      double integral = 0.0;
      for (std::size_t i = 0; i < q.points.size(); ++i) {
        s[d] = q.points[i];
        integral += q.weights[i] * h[d] * basis::edge(e, s, h);
      }
      CHECK(integral == doctest::Approx(e == f ? 1.0 : 0.0));
    }
  }
  for (int f = 0; f < 6; ++f)
    for (int g = 0; g < 6; ++g) {
      if (f / 2 != g / 2) continue;
      const int d = f / 2;
      Vec3 s{0.5, 0.5, 0.5};
      s[d] = g % 2;
      const double area = h[0] * h[1] * h[2] / h[d];
      CHECK(area * basis::face(f, s, h) == doctest::Approx(f == g ? 1.0 : 0.0));
    }
}

TEST_CASE("cell tabulation") {
  const CellTabulation tab({2.0, 2.0, 2.0}, 3);
  double w = 0.0;
  for (double x : tab.weights) w += x;
  CHECK(w == doctest::Approx(8.0));
  CHECK(tab.size() == 27);
}

TEST_CASE("interpolation of a constant field") {
  const auto ops = hopf_ops();
  const auto &m = *ops.mesh;
  const Vector b = interpolate_full(m, [](const Point &) { return Vec3{0, 0, 1}; },
                                    SpaceKind::Hdiv);
  for (std::int64_t f = 0; f < m.num_faces(); ++f) {
    const auto [d, p] = m.face_position(f);
    CHECK(b[f] == doctest::Approx(d == 2 ? 4.0 : 0.0));
  }
  CHECK(b.dot(ops.mass_div_full * b) == doctest::Approx(1280.0));

  const Vector restricted =
      interpolate(ops, [](const Point &) { return Vec3{0, 0, 1}; }, SpaceKind::Hdiv).values;
  CHECK(restricted.size() == ops.hdiv->size());
}

TEST_CASE("curl of an interpolated gradient vanishes") {
  const auto ops = hopf_ops();
  const VectorField grad_xyz = [](const Point &x) {
    return Vec3{x[1] * x[2], x[0] * x[2], x[0] * x[1]};
  };
  const Vector a = interpolate_full(*ops.mesh, grad_xyz, SpaceKind::Hcurl);
  CHECK((ops.curl_full * a).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("commuting diagram: refined quadrature drives the divergence to zero") {
  const auto ops = hopf_ops();
  // curl of (0, 0, g), g = exp(-(x^2 + y^2) / 4).
  const VectorField f = [](const Point &x) {
    const double g = std::exp(-(x[0] * x[0] + x[1] * x[1]) / 4.0);
    return Vec3{-0.5 * x[1] * g, 0.5 * x[0] * g, 0.0};
  };
  const double d2 = (ops.div_full * interpolate_full(*ops.mesh, f, SpaceKind::Hdiv, 2))
                        .cwiseAbs()
                        .maxCoeff();
  const double d8 = (ops.div_full * interpolate_full(*ops.mesh, f, SpaceKind::Hdiv, 8))
                        .cwiseAbs()
                        .maxCoeff();
  CHECK(d8 < d2);
  CHECK(d8 < 1e-10);
}

TEST_CASE("interpolation rejects non-finite values") {
  const auto ops = hopf_ops();
  const VectorField bad = [](const Point &) { return Vec3{NAN, 0, 0}; };
  CHECK_THROWS_AS(interpolate(ops, bad, SpaceKind::Hdiv), EvaluationError);
}

TEST_CASE("L2 projection from H(div) to H(curl)") {
  const auto ops = hopf_ops();
  const CurlProjector proj(ops);
  CHECK(proj.apply(Vector::Zero(ops.hdiv->size())).norm() == 0.0);

  const VectorField f = [](const Point &x) {
    return Vec3{std::sin(x[1]), x[0] * x[2] / 10.0, std::exp(-x[0] * x[0])};
  };
  const Vector b = interpolate(ops, f, SpaceKind::Hdiv).values;
  const Vector h = proj.apply(b);
  const Vector rhs = ops.mass_curl_div * b;
  CHECK((ops.mass_curl * h - rhs).cwiseAbs().maxCoeff() < 1e-12 * rhs.cwiseAbs().maxCoeff());

  // Projecting the H(curl) field again through its own Galerkin system changes nothing.
  Eigen::SimplicialLDLT<SparseMatrix> mc(ops.mass_curl);
  const Vector h2 = mc.solve(ops.mass_curl * h);
  CHECK((h2 - h).norm() < 1e-12 * h.norm());

  const auto fc = l2_project_div_to_curl(ops, {SpaceKind::Hdiv, b});
  CHECK(fc.space == SpaceKind::Hcurl);
  CHECK((fc.values - h).norm() < 1e-14 * h.norm());
  CHECK_THROWS_AS(l2_project_div_to_curl(ops, {SpaceKind::Hcurl, h}), PreconditionError);
}
