#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "mfrelax/diagnostics.hpp"
#include "mfrelax/errors.hpp"
#include "mfrelax/fields.hpp"

#include <cmath>
#include <numbers>

using namespace mfrelax;

namespace {

OperatorSet box_ops(int nx, int ny, int nz, double L, double Z) {
  return assemble_operators(build_mesh(CuboidDomain::centered_box(L, Z), nx, ny, nz));
}

double fd_divergence(const VectorField &f, const Point &x, double h) {
  double d = 0.0;
  for (int k = 0; k < 3; ++k) {
    Point p = x, m = x;
    p[k] += h;
    m[k] -= h;
    d += (f(p)[k] - f(m)[k]) / (2.0 * h);
  }
  return d;
}

} // namespace

TEST_CASE("hopf field values") {
  const HopfParams p;
  const Vec3 b0 = eval_hopf({0, 0, 0}, p);
  CHECK(b0[0] == 0.0);
  CHECK(b0[1] == 0.0);
  CHECK(b0[2] == doctest::Approx(-12.0 / (std::numbers::pi * std::sqrt(13.0))).epsilon(1e-15));
  // Algebraic decay like |x|^-4.
  const double far = std::abs(eval_hopf({0, 0, 100}, p)[2]);
  CHECK(far < 1e-7);
  CHECK(far > 0.0);
  // s scales like sqrt(s).
  HopfParams q;
  q.s = 4.0;
  CHECK(eval_hopf({0.3, -0.2, 0.5}, q)[1] ==
        doctest::Approx(2.0 * eval_hopf({0.3, -0.2, 0.5}, p)[1]));
}

TEST_CASE("e3 field values") {
  const E3Params p;
  const Vec3 far = eval_e3({100, 0, 0}, p);
  CHECK(far[0] == 0.0);
  CHECK(far[1] == 0.0);
  CHECK(far[2] == 1.0);

  // Next to the first twist axis the other five are negligible.
  const Vec3 b = eval_e3({1.0, 0.5, -20.0}, p);
  const double amp = 2.0 * p.k * p.B0 / p.a;
  CHECK(b[0] == doctest::Approx(-amp * 0.5 * std::exp(-0.25 / 2.0)).epsilon(1e-6));
  CHECK(std::abs(b[1]) < 1e-5);
  CHECK(b[2] == 1.0);
}

TEST_CASE("analytic fields are solenoidal") {
  const auto hopf = hopf_field(HopfParams{});
  const auto e3 = e3_field(E3Params{});
  for (const Point &x : {Point{0.1, 0.2, 0.3}, Point{-1.0, 0.7, 2.0}, Point{0.5, -0.5, -3.9}}) {
    CHECK(std::abs(fd_divergence(hopf, x, 1e-4)) < 1e-7);
    CHECK(std::abs(fd_divergence(e3, x, 1e-4)) < 1e-6);
  }
}

TEST_CASE("invalid parameters") {
  HopfParams h;
  h.omega1 = h.omega2 = 0.0;
  CHECK_THROWS_AS(hopf_field(h), EvaluationError);
  h = HopfParams{};
  h.s = -1.0;
  CHECK_THROWS_AS(hopf_field(h), EvaluationError);
  E3Params e;
  e.a = 0.0;
  CHECK_THROWS_AS(e3_field(e), EvaluationError);
  e = E3Params{};
  e.l = -2.0;
  CHECK_THROWS_AS(e3_field(e), EvaluationError);
}

TEST_CASE("zero field initializes to zero") {
  const auto ops = box_ops(2, 2, 2, 1.0, 1.0);
  const auto b = init_divfree_field(ops, [](const Point &) { return Vec3{}; });
  CHECK(b.values.norm() == 0.0);
}

TEST_CASE("cleaned e3 field is discretely solenoidal with small helicity") {
  const auto ops = box_ops(4, 4, 24, 4.0, 24.0);
  const E3Params p;
  const auto b = init_divfree_field(ops, e3_field(p), p.background());
  const double e = energy(ops, b.values);
  CHECK(e > 0.0);
  CHECK(divergence_norm(ops, b.values) <= 1e-12 * std::max(1.0, std::sqrt(e)));
  const auto a = recover_potential(ops, b);
  // Twists of alternating sign: nearly zero net helicity.
  CHECK(std::abs(helicity(ops, a, b)) <= 1e-3 * e);
}

TEST_CASE("cleaning does not change an already solenoidal field") {
  const auto ops = box_ops(3, 3, 4, 2.0, 2.0);
  const Vector a = Vector::LinSpaced(ops.hcurl->size(), -1.0, 1.0);
  const Vector b = ops.curl * a;
  const DivergenceCleaner clean(ops);
  CHECK((clean.apply(b) - b).norm() <= 1e-12 * b.norm());
}

TEST_CASE("hopf helicity is positive and grows under refinement") {
  std::vector<double> h;
  for (auto [nx, nz] : {std::pair{4, 10}, std::pair{6, 14}, std::pair{8, 20}}) {
    const auto ops = box_ops(nx, nx, nz, 4.0, 10.0);
    const auto b = init_divfree_field(ops, hopf_field(HopfParams{}));
    CHECK(divergence_norm(ops, b.values) <= 1e-12);
    h.push_back(helicity(ops, recover_potential(ops, b), b));
  }
  // Regression value on the benchmark mesh.
  CHECK(h[0] == doctest::Approx(0.0827065).epsilon(1e-5));
  CHECK(h[1] > h[0]);
  CHECK(h[2] > h[1]);
}
