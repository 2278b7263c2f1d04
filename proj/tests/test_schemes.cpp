#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "mfrelax/diagnostics.hpp"
#include "mfrelax/errors.hpp"
#include "mfrelax/fields.hpp"
#include "mfrelax/schemes.hpp"

#include <random>

using namespace mfrelax;

namespace {

// r(x) = x_i^2 - c_i, componentwise.
class Squares : public NonlinearSystem {
public:
  explicit Squares(Vector c) : c_(std::move(c)) {}
  Eigen::Index size() const override { return c_.size(); }
  Vector residual(const Vector &x) const override { return x.cwiseProduct(x) - c_; }
  SparseMatrix jacobian(const Vector &x) const override {
    SparseMatrix j(x.size(), x.size());
    for (Eigen::Index i = 0; i < x.size(); ++i) j.insert(i, i) = 2.0 * x[i];
    j.makeCompressed();
    return j;
  }

private:
  Vector c_;
};

class Affine : public NonlinearSystem {
public:
  Affine(SparseMatrix a, Vector b) : a_(std::move(a)), b_(std::move(b)) {}
  Eigen::Index size() const override { return b_.size(); }
  Vector residual(const Vector &x) const override { return a_ * x - b_; }
  SparseMatrix jacobian(const Vector &) const override { return a_; }

private:
  SparseMatrix a_;
  Vector b_;
};

std::shared_ptr<const OperatorSet> small_ops() {
  return std::make_shared<OperatorSet>(
      assemble_operators(build_mesh(CuboidDomain::centered_box(2.0, 3.0), 3, 3, 4)));
}

Vector hopf_b(const OperatorSet &ops) {
  return init_divfree_field(ops, hopf_field(HopfParams{})).values;
}

Vector random_vector(Eigen::Index n, std::mt19937_64 &rng) {
  std::normal_distribution<double> d;
  Vector v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = d(rng);
  return v;
}

constexpr SchemeKind kAll[] = {SchemeKind::NonConservative, SchemeKind::Projection,
                               SchemeKind::LagrangeMultiplier};

} // namespace

TEST_CASE("scheme names") {
  for (auto k : kAll) CHECK(parse_scheme(to_string(k)) == k);
  CHECK_FALSE(parse_scheme("frobnicate").has_value());
}

TEST_CASE("config validation") {
  CHECK_THROWS_AS((TimePhase{0.0, 1.0, 1}.validate()), ConfigError);
  CHECK_THROWS_AS((TimePhase{1.0, -1.0, 1}.validate()), ConfigError);
  CHECK_THROWS_AS((TimePhase{1.0, 1.0, 0}.validate()), ConfigError);
  NewtonConfig n;
  n.max_iter = 0;
  CHECK_THROWS_AS(n.validate(), ConfigError);
}

TEST_CASE("newton: affine system converges in one step") {
  Eigen::MatrixXd a(2, 2);
  a << 4, 1, 1, 3;
  const Affine sys(a.sparseView(), Eigen::Vector2d(1, 2));
  const auto r = newton_solve(sys, Vector::Zero(2), NewtonConfig{}, LinearSolverKind::direct);
  CHECK(r.iterations == 1);
  CHECK((a * r.x - Eigen::Vector2d(1, 2)).norm() < 1e-12);
}

TEST_CASE("newton: quadratic convergence to square roots") {
  const Squares sys(Vector::Constant(3, 4.0));
  const auto r = newton_solve(sys, Vector::Constant(3, 3.0), NewtonConfig{},
                              LinearSolverKind::direct);
  CHECK((r.x - Vector::Constant(3, 2.0)).norm() < 1e-9);
  CHECK(r.iterations <= 6);
  CHECK(r.final_residual <= 1e-10 * r.initial_residual);

  NewtonConfig tight;
  tight.max_iter = 1;
  CHECK_THROWS_AS(newton_solve(sys, Vector::Constant(3, 3.0), tight, LinearSolverKind::direct),
                  ConvergenceError);
  // No saddle structure for the block solver.
  CHECK_THROWS_AS(newton_solve(sys, Vector::Constant(3, 3.0), NewtonConfig{},
                               LinearSolverKind::block_preconditioned),
                  LinearAlgebraError);
}

TEST_CASE("B = 0 is a fixed point of every scheme") {
  const auto ops = small_ops();
  for (auto k : kAll) {
    const Stepper st(ops, k);
    SchemeState s = st.initial_state(Vector::Zero(ops->hdiv->size()));
    const auto rep = st.advance(s, 1.0, 1.0);
    CHECK(rep.substeps == 1);
    CHECK(s.B.norm() == 0.0);
    CHECK(s.t == 1.0);
  }
}

TEST_CASE("jacobians agree with finite differences") {
  const auto ops = small_ops();
  const Vector b = hopf_b(*ops);
  std::mt19937_64 rng(99);
  for (auto k : kAll) {
    const Stepper st(ops, k);
    const SchemeState s = st.initial_state(b);
    for (LmMode mode : {LmMode::full, LmMode::reduced}) {
      if (k != SchemeKind::LagrangeMultiplier && mode == LmMode::reduced) continue;
      const auto sys = st.system(s, 1.0, 1.0, mode);
      Vector x = st.pack(s, mode);
      x += 0.1 * random_vector(x.size(), rng);
      const SparseMatrix jac = sys->jacobian(x);
      for (int i = 0; i < 3; ++i) {
        const Vector v = random_vector(x.size(), rng);
        const double eps = 1e-5;
        const Vector fd = (sys->residual(x + eps * v) - sys->residual(x - eps * v)) / (2 * eps);
        const Vector jv = jac * v;
        CHECK((fd - jv).norm() <= 1e-6 * jv.norm());
      }
    }
  }
}

TEST_CASE("non-conservative step: Gauss law and energy decay") {
  const auto ops = small_ops();
  const Stepper st(ops, SchemeKind::NonConservative);
  SchemeState s = st.initial_state(hopf_b(*ops));
  double e = st.energy_of(s);
  for (int n = 0; n < 3; ++n) {
    const auto rep = step_nonconservative(s, st, {1.0, 1.0, 1});
    CHECK(rep.newton_iters <= 10);
    CHECK(divergence_norm(*ops, s.B) <= 1e-12);
    const double en = st.energy_of(s);
    CHECK(en < e);
    e = en;
  }
  CHECK_THROWS_AS(step_projection(s, st, {1.0, 1.0, 1}), ConfigError);
}

TEST_CASE("projection step: helicity conservation and E-H orthogonality") {
  const auto ops = small_ops();
  const Stepper st(ops, SchemeKind::Projection);
  SchemeState s = st.initial_state(hopf_b(*ops));
  const double h0 = st.helicity_of(s);
  double e = st.energy_of(s);
  for (int n = 0; n < 3; ++n) {
    const auto rep = step_projection(s, st, {1.0, 1.0, 1});
    // Exact up to the Newton tolerance; tiny E on this mesh.
    CHECK(std::abs(rep.eh_inner) <= 1e-10 * rep.e_norm * rep.h_norm);
    CHECK(std::abs(st.helicity_of(s) - h0) <= 1e-10 * std::max(1.0, std::abs(h0)));
    CHECK(st.energy_of(s) <= e);
    e = st.energy_of(s);
  }
}

TEST_CASE("multiplier step: identities in both modes") {
  const auto ops = small_ops();
  StepperOptions opt;
  opt.compare_direct = true;
  const Stepper st(ops, SchemeKind::LagrangeMultiplier, opt);
  SchemeState s = st.initial_state(hopf_b(*ops));
  CHECK((ops->curl * s.A - s.B).norm() <= 1e-10 * s.B.norm());
  const double h0 = s.helicity_ref;
  CHECK(st.select_mode(s) == LmMode::reduced);

  auto rep = step_lagrange(s, st, {1.0, 1.0, 1});
  CHECK(rep.mode == LmMode::reduced);
  CHECK(std::abs(rep.helicity_residual) <= 1e-9);
  CHECK(std::abs(st.helicity_of(s) - h0) <= 1e-10 * std::max(1.0, std::abs(h0)));

  // Force the full system regardless of the energy rate.
  s.last_energy_rate = 0.0;
  REQUIRE(st.select_mode(s) == LmMode::full);
  rep = step_lagrange(s, st, {1.0, 1.0, 1});
  if (!rep.fallback) {
    CHECK(rep.mode == LmMode::full);
    CHECK(std::abs(rep.energy_law_residual) <= 1e-9);
    REQUIRE(rep.block_vs_direct.has_value());
    CHECK(*rep.block_vs_direct <= 1e-9);
    CHECK(rep.worst_schur.iterations <= 2);
  }
  CHECK(std::abs(rep.helicity_residual) <= 1e-9);
  CHECK(std::abs(st.helicity_of(s) - h0) <= 1e-10 * std::max(1.0, std::abs(h0)));
  CHECK(divergence_norm(*ops, s.B) <= 1e-11);
}

TEST_CASE("switching rules") {
  const auto ops = small_ops();
  StepperOptions opt;
  const Stepper mag(ops, SchemeKind::LagrangeMultiplier, opt);
  opt.switch_rule = LmSwitchRule::literal;
  const Stepper lit(ops, SchemeKind::LagrangeMultiplier, opt);
  SchemeState s;
  s.last_energy_rate = -1.0;
  CHECK(mag.select_mode(s) == LmMode::reduced);
  CHECK(lit.select_mode(s) == LmMode::full);
  s.last_energy_rate = -1e-5;
  CHECK(mag.select_mode(s) == LmMode::full);
  CHECK(lit.select_mode(s) == LmMode::full);
  s.last_energy_rate = 1e-3;
  CHECK(mag.select_mode(s) == LmMode::reduced);
  CHECK(lit.select_mode(s) == LmMode::reduced);
}

TEST_CASE("failed steps are retried with smaller substeps or rejected") {
  const auto ops = small_ops();
  StepperOptions opt;
  opt.newton.max_iter = 1;
  opt.max_retries = 0;
  const Stepper strict(ops, SchemeKind::NonConservative, opt);
  SchemeState s = strict.initial_state(hopf_b(*ops));
  const SchemeState before = s;
  CHECK_THROWS_AS(strict.advance(s, 1.0, 1.0), ConvergenceError);
  CHECK(s.t == before.t);
  CHECK((s.B - before.B).norm() == 0.0);

  // Three Newton iterations suffice once the step is small enough.
  opt.newton.max_iter = 3;
  opt.max_retries = 12;
  const Stepper retry(ops, SchemeKind::NonConservative, opt);
  SchemeState r = retry.initial_state(hopf_b(*ops));
  const auto rep = retry.advance(r, 1000.0, 1.0);
  CHECK(rep.substeps > 1);
  CHECK(r.t == doctest::Approx(1000.0));
  CHECK(divergence_norm(*ops, r.B) <= 1e-11);
}

TEST_CASE("states are validated") {
  const auto ops = small_ops();
  const Stepper st(ops, SchemeKind::Projection);
  CHECK_THROWS_AS(st.initial_state(Vector::Zero(3)), PreconditionError);
  SchemeState s = st.initial_state(Vector::Zero(ops->hdiv->size()));
  CHECK_THROWS_AS(st.step(s, 0.0, 1.0), ConfigError);
}
