#include "mfrelax/fields.hpp"

#include "mfrelax/errors.hpp"
#include "mfrelax/linalg.hpp"

#include <numbers>

namespace mfrelax {

void E3Params::validate() const {
  if (!(a > 0.0)) throw EvaluationError("e3: twist radius a must be positive");
  if (!(l > 0.0)) throw EvaluationError("e3: twist length l must be positive");
}

void HopfParams::validate() const {
  if (omega1 == 0.0 && omega2 == 0.0)
    throw EvaluationError("hopf: winding numbers (omega1, omega2) must not both vanish");
  if (!(s >= 0.0)) throw EvaluationError("hopf: scaling s must be non-negative");
}

Vec3 eval_e3(const Point &x, const E3Params &p) {
  Vec3 b{0.0, 0.0, p.B0};
  const double amp = 2.0 * p.k * p.B0 / p.a;
  for (const auto &c : p.centers) {
    const double dx = x[0] - c[0];
    const double dy = x[1] - c[1];
    const double dz = x[2] - c[2];
    const double g = std::exp(-(dx * dx) / (p.a * p.a) - (dy * dy) / (p.a * p.a) -
                              (dz * dz) / (p.l * p.l));
    b[0] += -amp * dy * g;
    b[1] += amp * dx * g;
  }
  return b;
}

Vec3 eval_hopf(const Point &x, const HopfParams &p) {
  p.validate();
  const double w1 = p.omega1, w2 = p.omega2;
  const double r2 = x[0] * x[0] + x[1] * x[1] + x[2] * x[2];
  const double q = 1.0 + r2;
  const double pre = 4.0 * std::sqrt(p.s) /
                     (std::numbers::pi * q * q * q * std::sqrt(w1 * w1 + w2 * w2));
  return {pre * 2.0 * (w2 * x[1] - w1 * x[0] * x[2]),
          pre * -2.0 * (w2 * x[0] + w1 * x[1] * x[2]),
          pre * w1 * (-1.0 + x[0] * x[0] + x[1] * x[1] - x[2] * x[2])};
}

VectorField e3_field(const E3Params &p) {
  p.validate();
  return [p](const Point &x) { return eval_e3(x, p); };
}

VectorField hopf_field(const HopfParams &p) {
  p.validate();
  return [p](const Point &x) { return eval_hopf(x, p); };
}

struct DivergenceCleaner::Impl {
  Eigen::Index nf = 0;
  Eigen::Index nc = 0;
  SparseMatrix mass;
  std::unique_ptr<DirectSolver> solver;
};

DivergenceCleaner::DivergenceCleaner(const OperatorSet &ops) {
  auto impl = std::make_shared<Impl>();
  const Eigen::Index nf = ops.hdiv->size();
  // The cell divergences of an H0(div) field sum to zero, so one row is
  // redundant; dropping it pins the pressure.
  const Eigen::Index nc = ops.div.rows() - 1;
  impl->nf = nf;
  impl->nc = nc;
  impl->mass = ops.mass_div;
  std::vector<Eigen::Triplet<double>> t;
  for (Eigen::Index c = 0; c < ops.mass_div.outerSize(); ++c)
    for (SparseMatrix::InnerIterator it(ops.mass_div, c); it; ++it)
      t.emplace_back(it.row(), it.col(), it.value());
  for (Eigen::Index c = 0; c < ops.div.outerSize(); ++c)
    for (SparseMatrix::InnerIterator it(ops.div, c); it; ++it) {
      if (it.row() >= nc) continue;
      t.emplace_back(nf + it.row(), it.col(), it.value());
      t.emplace_back(it.col(), nf + it.row(), it.value());
    }
  SparseMatrix k(nf + nc, nf + nc);
  k.setFromTriplets(t.begin(), t.end());
  try {
    impl->solver = std::make_unique<DirectSolver>(k);
  } catch (const LinearAlgebraError &e) {
    throw LinearAlgebraError(std::string("divergence cleaning: ") + e.what());
  }
  impl_ = std::move(impl);
}

Vector DivergenceCleaner::apply(const Vector &b) const {
  Vector rhs = Vector::Zero(impl_->nf + impl_->nc);
  rhs.head(impl_->nf) = impl_->mass * b;
  return impl_->solver->solve(rhs).head(impl_->nf);
}

FieldCoefficients init_divfree_field(const OperatorSet &ops,
                                     const VectorField &analytic,
                                     std::optional<Vec3> subtract_background,
                                     int quadrature_points) {
  VectorField field = analytic;
  if (subtract_background) {
    const Vec3 bg = *subtract_background;
    field = [analytic, bg](const Point &x) {
      Vec3 v = analytic(x);
      return Vec3{v[0] - bg[0], v[1] - bg[1], v[2] - bg[2]};
    };
  }
  const auto interp = interpolate(ops, field, SpaceKind::Hdiv, quadrature_points);
  if (interp.values.norm() == 0.0) return interp;
  try {
    return {SpaceKind::Hdiv, DivergenceCleaner(ops).apply(interp.values)};
  } catch (const LinearAlgebraError &e) {
    throw LinearAlgebraError(std::string("init_divfree_field: ") + e.what());
  }
}

} // namespace mfrelax
