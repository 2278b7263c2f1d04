#include "mfrelax/diagnostics.hpp"

#include "mfrelax/errors.hpp"
#include "mfrelax/linalg.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/SparseCholesky>

#include <random>
#include <sstream>

namespace mfrelax {

double energy(const OperatorSet &ops, const Vector &b) {
  return b.dot(ops.mass_div * b);
}

double divergence_norm(const OperatorSet &ops, const Vector &b) {
  if (b.size() == 0) return 0.0;
  return (ops.div * b).cwiseAbs().maxCoeff();
}

struct DiscreteCurl::Impl {
  const OperatorSet *ops;
  SparseMatrix rhs_map;  // curl^T Md
  Eigen::SimplicialLDLT<SparseMatrix> mass;
};

DiscreteCurl::DiscreteCurl(const OperatorSet &ops) {
  auto impl = std::make_shared<Impl>();
  impl->ops = &ops;
  impl->rhs_map = ops.curl.transpose() * ops.mass_div;
  impl->mass.compute(ops.mass_curl);
  if (impl->mass.info() != Eigen::Success)
    throw LinearAlgebraError("discrete curl: H(curl) mass factorization failed");
  impl_ = std::move(impl);
}

Vector DiscreteCurl::apply(const Vector &b) const {
  const Vector rhs = impl_->rhs_map * b;
  Vector j = impl_->mass.solve(rhs);
  j += impl_->mass.solve(rhs - impl_->ops->mass_curl * j);
  return j;
}

struct PotentialRecovery::Impl {
  const OperatorSet *ops;
  Eigen::Index ne = 0, nv = 0;
  SparseMatrix rhs_map;  // curl^T Md
  std::unique_ptr<DirectSolver> solver;
};

PotentialRecovery::PotentialRecovery(const OperatorSet &ops) {
  auto impl = std::make_shared<Impl>();
  impl->ops = &ops;
  impl->ne = ops.hcurl->size();
  impl->nv = ops.h1->size();
  impl->rhs_map = ops.curl.transpose() * ops.mass_div;
  const SparseMatrix kcc = impl->rhs_map * ops.curl;
  const SparseMatrix mg = ops.mass_curl * ops.grad;
  std::vector<Eigen::Triplet<double>> t;
  for (Eigen::Index c = 0; c < kcc.outerSize(); ++c)
    for (SparseMatrix::InnerIterator it(kcc, c); it; ++it)
      t.emplace_back(it.row(), it.col(), it.value());
  for (Eigen::Index c = 0; c < mg.outerSize(); ++c)
    for (SparseMatrix::InnerIterator it(mg, c); it; ++it) {
      t.emplace_back(it.row(), impl->ne + it.col(), it.value());
      t.emplace_back(impl->ne + it.col(), it.row(), it.value());
    }
  const Eigen::Index n = impl->ne + impl->nv;
  SparseMatrix k(n, n);
  k.setFromTriplets(t.begin(), t.end());
  if (n > 0) impl->solver = std::make_unique<DirectSolver>(k);
  impl_ = std::move(impl);
}

Vector PotentialRecovery::solve_curl_curl(const Vector &edge_rhs) const {
  if (impl_->ne == 0) return Vector::Zero(0);
  Vector rhs = Vector::Zero(impl_->ne + impl_->nv);
  rhs.head(impl_->ne) = edge_rhs;
  return impl_->solver->solve(rhs).head(impl_->ne);
}

Vector PotentialRecovery::recover(const Vector &b, double div_tol) const {
  const double dn = divergence_norm(*impl_->ops, b);
  const double scale = std::max(1.0, std::sqrt(energy(*impl_->ops, b)));
  if (dn > div_tol * scale) {
    std::ostringstream msg;
    msg << "recover_potential: field is not solenoidal (|div B|_inf = " << dn << ")";
    throw PreconditionError(msg.str());
  }
  return solve_curl_curl(impl_->rhs_map * b);
}

FieldCoefficients recover_potential(const OperatorSet &ops,
                                    const FieldCoefficients &b) {
  if (b.space != SpaceKind::Hdiv)
    throw PreconditionError("recover_potential: input must be an H(div) field");
  return {SpaceKind::Hcurl, PotentialRecovery(ops).recover(b.values)};
}

double helicity(const OperatorSet &ops, const Vector &a, const Vector &b) {
  return a.dot(ops.mass_curl_div * b);
}

double helicity(const OperatorSet &ops, const FieldCoefficients &a,
                const FieldCoefficients &b) {
  if (a.space != SpaceKind::Hcurl || b.space != SpaceKind::Hdiv)
    throw PreconditionError("helicity: expects (Hcurl, Hdiv) arguments, got (" +
                            std::string(to_string(a.space)) + ", " +
                            to_string(b.space) + ")");
  return helicity(ops, a.values, b.values);
}

LorentzAlpha lorentz_and_alpha(const OperatorSet &ops, const Vector &b,
                               const Vector &j) {
  const auto hs = ops.mesh->spacing();
  const CellTabulation tab({hs[0], hs[1], hs[2]}, 3);
  const auto dofs = build_cell_dofs(ops);
  double acc = 0.0;
  for (std::size_t c = 0; c < dofs.edges.size(); ++c) {
    std::array<double, 12> jc{};
    std::array<double, 6> bc{};
    for (int e = 0; e < 12; ++e)
      if (dofs.edges[c][e] >= 0) jc[e] = j[dofs.edges[c][e]];
    for (int f = 0; f < 6; ++f)
      if (dofs.faces[c][f] >= 0) bc[f] = b[dofs.faces[c][f]];
    for (std::size_t q = 0; q < tab.size(); ++q) {
      const Vec3 jv = tab.edge_field(q, jc.data());
      const Vec3 bv = tab.face_field(q, bc.data());
      const Vec3 x{jv[1] * bv[2] - jv[2] * bv[1], jv[2] * bv[0] - jv[0] * bv[2],
                   jv[0] * bv[1] - jv[1] * bv[0]};
      acc += tab.weights[q] * (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]);
    }
  }
  LorentzAlpha out;
  out.lorentz = std::sqrt(acc);
  const double bb = energy(ops, b);
  if (bb > 0.0) out.alpha0 = helicity(ops, j, b) / bb;
  return out;
}

double poincare_constant(const OperatorSet &ops) {
  const Eigen::Index ne = ops.hcurl->size();
  const Eigen::Index dim = ne - ops.h1->size();
  if (dim <= 0)
    throw PreconditionError("poincare_constant: mesh has no interior curl modes");
  const PotentialRecovery rec(ops);
  const SparseMatrix kcc = ops.curl.transpose() * ops.mass_div * ops.curl;
  const SparseMatrix &mc = ops.mass_curl;

  // Inverse subspace iteration with Rayleigh-Ritz. The saddle solve maps any
  // right-hand side into the gradient-orthogonal complement, which deflates
  // the curl-free kernel.
  const Eigen::Index p = std::min<Eigen::Index>(8, dim);
  std::mt19937_64 rng(12345);
  std::normal_distribution<double> normal;
  Eigen::MatrixXd x(ne, p);
  for (Eigen::Index i = 0; i < ne; ++i)
    for (Eigen::Index k = 0; k < p; ++k) x(i, k) = normal(rng);

  double lambda = std::numeric_limits<double>::infinity();
  for (int it = 0; it < 2000; ++it) {
    Eigen::MatrixXd y(ne, p);
    for (Eigen::Index k = 0; k < p; ++k) y.col(k) = rec.solve_curl_curl(mc * x.col(k));
    const Eigen::MatrixXd ks = y.transpose() * (kcc * y);
    const Eigen::MatrixXd ms = y.transpose() * (mc * y);
    Eigen::GeneralizedSelfAdjointEigenSolver<Eigen::MatrixXd> ritz(
        0.5 * (ks + ks.transpose()), 0.5 * (ms + ms.transpose()));
    if (ritz.info() != Eigen::Success)
      throw ConvergenceError("poincare_constant: Rayleigh-Ritz step failed");
    x = y * ritz.eigenvectors();
    const double next = ritz.eigenvalues()[0];
    const bool done = std::abs(next - lambda) <= 1e-14 * std::abs(next);
    lambda = next;
    if (done && it > 3) return 1.0 / std::sqrt(lambda);
  }
  throw ConvergenceError("poincare_constant: inverse iteration stagnated");
}

VariationalResidual variational_check(const OperatorSet &ops, const Vector &a,
                                      const Vector &direction, double eps) {
  auto energy_of = [&](const Vector &v) { return energy(ops, ops.curl * v); };
  auto helicity_of = [&](const Vector &v) { return helicity(ops, v, ops.curl * v); };
  const Vector ap = a + eps * direction;
  const Vector am = a - eps * direction;
  const double de = (energy_of(ap) - energy_of(am)) / (2.0 * eps);
  const double dh = (helicity_of(ap) - helicity_of(am)) / (2.0 * eps);

  const Vector b = ops.curl * a;
  const Vector j = DiscreteCurl(ops).apply(b);
  VariationalResidual out;
  out.energy = std::abs(de - 2.0 * direction.dot(ops.mass_curl * j));
  out.helicity = std::abs(dh - 2.0 * direction.dot(ops.mass_curl_div * b));
  return out;
}

} // namespace mfrelax
