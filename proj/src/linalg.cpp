#include "mfrelax/linalg.hpp"

#include <Eigen/OrderingMethods>
#include <Eigen/SparseLU>

#include <cmath>
#include <sstream>

namespace mfrelax {

LinearOperator LinearOperator::identity(Eigen::Index size) {
  return {size, [](const Vector &x) { return x; }};
}

LinearOperator LinearOperator::from_matrix(const SparseMatrix &a) {
  return {a.rows(), [&a](const Vector &x) { return Vector(a * x); }};
}

struct DirectSolver::Impl {
  SparseMatrix a;
  Eigen::SparseLU<SparseMatrix, Eigen::COLAMDOrdering<int>> lu;
  double bound = 1e-12;
};

DirectSolver::DirectSolver(const SparseMatrix &a, double residual_bound)
    : impl_(std::make_unique<Impl>()) {
  if (a.rows() != a.cols())
    throw LinearAlgebraError("direct solve: matrix is not square");
  impl_->a = a;
  impl_->a.makeCompressed();
  impl_->bound = residual_bound;
  impl_->lu.analyzePattern(impl_->a);
  impl_->lu.factorize(impl_->a);
  if (impl_->lu.info() != Eigen::Success) {
    std::ostringstream msg;
    msg << "direct solve: LU factorization failed (" << impl_->lu.lastErrorMessage()
        << ") on a " << a.rows() << "x" << a.cols() << " system";
    throw LinearAlgebraError(msg.str());
  }
}

DirectSolver::~DirectSolver() = default;
DirectSolver::DirectSolver(DirectSolver &&) noexcept = default;
DirectSolver &DirectSolver::operator=(DirectSolver &&) noexcept = default;

Eigen::Index DirectSolver::size() const { return impl_->a.rows(); }

Vector DirectSolver::solve(const Vector &b) const {
  const double bnorm = b.norm();
  if (bnorm == 0.0) return Vector::Zero(b.size());
  Vector x = impl_->lu.solve(b);
  double rel = 0.0;
  for (int sweep = 0; sweep < 4; ++sweep) {
    const Vector r = b - impl_->a * x;
    rel = r.norm() / bnorm;
    if (!std::isfinite(rel)) break;
    if (rel <= 0.05 * impl_->bound) return x;
    x += impl_->lu.solve(r);
  }
  rel = (b - impl_->a * x).norm() / bnorm;
  if (!(rel <= impl_->bound)) {
    // Report the size of the solution relative to the data as a crude
    // conditioning diagnostic.
    std::ostringstream msg;
    msg << "direct solve: relative residual " << rel << " exceeds bound "
        << impl_->bound << " (|x|/|b| = " << x.norm() / bnorm
        << "); matrix is singular or ill-conditioned";
    throw LinearAlgebraError(msg.str());
  }
  return x;
}

Vector solve_direct(const SparseMatrix &a, const Vector &b,
                    double residual_bound) {
  return DirectSolver(a, residual_bound).solve(b);
}

Vector solve_direct(const Eigen::MatrixXd &a, const Vector &b,
                    double residual_bound) {
  return solve_direct(SparseMatrix(a.sparseView()), b, residual_bound);
}

KrylovResult fgmres(const LinearOperator &op, const LinearOperator &precond,
                    const Vector &b, double tol, int maxit) {
  const Eigen::Index n = b.size();
  KrylovResult res;
  res.x = Vector::Zero(n);
  const double beta = b.norm();
  if (beta == 0.0) {
    res.status = KrylovStatus::converged;
    return res;
  }
  const int m = std::max(1, maxit);
  Eigen::MatrixXd v(n, m + 1), z(n, m);
  Eigen::MatrixXd h = Eigen::MatrixXd::Zero(m + 1, m);
  Vector cs = Vector::Zero(m), sn = Vector::Zero(m), g = Vector::Zero(m + 1);
  v.col(0) = b / beta;
  g[0] = beta;

  int k = 0;
  bool lucky = false;
  for (; k < m; ++k) {
    z.col(k) = precond(v.col(k));
    Vector w = op(z.col(k));
    const double wnorm0 = w.norm();
    // Modified Gram-Schmidt with one reorthogonalization pass.
    for (int pass = 0; pass < 2; ++pass)
      for (int i = 0; i <= k; ++i) {
        const double hij = v.col(i).dot(w);
        h(i, k) += hij;
        w -= hij * v.col(i);
      }
    const double hn = w.norm();
    h(k + 1, k) = hn;
    lucky = hn <= 1e-14 * std::max(wnorm0, 1e-300);
    if (!lucky) v.col(k + 1) = w / hn;

    for (int i = 0; i < k; ++i) {
      const double t = cs[i] * h(i, k) + sn[i] * h(i + 1, k);
      h(i + 1, k) = -sn[i] * h(i, k) + cs[i] * h(i + 1, k);
      h(i, k) = t;
    }
    const double denom = std::hypot(h(k, k), h(k + 1, k));
    if (denom == 0.0) {
      cs[k] = 1.0;
      sn[k] = 0.0;
    } else {
      cs[k] = h(k, k) / denom;
      sn[k] = h(k + 1, k) / denom;
    }
    h(k, k) = denom;
    h(k + 1, k) = 0.0;
    g[k + 1] = -sn[k] * g[k];
    g[k] = cs[k] * g[k];
    if (std::abs(g[k + 1]) <= tol * beta || lucky) {
      ++k;
      break;
    }
  }
  const int used = std::min(k, m);
  const Eigen::MatrixXd r = h.topLeftCorner(used, used);
  const Vector y = r.triangularView<Eigen::Upper>().solve(g.head(used));
  res.x = z.leftCols(used) * y;
  res.iterations = used;
  {
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(r);
    const auto &sv = svd.singularValues();
    const double smin = sv[sv.size() - 1];
    res.hessenberg_condition =
        smin > 0.0 ? sv[0] / smin : std::numeric_limits<double>::infinity();
  }
  res.relative_residual = (b - op(res.x)).norm() / beta;
  if (!std::isfinite(res.relative_residual))
    res.status = KrylovStatus::breakdown;
  else if (res.relative_residual <= tol * (1.0 + 1e-8) ||
           (!lucky && std::abs(g[used]) <= tol * beta &&
            res.relative_residual <= 10.0 * tol))
    res.status = KrylovStatus::converged;
  else if (lucky)
    // Invariant subspace reached: the iterate is exact up to roundoff unless
    // the projected operator is itself singular.
    res.status = res.hessenberg_condition < 1e15 ? KrylovStatus::converged
                                                 : KrylovStatus::breakdown;
  else
    res.status = KrylovStatus::not_converged;
  return res;
}

KrylovResult fgmres(const LinearOperator &op, const LinearOperator &precond,
                    const Vector &b, const SolverConfig &cfg) {
  return fgmres(op, precond, b, cfg.outer_tol, cfg.outer_maxit);
}

Vector BlockSaddleSystem::apply(const Vector &x) const {
  const auto n = field_size();
  const auto m = multiplier_size();
  Vector y(n + m);
  y.head(n) = field * x.head(n) + right * x.tail(m);
  y.tail(m) = bottom * x.head(n);
  return y;
}

SparseMatrix BlockSaddleSystem::monolithic() const {
  const auto n = field_size();
  const auto m = multiplier_size();
  std::vector<Eigen::Triplet<double>> t;
  t.reserve(field.nonZeros() + 2 * n * m);
  for (Eigen::Index c = 0; c < field.outerSize(); ++c)
    for (SparseMatrix::InnerIterator it(field, c); it; ++it)
      t.emplace_back(it.row(), it.col(), it.value());
  for (Eigen::Index j = 0; j < m; ++j)
    for (Eigen::Index i = 0; i < n; ++i) {
      if (right(i, j) != 0.0) t.emplace_back(i, n + j, right(i, j));
      if (bottom(j, i) != 0.0) t.emplace_back(n + j, i, bottom(j, i));
    }
  SparseMatrix k(n + m, n + m);
  k.setFromTriplets(t.begin(), t.end());
  return k;
}

BlockPreconditioner::BlockPreconditioner(const BlockSaddleSystem &sys,
                                         const SolverConfig &cfg)
    : sys_(&sys), cfg_(cfg),
      solver_(sys.field, cfg.preconditioner_residual_bound) {}

Vector BlockPreconditioner::apply_schur(const Vector &lambda) const {
  const Vector t = solver_.solve(sys_->right * lambda);
  return -(sys_->bottom * t);
}

Vector BlockPreconditioner::apply(const Vector &r, SchurSolveStats *stats) const {
  const auto n = sys_->field_size();
  const auto m = sys_->multiplier_size();
  const Vector yf = solver_.solve(r.head(n));
  const Vector rl = r.tail(m) - sys_->bottom * yf;

  const LinearOperator schur(m, [this](const Vector &l) { return apply_schur(l); });
  const auto inner =
      fgmres(schur, LinearOperator::identity(m), rl, 1e-14, cfg_.schur_maxit);
  if (stats) {
    stats->iterations = inner.iterations;
    stats->relative_residual = inner.relative_residual;
    stats->condition = inner.hessenberg_condition;
  }
  if (rl.norm() > 0.0 && (inner.hessenberg_condition > cfg_.schur_condition_limit ||
                          inner.status == KrylovStatus::breakdown ||
                          !std::isfinite(inner.relative_residual))) {
    std::ostringstream msg;
    msg << "block preconditioner: multiplier Schur complement is singular"
        << " (condition estimate " << inner.hessenberg_condition << ")";
    throw SchurDegenerateError(msg.str());
  }
  Vector x(n + m);
  x.tail(m) = inner.x;
  x.head(n) = yf - solver_.solve(sys_->right * inner.x);
  return x;
}

BlockSolveResult solve_block_system(const BlockSaddleSystem &sys,
                                    const Vector &rhs, const SolverConfig &cfg) {
  BlockPreconditioner pre(sys, cfg);
  BlockSolveResult out;
  const LinearOperator op(sys.size(), [&sys](const Vector &x) { return sys.apply(x); });
  const LinearOperator prec(sys.size(), [&](const Vector &r) {
    SchurSolveStats st;
    Vector y = pre.apply(r, &st);
    auto &w = out.worst_schur;
    w.iterations = std::max(w.iterations, st.iterations);
    w.relative_residual = std::max(w.relative_residual, st.relative_residual);
    w.condition = std::max(w.condition, st.condition);
    return y;
  });
  auto res = fgmres(op, prec, rhs, cfg);
  if (!res.converged()) {
    std::ostringstream msg;
    msg << "block solve: FGMRES "
        << (res.status == KrylovStatus::breakdown ? "broke down" : "did not converge")
        << " after " << res.iterations << " iterations (relative residual "
        << res.relative_residual << ")";
    throw LinearAlgebraError(msg.str());
  }
  out.x = std::move(res.x);
  out.outer_iterations = res.iterations;
  out.relative_residual = res.relative_residual;
  return out;
}

} // namespace mfrelax
