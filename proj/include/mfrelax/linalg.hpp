#pragma once

#include "mfrelax/errors.hpp"
#include "mfrelax/feec.hpp"

#include <Eigen/Dense>

#include <functional>
#include <memory>

namespace mfrelax {

struct SolverConfig {
  double outer_tol = 1e-10;
  int outer_maxit = 200;
  int schur_maxit = 2;
  /// Relative residual a direct solve must reach (after refinement).
  double direct_residual_bound = 1e-12;
  /// Same for the field-block solve inside the block preconditioner; the
  /// outer FGMRES absorbs the remaining error.
  double preconditioner_residual_bound = 1e-8;
  /// Schur blocks whose condition estimate exceeds this are treated as
  /// degenerate.
  double schur_condition_limit = 1e13;
};

/// Square linear map given by a matrix-vector product.
class LinearOperator {
public:
  using Apply = std::function<Vector(const Vector &)>;

  LinearOperator(Eigen::Index size, Apply apply)
      : size_(size), apply_(std::move(apply)) {}

  static LinearOperator identity(Eigen::Index size);
  /// Wraps a reference; the matrix must outlive the operator.
  static LinearOperator from_matrix(const SparseMatrix &a);

  Eigen::Index size() const { return size_; }
  Vector operator()(const Vector &x) const { return apply_(x); }

private:
  Eigen::Index size_;
  Apply apply_;
};

/// Sparse LU with iterative refinement. Factorization is immutable after
/// construction; solve() may be called concurrently.
class DirectSolver {
public:
  explicit DirectSolver(const SparseMatrix &a, double residual_bound = 1e-12);
  ~DirectSolver();
  DirectSolver(DirectSolver &&) noexcept;
  DirectSolver &operator=(DirectSolver &&) noexcept;

  Eigen::Index size() const;
  /// Throws LinearAlgebraError if the residual bound cannot be met.
  Vector solve(const Vector &b) const;

private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

Vector solve_direct(const SparseMatrix &a, const Vector &b,
                    double residual_bound = 1e-12);
Vector solve_direct(const Eigen::MatrixXd &a, const Vector &b,
                    double residual_bound = 1e-12);

enum class KrylovStatus { converged, not_converged, breakdown };

struct KrylovResult {
  Vector x;
  int iterations = 0;
  double relative_residual = 0.0;
  KrylovStatus status = KrylovStatus::not_converged;
  /// Condition estimate of the final Hessenberg block; used by the Schur
  /// solve to detect degenerate multiplier systems.
  double hessenberg_condition = 1.0;

  bool converged() const { return status == KrylovStatus::converged; }
};

/// Right-preconditioned flexible GMRES without restart, x0 = 0.
///
/// Stops when |r_k| <= tol |b| or the Krylov space becomes invariant. An
/// invariant space counts as converged unless the projected Hessenberg
/// matrix is numerically singular (`breakdown`); running out of iterations
/// gives `not_converged` with the best iterate.
KrylovResult fgmres(const LinearOperator &op, const LinearOperator &precond,
                    const Vector &b, double tol, int maxit);
KrylovResult fgmres(const LinearOperator &op, const LinearOperator &precond,
                    const Vector &b, const SolverConfig &cfg);

/// Newton saddle system [A B; C 0] with one or two multipliers.
struct BlockSaddleSystem {
  SparseMatrix field;       // A: n x n
  Eigen::MatrixXd right;    // B: n x m
  Eigen::MatrixXd bottom;   // C: m x n

  Eigen::Index field_size() const { return field.rows(); }
  Eigen::Index multiplier_size() const { return right.cols(); }
  Eigen::Index size() const { return field_size() + multiplier_size(); }

  Vector apply(const Vector &x) const;
  /// The assembled monolithic matrix, for direct reference solves.
  SparseMatrix monolithic() const;
};

/// Raised when the Schur complement of the multiplier block is numerically
/// singular (j x B -> 0 near a steady state).
class SchurDegenerateError : public LinearAlgebraError {
public:
  using LinearAlgebraError::LinearAlgebraError;
};

struct SchurSolveStats {
  int iterations = 0;
  double relative_residual = 0.0;
  double condition = 1.0;
};

/// Full block factorization preconditioner
///
///   P^{-1} = [I -A^{-1}B; 0 I] [A^{-1} 0; 0 S^{-1}] [I 0; -C A^{-1} I],
///   S = -C A^{-1} B.
///
/// A is factorized once; S is applied matrix-free and inverted with GMRES
/// capped at `schur_maxit` iterations.
class BlockPreconditioner {
public:
  BlockPreconditioner(const BlockSaddleSystem &sys, const SolverConfig &cfg);

  Vector apply(const Vector &r, SchurSolveStats *stats = nullptr) const;
  Vector apply_schur(const Vector &lambda) const;
  const DirectSolver &field_solver() const { return solver_; }

private:
  const BlockSaddleSystem *sys_;
  SolverConfig cfg_;
  DirectSolver solver_;
};

struct BlockSolveResult {
  Vector x;
  int outer_iterations = 0;
  double relative_residual = 0.0;
  SchurSolveStats worst_schur;
};

/// FGMRES on the saddle system preconditioned by BlockPreconditioner.
/// Throws LinearAlgebraError on non-convergence, SchurDegenerateError on a
/// singular multiplier block.
BlockSolveResult solve_block_system(const BlockSaddleSystem &sys,
                                    const Vector &rhs, const SolverConfig &cfg);

} // namespace mfrelax
