#pragma once

#include "mfrelax/feec.hpp"

#include <memory>
#include <optional>

namespace mfrelax {

/// One time sample of the monitored quantities.
struct DiagnosticsRecord {
  double t = 0.0;
  double energy = 0.0;
  double helicity = 0.0;
  double lorentz = 0.0;
  double div_norm = 0.0;
  double lambda_E = 0.0;
  double lambda_H = 0.0;
  /// Absent when B = 0.
  std::optional<double> alpha0;
  int newton_iters = 0;

  std::optional<double> arnold_ratio() const {
    if (energy > 0.0) return std::abs(helicity) / energy;
    return std::nullopt;
  }
};

/// E_h = (B, B).
double energy(const OperatorSet &ops, const Vector &b);

/// |D_div B|_inf over all cells.
double divergence_norm(const OperatorSet &ops, const Vector &b);

/// Discrete curl of an H(div) field into H0(curl): (j, k) = (B, curl k).
class DiscreteCurl {
public:
  explicit DiscreteCurl(const OperatorSet &ops);
  Vector apply(const Vector &b) const;

private:
  struct Impl;
  std::shared_ptr<const Impl> impl_;
};

/// Gauge-fixed vector potential: find A in H0(curl), q in H0^1 with
///
///   (curl A, curl D) + (grad q, D) = (B, curl D)   for all D,
///   (A, grad p) = 0                                for all p.
///
/// For solenoidal B this gives curl A = B. The factorization is reused by
/// poincare_constant.
class PotentialRecovery {
public:
  explicit PotentialRecovery(const OperatorSet &ops);

  /// Throws PreconditionError when |div B|_inf > tol * max(1, |B|).
  Vector recover(const Vector &b, double div_tol = 1e-11) const;
  /// Solve the gauge-constrained curl-curl system for a given edge-space
  /// right-hand side.
  Vector solve_curl_curl(const Vector &edge_rhs) const;

private:
  struct Impl;
  std::shared_ptr<const Impl> impl_;
};

FieldCoefficients recover_potential(const OperatorSet &ops,
                                    const FieldCoefficients &b);

/// H_h = (A, B) for A in H0(curl) and B in H0(div).
double helicity(const OperatorSet &ops, const Vector &a, const Vector &b);
double helicity(const OperatorSet &ops, const FieldCoefficients &a,
                const FieldCoefficients &b);

struct LorentzAlpha {
  double lorentz = 0.0;
  std::optional<double> alpha0;
};

/// |j x B|_{L2} with 3-point Gauss per axis, and alpha0 = (j,B)/(B,B).
LorentzAlpha lorentz_and_alpha(const OperatorSet &ops, const Vector &b,
                               const Vector &j);

/// Discrete Poincare constant of H0(curl) on the complement of gradients:
/// C_P = lambda_min^{-1/2} for curl-curl against the H(curl) mass.
double poincare_constant(const OperatorSet &ops);

struct VariationalResidual {
  double energy = 0.0;
  double helicity = 0.0;
};

/// Central-difference check of dE/dA = 2j and dH/dA = 2B along `direction`.
VariationalResidual variational_check(const OperatorSet &ops, const Vector &a,
                                      const Vector &direction, double eps);

} // namespace mfrelax
