#pragma once

#include "mfrelax/feec.hpp"

#include <array>
#include <cmath>
#include <optional>

namespace mfrelax {

/// Braided field: uniform background plus six Gaussian twists.
struct E3Params {
  double B0 = 1.0;
  double k = 5.0;
  double a = std::sqrt(2.0);
  double l = 2.0;
  std::array<Point, 6> centers{{{1.0, 0.0, -20.0},
                                {-1.0, 0.0, -12.0},
                                {1.0, 0.0, -4.0},
                                {-1.0, 0.0, 4.0},
                                {1.0, 0.0, 12.0},
                                {-1.0, 0.0, 20.0}}};

  void validate() const;
  Vec3 background() const { return {0.0, 0.0, B0}; }
};

/// Knotted field built on the Hopf fibration with winding numbers
/// (omega1, omega2) and scale s.
struct HopfParams {
  double omega1 = 3.0;
  double omega2 = 2.0;
  double s = 1.0;

  void validate() const;
};

Vec3 eval_e3(const Point &x, const E3Params &p);
Vec3 eval_hopf(const Point &x, const HopfParams &p);

/// Validated closures over the analytic fields.
VectorField e3_field(const E3Params &p);
VectorField hopf_field(const HopfParams &p);

/// Projection onto the solenoidal subspace of H0(div): minimizes |B - B~|
/// in L2 subject to div B = 0, with B~ the interpolant. Factorized once.
class DivergenceCleaner {
public:
  explicit DivergenceCleaner(const OperatorSet &ops);
  Vector apply(const Vector &b) const;

private:
  struct Impl;
  std::shared_ptr<const Impl> impl_;
};

/// Interpolate an analytic field into H0(div) and clean it so that the
/// discrete Gauss law holds to roundoff.
///
/// The optional background (constant) vector is subtracted before
/// interpolation. Boundary fluxes are dropped, which enforces B.n = 0.
FieldCoefficients init_divfree_field(const OperatorSet &ops,
                                     const VectorField &analytic,
                                     std::optional<Vec3> subtract_background = {},
                                     int quadrature_points = 5);

} // namespace mfrelax
