#pragma once

#include "mfrelax/diagnostics.hpp"
#include "mfrelax/feec.hpp"
#include "mfrelax/linalg.hpp"

#include <memory>
#include <optional>
#include <string>
#include <string_view>

namespace mfrelax {

enum class SchemeKind { NonConservative, Projection, LagrangeMultiplier };

const char *to_string(SchemeKind kind);
/// Accepts "nonconservative", "projection", "lagrange".
std::optional<SchemeKind> parse_scheme(std::string_view name);

struct TimePhase {
  double dt = 1.0;
  double tau = 1.0;
  int n_steps = 1;

  void validate() const;
};

struct NewtonConfig {
  double abs_tol = 1e-11;
  double rel_tol = 1e-10;
  int max_iter = 50;
  /// Backtracking on the residual norm.
  bool damping = false;

  void validate() const;
};

/// How the multiplier scheme decides whether to enforce the energy law.
///
/// `magnitude`: full system while |dE/dt| of the last accepted step is
/// below gamma. `literal`: full system while dE/dt < gamma.
enum class LmSwitchRule { magnitude, literal };
enum class LmMode { full, reduced };

/// Fields carried between time steps. Which members are populated depends
/// on the scheme; unused vectors stay empty.
struct SchemeState {
  double t = 0.0;
  Vector B;       // H0(div), at t
  Vector u;       // H0(div)
  Vector E, j;    // H0(curl)
  Vector H;       // H0(curl), projection scheme only
  Vector A;       // H0(curl), multiplier scheme only
  double lambda_E = 0.0;
  double lambda_H = 0.0;
  double helicity_ref = 0.0;
  /// (E^n - E^{n-1}) / dt of the last accepted step.
  std::optional<double> last_energy_rate;
};

/// Residual and Jacobian of one implicit time step.
class NonlinearSystem {
public:
  virtual ~NonlinearSystem() = default;
  virtual Eigen::Index size() const = 0;
  virtual Vector residual(const Vector &x) const = 0;
  virtual SparseMatrix jacobian(const Vector &x) const = 0;
  /// Saddle-point view of the Jacobian for systems with multipliers.
  virtual std::optional<BlockSaddleSystem> saddle(const Vector &) const {
    return std::nullopt;
  }
};

enum class LinearSolverKind { direct, block_preconditioned };

struct NewtonResult {
  Vector x;
  int iterations = 0;
  double initial_residual = 0.0;
  double final_residual = 0.0;
  int max_outer_iterations = 0;
  SchurSolveStats worst_schur;
  /// Largest relative gap between block and monolithic solves, when compared.
  std::optional<double> block_vs_direct;
};

/// Newton iteration to |r(x)| <= max(abs_tol, rel_tol |r(x0)|).
/// Throws ConvergenceError after max_iter iterations.
NewtonResult newton_solve(const NonlinearSystem &system, Vector x0,
                          const NewtonConfig &cfg, LinearSolverKind solver,
                          const SolverConfig &solver_cfg = {},
                          bool compare_direct = false);

struct StepperOptions {
  NewtonConfig newton;
  SolverConfig solver;
  double gamma = 9e-5;
  LmSwitchRule switch_rule = LmSwitchRule::magnitude;
  /// Number of times a failed step is split into two halves.
  int max_retries = 3;
  /// Compare every block solve against a monolithic direct solve.
  bool compare_direct = false;
};

struct StepReport {
  double dt = 0.0;
  int substeps = 1;
  int newton_iters = 0;
  double residual_norm = 0.0;

  // Multiplier scheme.
  LmMode mode = LmMode::reduced;
  bool fallback = false;
  std::string fallback_reason;
  double energy_law_residual = 0.0;
  double helicity_residual = 0.0;
  int max_outer_iterations = 0;
  SchurSolveStats worst_schur;
  std::optional<double> block_vs_direct;

  // Projection scheme: (E, H) and the norms of E and H at the half step.
  double eh_inner = 0.0;
  double e_norm = 0.0;
  double h_norm = 0.0;
};

/// Time stepper for one scheme on a fixed operator set.
class Stepper {
public:
  Stepper(std::shared_ptr<const OperatorSet> ops, SchemeKind kind,
          StepperOptions options = {});
  ~Stepper();
  Stepper(Stepper &&) noexcept;

  SchemeKind kind() const { return kind_; }
  const OperatorSet &ops() const { return *ops_; }
  const StepperOptions &options() const { return options_; }

  /// Consistent starting state from a solenoidal B in H0(div). The
  /// multiplier scheme recovers a gauge-fixed potential A with curl A = B.
  SchemeState initial_state(const Vector &b) const;

  /// One implicit step. On failure the state is left untouched and the
  /// error propagates.
  StepReport step(SchemeState &state, double dt, double tau) const;
  /// step() with the retry policy: a failed step is split into halves, up to
  /// options().max_retries levels deep.
  StepReport advance(SchemeState &state, double dt, double tau) const;

  /// Mode the multiplier scheme would use for the next step.
  LmMode select_mode(const SchemeState &state) const;

  /// Nonlinear system of the next step and its packed initial guess.
  std::unique_ptr<NonlinearSystem> system(const SchemeState &state, double dt,
                                          double tau,
                                          LmMode mode = LmMode::full) const;
  Vector pack(const SchemeState &state, LmMode mode = LmMode::full) const;

  /// Energy and helicity of a state. Helicity uses the evolved potential
  /// for the multiplier scheme and a recovered potential otherwise.
  double energy_of(const SchemeState &state) const;
  double helicity_of(const SchemeState &state) const;
  /// curl B in H0(curl) at the state's time level.
  Vector current_of(const SchemeState &state) const;

private:
  struct Impl;
  std::shared_ptr<const OperatorSet> ops_;
  SchemeKind kind_;
  StepperOptions options_;
  std::unique_ptr<Impl> impl_;

  StepReport step_lm(SchemeState &state, double dt, double tau, LmMode mode) const;
};

StepReport step_nonconservative(SchemeState &state, const Stepper &stepper,
                                const TimePhase &phase);
StepReport step_projection(SchemeState &state, const Stepper &stepper,
                           const TimePhase &phase);
StepReport step_lagrange(SchemeState &state, const Stepper &stepper,
                         const TimePhase &phase);

} // namespace mfrelax
