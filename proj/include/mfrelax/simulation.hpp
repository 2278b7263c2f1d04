#pragma once

#include "mfrelax/diagnostics.hpp"
#include "mfrelax/fields.hpp"
#include "mfrelax/schemes.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

namespace mfrelax {

enum class FieldKind { e3, hopf };
const char *to_string(FieldKind kind);

struct OutputConfig {
  std::string directory = "output";
  /// Sample every `cadence` steps, plus the first and last step of each phase.
  int cadence = 10;
  bool write_csv = true;
  bool write_vtk = true;
};

struct RunConfig {
  SchemeKind scheme = SchemeKind::Projection;
  FieldKind field = FieldKind::hopf;
  int nx = 4, ny = 4, nz = 10;
  double Z = 10.0;
  std::vector<TimePhase> phases;
  double gamma = 9e-5;
  LmSwitchRule switch_rule = LmSwitchRule::magnitude;
  NewtonConfig newton;
  int max_retries = 3;
  int quadrature = 5;
  bool compare_direct = false;
  OutputConfig output;
  std::uint64_t seed = 12345;
  E3Params e3;
  HopfParams hopf;

  void validate() const;
  /// Every key with its resolved value, one `key = value` per line.
  std::string to_text() const;
};

/// Defaults of the benchmark runs for a field: mesh, half height and the
/// two-phase schedule.
RunConfig default_config(SchemeKind scheme, FieldKind field);

/// Parses `key=value` entries separated by newlines or commas; `#` starts a
/// comment. `scheme` and `field` are required, everything else defaults per
/// field. Throws ConfigError naming the offending key.
RunConfig parse_config(std::string_view text);
RunConfig load_config(const std::filesystem::path &path);

/// Per-step log used by the invariant checks.
struct StepLog {
  int step = 0;   // 1-based over the whole run
  int phase = 0;
  DiagnosticsRecord record;
  StepReport report;
};

struct FieldSnapshot {
  double t = 0.0;
  Vector B;  // restricted H0(div) coefficients, background not included
};

struct RunResult {
  RunConfig config;
  std::shared_ptr<const OperatorSet> ops;
  std::optional<Vec3> background;
  DiagnosticsRecord initial;
  std::vector<StepLog> steps;
  std::vector<DiagnosticsRecord> records;  // sampled per cadence
  std::vector<FieldSnapshot> snapshots;
  SchemeState final_state;
};

using ProgressCallback = std::function<void(const StepLog &)>;

/// Mesh, operators and the cleaned initial field of a config.
struct RunSetup {
  std::shared_ptr<const OperatorSet> ops;
  std::optional<Vec3> background;
  Vector B0;
};
RunSetup prepare_run(const RunConfig &cfg);

/// Runs the time loop without touching the file system. A step rejected
/// after all retries throws ConvergenceError with step and phase context.
RunResult simulate(const RunConfig &cfg, const ProgressCallback &progress = {});

/// Writes timeseries.csv, field_<t>.vtk and resolved_config.txt into the
/// configured directory. Throws std::runtime_error naming the path on I/O
/// failure.
void write_outputs(const RunResult &result);

/// simulate + write_outputs. Returns the process exit status.
int run_simulation(const RunConfig &cfg, const ProgressCallback &progress = {});

/// Low-level writers.
void write_csv(const std::filesystem::path &path,
               const std::vector<DiagnosticsRecord> &records);
void write_vtk(const std::filesystem::path &path, const OperatorSet &ops,
               const Vector &b, const std::optional<Vec3> &background);

/// Cell-centred B from restricted face coefficients: per cell, the average
/// of the two opposite face reconstructions for each component.
std::vector<Vec3> cell_centered_field(const OperatorSet &ops, const Vector &b);

/// One invariant evaluated over a run: the worst normalised violation
/// against its tolerance.
struct InvariantCheck {
  std::string name;
  double worst = 0.0;
  double tolerance = 0.0;
  bool passed() const { return worst <= tolerance; }
};

/// Per-step invariants of a run: Gauss law, energy decay, helicity
/// conservation, E-H orthogonality and the multiplier identities, whichever
/// apply to the scheme. With a Poincare constant the Arnold bound
/// |H| <= C_P E is checked too (reported as max |H| / (C_P E)).
std::vector<InvariantCheck> check_invariants(const RunResult &run,
                                             std::optional<double> poincare = {});

} // namespace mfrelax
