// Acceptance runs. One PASS/FAIL line per criterion; exit status 1 if any fail.

#include "mfrelax/diagnostics.hpp"
#include "mfrelax/simulation.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <map>
#include <random>
#include <string>

using namespace mfrelax;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

int failures = 0;

void report(int id, bool ok, const std::string &detail) {
  std::printf("criterion %2d: %s  %s\n", id, ok ? "PASS" : "FAIL", detail.c_str());
  std::fflush(stdout);
  if (!ok) ++failures;
}

std::string fmt(const char *f, double a) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

std::string fmt(const char *f, double a, double b) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b);
  return buf;
}

std::string fmt(const char *f, double a, double b, double c) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c);
  return buf;
}

bool sparse_zero(const SparseMatrix &m) {
  for (Eigen::Index c = 0; c < m.outerSize(); ++c)
    for (SparseMatrix::InnerIterator it(m, c); it; ++it)
      if (it.value() != 0.0) return false;
  return true;
}

Vector random_vector(Eigen::Index n, std::mt19937_64 &rng) {
  std::normal_distribution<double> d;
  Vector v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = d(rng);
  return v;
}

const InvariantCheck &find(const std::vector<InvariantCheck> &checks, const std::string &name) {
  for (const auto &c : checks)
    if (c.name == name) return c;
  throw std::logic_error("missing invariant " + name);
}

struct Run {
  std::string label;
  RunResult result;
  std::vector<InvariantCheck> checks;
};

Run execute(SchemeKind scheme, FieldKind field, std::optional<double> cp) {
  RunConfig cfg = default_config(scheme, field);
  cfg.compare_direct = scheme == SchemeKind::LagrangeMultiplier && field == FieldKind::hopf;
  cfg.output.write_csv = cfg.output.write_vtk = false;
  const std::string label = std::string(to_string(field)) + "/" + to_string(scheme);
  const auto t0 = Clock::now();
  Run r{label, simulate(cfg), {}};
  r.checks = check_invariants(r.result, cp);
  int max_newton = 0, full = 0, fallback = 0, split = 0;
  for (const auto &s : r.result.steps) {
    max_newton = std::max(max_newton, s.report.newton_iters);
    split += s.report.substeps > 1;
    full += s.report.mode == LmMode::full;
    fallback += s.report.fallback;
  }
  const auto &last = r.result.steps.back().record;
  std::printf("  run %-22s %6.1f s  t=%g  E: %.6g -> %.6g  H: %.6g -> %.6g  "
              "max newton %d  split steps %d",
              label.c_str(), seconds_since(t0), last.t, r.result.initial.energy, last.energy,
              r.result.initial.helicity, last.helicity, max_newton, split);
  if (scheme == SchemeKind::LagrangeMultiplier)
    std::printf("  full-mode steps %d, fallbacks %d", full, fallback);
  std::printf("\n");
  std::fflush(stdout);
  return r;
}

double final_energy(const Run &r) { return r.result.steps.back().record.energy; }

} // namespace

int main() {
  // 1. Exactness of the complex on every mesh from (1,1,1) to (4,4,10).
  {
    const auto t0 = Clock::now();
    bool ok = true;
    int meshes = 0;
    for (int nx = 1; nx <= 4; ++nx)
      for (int ny = 1; ny <= 4; ++ny)
        for (int nz = 1; nz <= 10; ++nz) {
          const auto ops = assemble_incidence_operators(
              build_mesh(CuboidDomain::centered_box(4.0, 10.0), nx, ny, nz));
          ok = ok && sparse_zero(ops.curl_full * ops.grad_full) &&
               sparse_zero(ops.div_full * ops.curl_full);
          ++meshes;
        }
    const double dt = seconds_since(t0);
    report(1, ok && dt < 1.0, fmt("%g meshes, %.3f s (limit 1 s)", meshes, dt));
  }

  const auto hopf_ops = prepare_run(default_config(SchemeKind::Projection, FieldKind::hopf)).ops;
  const double cp = poincare_constant(*hopf_ops);
  std::printf("  discrete Poincare constant (4x4x10): %.12g\n", cp);

  std::map<std::string, Run> runs;
  for (FieldKind f : {FieldKind::hopf, FieldKind::e3})
    for (SchemeKind s : {SchemeKind::NonConservative, SchemeKind::Projection,
                         SchemeKind::LagrangeMultiplier}) {
      const auto cpf = f == FieldKind::hopf ? std::optional<double>(cp) : std::nullopt;
      Run r = execute(s, f, cpf);
      runs.emplace(r.label, std::move(r));
    }
  const auto &hnc = runs.at("hopf/nonconservative");
  const auto &hpr = runs.at("hopf/projection");
  const auto &hlm = runs.at("hopf/lagrange");
  const auto &enc = runs.at("e3/nonconservative");
  const auto &epr = runs.at("e3/projection");
  const auto &elm = runs.at("e3/lagrange");

  // 2, 3. Gauss law and energy decay on all six runs.
  {
    double g = 0.0, d = 0.0;
    for (const auto &[label, r] : runs) {
      g = std::max(g, find(r.checks, "gauss_law").worst);
      d = std::max(d, find(r.checks, "energy_decay").worst);
    }
    report(2, g <= 1e-11, fmt("max |div B|/max(1,|B|) = %.3e (tol 1e-11)", g));
    report(3, d <= 1e-9, fmt("max (E^{n+1}-E^n)/max(1,E^n) = %.3e (tol 1e-9)", d));
  }

  // 4. Helicity conservation, Hopf.
  {
    const double p = find(hpr.checks, "helicity_conservation").worst;
    const double l = find(hlm.checks, "helicity_conservation").worst;
    report(4, std::max(p, l) <= 1e-8,
           fmt("projection %.3e, lagrange %.3e (tol 1e-8)", p, l));
  }

  // 5. Multiplier identities, Hopf.
  {
    const double e = find(hlm.checks, "lm_energy_law").worst;
    const double h = find(hlm.checks, "lm_helicity_law").worst;
    int full = 0;
    for (const auto &s : hlm.result.steps) full += s.report.mode == LmMode::full;
    report(5, e <= 1e-9 && h <= 1e-9,
           fmt("energy law %.3e over %g full-mode steps, helicity law %.3e (tol 1e-9)", e,
               full, h));
  }

  // 6. E-H orthogonality, both fields.
  {
    const double a = find(hpr.checks, "eh_orthogonality").worst;
    const double b = find(epr.checks, "eh_orthogonality").worst;
    report(6, std::max(a, b) <= 1e-12, fmt("hopf %.3e, e3 %.3e (tol 1e-12)", a, b));
  }

  // 7. Arnold inequality.
  {
    const double a = find(hpr.checks, "arnold_bound").worst;
    const double b = find(hlm.checks, "arnold_bound").worst;
    report(7, std::max(a, b) <= 1.0,
           fmt("max |H|/(C_P E): projection %.4f, lagrange %.4f (must be <= 1)", a, b));
  }

  // 8. Hopf end states.
  {
    const double ratio_nc = final_energy(hnc) / hnc.result.initial.energy;
    const double floor = std::abs(hpr.result.initial.helicity) / cp;
    const Vector &bp = hpr.result.final_state.B;
    const Vector &bl = hlm.result.final_state.B;
    const double dist = std::sqrt(energy(*hpr.result.ops, bp - bl) / energy(*hpr.result.ops, bp));
    const bool ok_nc = ratio_nc < 0.05;
    const bool ok_floor = final_energy(hpr) >= floor && final_energy(hlm) >= floor && floor > 0;
    const bool ok_dist = dist >= 1e-2;
    report(8, ok_nc && ok_floor && ok_dist,
           fmt("nonconservative E_final/E_0 = %.4f (< 0.05); ", ratio_nc) +
               fmt("E_final projection %.5g, lagrange %.5g >= |H0|/C_P = %.5g; ",
                   final_energy(hpr), final_energy(hlm), floor) +
               fmt("relative distance %.4f (>= 1e-2)", dist));
  }

  // 9. E3 end states.
  {
    const double p = final_energy(epr);
    const double a = final_energy(enc) / p;
    const double b = final_energy(elm) / p;
    report(9, p > 0.0 && a < 0.1 && b < 0.1,
           fmt("projection E_final %.5g; nonconservative/projection %.4f, ", p, a) +
               fmt("lagrange/projection %.4f (< 0.1)", b));
  }

  // 10. Woltjer variational check.
  {
    const auto t0 = Clock::now();
    std::mt19937_64 rng(20240601);
    double worst = 0.0;
    for (int i = 0; i < 20; ++i) {
      const Vector a = random_vector(hopf_ops->hcurl->size(), rng);
      const Vector d = random_vector(hopf_ops->hcurl->size(), rng);
      const auto r = variational_check(*hopf_ops, a, d, 1e-3);
      const double scale = (1.0 + a.norm()) * (1.0 + a.norm());
      worst = std::max({worst, r.energy / scale, r.helicity / scale});
    }
    const double dt = seconds_since(t0);
    report(10, worst <= 1e-10 && dt < 10.0,
           fmt("max residual/(1+|A|)^2 = %.3e (tol 1e-10), %.2f s", worst, dt));
  }

  // 11. Block solver against direct solves, sampled every 10th step.
  {
    double gap = 0.0;
    int schur = 0, samples = 0, outer = 0;
    for (const auto &s : hlm.result.steps) {
      if (s.step % 10 != 0 || !s.report.block_vs_direct) continue;
      ++samples;
      gap = std::max(gap, *s.report.block_vs_direct);
      schur = std::max(schur, s.report.worst_schur.iterations);
      outer = std::max(outer, s.report.max_outer_iterations);
    }
    report(11, samples > 0 && gap <= 1e-9 && schur <= 2,
           fmt("%g sampled steps, max block-direct gap %.3e (tol 1e-9), ", samples, gap) +
               fmt("max Schur iterations %g (<= 2), max outer iterations %g", schur, outer));
  }

  // 12. Jacobian consistency at a perturbed state.
  {
    std::mt19937_64 rng(777);
    double worst = 0.0;
    const Vector b0 = prepare_run(default_config(SchemeKind::Projection, FieldKind::hopf)).B0;
    for (SchemeKind k : {SchemeKind::NonConservative, SchemeKind::Projection,
                         SchemeKind::LagrangeMultiplier}) {
      const Stepper st(hopf_ops, k);
      const SchemeState s = st.initial_state(b0);
      for (LmMode mode : {LmMode::full, LmMode::reduced}) {
        if (k != SchemeKind::LagrangeMultiplier && mode == LmMode::reduced) continue;
        const auto sys = st.system(s, 1.0, 1.0, mode);
        Vector x = st.pack(s, mode);
        x += 0.01 * random_vector(x.size(), rng);
        const SparseMatrix jac = sys->jacobian(x);
        for (int i = 0; i < 10; ++i) {
          const Vector v = random_vector(x.size(), rng);
          const double eps = 1e-5;
          const Vector fd =
              (sys->residual(x + eps * v) - sys->residual(x - eps * v)) / (2.0 * eps);
          const Vector jv = jac * v;
          worst = std::max(worst, (fd - jv).norm() / jv.norm());
        }
      }
    }
    report(12, worst <= 1e-5, fmt("max relative error %.3e (tol 1e-5)", worst));
  }

  std::printf("%d criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
