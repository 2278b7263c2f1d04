// Command-line driver: run, check, compare.

#include "mfrelax/errors.hpp"
#include "mfrelax/simulation.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <future>
#include <iostream>

using namespace mfrelax;

namespace {

RunConfig build_config(const std::string &file, const std::vector<std::string> &sets) {
  std::string text;
  if (!file.empty()) {
    std::ifstream in(file);
    if (!in) throw ConfigError("cannot read config file '" + file + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    text = ss.str();
  }
  for (const auto &s : sets) text += "\n" + s;
  return parse_config(text);
}

ProgressCallback progress_printer(bool quiet, const std::string &tag = "") {
  if (quiet) return {};
  return [tag](const StepLog &s) {
    const auto &r = s.record;
    std::fprintf(stderr, "%sstep %4d  t=%-10.6g E=%.10e H=%.10e |div B|=%.2e newton=%d%s%s\n",
                 tag.c_str(), s.step, r.t, r.energy, r.helicity, r.div_norm,
                 r.newton_iters,
                 s.report.mode == LmMode::full ? " full" : (s.report.fallback ? " fallback: " : ""),
                 s.report.fallback_reason.c_str());
  };
}

int cmd_run(const std::string &file, const std::vector<std::string> &sets, bool quiet) {
  const RunConfig cfg = build_config(file, sets);
  const int status = run_simulation(cfg, progress_printer(quiet));
  std::printf("outputs written to %s\n", cfg.output.directory.c_str());
  return status;
}

int cmd_check(const std::string &file, const std::vector<std::string> &sets, int steps,
              bool arnold) {
  RunConfig cfg = build_config(file, sets);
  if (steps > 0) {
    // Keep the schedule but stop after `steps` steps.
    std::vector<TimePhase> cut;
    int left = steps;
    for (auto p : cfg.phases) {
      if (left == 0) break;
      p.n_steps = std::min(p.n_steps, left);
      left -= p.n_steps;
      cut.push_back(p);
    }
    cfg.phases = cut;
  }
  const RunResult run = simulate(cfg);
  std::optional<double> cp;
  if (arnold) cp = poincare_constant(*run.ops);
  bool ok = true;
  for (const auto &c : check_invariants(run, cp)) {
    std::printf("%-24s %s  worst=%.3e  tol=%.1e\n", c.name.c_str(),
                c.passed() ? "PASS" : "FAIL", c.worst, c.tolerance);
    ok = ok && c.passed();
  }
  return ok ? 0 : 1;
}

int cmd_compare(const std::string &field, const std::string &out,
                const std::vector<std::string> &sets, bool quiet) {
  std::vector<std::future<RunResult>> jobs;
  const char *schemes[] = {"nonconservative", "projection", "lagrange"};
  for (const char *s : schemes) {
    std::vector<std::string> all = sets;
    all.push_back(std::string("scheme=") + s);
    all.push_back("field=" + field);
    all.push_back("output_dir=" + out + "/" + s);
    const RunConfig cfg = build_config("", all);
    jobs.push_back(std::async(std::launch::async, [cfg, quiet, s] {
      RunResult r = simulate(cfg, progress_printer(quiet, std::string("[") + s + "] "));
      write_outputs(r);
      return r;
    }));
  }
  std::vector<RunResult> runs;
  for (auto &j : jobs) runs.push_back(j.get());

  const std::string path = out + "/summary.csv";
  std::ofstream o(path);
  if (!o) throw std::runtime_error("cannot open '" + path + "' for writing");
  o << "scheme,t_final,energy_initial,energy_final,helicity_initial,helicity_final,"
       "max_div_norm\n";
  char line[512];
  for (std::size_t i = 0; i < runs.size(); ++i) {
    const auto &r = runs[i];
    const auto &last = r.steps.empty() ? r.initial : r.steps.back().record;
    double div = r.initial.div_norm;
    for (const auto &s : r.steps) div = std::max(div, s.record.div_norm);
    std::snprintf(line, sizeof line, "%s,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", schemes[i],
                  last.t, r.initial.energy, last.energy, r.initial.helicity, last.helicity,
                  div);
    o << line;
    std::fputs(line, stdout);
  }
  return 0;
}

} // namespace

int main(int argc, char **argv) {
  CLI::App app{"Magneto-frictional relaxation with structure-preserving finite elements"};
  app.require_subcommand(1);

  std::string file;
  std::vector<std::string> sets;
  bool quiet = false;

  auto *run = app.add_subcommand("run", "execute a config");
  run->add_option("config", file, "key=value config file (optional with --set)");
  run->add_option("--set", sets, "override a key (key=value), repeatable");
  run->add_flag("-q,--quiet", quiet, "no per-step log");

  int steps = 10;
  bool arnold = false;
  auto *check = app.add_subcommand("check", "run N steps and check the invariants");
  check->add_option("config", file, "key=value config file (optional with --set)");
  check->add_option("--set", sets, "override a key (key=value), repeatable");
  check->add_option("-n,--steps", steps, "number of steps (0 = full schedule)");
  check->add_flag("--arnold", arnold, "also check |H| <= C_P E");

  std::string field = "hopf";
  std::string out = "compare";
  auto *compare = app.add_subcommand("compare", "run all three schemes on one field");
  compare->add_option("--field", field, "e3 or hopf")->check(CLI::IsMember({"e3", "hopf"}));
  compare->add_option("-o,--output", out, "output directory");
  compare->add_option("--set", sets, "override a key (key=value), repeatable");
  compare->add_flag("-q,--quiet", quiet, "no per-step log");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) return cmd_run(file, sets, quiet);
    if (*check) return cmd_check(file, sets, steps, arnold);
    if (*compare) return cmd_compare(field, out, sets, quiet);
  } catch (const ConfigError &e) {
    std::fprintf(stderr, "configuration error: %s\n", e.what());
    return 2;
  } catch (const std::exception &e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
