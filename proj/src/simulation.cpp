#include "mfrelax/simulation.hpp"

#include "mfrelax/errors.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

namespace mfrelax {

const char *to_string(FieldKind kind) {
  return kind == FieldKind::e3 ? "e3" : "hopf";
}

namespace {

std::string fmt17(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string_view trim(std::string_view s) {
  const auto ws = " \t\r\n";
  const auto b = s.find_first_not_of(ws);
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(ws);
  return s.substr(b, e - b + 1);
}

double parse_double(std::string_view key, std::string_view v) {
  double out = 0.0;
  const auto *end = v.data() + v.size();
  const auto res = std::from_chars(v.data(), end, out);
  if (v.empty() || res.ec != std::errc() || res.ptr != end)
    throw ConfigError("config key '" + std::string(key) + "': expected a number, got '" +
                      std::string(v) + "'");
  return out;
}

long long parse_int(std::string_view key, std::string_view v) {
  long long out = 0;
  const auto *end = v.data() + v.size();
  const auto res = std::from_chars(v.data(), end, out);
  if (v.empty() || res.ec != std::errc() || res.ptr != end)
    throw ConfigError("config key '" + std::string(key) + "': expected an integer, got '" +
                      std::string(v) + "'");
  return out;
}

bool parse_bool(std::string_view key, std::string_view v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError("config key '" + std::string(key) + "': expected a boolean, got '" +
                    std::string(v) + "'");
}

// "dt:tau:steps" items separated by whitespace or ';'.
std::vector<TimePhase> parse_phases(std::string_view key, std::string_view v) {
  std::vector<TimePhase> out;
  std::string text(v);
  std::replace(text.begin(), text.end(), ';', ' ');
  std::istringstream in(text);
  std::string item;
  while (in >> item) {
    const auto c1 = item.find(':');
    const auto c2 = c1 == std::string::npos ? c1 : item.find(':', c1 + 1);
    if (c2 == std::string::npos)
      throw ConfigError("config key '" + std::string(key) +
                        "': expected dt:tau:steps, got '" + item + "'");
    std::string_view s(item);
    TimePhase p;
    p.dt = parse_double(key, s.substr(0, c1));
    p.tau = parse_double(key, s.substr(c1 + 1, c2 - c1 - 1));
    p.n_steps = static_cast<int>(parse_int(key, s.substr(c2 + 1)));
    out.push_back(p);
  }
  if (out.empty())
    throw ConfigError("config key '" + std::string(key) + "': at least one phase required");
  return out;
}

const std::vector<std::string> &known_keys() {
  static const std::vector<std::string> keys = {
      "scheme", "field", "nx", "ny", "nz", "Z", "phases", "gamma", "lm_switch",
      "newton_abs_tol", "newton_rel_tol", "newton_max_iter", "newton_damping",
      "max_retries", "quadrature", "compare_direct", "output_dir", "cadence",
      "write_csv", "write_vtk", "seed", "e3_B0", "e3_k", "e3_a", "e3_l",
      "hopf_omega1", "hopf_omega2", "hopf_s"};
  return keys;
}

} // namespace

RunConfig default_config(SchemeKind scheme, FieldKind field) {
  RunConfig c;
  c.scheme = scheme;
  c.field = field;
  if (field == FieldKind::hopf) {
    c.nx = 4, c.ny = 4, c.nz = 10;
    c.Z = 10.0;
    // 100 warm-up steps to t=100, then coarse steps to t=10000.
    c.phases = {{1.0, 1.0, 100}, {100.0, 0.1, 99}};
  } else {
    c.nx = 4, c.ny = 4, c.nz = 24;
    c.Z = 24.0;
    // Warm-up to t=10, then coarse steps to t=10010.
    c.phases = {{0.1, 1.0, 100}, {100.0, 0.1, 100}};
  }
  return c;
}

void RunConfig::validate() const {
  if (nx < 1) throw ConfigError("config key 'nx': must be >= 1");
  if (ny < 1) throw ConfigError("config key 'ny': must be >= 1");
  if (nz < 1) throw ConfigError("config key 'nz': must be >= 1");
  if (!(Z > 0.0)) throw ConfigError("config key 'Z': must be positive");
  if (phases.empty()) throw ConfigError("config key 'phases': at least one phase required");
  for (const auto &p : phases) {
    try {
      p.validate();
    } catch (const ConfigError &e) {
      throw ConfigError(std::string("config key 'phases': ") + e.what());
    }
  }
  if (!(gamma > 0.0)) throw ConfigError("config key 'gamma': must be positive");
  if (!(newton.abs_tol > 0.0)) throw ConfigError("config key 'newton_abs_tol': must be positive");
  if (!(newton.rel_tol > 0.0)) throw ConfigError("config key 'newton_rel_tol': must be positive");
  if (newton.max_iter < 1) throw ConfigError("config key 'newton_max_iter': must be >= 1");
  if (max_retries < 0) throw ConfigError("config key 'max_retries': must be >= 0");
  if (quadrature < 1 || quadrature > 20)
    throw ConfigError("config key 'quadrature': must be in [1, 20]");
  if (output.cadence < 1) throw ConfigError("config key 'cadence': must be >= 1");
  if (output.directory.empty()) throw ConfigError("config key 'output_dir': must not be empty");
  try {
    if (field == FieldKind::e3) e3.validate();
    else hopf.validate();
  } catch (const EvaluationError &e) {
    throw ConfigError(std::string("config key '") +
                      (field == FieldKind::e3 ? "e3_*" : "hopf_*") + "': " + e.what());
  }
}

std::string RunConfig::to_text() const {
  std::ostringstream o;
  o << "scheme = " << mfrelax::to_string(scheme) << '\n';
  o << "field = " << mfrelax::to_string(field) << '\n';
  o << "nx = " << nx << '\n' << "ny = " << ny << '\n' << "nz = " << nz << '\n';
  o << "Z = " << fmt17(Z) << '\n';
  o << "phases =";
  for (const auto &p : phases)
    o << ' ' << fmt17(p.dt) << ':' << fmt17(p.tau) << ':' << p.n_steps;
  o << '\n';
  o << "gamma = " << fmt17(gamma) << '\n';
  o << "lm_switch = " << (switch_rule == LmSwitchRule::magnitude ? "magnitude" : "literal")
    << '\n';
  o << "newton_abs_tol = " << fmt17(newton.abs_tol) << '\n';
  o << "newton_rel_tol = " << fmt17(newton.rel_tol) << '\n';
  o << "newton_max_iter = " << newton.max_iter << '\n';
  o << "newton_damping = " << (newton.damping ? "true" : "false") << '\n';
  o << "max_retries = " << max_retries << '\n';
  o << "quadrature = " << quadrature << '\n';
  o << "compare_direct = " << (compare_direct ? "true" : "false") << '\n';
  o << "output_dir = " << output.directory << '\n';
  o << "cadence = " << output.cadence << '\n';
  o << "write_csv = " << (output.write_csv ? "true" : "false") << '\n';
  o << "write_vtk = " << (output.write_vtk ? "true" : "false") << '\n';
  o << "seed = " << seed << '\n';
  if (field == FieldKind::e3) {
    o << "e3_B0 = " << fmt17(e3.B0) << '\n' << "e3_k = " << fmt17(e3.k) << '\n';
    o << "e3_a = " << fmt17(e3.a) << '\n' << "e3_l = " << fmt17(e3.l) << '\n';
  } else {
    o << "hopf_omega1 = " << fmt17(hopf.omega1) << '\n';
    o << "hopf_omega2 = " << fmt17(hopf.omega2) << '\n';
    o << "hopf_s = " << fmt17(hopf.s) << '\n';
  }
  return o.str();
}

RunConfig parse_config(std::string_view text) {
  std::map<std::string, std::string, std::less<>> kv;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    auto next = text.find_first_of(",\n", pos);
    if (next == std::string_view::npos) next = text.size();
    std::string_view entry = text.substr(pos, next - pos);
    if (const auto hash = entry.find('#'); hash != std::string_view::npos)
      entry = entry.substr(0, hash);
    entry = trim(entry);
    pos = next + 1;
    if (entry.empty()) continue;
    const auto eq = entry.find('=');
    if (eq == std::string_view::npos)
      throw ConfigError("config entry '" + std::string(entry) + "': expected key=value");
    const std::string key(trim(entry.substr(0, eq)));
    const std::string value(trim(entry.substr(eq + 1)));
    const auto &keys = known_keys();
    if (std::find(keys.begin(), keys.end(), key) == keys.end())
      throw ConfigError("config key '" + key + "': unknown key");
    if (kv.count(key)) throw ConfigError("config key '" + key + "': given twice");
    kv[key] = value;
  }

  const auto require = [&](const char *key) -> const std::string & {
    const auto it = kv.find(key);
    if (it == kv.end())
      throw ConfigError(std::string("config key '") + key + "': required but missing");
    return it->second;
  };
  const auto scheme = parse_scheme(require("scheme"));
  if (!scheme)
    throw ConfigError("config key 'scheme': unknown scheme '" + kv["scheme"] +
                      "' (expected nonconservative, projection or lagrange)");
  const std::string &fname = require("field");
  FieldKind field;
  if (fname == "e3") field = FieldKind::e3;
  else if (fname == "hopf") field = FieldKind::hopf;
  else
    throw ConfigError("config key 'field': unknown field '" + fname +
                      "' (expected e3 or hopf)");

  RunConfig c = default_config(*scheme, field);
  for (const auto &[key, v] : kv) {
    if (key == "scheme" || key == "field") continue;
    if (key == "nx") c.nx = static_cast<int>(parse_int(key, v));
    else if (key == "ny") c.ny = static_cast<int>(parse_int(key, v));
    else if (key == "nz") c.nz = static_cast<int>(parse_int(key, v));
    else if (key == "Z") c.Z = parse_double(key, v);
    else if (key == "phases") c.phases = parse_phases(key, v);
    else if (key == "gamma") c.gamma = parse_double(key, v);
    else if (key == "lm_switch") {
      if (v == "magnitude") c.switch_rule = LmSwitchRule::magnitude;
      else if (v == "literal") c.switch_rule = LmSwitchRule::literal;
      else
        throw ConfigError("config key 'lm_switch': expected magnitude or literal, got '" +
                          v + "'");
    } else if (key == "newton_abs_tol") c.newton.abs_tol = parse_double(key, v);
    else if (key == "newton_rel_tol") c.newton.rel_tol = parse_double(key, v);
    else if (key == "newton_max_iter") c.newton.max_iter = static_cast<int>(parse_int(key, v));
    else if (key == "newton_damping") c.newton.damping = parse_bool(key, v);
    else if (key == "max_retries") c.max_retries = static_cast<int>(parse_int(key, v));
    else if (key == "quadrature") c.quadrature = static_cast<int>(parse_int(key, v));
    else if (key == "compare_direct") c.compare_direct = parse_bool(key, v);
    else if (key == "output_dir") c.output.directory = v;
    else if (key == "cadence") c.output.cadence = static_cast<int>(parse_int(key, v));
    else if (key == "write_csv") c.output.write_csv = parse_bool(key, v);
    else if (key == "write_vtk") c.output.write_vtk = parse_bool(key, v);
    else if (key == "seed") {
      const long long s = parse_int(key, v);
      if (s < 0) throw ConfigError("config key 'seed': must be non-negative");
      c.seed = static_cast<std::uint64_t>(s);
    } else if (key.rfind("e3_", 0) == 0 || key.rfind("hopf_", 0) == 0) {
      const bool e3_key = key.rfind("e3_", 0) == 0;
      if (e3_key != (field == FieldKind::e3))
        throw ConfigError("config key '" + key + "': does not apply to field " + fname);
      const double x = parse_double(key, v);
      if (key == "e3_B0") c.e3.B0 = x;
      else if (key == "e3_k") c.e3.k = x;
      else if (key == "e3_a") c.e3.a = x;
      else if (key == "e3_l") c.e3.l = x;
      else if (key == "hopf_omega1") c.hopf.omega1 = x;
      else if (key == "hopf_omega2") c.hopf.omega2 = x;
      else if (key == "hopf_s") c.hopf.s = x;
    }
  }
  c.validate();
  return c;
}

RunConfig load_config(const std::filesystem::path &path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

RunSetup prepare_run(const RunConfig &cfg) {
  cfg.validate();
  RunSetup s;
  const auto mesh =
      build_mesh(CuboidDomain::centered_box(4.0, cfg.Z), cfg.nx, cfg.ny, cfg.nz);
  const auto ops = std::make_shared<const OperatorSet>(assemble_operators(mesh));
  s.ops = ops;
  if (cfg.field == FieldKind::e3) {
    s.background = cfg.e3.background();
    s.B0 = init_divfree_field(*ops, e3_field(cfg.e3), s.background, cfg.quadrature).values;
  } else {
    s.B0 = init_divfree_field(*ops, hopf_field(cfg.hopf), std::nullopt, cfg.quadrature).values;
  }
  return s;
}

namespace {

DiagnosticsRecord make_record(const Stepper &stepper, const SchemeState &s,
                              int newton_iters) {
  const auto &ops = stepper.ops();
  DiagnosticsRecord r;
  r.t = s.t;
  r.energy = energy(ops, s.B);
  r.helicity = stepper.helicity_of(s);
  const auto la = lorentz_and_alpha(ops, s.B, stepper.current_of(s));
  r.lorentz = la.lorentz;
  r.alpha0 = la.alpha0;
  r.div_norm = divergence_norm(ops, s.B);
  r.lambda_E = s.lambda_E;
  r.lambda_H = s.lambda_H;
  r.newton_iters = newton_iters;
  return r;
}

} // namespace

RunResult simulate(const RunConfig &cfg, const ProgressCallback &progress) {
  const RunSetup setup = prepare_run(cfg);
  StepperOptions opt;
  opt.newton = cfg.newton;
  opt.gamma = cfg.gamma;
  opt.switch_rule = cfg.switch_rule;
  opt.max_retries = cfg.max_retries;
  opt.compare_direct = cfg.compare_direct;
  const Stepper stepper(setup.ops, cfg.scheme, opt);

  RunResult out;
  out.config = cfg;
  out.ops = setup.ops;
  out.background = setup.background;
  SchemeState state = stepper.initial_state(setup.B0);
  out.initial = make_record(stepper, state, 0);
  out.records.push_back(out.initial);
  out.snapshots.push_back({state.t, state.B});

  int step = 0;
  for (std::size_t p = 0; p < cfg.phases.size(); ++p) {
    const TimePhase &phase = cfg.phases[p];
    for (int k = 0; k < phase.n_steps; ++k) {
      ++step;
      StepReport rep;
      try {
        rep = stepper.advance(state, phase.dt, phase.tau);
      } catch (const std::runtime_error &e) {
        std::ostringstream msg;
        msg << "step " << step << " (phase " << p + 1 << ", t=" << state.t << "): "
            << e.what();
        throw ConvergenceError(msg.str());
      }
      StepLog log;
      log.step = step;
      log.phase = static_cast<int>(p);
      log.report = rep;
      log.record = make_record(stepper, state, rep.newton_iters);
      const bool sample = step % cfg.output.cadence == 0 || k + 1 == phase.n_steps;
      if (sample) {
        out.records.push_back(log.record);
        out.snapshots.push_back({state.t, state.B});
      }
      if (progress) progress(log);
      out.steps.push_back(std::move(log));
    }
  }
  out.final_state = std::move(state);
  return out;
}

std::vector<Vec3> cell_centered_field(const OperatorSet &ops, const Vector &b) {
  const auto &mesh = *ops.mesh;
  const Vector full = ops.hdiv->extend_vector(b);
  const auto h = mesh.spacing();
  const double area[3] = {h[1] * h[2], h[0] * h[2], h[0] * h[1]};
  std::vector<Vec3> out(static_cast<std::size_t>(mesh.num_cells()));
  for (std::int64_t c = 0; c < mesh.num_cells(); ++c) {
    const auto f = mesh.cell_faces(c);
    for (int d = 0; d < 3; ++d)
      out[c][d] = 0.5 * (full[f[2 * d]] + full[f[2 * d + 1]]) / area[d];
  }
  return out;
}

void write_csv(const std::filesystem::path &path,
               const std::vector<DiagnosticsRecord> &records) {
  if (records.empty()) throw PreconditionError("write_csv: no records");
  std::ofstream o(path, std::ios::binary);
  if (!o) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  o << "t,energy,helicity,lorentz,div_norm,lambda_E,lambda_H,alpha0,newton_iters\n";
  for (const auto &r : records) {
    o << fmt17(r.t) << ',' << fmt17(r.energy) << ',' << fmt17(r.helicity) << ','
      << fmt17(r.lorentz) << ',' << fmt17(r.div_norm) << ',' << fmt17(r.lambda_E) << ','
      << fmt17(r.lambda_H) << ',' << (r.alpha0 ? fmt17(*r.alpha0) : std::string("nan"))
      << ',' << r.newton_iters << '\n';
  }
  if (!o) throw std::runtime_error("write failed for '" + path.string() + "'");
}

void write_vtk(const std::filesystem::path &path, const OperatorSet &ops,
               const Vector &b, const std::optional<Vec3> &background) {
  const auto &mesh = *ops.mesh;
  std::ofstream o(path, std::ios::binary);
  if (!o) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  const auto n = mesh.cells_per_axis();
  o << "# vtk DataFile Version 3.0\n";
  o << "magnetic field B\nASCII\nDATASET UNSTRUCTURED_GRID\n";
  o << "POINTS " << mesh.num_vertices() << " double\n";
  for (int k = 0; k <= n[2]; ++k)
    for (int j = 0; j <= n[1]; ++j)
      for (int i = 0; i <= n[0]; ++i) {
        const auto x = mesh.vertex_coordinates(i, j, k);
        o << fmt17(x[0]) << ' ' << fmt17(x[1]) << ' ' << fmt17(x[2]) << '\n';
      }
  const auto nc = mesh.num_cells();
  o << "CELLS " << nc << ' ' << nc * 9 << '\n';
  constexpr int order[8] = {0, 1, 3, 2, 4, 5, 7, 6};
  for (std::int64_t c = 0; c < nc; ++c) {
    const auto v = mesh.cell_vertices(c);
    o << 8;
    for (int a : order) o << ' ' << v[a];
    o << '\n';
  }
  o << "CELL_TYPES " << nc << '\n';
  for (std::int64_t c = 0; c < nc; ++c) o << "12\n";
  o << "CELL_DATA " << nc << '\n' << "VECTORS B double\n";
  const Vec3 bg = background.value_or(Vec3{0.0, 0.0, 0.0});
  for (const auto &v : cell_centered_field(ops, b))
    o << fmt17(v[0] + bg[0]) << ' ' << fmt17(v[1] + bg[1]) << ' ' << fmt17(v[2] + bg[2])
      << '\n';
  if (!o) throw std::runtime_error("write failed for '" + path.string() + "'");
}

void write_outputs(const RunResult &result) {
  namespace fs = std::filesystem;
  const auto &cfg = result.config;
  const fs::path dir(cfg.output.directory);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec)
    throw std::runtime_error("cannot create output directory '" + dir.string() +
                             "': " + ec.message());
  {
    const fs::path p = dir / "resolved_config.txt";
    std::ofstream o(p, std::ios::binary);
    if (!o) throw std::runtime_error("cannot open '" + p.string() + "' for writing");
    o << cfg.to_text();
  }
  if (cfg.output.write_csv) write_csv(dir / "timeseries.csv", result.records);
  if (cfg.output.write_vtk) {
    for (const auto &snap : result.snapshots) {
      char name[64];
      std::snprintf(name, sizeof name, "field_%.10g.vtk", snap.t);
      write_vtk(dir / name, *result.ops, snap.B, result.background);
    }
  }
}

int run_simulation(const RunConfig &cfg, const ProgressCallback &progress) {
  write_outputs(simulate(cfg, progress));
  return 0;
}

} // namespace mfrelax

namespace mfrelax {

std::vector<InvariantCheck> check_invariants(const RunResult &run,
                                             std::optional<double> poincare) {
  const SchemeKind kind = run.config.scheme;
  InvariantCheck gauss{"gauss_law", 0.0, 1e-11};
  InvariantCheck decay{"energy_decay", 0.0, 1e-9};
  InvariantCheck hel{"helicity_conservation", 0.0, 1e-8};
  InvariantCheck orth{"eh_orthogonality", 0.0, 1e-12};
  InvariantCheck elaw{"lm_energy_law", 0.0, 1e-9};
  InvariantCheck hlaw{"lm_helicity_law", 0.0, 1e-9};
  InvariantCheck arnold{"arnold_bound", 0.0, 1.0};

  const auto visit_record = [&](const DiagnosticsRecord &r) {
    gauss.worst = std::max(gauss.worst, r.div_norm / std::max(1.0, std::sqrt(r.energy)));
    const double h0 = run.initial.helicity;
    hel.worst = std::max(hel.worst, std::abs(r.helicity - h0) / std::max(1.0, std::abs(h0)));
    if (poincare && r.energy > 0.0)
      arnold.worst = std::max(arnold.worst, std::abs(r.helicity) / (*poincare * r.energy));
  };
  visit_record(run.initial);
  double prev = run.initial.energy;
  for (const auto &s : run.steps) {
    visit_record(s.record);
    decay.worst = std::max(decay.worst, (s.record.energy - prev) / std::max(1.0, prev));
    prev = s.record.energy;
    const auto &rep = s.report;
    if (kind == SchemeKind::Projection && rep.e_norm > 0.0 && rep.h_norm > 0.0)
      orth.worst = std::max(orth.worst, std::abs(rep.eh_inner) / (rep.e_norm * rep.h_norm));
    if (kind == SchemeKind::LagrangeMultiplier) {
      if (rep.mode == LmMode::full)
        elaw.worst = std::max(elaw.worst, std::abs(rep.energy_law_residual));
      hlaw.worst = std::max(hlaw.worst, std::abs(rep.helicity_residual));
    }
  }

  std::vector<InvariantCheck> out{gauss, decay};
  if (kind != SchemeKind::NonConservative) out.push_back(hel);
  if (kind == SchemeKind::Projection) out.push_back(orth);
  if (kind == SchemeKind::LagrangeMultiplier) {
    out.push_back(elaw);
    out.push_back(hlaw);
  }
  if (poincare && kind != SchemeKind::NonConservative) out.push_back(arnold);
  return out;
}

} // namespace mfrelax
