#include "mcs/cli.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <fstream>
#include <set>
#include <sstream>
#include <thread>

#include "mcs/util.hpp"

namespace mcs {

// ---- worker pool ----

namespace {
int g_workers = 1;
} // namespace

void set_worker_count(int n) {
  if (n < 1) throw config_error("worker count must be at least 1");
  g_workers = n;
}

int worker_count() { return g_workers; }

void parallel_for(int n, const std::function<void(int, int)>& fn) {
  if (n <= 0) return;
  int nw = std::min(g_workers, n);
  if (nw <= 1) {
    fn(0, n);
    return;
  }
  std::vector<std::exception_ptr> errors(nw);
  std::vector<std::thread> pool;
  pool.reserve(nw - 1);
  auto chunk = [&](int w) {
    try {
      fn(static_cast<int>(static_cast<long long>(n) * w / nw),
         static_cast<int>(static_cast<long long>(n) * (w + 1) / nw));
    } catch (...) {
      errors[w] = std::current_exception();
    }
  };
  for (int w = 1; w < nw; ++w) pool.emplace_back(chunk, w);
  chunk(0);
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

// ---- config parsing ----

namespace {

std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void bad(const std::string& where, const std::string& msg) {
  throw config_error(where + ": " + msg);
}

double to_double(const std::string& v, const std::string& where, const std::string& key) {
  std::size_t used = 0;
  double x = 0.0;
  try {
    x = std::stod(v, &used);
  } catch (const std::exception&) {
    bad(where, "expected a number for '" + key + "', got '" + v + "'");
  }
  if (used != v.size()) bad(where, "expected a number for '" + key + "', got '" + v + "'");
  return x;
}

long long to_int(const std::string& v, const std::string& where, const std::string& key) {
  std::size_t used = 0;
  long long x = 0;
  try {
    x = std::stoll(v, &used);
  } catch (const std::exception&) {
    bad(where, "expected an integer for '" + key + "', got '" + v + "'");
  }
  if (used != v.size()) bad(where, "expected an integer for '" + key + "', got '" + v + "'");
  return x;
}

bool to_bool(const std::string& v, const std::string& where, const std::string& key) {
  if (v == "true" || v == "on" || v == "1") return true;
  if (v == "false" || v == "off" || v == "0") return false;
  bad(where, "expected true/false for '" + key + "', got '" + v + "'");
}

std::vector<std::string> split_ws(const std::string& v) {
  std::istringstream in(v);
  std::vector<std::string> out;
  std::string tok;
  while (in >> tok) out.push_back(tok);
  return out;
}

/// Fill up to three per-axis values: one token broadcasts, otherwise one
/// token per axis in order.
template <typename T>
void to_axes(std::array<T, 3>& dst, const std::string& v, const std::string& where,
             const std::string& key, const std::function<T(const std::string&)>& conv) {
  auto toks = split_ws(v);
  if (toks.empty() || toks.size() > 3)
    bad(where, "expected 1 to 3 values for '" + key + "', got '" + v + "'");
  if (toks.size() == 1) {
    dst.fill(conv(toks[0]));
  } else {
    for (std::size_t i = 0; i < toks.size(); ++i) dst[i] = conv(toks[i]);
  }
}

FluxMode to_flux_mode(const std::string& v, const std::string& where) {
  if (v == "central") return FluxMode::Central;
  if (v == "upwind") return FluxMode::Upwind;
  if (v == "projected") return FluxMode::HopuFixed;
  if (v == "adaptive") return FluxMode::HopuAdaptive;
  bad(where, "unknown flux mode '" + v + "' (central, upwind, projected, adaptive)");
}

void set_key(RunConfig& cfg, const std::string& sec, const std::string& key,
             const std::string& val, const std::string& where) {
  const std::string id = sec + "." + key;
  auto as_double = [&] { return to_double(val, where, id); };
  auto as_int = [&] { return static_cast<int>(to_int(val, where, id)); };
  auto as_bool = [&] { return to_bool(val, where, id); };

  if (id == "case.name") {
    cfg.case_name = val;
  } else if (id == "case.dim") {
    cfg.dim = as_int();
  } else if (id == "mesh.cells") {
    to_axes<int>(cfg.cells, val, where, id, [&](const std::string& t) {
      return static_cast<int>(to_int(t, where, id));
    });
  } else if (id == "mesh.extent") {
    to_axes<double>(cfg.extent, val, where, id,
                    [&](const std::string& t) { return to_double(t, where, id); });
  } else if (id == "mesh.k") {
    cfg.k = as_int();
  } else if (id == "time.dt") {
    cfg.dt = as_double();
  } else if (id == "time.t_end") {
    cfg.t_end = as_double();
  } else if (id == "time.cfl_guard") {
    cfg.cfl_guard = as_double();
  } else if (id == "fluid.nu") {
    cfg.nu = as_double();
  } else if (id == "flux.mode") {
    cfg.flux_mode = to_flux_mode(val, where);
  } else if (id == "flux.order") {
    cfg.flux_order = as_int();
  } else if (id == "flux.thresholds") {
    cfg.thresholds.clear();
    for (const auto& t : split_ws(val)) cfg.thresholds.push_back(to_double(t, where, id));
    if (cfg.thresholds.empty()) bad(where, "'" + id + "' needs at least one value");
  } else if (id == "flux.cadence") {
    cfg.flux_cadence = as_int();
  } else if (id == "solver.extrapolate") {
    cfg.extrapolate = as_bool();
  } else if (id == "solver.momentum_tol") {
    cfg.momentum_tol = as_double();
  } else if (id == "solver.pressure_tol") {
    cfg.pressure_tol = as_double();
  } else if (id == "output.dir") {
    cfg.output_dir = val;
  } else if (id == "output.log_every") {
    cfg.log_every = as_int();
  } else if (id == "output.vtk_every") {
    cfg.vtk_every = as_int();
  } else if (id == "output.checkpoint_every") {
    cfg.checkpoint_every = as_int();
  } else if (id == "output.timings") {
    cfg.log_timings = as_bool();
  } else if (id == "output.restart") {
    cfg.restart = val;
  } else if (id == "stats.t_start") {
    cfg.stats_start = as_double();
  } else if (id == "stats.t_end") {
    cfg.stats_end = as_double();
  } else if (id == "stats.every") {
    cfg.stats_every = as_int();
  } else if (id == "ic.seed") {
    long long s = to_int(val, where, id);
    if (s < 0) bad(where, "'" + id + "' must be nonnegative");
    cfg.seed = static_cast<unsigned long>(s);
  } else if (id == "ic.perturbation") {
    cfg.perturbation = as_double();
  } else if (id == "channel.force") {
    cfg.force = as_double();
  } else if (id == "kovasznay.re") {
    cfg.re = as_double();
  } else if (id == "kovasznay.steady") {
    cfg.steady = as_bool();
  } else if (id == "kovasznay.steady_tol") {
    cfg.steady_tol = as_double();
  } else {
    bad(where, "unknown key '" + id + "'");
  }
}

const std::set<std::string>& known_sections() {
  static const std::set<std::string> sections{"case",   "mesh",  "time", "fluid",
                                              "flux",   "solver", "output", "stats",
                                              "ic",     "channel", "kovasznay"};
  return sections;
}

} // namespace

RunConfig parse_config_text(const std::string& text) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string line, section;
  int ln = 0;
  while (std::getline(in, line)) {
    ++ln;
    const std::string where = "config line " + std::to_string(ln);
    std::size_t cut = line.find_first_of("#;");
    if (cut != std::string::npos) line.erase(cut);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') bad(where, "unterminated section header '" + line + "'");
      section = trim(line.substr(1, line.size() - 2));
      if (!known_sections().count(section)) bad(where, "unknown section '" + section + "'");
      continue;
    }
    std::size_t eq = line.find('=');
    if (eq == std::string::npos) bad(where, "expected 'key = value', got '" + line + "'");
    std::string key = trim(line.substr(0, eq));
    std::string val = trim(line.substr(eq + 1));
    if (key.empty()) bad(where, "missing key before '='");
    if (section.empty()) bad(where, "key '" + key + "' appears before any [section]");
    set_key(cfg, section, key, val, where);
  }
  return cfg;
}

RunConfig parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw config_error("cannot open config file '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  try {
    return parse_config_text(buf.str());
  } catch (const config_error& e) {
    throw config_error(path + ": " + e.what());
  }
}

void apply_override(RunConfig& cfg, const std::string& spec) {
  const std::string where = "--set " + spec;
  std::size_t eq = spec.find('=');
  if (eq == std::string::npos) bad(where, "expected section.key=value");
  std::string lhs = trim(spec.substr(0, eq));
  std::string val = trim(spec.substr(eq + 1));
  std::size_t dot = lhs.find('.');
  if (dot == std::string::npos || dot == 0 || dot + 1 == lhs.size())
    bad(where, "expected section.key=value");
  std::string sec = lhs.substr(0, dot);
  if (!known_sections().count(sec)) bad(where, "unknown section '" + sec + "'");
  set_key(cfg, sec, lhs.substr(dot + 1), val, where);
}

const std::vector<std::string>& case_names() {
  static const std::vector<std::string> names{"box", "channel", "kovasznay", "tgv2d", "tgv3d"};
  return names;
}

void validate_config(const RunConfig& cfg) {
  const auto& names = case_names();
  if (std::find(names.begin(), names.end(), cfg.case_name) == names.end()) {
    std::string list;
    for (const auto& n : names) list += (list.empty() ? "" : ", ") + n;
    throw config_error("unknown case '" + cfg.case_name + "' (available: " + list + ")");
  }
  if (cfg.dim != 2 && cfg.dim != 3) throw config_error("case.dim must be 2 or 3");
  for (int a = 0; a < cfg.dim; ++a) {
    if (cfg.cells[a] < 1) throw config_error("mesh.cells entries must be positive");
    if (cfg.extent[a] < 0.0) throw config_error("mesh.extent entries must be positive");
  }
  if (cfg.k < 1) throw config_error("mesh.k must be at least 1");
  if (!(cfg.dt > 0.0)) throw config_error("time.dt must be positive");
  if (!(cfg.t_end > 0.0)) throw config_error("time.t_end must be positive");
  if (!(cfg.cfl_guard > 0.0)) throw config_error("time.cfl_guard must be positive");
  if (cfg.nu < 0.0) throw config_error("fluid.nu must be positive");
  if (cfg.case_name == "kovasznay" && cfg.nu != 0.0)
    throw config_error("kovasznay derives fluid.nu from kovasznay.re; do not set both");
  if (cfg.flux_mode == FluxMode::HopuFixed && (cfg.flux_order < 0 || cfg.flux_order > cfg.k))
    throw config_error("flux.order must lie in [0, k] for projected mode");
  if (!cfg.thresholds.empty()) {
    EtaThresholds t;
    t.eta = cfg.thresholds;
    t.validate(cfg.k);
  }
  if (cfg.flux_cadence < 1) throw config_error("flux.cadence must be at least 1");
  if (!(cfg.momentum_tol > 0.0) || !(cfg.pressure_tol > 0.0))
    throw config_error("solver tolerances must be positive");
  if (cfg.output_dir.empty()) throw config_error("output.dir must not be empty");
  if (cfg.log_every < 1) throw config_error("output.log_every must be at least 1");
  if (cfg.vtk_every < 0 || cfg.checkpoint_every < 0)
    throw config_error("output cadences must be nonnegative");
  bool stats_on = cfg.stats_start >= 0.0 || cfg.stats_end >= 0.0;
  if (stats_on && !(cfg.stats_start >= 0.0 && cfg.stats_end >= cfg.stats_start))
    throw config_error("stats window needs 0 <= t_start <= t_end");
  if (cfg.stats_every < 1) throw config_error("stats.every must be at least 1");
  if (cfg.perturbation < 0.0) throw config_error("ic.perturbation must be nonnegative");
  if (!(cfg.re > 0.0)) throw config_error("kovasznay.re must be positive");
  if (!(cfg.steady_tol > 0.0)) throw config_error("kovasznay.steady_tol must be positive");
}

// ---- benchmark cases ----

namespace {

constexpr double kPi = 3.14159265358979323846;

VectorField taylor_green_2d() {
  return [](const std::array<double, 3>& x) {
    return std::array<double, 3>{std::sin(x[0]) * std::cos(x[1]),
                                 -std::cos(x[0]) * std::sin(x[1]), 0.0};
  };
}

VectorField taylor_green_3d() {
  return [](const std::array<double, 3>& x) {
    return std::array<double, 3>{std::sin(x[0]) * std::cos(x[1]) * std::cos(x[2]),
                                 -std::cos(x[0]) * std::sin(x[1]) * std::cos(x[2]), 0.0};
  };
}

VectorField kovasznay_field(double re) {
  double lam = 0.5 * re - std::sqrt(0.25 * re * re + 4.0 * kPi * kPi);
  return [lam](const std::array<double, 3>& x) {
    double ex = std::exp(lam * x[0]);
    return std::array<double, 3>{1.0 - ex * std::cos(2.0 * kPi * x[1]),
                                 lam / (2.0 * kPi) * ex * std::sin(2.0 * kPi * x[1]), 0.0};
  };
}

/// Compactly supported vortex on the unit box: the curl of the stream
/// function sin^2(pi x) sin^2(pi y) [sin^2(pi z)], zero on all walls and
/// exactly divergence free.
VectorField box_vortex(int dim) {
  return [dim](const std::array<double, 3>& x) {
    double sx = std::sin(kPi * x[0]), cx = std::cos(kPi * x[0]);
    double sy = std::sin(kPi * x[1]), cy = std::cos(kPi * x[1]);
    double fz = dim == 3 ? std::sin(kPi * x[2]) * std::sin(kPi * x[2]) : 1.0;
    return std::array<double, 3>{2.0 * kPi * sx * sx * sy * cy * fz,
                                 -2.0 * kPi * sx * cx * sy * sy * fz, 0.0};
  };
}

} // namespace

CaseSetup build_case(const RunConfig& cfg) {
  validate_config(cfg);
  CaseSetup out;

  int dim = cfg.dim;
  std::array<double, 3> lo{0.0, 0.0, 0.0};
  std::array<double, 3> ext{0.0, 0.0, 0.0};
  BoundarySpec bc;
  double nu = cfg.nu;

  if (cfg.case_name == "tgv2d" || cfg.case_name == "tgv3d") {
    dim = cfg.case_name == "tgv3d" ? 3 : 2;
    ext.fill(2.0 * kPi);
    for (int a = 0; a < dim; ++a) bc.periodic[a] = true;
    if (nu == 0.0) nu = 0.01;
    out.initial = dim == 3 ? taylor_green_3d() : taylor_green_2d();
  } else if (cfg.case_name == "kovasznay") {
    dim = 2;
    lo = {-0.5, -0.5, 0.0};
    ext = {1.5, 1.5, 0.0};
    bc.face_tag[0] = FacetTag::Inlet;  // x low
    bc.face_tag[1] = FacetTag::Outlet; // x high
    bc.face_tag[2] = FacetTag::Inlet;  // y low
    bc.face_tag[3] = FacetTag::Inlet;  // y high
    nu = 1.0 / cfg.re;
    VectorField exact = kovasznay_field(cfg.re);
    out.dirichlet = exact;
    out.initial = exact;
    out.exact = exact;
    out.steady = cfg.steady;
    out.steady_tol = cfg.steady_tol;
  } else if (cfg.case_name == "channel") {
    ext = {2.0, 1.0, 1.0};
    bc.periodic[0] = true;
    if (dim == 3) bc.periodic[2] = true;
    if (nu == 0.0) nu = 1.0;
    out.initial = [](const std::array<double, 3>&) { return std::array<double, 3>{0, 0, 0}; };
    double g = cfg.force;
    out.body_force = [g](const std::array<double, 3>&) {
      return std::array<double, 3>{g, 0.0, 0.0};
    };
  } else { // box
    ext.fill(1.0);
    if (nu == 0.0) nu = 0.01;
    out.initial = box_vortex(dim);
  }

  std::array<double, 3> hi = lo;
  std::array<int, 3> cells{1, 1, 1};
  for (int a = 0; a < dim; ++a) {
    hi[a] = lo[a] + (cfg.extent[a] > 0.0 ? cfg.extent[a] : ext[a]);
    cells[a] = cfg.cells[a];
  }
  out.mesh = build_box_mesh(dim, cells, lo, hi, bc);
  out.s = build_space_set(dim, cfg.k, out.mesh.h);
  out.dm = build_dof_map(out.mesh, out.s);

  out.tp = TimeParams{cfg.dt, nu, cfg.t_end, cfg.cfl_guard};
  out.scfg.extrapolate_convection = cfg.extrapolate;
  out.scfg.momentum_tol = cfg.momentum_tol;
  out.scfg.pressure_tol = cfg.pressure_tol;
  out.flux.mode = cfg.flux_mode;
  out.flux.fixed_order = cfg.flux_order;
  out.flux.thresholds.eta = cfg.thresholds;
  out.flux.update_cadence = cfg.flux_cadence;

  if (cfg.case_name == "channel") {
    // Wall-normal probe line for mean profiles: lower-half element centers at
    // a quarter of the streamwise period, averaged over the periodic axis.
    std::array<double, 3> p{lo[0] + 0.25 * (hi[0] - lo[0]), 0.0,
                            dim == 3 ? 0.5 * (lo[2] + hi[2]) : 0.0};
    for (int j = 0; j < std::max(1, cells[1] / 2); ++j) {
      p[1] = lo[1] + (j + 0.5) * out.mesh.h[1];
      out.probes.push_back(p);
    }
    out.homog_axis = 0;
    out.wall_face = 2; // y-low wall
  }
  return out;
}

} // namespace mcs
