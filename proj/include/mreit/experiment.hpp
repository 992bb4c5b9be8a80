#pragma once

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <boost/uuid/detail/sha1.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "mreit/errors.hpp"
#include "mreit/fields.hpp"
#include "mreit/forward.hpp"
#include "mreit/geometry.hpp"
#include "mreit/image_io.hpp"
#include "mreit/metrics.hpp"
#include "mreit/phantom.hpp"
#include "mreit/reconstruct.hpp"
#include "mreit/recovery.hpp"

namespace mreit {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// configuration

struct OutputConfig {
  std::string dir = "out";
  bool fields = true;
  bool csv = true;
  bool heatmaps = true;
  std::vector<int> snapshots{1, 20, 50};
  std::optional<double> sigma_min;  // heatmap colour scale; defaults to the sigma* range
  std::optional<double> sigma_max;
};

struct DataConfig {
  bool analytic_laplacian = false;  // debug: Laplacian of Bz from sigma* and u
  bool reference = false;           // snap Bz to the dyadic grid
  StrayField stray;
  std::optional<BlurSpec> presmooth;  // optional blur of the Laplacian of Bz
  int fft_padding = 2;
  bool direct_quadrature = false;
};

struct ExperimentConfig {
  std::string name = "experiment";
  std::string source;  // config path, empty for in-memory configs
  int nx = 128, ny = 128;
  double fov_x = 2.0, fov_y = 2.0;
  std::optional<Point> origin;  // default centres the field of view on 0
  DomainShape shape = SquareShape{};
  ElectrodeSpec plus = ElectrodeBox{-1.1, -0.99, -0.15, 0.15};
  ElectrodeSpec minus = ElectrodeBox{0.99, 1.1, -0.15, 0.15};
  PhantomSpec phantom{ToyLensPhantom{}, std::nullopt, 1.0};
  std::optional<BlurSpec> blur;
  bool paired = true;  // with a blur: run raw and blurred; otherwise blurred only
  ReconstructionConfig recon;
  DataConfig data;
  VerdictRule verdict;
  OutputConfig output;
  std::vector<std::string> inputs;  // files whose content hashes go in the manifest

  Point effective_origin() const { return origin.value_or(Point{-0.5 * fov_x, -0.5 * fov_y}); }
  Grid2D grid() const { return build_grid(nx, ny, fov_x, fov_y, effective_origin()); }
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

/// Line numbers of every "section.key" in INI text.
inline std::map<std::string, int> ini_line_index(const std::string& text) {
  std::map<std::string, int> where;
  std::istringstream in(text);
  std::string line, section;
  int no = 0;
  while (std::getline(in, line)) {
    ++no;
    const auto t = trim(line);
    if (t.empty() || t[0] == ';' || t[0] == '#') continue;
    if (t.front() == '[' && t.back() == ']') {
      section = trim(t.substr(1, t.size() - 2));
      where.emplace(section, no);
      continue;
    }
    const auto eq = t.find('=');
    if (eq == std::string::npos) continue;
    where.emplace(section + "." + trim(t.substr(0, eq)), no);
  }
  return where;
}

/// Typed access to a parsed INI tree with positioned error messages.
class IniReader {
 public:
  IniReader(std::string text, std::string origin) : origin_(std::move(origin)), lines_(ini_line_index(text)) {
    std::istringstream in(text);
    try {
      boost::property_tree::ini_parser::read_ini(in, tree_);
    } catch (const boost::property_tree::ini_parser_error& e) {
      throw ConfigError(origin_ + ":" + std::to_string(e.line()) + ": " + e.message());
    }
    for (const auto& [section, body] : tree_) {
      if (body.empty() && !body.data().empty()) {
        throw ConfigError(where(section) + "key '" + section + "' must belong to a section");
      }
    }
  }

  std::string where(const std::string& key) const {
    const auto it = lines_.find(key);
    return origin_ + (it == lines_.end() ? std::string(": ") : ":" + std::to_string(it->second) + ": ");
  }

  [[noreturn]] void fail(const std::string& key, const std::string& msg) const { throw ConfigError(where(key) + msg); }

  bool has(const std::string& key) const {
    used_.insert(key);
    return tree_.get_optional<std::string>(key).has_value();
  }
  bool has_section(const std::string& s) const { return tree_.get_child_optional(s).has_value(); }

  std::string str(const std::string& key, const std::string& def) const {
    used_.insert(key);
    return trim(tree_.get<std::string>(key, def));
  }
  std::optional<std::string> opt_str(const std::string& key) const {
    used_.insert(key);
    auto v = tree_.get_optional<std::string>(key);
    if (!v) return std::nullopt;
    return trim(*v);
  }

  double num(const std::string& key, double def) const {
    auto v = opt_str(key);
    return v ? to_double(key, *v) : def;
  }
  std::optional<double> opt_num(const std::string& key) const {
    auto v = opt_str(key);
    if (!v) return std::nullopt;
    return to_double(key, *v);
  }
  int integer(const std::string& key, int def) const {
    auto v = opt_str(key);
    if (!v) return def;
    std::size_t pos = 0;
    long r = 0;
    try {
      r = std::stol(*v, &pos);
    } catch (const std::exception&) {
      fail(key, "'" + key + "' expects an integer, got '" + *v + "'");
    }
    if (pos != v->size()) fail(key, "'" + key + "' expects an integer, got '" + *v + "'");
    return static_cast<int>(r);
  }
  bool flag(const std::string& key, bool def) const {
    auto v = opt_str(key);
    if (!v) return def;
    if (*v == "true" || *v == "yes" || *v == "1" || *v == "on") return true;
    if (*v == "false" || *v == "no" || *v == "0" || *v == "off") return false;
    fail(key, "'" + key + "' expects true or false, got '" + *v + "'");
  }
  std::vector<double> list(const std::string& key) const {
    auto v = opt_str(key);
    std::vector<double> out;
    if (!v) return out;
    std::string s = *v;
    std::replace(s.begin(), s.end(), ',', ' ');
    std::istringstream in(s);
    std::string tok;
    while (in >> tok) out.push_back(to_double(key, tok));
    return out;
  }

  /// Rejects keys or sections the reader never asked for.
  void reject_unknown() const {
    for (const auto& [section, body] : tree_) {
      for (const auto& [key, value] : body) {
        (void)value;
        const auto full = section + "." + key;
        if (!used_.count(full)) fail(full, "unknown key '" + key + "' in section [" + section + "]");
      }
    }
  }

 private:
  double to_double(const std::string& key, const std::string& v) const {
    std::size_t pos = 0;
    double r = 0.0;
    try {
      r = std::stod(v, &pos);
    } catch (const std::exception&) {
      fail(key, "'" + key + "' expects a number, got '" + v + "'");
    }
    if (pos != v.size() || !std::isfinite(r)) fail(key, "'" + key + "' expects a finite number, got '" + v + "'");
    return r;
  }

  std::string origin_;
  std::map<std::string, int> lines_;
  boost::property_tree::ptree tree_;
  mutable std::set<std::string> used_;
};

inline std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline ElectrodeSpec parse_electrode(const IniReader& r, const std::string& side, const std::string& kind) {
  if (kind == "box") {
    const auto key = "electrodes." + side + "_box";
    const auto v = r.list(key);
    if (v.size() != 4) r.fail(key, "'" + side + "_box' expects xmin, xmax, ymin, ymax");
    if (!(v[0] < v[1] && v[2] < v[3])) r.fail(key, "'" + side + "_box' has an empty extent");
    return ElectrodeBox{v[0], v[1], v[2], v[3]};
  }
  if (kind == "arc") {
    const auto akey = "electrodes." + side + "_angle";
    if (!r.has(akey)) r.fail("electrodes", "arc electrodes need '" + side + "_angle' (degrees)");
    const double length = r.num("electrodes.length", 0.0);
    if (!(length > 0.0)) r.fail("electrodes.length", "electrode length must be positive");
    return ElectrodeArc{r.num(akey, 0.0) * M_PI / 180.0, length};
  }
  r.fail("electrodes.kind", "electrode kind must be 'box' or 'arc', got '" + kind + "'");
}

inline std::string resolve_path(const std::string& base_dir, const std::string& p) {
  if (p.empty() || fs::path(p).is_absolute() || base_dir.empty()) return p;
  return (fs::path(base_dir) / p).lexically_normal().string();
}

}  // namespace detail

/// Parses INI text. `origin` names the source in messages; relative paths
/// resolve against `base_dir`.
inline ExperimentConfig parse_config(const std::string& text, const std::string& origin = "<config>",
                                     const std::string& base_dir = "") {
  detail::IniReader r(text, origin);
  ExperimentConfig c;
  c.source = origin;

  c.name = r.str("experiment.name", c.name);
  if (c.name.empty() || c.name.find('/') != std::string::npos) r.fail("experiment.name", "name must be a plain word");
  c.output.dir = r.str("experiment.output_dir", c.output.dir);

  c.nx = r.integer("grid.nx", c.nx);
  c.ny = r.integer("grid.ny", c.ny);
  if (c.nx < 8 || c.ny < 8) r.fail("grid.nx", "grid must be at least 8x8");
  c.fov_x = r.num("grid.fov_x", c.fov_x);
  c.fov_y = r.num("grid.fov_y", c.fov_y);
  if (!(c.fov_x > 0.0 && c.fov_y > 0.0)) r.fail("grid.fov_x", "field of view must be positive");
  if (r.has("grid.origin_x") || r.has("grid.origin_y")) {
    c.origin = Point{r.num("grid.origin_x", -0.5 * c.fov_x), r.num("grid.origin_y", -0.5 * c.fov_y)};
  }

  const auto shape = r.str("domain.shape", "square");
  if (shape == "square") {
    c.shape = SquareShape{};
  } else if (shape == "disc") {
    const double d = r.num("domain.diameter", 0.0);
    if (!(d > 0.0)) r.fail("domain.diameter", "disc diameter must be positive");
    c.shape = DiscShape{{r.num("domain.center_x", 0.0), r.num("domain.center_y", 0.0)}, d};
  } else if (shape == "mask") {
    auto p = r.opt_str("domain.mask");
    if (!p) r.fail("domain.shape", "mask domains need 'mask' (image path)");
    const auto path = detail::resolve_path(base_dir, *p);
    c.shape = MaskImageShape{path, r.integer("domain.threshold", 1)};
    c.inputs.push_back(path);
  } else {
    r.fail("domain.shape", "shape must be square, disc or mask, got '" + shape + "'");
  }

  const auto ekind = r.str("electrodes.kind", "box");
  if (r.has_section("electrodes")) {
    c.plus = detail::parse_electrode(r, "plus", ekind);
    c.minus = detail::parse_electrode(r, "minus", ekind);
  }

  const auto kind = r.str("phantom.kind", "toy_lens");
  c.phantom.sigma_b = r.num("phantom.sigma_b", 1.0);
  if (!(c.phantom.sigma_b > 0.0)) r.fail("phantom.sigma_b", "sigma_b must be positive");
  if (kind == "toy_lens") {
    c.phantom.kind = ToyLensPhantom{r.num("phantom.jump_offset", 1.0)};
  } else if (kind == "shepp_logan") {
    SheppLoganPhantom p;
    p.half_width = r.num("phantom.half_width", p.half_width);
    p.sigma_min = r.num("phantom.sigma_min", p.sigma_min);
    p.sigma_max = r.num("phantom.sigma_max", p.sigma_max);
    p.center = {r.num("phantom.center_x", 0.0), r.num("phantom.center_y", 0.0)};
    if (!(p.half_width > 0.0)) r.fail("phantom.half_width", "half_width must be positive");
    if (!(p.sigma_min > 0.0 && p.sigma_max > p.sigma_min)) r.fail("phantom.sigma_min", "need 0 < sigma_min < sigma_max");
    c.phantom.kind = p;
  } else if (kind == "image") {
    auto p = r.opt_str("phantom.image");
    if (!p) r.fail("phantom.kind", "image phantoms need 'image' (path)");
    const auto path = detail::resolve_path(base_dir, *p);
    c.phantom.kind = ImagePhantom{path};
    if (std::find(c.inputs.begin(), c.inputs.end(), path) == c.inputs.end()) c.inputs.push_back(path);
  } else if (kind == "uniform") {
    const double v = r.num("phantom.value", c.phantom.sigma_b);
    if (!(v > 0.0)) r.fail("phantom.value", "uniform conductivity must be positive");
    c.phantom.kind = UniformPhantom{v};
  } else {
    r.fail("phantom.kind", "phantom kind must be toy_lens, shepp_logan, image or uniform, got '" + kind + "'");
  }
  if (r.has("phantom.blur_nu")) {
    BlurSpec b{r.num("phantom.blur_nu", 1.0), r.integer("phantom.blur_window", 3)};
    if (!(b.nu > 0.0)) r.fail("phantom.blur_nu", "blur_nu must be positive");
    if (b.window < 3 || b.window % 2 == 0) r.fail("phantom.blur_window", "blur_window must be odd and at least 3");
    c.blur = b;
  }
  c.paired = r.flag("phantom.paired", true);

  c.recon.current = r.num("current.amplitude", c.recon.current);
  if (!(c.recon.current > 0.0)) r.fail("current.amplitude", "current amplitude must be positive");
  c.recon.sigma_b = c.phantom.sigma_b;

  auto& rc = c.recon;
  rc.margin = r.integer("reconstruction.margin", rc.margin);
  if (rc.margin < 1) r.fail("reconstruction.margin", "margin must be at least 1");
  rc.eps_stop = r.num("reconstruction.eps_stop", rc.eps_stop);
  if (!(rc.eps_stop > 0.0)) r.fail("reconstruction.eps_stop", "eps_stop must be positive");
  rc.max_iterations = r.integer("reconstruction.max_iterations", rc.max_iterations);
  if (rc.max_iterations < 1) r.fail("reconstruction.max_iterations", "max_iterations must be at least 1");
  rc.j_floor_fraction = r.num("reconstruction.j_floor_fraction", rc.j_floor_fraction);
  if (!(rc.j_floor_fraction >= 0.0 && rc.j_floor_fraction < 1.0))
    r.fail("reconstruction.j_floor_fraction", "j_floor_fraction must lie in [0, 1)");
  const double decades = r.num("reconstruction.clamp_decades", 6.0);
  if (!(decades > 0.0)) r.fail("reconstruction.clamp_decades", "clamp_decades must be positive");
  rc.log_clamp = decades * std::log(10.0);
  rc.stop_on_tolerance = r.flag("reconstruction.stop_on_tolerance", rc.stop_on_tolerance);
  rc.eps0 = r.num("reconstruction.eps0", rc.eps0);
  rc.sigma_min0 = r.num("reconstruction.sigma_min0", rc.sigma_min0);
  rc.sigma_max0 = r.num("reconstruction.sigma_max0", rc.sigma_max0);
  rc.solver.rel_tol = r.num("reconstruction.solver_tol", rc.solver.rel_tol);
  if (!(rc.solver.rel_tol > 0.0 && rc.solver.rel_tol < 1.0)) r.fail("reconstruction.solver_tol", "solver_tol must lie in (0, 1)");
  rc.solver.max_iterations = r.integer("reconstruction.solver_max_iterations", rc.solver.max_iterations);
  try {
    rc.validate();
  } catch (const ConfigError& e) {
    r.fail("reconstruction", e.what());
  }

  auto& d = c.data;
  const auto lap = r.str("data.laplacian", "numeric");
  if (lap != "numeric" && lap != "analytic") r.fail("data.laplacian", "laplacian must be numeric or analytic");
  d.analytic_laplacian = lap == "analytic";
  d.reference = r.flag("data.reference_mode", false);
  d.stray = {r.num("data.stray_a", 0.0), r.num("data.stray_b", 0.0), r.num("data.stray_c", 0.0)};
  if (r.has("data.presmooth_nu")) {
    BlurSpec b{r.num("data.presmooth_nu", 1.0), r.integer("data.presmooth_window", 3)};
    if (!(b.nu > 0.0) || b.window < 3 || b.window % 2 == 0) r.fail("data.presmooth_nu", "invalid presmoothing blur");
    d.presmooth = b;
  }
  d.fft_padding = r.integer("data.fft_padding", 2);
  if (d.fft_padding < 2) r.fail("data.fft_padding", "fft_padding must be at least 2");
  const auto quad = r.str("data.quadrature", "fft");
  if (quad != "fft" && quad != "direct") r.fail("data.quadrature", "quadrature must be fft or direct");
  d.direct_quadrature = quad == "direct";

  c.verdict.window = static_cast<std::size_t>(r.integer("verdict.window", 20));
  c.verdict.zigzag_fraction = r.num("verdict.zigzag_fraction", c.verdict.zigzag_fraction);
  c.verdict.rel_tol = r.num("verdict.rel_tol", c.verdict.rel_tol);
  c.verdict.plateau_tol = r.num("verdict.plateau_tol", c.verdict.plateau_tol);

  auto& o = c.output;
  o.fields = r.flag("output.fields", o.fields);
  o.csv = r.flag("output.csv", o.csv);
  o.heatmaps = r.flag("output.heatmaps", o.heatmaps);
  if (r.has("output.snapshots")) {
    o.snapshots.clear();
    for (double v : r.list("output.snapshots")) {
      if (v < 1 || v != std::floor(v)) r.fail("output.snapshots", "snapshots must be positive iteration numbers");
      o.snapshots.push_back(static_cast<int>(v));
    }
    std::sort(o.snapshots.begin(), o.snapshots.end());
    o.snapshots.erase(std::unique(o.snapshots.begin(), o.snapshots.end()), o.snapshots.end());
  }
  o.sigma_min = r.opt_num("output.sigma_min");
  o.sigma_max = r.opt_num("output.sigma_max");
  if (o.sigma_min && o.sigma_max && !(*o.sigma_min < *o.sigma_max))
    r.fail("output.sigma_min", "heatmap scale needs sigma_min < sigma_max");

  r.reject_unknown();
  return c;
}

inline ExperimentConfig load_config(const std::string& path) {
  auto text = detail::read_text(path);
  auto c = parse_config(text, path, fs::path(path).parent_path().string());
  c.inputs.insert(c.inputs.begin(), path);
  return c;
}

// ---------------------------------------------------------------------------
// execution

/// Everything one reconstruction case produced.
struct CaseOutcome {
  std::string label;  // "raw" or "blurred"
  ScalarField sigma_star;
  ForwardSolution forward;
  ScalarField bz;  // data handed to the reconstruction
  ScalarField laplace_bz;
  RecoveredCurrent recovered;
  std::pair<double, double> beta_midpoint;
  AdmissibilityReport admissibility;
  ReconstructionResult result;
  std::vector<double> min_J;  // per step, over the interior, for the conductivity the step started from
  ThetaFit theta;
};

struct Scenario {
  Geometry geometry;
  ExperimentConfig config;
};

namespace detail {

template <class F>
auto stage(const char* name, F&& f) -> decltype(f()) {
  const std::string prefix = std::string("stage '") + name + "': ";
  try {
    return f();
  } catch (const ConfigError& e) {
    throw ConfigError(prefix + e.what());
  } catch (const GeometryError& e) {
    throw GeometryError(prefix + e.what());
  } catch (const NumericError& e) {
    throw NumericError(prefix + e.what());
  }
}

inline double min_norm_on(const VectorField2D& J, const DomainMask& region) {
  double m = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < J.vx().size(); ++k)
    if (region.inside(k)) m = std::min(m, J.norm(k));
  return m;
}

}  // namespace detail

inline Scenario make_scenario(const ExperimentConfig& cfg) {
  return detail::stage("geometry", [&] {
    return Scenario{make_geometry(cfg.grid(), cfg.shape, cfg.plus, cfg.minus, cfg.recon.margin), cfg};
  });
}

/// Runs phantom -> forward -> recovery -> reconstruction for one case.
inline CaseOutcome run_case(const Scenario& sc, bool blurred, CurrentRecovery* recovery = nullptr) {
  const auto& cfg = sc.config;
  const auto& geo = sc.geometry;
  auto sigma_star = detail::stage("phantom", [&] {
    PhantomSpec spec = cfg.phantom;
    spec.blur = blurred ? cfg.blur : std::nullopt;
    return generate_phantom(spec, geo.domain);
  });
  auto forward = detail::stage("forward", [&] {
    ForwardOptions fo;
    fo.fft_padding = cfg.data.fft_padding;
    fo.direct_quadrature = cfg.data.direct_quadrature;
    fo.solver = cfg.recon.solver;
    return solve_forward(sigma_star, geo.boundary, cfg.recon.current, fo);
  });
  ScalarField bz = forward.bz;
  if (cfg.data.reference) bz = quantize_reference(bz);
  const auto& st = cfg.data.stray;
  if (st.a != 0.0 || st.b != 0.0 || st.c != 0.0 || cfg.data.reference) bz = add_stray_field(bz, st, cfg.data.reference);

  std::optional<CurrentRecovery> own;
  if (!recovery) recovery = &own.emplace(geo.boundary, cfg.recon.solver);
  std::optional<RecoveredCurrent> recovered;
  DataBundle data = detail::stage("recovery", [&] {
    ScalarField lap = cfg.data.analytic_laplacian ? analytic_laplace_bz(sigma_star, forward.u, geo.domain)
                                                  : laplacian(bz, geo.domain);
    if (cfg.data.presmooth) lap = gaussian_blur(lap, cfg.data.presmooth->nu, cfg.data.presmooth->window);
    RecoveredCurrent rec = recovery->recover(lap, cfg.recon.current, geo.interior, cfg.recon.j_floor_fraction);
    DataBundle d{bz, std::move(lap), rec.J, cfg.recon.j_floor_fraction * rec.max_J, rec.min_J};
    recovered.emplace(std::move(rec));
    return d;
  });
  auto midpoint = check_beta_midpoint(recovered->phi, recovered->psi, geo.boundary);
  auto admissibility = validate_admissible(sigma_star, cfg.recon, geo.domain, geo.interior);

  std::vector<double> min_J;
  auto result = detail::stage("reconstruction", [&] {
    HarmonicBzSolver solver(cfg.recon, geo.boundary, geo.interior, data);
    RunOptions ro;
    ro.sigma_star = &sigma_star;
    ro.snapshot_at = cfg.output.snapshots;
    ro.verdict_rule = cfg.verdict;
    ScalarField prev(geo.grid, cfg.recon.sigma_b);
    ro.on_step = [&](const StepRecord&, const IterationState& s) {
      min_J.push_back(detail::min_norm_on(compute_J(prev, *s.u, geo.domain), geo.interior));
      prev = s.sigma;
    };
    return run_schbz(solver, ro);
  });
  ThetaFit theta;
  const auto norms = result.step_norms();
  if (norms.size() >= 5) theta = fit_theta(norms, cfg.verdict.plateau_tol);
  ScalarField lap = data.laplace_bz;
  return CaseOutcome{blurred ? "blurred" : "raw", std::move(sigma_star), std::move(forward), std::move(bz),
                     std::move(lap),       std::move(*recovered), midpoint, admissibility,
                     std::move(result),    std::move(min_J),      theta};
}

struct ExperimentOutcome {
  ExperimentConfig config;
  std::vector<CaseOutcome> cases;  // raw first when present
  fs::path directory;

  const CaseOutcome* find(const std::string& label) const {
    for (const auto& c : cases)
      if (c.label == label) return &c;
    return nullptr;
  }
};

/// Output root: $MREIT_OUTPUT_ROOT when set, else the configured directory.
inline fs::path output_directory(const ExperimentConfig& cfg) {
  fs::path root = cfg.output.dir;
  if (const char* env = std::getenv("MREIT_OUTPUT_ROOT"); env && *env) {
    root = fs::path(env);
  }
  return root / cfg.name;
}

// ---------------------------------------------------------------------------
// artifacts

namespace detail {

/// Git blob hash ("blob <size>\0<content>", SHA-1) of a byte string.
inline std::string git_blob_sha1(const std::string& content) {
  boost::uuids::detail::sha1 h;
  const std::string head = "blob " + std::to_string(content.size()) + std::string(1, '\0');
  h.process_bytes(head.data(), head.size());
  h.process_bytes(content.data(), content.size());
  unsigned int digest[5];
  h.get_digest(digest);
  std::ostringstream ss;
  for (unsigned int w : digest) ss << std::hex << std::setw(8) << std::setfill('0') << w;
  return ss.str();
}

// viridis, nine stops
inline constexpr std::array<std::array<double, 3>, 9> kViridis = {{{0.267, 0.005, 0.329},
                                                                   {0.278, 0.175, 0.483},
                                                                   {0.230, 0.322, 0.546},
                                                                   {0.173, 0.449, 0.558},
                                                                   {0.128, 0.567, 0.551},
                                                                   {0.158, 0.684, 0.502},
                                                                   {0.369, 0.789, 0.383},
                                                                   {0.678, 0.864, 0.190},
                                                                   {0.993, 0.906, 0.144}}};

/// Heatmap on a fixed scale; pixels outside `mask` are black.
inline RgbImage heatmap(const ScalarField& f, const DomainMask& mask, double lo, double hi) {
  const auto& g = f.grid();
  RgbImage img{g.nx(), g.ny(), std::vector<std::uint8_t>(g.size() * 3, 0)};
  const double span = hi > lo ? hi - lo : 1.0;
  for (int j = 0; j < g.ny(); ++j) {
    for (int i = 0; i < g.nx(); ++i) {
      if (!mask.inside(i, j)) continue;
      const double t = std::clamp((f(i, j) - lo) / span, 0.0, 1.0) * (kViridis.size() - 1);
      const auto a = std::min<std::size_t>(static_cast<std::size_t>(t), kViridis.size() - 2);
      const double w = t - a;
      const std::size_t px = (static_cast<std::size_t>(g.ny() - 1 - j) * g.nx() + i) * 3;
      for (int c = 0; c < 3; ++c) {
        const double v = (1 - w) * kViridis[a][c] + w * kViridis[a + 1][c];
        img.pixels[px + c] = static_cast<std::uint8_t>(std::lround(255.0 * v));
      }
    }
  }
  return img;
}

inline std::string fmt(double v) {
  if (!std::isfinite(v)) return "";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10e", v);
  return buf;
}

inline std::string snapshot_name(int n) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "sigma_n%03d", n);
  return buf;
}

inline nlohmann::json admissibility_json(const AdmissibilityReport& a) {
  return {{"grad_log_sigma_sup", a.grad_log_sup}, {"sigma_min", a.sigma_min},
          {"sigma_max", a.sigma_max},           {"band_is_background", a.band_is_background},
          {"K", a.K},                           {"gradient_below_quarter_inverse_K", a.gradient_ok},
          {"eps0_below_quarter_inverse_K", a.eps0_ok}, {"range_ok", a.range_ok},
          {"admissible", a.admissible()}};
}

inline nlohmann::json config_json(const ExperimentConfig& c) {
  nlohmann::json j;
  j["name"] = c.name;
  const auto o = c.effective_origin();
  j["grid"] = {{"nx", c.nx}, {"ny", c.ny}, {"fov_x", c.fov_x}, {"fov_y", c.fov_y}, {"origin", {o.x, o.y}}};
  if (std::holds_alternative<SquareShape>(c.shape)) {
    j["domain"] = {{"shape", "square"}};
  } else if (const auto* d = std::get_if<DiscShape>(&c.shape)) {
    j["domain"] = {{"shape", "disc"}, {"center", {d->center.x, d->center.y}}, {"diameter", d->diameter}};
  } else {
    const auto& m = std::get<MaskImageShape>(c.shape);
    j["domain"] = {{"shape", "mask"}, {"mask", m.path}, {"threshold", m.threshold}};
  }
  auto electrode = [](const ElectrodeSpec& e) -> nlohmann::json {
    if (const auto* b = std::get_if<ElectrodeBox>(&e))
      return {{"kind", "box"}, {"box", {b->xmin, b->xmax, b->ymin, b->ymax}}};
    const auto& a = std::get<ElectrodeArc>(e);
    return {{"kind", "arc"}, {"angle_deg", a.angle * 180.0 / M_PI}, {"length", a.length}};
  };
  j["electrodes"] = {{"plus", electrode(c.plus)}, {"minus", electrode(c.minus)}};
  nlohmann::json ph;
  ph["sigma_b"] = c.phantom.sigma_b;
  if (const auto* t = std::get_if<ToyLensPhantom>(&c.phantom.kind)) {
    ph["kind"] = "toy_lens";
    ph["jump_offset"] = t->jump_offset;
  } else if (const auto* s = std::get_if<SheppLoganPhantom>(&c.phantom.kind)) {
    ph["kind"] = "shepp_logan";
    ph["half_width"] = s->half_width;
    ph["sigma_min"] = s->sigma_min;
    ph["sigma_max"] = s->sigma_max;
    ph["center"] = {s->center.x, s->center.y};
  } else if (const auto* im = std::get_if<ImagePhantom>(&c.phantom.kind)) {
    ph["kind"] = "image";
    ph["image"] = im->path;
    ph["gray_map"] = "gray/255 + 1";
  } else {
    ph["kind"] = "uniform";
    ph["value"] = std::get<UniformPhantom>(c.phantom.kind).value;
  }
  ph["clamp"] = {c.phantom.clamp_min, c.phantom.clamp_max};
  if (c.blur) ph["blur"] = {{"nu_pixels", c.blur->nu}, {"window", c.blur->window}, {"boundary", "periodic"}};
  ph["paired"] = c.paired;
  j["phantom"] = ph;
  j["current_A"] = c.recon.current;
  const auto& r = c.recon;
  j["reconstruction"] = {{"sigma_b", r.sigma_b},
                         {"margin_pixels", r.margin},
                         {"eps_stop", r.eps_stop},
                         {"max_iterations", r.max_iterations},
                         {"j_floor_fraction", r.j_floor_fraction},
                         {"log_clamp", r.log_clamp},
                         {"stop_on_tolerance", r.stop_on_tolerance},
                         {"eps0", r.eps0},
                         {"sigma_min0", r.sigma_min0},
                         {"sigma_max0", r.sigma_max0},
                         {"solver_rel_tol", r.solver.rel_tol},
                         {"solver_max_iterations", r.solver.max_iterations},
                         {"direct_fallback_max_unknowns", r.solver.direct_fallback_max_unknowns}};
  nlohmann::json data = {{"laplacian", c.data.analytic_laplacian ? "analytic" : "numeric"},
                         {"reference_mode", c.data.reference},
                         {"stray_field", {c.data.stray.a, c.data.stray.b, c.data.stray.c}},
                         {"fft_padding", c.data.fft_padding},
                         {"quadrature", c.data.direct_quadrature ? "direct" : "fft"}};
  if (c.data.presmooth) data["presmooth"] = {{"nu_pixels", c.data.presmooth->nu}, {"window", c.data.presmooth->window}};
  else data["presmooth"] = nullptr;
  j["data"] = data;
  j["verdict"] = {{"window", c.verdict.window},
                  {"zigzag_fraction", c.verdict.zigzag_fraction},
                  {"rel_tol", c.verdict.rel_tol},
                  {"plateau_tol", c.verdict.plateau_tol}};
  j["output"] = {{"fields", c.output.fields}, {"csv", c.output.csv}, {"heatmaps", c.output.heatmaps},
                 {"snapshots", c.output.snapshots}};
  return j;
}

/// Fixed discretisation choices, recorded so that a manifest fully states how
/// its numbers were produced.
inline nlohmann::json design_json(const ExperimentConfig& c) {
  return {{"grid", "node-centred, h = fov/(n-1)"},
          {"conduction", "five-point finite volume, harmonic-mean links, half/quarter boundary cells"},
          {"electrode_model", "equipotential Dirichlet pixels scaled to total current (auxiliary w solve)"},
          {"current_density", "mean of harmonic-mean face fluxes"},
          {"biot_savart", "cell-sum quadrature, zero self-cell, zero-padded FFT"},
          {"laplacian", "five-point, second-order one-sided at the mask boundary"},
          {"phi_psi", "mixed Dirichlet (arcs) / Neumann (electrodes) five-point solves, psi cached"},
          {"beta", -0.5 * c.recon.current},
          {"line_integrals", "endpoint differences between the arc pixels closing E+"},
          {"s_assembly", "staggered faces: two-point normal, averaged tangential derivatives"},
          {"sigma_laplace_u", "-(sigma grad u) . grad ln sigma, harmonic face conductivity"},
          {"divergence_of_s", "face divergence (adjoint of the face gradient)"},
          {"poisson", "five-point Dirichlet on the interior region"},
          {"stop_norm", "sup over the interior region"},
          {"j_floor", "fraction of max |J| over the interior region"},
          {"initial_guess", "sigma_b"},
          {"linear_solver", "conjugate gradients, incomplete Cholesky, zero initial guess; sparse LDLT fallback"},
          {"K_estimate", "FFT cell sum of 1/(2 pi r) with exact self-cell integral"},
          {"reference_quantum_T", kReferenceQuantum},
          {"heatmap_colormap", "viridis"}};
}

inline void write_series_csv(const fs::path& path, const CaseOutcome& c, const CaseOutcome* paired) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << "n,step_norm,re,re_hat,min_J,clamped_flag\n";
  const auto& steps = c.result.steps;
  for (std::size_t i = 0; i < steps.size(); ++i) {
    const auto& s = steps[i];
    double re_hat = std::numeric_limits<double>::quiet_NaN();
    if (paired && i < paired->result.steps.size()) re_hat = paired->result.steps[i].re;
    out << s.n << ',' << fmt(s.step_norm) << ',' << fmt(s.re) << ',' << fmt(re_hat) << ','
        << fmt(i < c.min_J.size() ? c.min_J[i] : std::numeric_limits<double>::quiet_NaN()) << ','
        << (s.clamped ? 1 : 0) << '\n';
  }
}

}  // namespace detail

namespace detail {

/// Colour scale shared by every sigma image of an experiment.
inline std::pair<double, double> sigma_scale(const ExperimentOutcome& ex, const DomainMask& domain) {
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (const auto& c : ex.cases)
    for (std::size_t k = 0; k < c.sigma_star.size(); ++k)
      if (domain.inside(k)) lo = std::min(lo, c.sigma_star[k]), hi = std::max(hi, c.sigma_star[k]);
  lo = ex.config.output.sigma_min.value_or(lo);
  hi = ex.config.output.sigma_max.value_or(hi);
  if (!(hi > lo)) hi = lo + 1.0;
  return {lo, hi};
}

}  // namespace detail

/// Writes fields, per-case CSVs and the manifest for an outcome.
inline void write_artifacts(const ExperimentOutcome& ex, const Geometry& geo) {
  const auto& cfg = ex.config;
  const auto& dir = ex.directory;
  fs::create_directories(dir);
  const CaseOutcome* raw = ex.find("raw");
  const CaseOutcome* blurred = ex.find("blurred");
  const CaseOutcome* primary = raw ? raw : blurred;
  const auto [lo, hi] = detail::sigma_scale(ex, geo.domain);

  nlohmann::json manifest;
  manifest["experiment"] = cfg.name;
  manifest["config"] = detail::config_json(cfg);
  manifest["design"] = detail::design_json(cfg);
  nlohmann::json inputs = nlohmann::json::object();
  for (const auto& p : cfg.inputs) inputs[fs::path(p).filename().string()] = detail::git_blob_sha1(detail::read_text(p));
  manifest["inputs"] = inputs;
  manifest["heatmap_scale"] = {{"sigma_min", lo}, {"sigma_max", hi}};

  for (const auto& c : ex.cases) {
    const auto cdir = dir / c.label;
    fs::create_directories(cdir);
    if (cfg.output.fields) {
      write_field_binary((cdir / "sigma_true.bin").string(), c.sigma_star);
      write_field_binary((cdir / "sigma_final.bin").string(), c.result.sigma);
      write_field_binary((cdir / "u.bin").string(), c.forward.u);
      write_field_binary((cdir / "J_true.bin").string(), c.forward.J);
      write_field_binary((cdir / "bz.bin").string(), c.bz);
      write_field_binary((cdir / "laplace_bz.bin").string(), c.laplace_bz);
      write_field_binary((cdir / "J_recovered.bin").string(), c.recovered.J);
      write_field_binary((cdir / "phi.bin").string(), c.recovered.phi);
      write_field_binary((cdir / "psi.bin").string(), c.recovered.psi);
      std::size_t taken = 0;
      for (int want : cfg.output.snapshots) {
        if (want > c.result.iterations || taken >= c.result.snapshots.size()) continue;
        write_field_binary((cdir / (detail::snapshot_name(want) + ".bin")).string(), c.result.snapshots[taken++]);
      }
    }
    if (cfg.output.csv) detail::write_series_csv(cdir / "re_series.csv", c, nullptr);

    nlohmann::json cj;
    cj["iterations"] = c.result.iterations;
    cj["verdict"] = std::string(verdict_name(c.result.verdict));
    cj["clamped"] = c.result.clamped;
    const auto re = c.result.re_series();
    cj["final_re"] = re.empty() ? nlohmann::json(nullptr) : nlohmann::json(re.back());
    cj["final_step_norm"] = c.result.steps.empty() ? 0.0 : c.result.steps.back().step_norm;
    cj["theta"] = c.theta.has_rate ? nlohmann::json(c.theta.theta) : nlohmann::json("no-rate");
    cj["theta_window"] = {c.theta.window_begin, c.theta.window_end};
    cj["beta"] = c.recovered.beta;
    cj["phi_line_integral"] = c.recovered.phi_integral;
    cj["psi_line_integral"] = c.recovered.psi_integral;
    cj["phi_line_integral_midpoint"] = c.beta_midpoint.first;
    cj["psi_line_integral_midpoint"] = c.beta_midpoint.second;
    cj["phi_sup"] = sup_norm(c.recovered.phi, geo.domain);
    cj["recovered_min_J"] = c.recovered.min_J;
    cj["recovered_max_J"] = c.recovered.max_J;
    cj["xi0_proxy"] = c.admissibility.sigma_max > 0.0 ? c.recovered.min_J / c.admissibility.sigma_max : 0.0;
    cj["warnings"] = c.recovered.warnings;
    cj["admissibility"] = detail::admissibility_json(c.admissibility);
    cj["electrode_potential_V"] = c.forward.electrode_potential;
    cj["flux_plus_A"] = c.forward.flux_plus;
    cj["flux_minus_A"] = c.forward.flux_minus;
    manifest["cases"][c.label] = cj;
  }
  if (cfg.output.csv && primary) {
    detail::write_series_csv(dir / "re_series.csv", *primary, primary == raw ? blurred : nullptr);
  }
  {
    std::ofstream out(dir / "manifest.json", std::ios::binary);
    if (!out) throw ConfigError("cannot write " + (dir / "manifest.json").string());
    out << manifest.dump(2) << '\n';
  }
}

/// Writes heatmaps of sigma*, the snapshots and the final iterate on the
/// experiment's fixed scale, plus Bz on its own range.
inline void write_heatmaps(const ExperimentOutcome& ex, const Geometry& geo) {
  const auto& cfg = ex.config;
  const auto [lo, hi] = detail::sigma_scale(ex, geo.domain);
  for (const auto& c : ex.cases) {
    const auto hdir = ex.directory / c.label / "heatmaps";
    fs::create_directories(hdir);
    write_png((hdir / "sigma_true.png").string(), detail::heatmap(c.sigma_star, geo.domain, lo, hi));
    write_png((hdir / "sigma_final.png").string(), detail::heatmap(c.result.sigma, geo.domain, lo, hi));
    std::size_t taken = 0;
    for (int want : cfg.output.snapshots) {
      if (want > c.result.iterations || taken >= c.result.snapshots.size()) continue;
      write_png((hdir / (detail::snapshot_name(want) + ".png")).string(),
                detail::heatmap(c.result.snapshots[taken++], geo.domain, lo, hi));
    }
    const double b = sup_norm(c.bz, geo.domain);
    write_png((hdir / "bz.png").string(), detail::heatmap(c.bz, geo.domain, -b, b));
  }
}

/// Runs every case of a configuration and, when `write` is set, emits the
/// artifact directory.
inline ExperimentOutcome run_experiment(const ExperimentConfig& cfg, bool write = true) {
  const auto sc = make_scenario(cfg);
  ExperimentOutcome ex{cfg, {}, output_directory(cfg)};
  CurrentRecovery recovery = detail::stage("recovery", [&] { return CurrentRecovery(sc.geometry.boundary, cfg.recon.solver); });
  if (!cfg.blur || cfg.paired) ex.cases.push_back(run_case(sc, false, &recovery));
  if (cfg.blur) ex.cases.push_back(run_case(sc, true, &recovery));
  if (write) {
    detail::stage("output", [&] {
      write_artifacts(ex, sc.geometry);
      if (cfg.output.heatmaps) write_heatmaps(ex, sc.geometry);
      return 0;
    });
  }
  return ex;
}

// ---------------------------------------------------------------------------
// compare

struct SeriesRow {
  int n = 0;
  double step_norm = 0.0, re = NAN, re_hat = NAN, min_J = NAN;
  bool clamped = false;
};

inline std::vector<SeriesRow> read_series_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path.string());
  std::string line;
  std::getline(in, line);
  if (detail::trim(line) != "n,step_norm,re,re_hat,min_J,clamped_flag") {
    throw ConfigError(path.string() + ":1: unexpected CSV header");
  }
  std::vector<SeriesRow> rows;
  int no = 1;
  while (std::getline(in, line)) {
    ++no;
    if (detail::trim(line).empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    while (cells.size() < 6) cells.emplace_back();
    auto num = [&](const std::string& s) { return s.empty() ? NAN : std::stod(s); };
    try {
      rows.push_back({std::stoi(cells[0]), num(cells[1]), num(cells[2]), num(cells[3]), num(cells[4]), cells[5] == "1"});
    } catch (const std::exception&) {
      throw ConfigError(path.string() + ":" + std::to_string(no) + ": malformed row");
    }
  }
  return rows;
}

/// Table of RE and RE-hat at n = 5, 10, ..., 50 for two artifact directories.
inline std::string compare_table(const fs::path& a, const fs::path& b) {
  const auto ra = read_series_csv(a / "re_series.csv");
  const auto rb = read_series_csv(b / "re_series.csv");
  auto at = [](const std::vector<SeriesRow>& rows, int n) -> const SeriesRow* {
    for (const auto& r : rows)
      if (r.n == n) return &r;
    return nullptr;
  };
  auto cell = [](double v) {
    char buf[32];
    if (!std::isfinite(v)) return std::string("      -");
    std::snprintf(buf, sizeof buf, "%7.4f", v);
    return std::string(buf);
  };
  std::ostringstream out;
  out << "  n  " << std::setw(17) << std::left << a.filename().string().substr(0, 17) << "  "
      << b.filename().string().substr(0, 17) << '\n';
  out << "     RE      RE-hat     RE      RE-hat\n";
  for (int n = 5; n <= 50; n += 5) {
    const auto* x = at(ra, n);
    const auto* y = at(rb, n);
    out << std::right << std::setw(3) << n << "  " << cell(x ? x->re : NAN) << "  " << cell(x ? x->re_hat : NAN) << "  "
        << cell(y ? y->re : NAN) << "  " << cell(y ? y->re_hat : NAN) << '\n';
  }
  return out.str();
}

/// Dry run: parses the configuration and builds the geometry without solving.
inline std::string validate_config(const ExperimentConfig& cfg) {
  const auto sc = make_scenario(cfg);
  const auto& g = sc.geometry;
  for (const auto& p : cfg.inputs)
    if (!fs::exists(p)) throw ConfigError("input file " + p + " does not exist");
  std::ostringstream out;
  out << cfg.name << ": grid " << cfg.nx << "x" << cfg.ny << ", h = " << g.grid.hx() << " m\n"
      << "domain pixels " << g.domain.count() << ", interior pixels " << g.interior.count() << "\n"
      << "E+ " << g.boundary.e_plus.size() << " pixels, E- " << g.boundary.e_minus.size() << " pixels, loop "
      << g.boundary.loop.size() << "\n"
      << "cases: " << ((!cfg.blur || cfg.paired) ? "raw " : "") << (cfg.blur ? "blurred" : "") << "\n";
  return out.str();
}

}  // namespace mreit
