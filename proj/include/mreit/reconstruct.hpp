#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "mreit/errors.hpp"
#include "mreit/fields.hpp"
#include "mreit/forward.hpp"
#include "mreit/geometry.hpp"
#include "mreit/metrics.hpp"
#include "mreit/pde.hpp"
#include "mreit/recovery.hpp"

namespace mreit {

struct ReconstructionConfig {
  double current = 0.01;     // A
  double sigma_b = 1.0;      // S/m
  int margin = 4;            // pixels between boundary and the interior region
  double eps_stop = 1e-6;    // sup-norm tolerance on ln(sigma^{n+1}/sigma^n)
  int max_iterations = 50;
  double j_floor_fraction = 1e-3;  // |J| floor relative to max |J| over the interior
  double log_clamp = std::log(1e6);
  bool stop_on_tolerance = true;
  // admissible-set bounds, used only by validate_admissible
  double eps0 = 1.0;
  double sigma_min0 = 1e-3;
  double sigma_max0 = 1e6;
  SolverOptions solver;

  void validate() const {
    if (!(current > 0.0) || !std::isfinite(current)) throw ConfigError("current must be positive");
    if (!(sigma_b > 0.0)) throw ConfigError("sigma_b must be positive");
    if (margin < 1) throw ConfigError("interior margin must be at least one pixel");
    if (!(eps_stop > 0.0)) throw ConfigError("stop tolerance must be positive");
    if (max_iterations < 1) throw ConfigError("iteration cap must be at least 1");
    if (!(j_floor_fraction >= 0.0 && j_floor_fraction < 1.0)) throw ConfigError("|J| floor must lie in [0, 1)");
    if (!(sigma_min0 <= sigma_b && sigma_b <= sigma_max0)) throw ConfigError("sigma_b outside [sigma-0, sigma+0]");
  }
};

/// Everything derived from the measurement: Bz, its Laplacian, and the
/// current density recovered from it.
struct DataBundle {
  ScalarField bz;
  ScalarField laplace_bz;
  VectorField2D J;
  double j_floor = 0.0;
  double min_J = 0.0;
};

struct IterationState {
  int n = 0;
  ScalarField sigma;
  ScalarField log_sigma;
  std::optional<ScalarField> u;  // potential for sigma^{n-1}, filled as the step runs
  bool clamped = false;
};

/// s = t^n - t* with t^n = (sigma Lap u / |J|^2) J, sigma Lap u = -grad u . grad sigma,
/// and t* = (Lap Bz / mu0 / |J|^2) perp(J). |J|^2 is floored at j_floor^2.
inline VectorField2D assemble_s(const ScalarField& sigma, const ScalarField& u, const VectorField2D& J,
                                const ScalarField& laplace_bz, const DomainMask& domain, double j_floor) {
  require_same_grid(sigma.grid(), u.grid(), "assemble_s");
  require_same_grid(sigma.grid(), J.grid(), "assemble_s");
  require_same_grid(sigma.grid(), laplace_bz.grid(), "assemble_s");
  const auto& g = sigma.grid();
  const auto gu = gradient(u, domain);
  const auto gs = gradient(sigma, domain);
  const double floor2 = j_floor * j_floor;
  VectorField2D s(g, Unit::Dimensionless);
  for (std::size_t k = 0; k < g.size(); ++k) {
    if (!domain.inside(k)) continue;
    const double jx = J.vx()[k], jy = J.vy()[k];
    const double j2 = std::max(jx * jx + jy * jy, floor2);
    if (!(j2 > 0.0)) continue;
    const double a = -(gu.vx()[k] * gs.vx()[k] + gu.vy()[k] * gs.vy()[k]) / j2;
    const double b = laplace_bz[k] / kMu0 / j2;
    s.vx()[k] = a * jx - b * jy;
    s.vy()[k] = a * jy + b * jx;
    if (!std::isfinite(s.vx()[k]) || !std::isfinite(s.vy()[k])) throw NumericError("non-finite value in s^n");
  }
  return s;
}

/// s on the staggered grid: x-components on vertical faces (stored at the
/// left cell), y-components on horizontal faces (stored at the lower cell).
/// Normal derivatives across a face are two-point differences, tangential
/// ones are averaged cell derivatives, and pointwise data are averaged, so
/// face_divergence(face gradient) equals the five-point Laplacian exactly.
/// -grad u . grad sigma is taken as -(sigma grad u) . grad ln sigma with the
/// conduction solver's harmonic face conductivity, which keeps the update
/// neutral across conductivity jumps.
struct FaceField {
  std::vector<double> sx;
  std::vector<double> sy;
  std::vector<std::uint8_t> has_x;
  std::vector<std::uint8_t> has_y;
};

inline FaceField assemble_s_faces(const ScalarField& sigma, const ScalarField& u, const VectorField2D& J,
                                  const ScalarField& laplace_bz, const DomainMask& domain, double j_floor) {
  require_same_grid(sigma.grid(), u.grid(), "assemble_s_faces");
  require_same_grid(sigma.grid(), J.grid(), "assemble_s_faces");
  require_same_grid(sigma.grid(), laplace_bz.grid(), "assemble_s_faces");
  const auto& g = sigma.grid();
  ScalarField log_sigma(g, 0.0);
  for (std::size_t k = 0; k < g.size(); ++k)
    if (domain.inside(k)) log_sigma[k] = std::log(sigma[k]);
  const auto gu = gradient(u, domain);
  const auto gl = gradient(log_sigma, domain);
  const double floor2 = j_floor * j_floor;
  FaceField f{std::vector<double>(g.size(), 0.0), std::vector<double>(g.size(), 0.0),
              std::vector<std::uint8_t>(g.size(), 0), std::vector<std::uint8_t>(g.size(), 0)};
  // a: cell k, b: neighbour across the face; axis 0 = x-face, 1 = y-face.
  auto face_s = [&](std::size_t a, std::size_t b, int axis) {
    const double h = axis == 0 ? g.hx() : g.hy();
    const double jx = 0.5 * (J.vx()[a] + J.vx()[b]), jy = 0.5 * (J.vy()[a] + J.vy()[b]);
    const double j2 = std::max(jx * jx + jy * jy, floor2);
    if (!(j2 > 0.0)) return 0.0;
    const double sf = 2.0 * sigma[a] * sigma[b] / (sigma[a] + sigma[b]);
    const auto& gut = axis == 0 ? gu.vy() : gu.vx();
    const auto& glt = axis == 0 ? gl.vy() : gl.vx();
    const double normal = sf * (u[b] - u[a]) / h * (log_sigma[b] - log_sigma[a]) / h;
    const double tangential = 0.25 * (sigma[a] * gut[a] + sigma[b] * gut[b]) * (glt[a] + glt[b]);
    const double ta = -(normal + tangential) / j2;
    const double tb = 0.5 * (laplace_bz[a] + laplace_bz[b]) / kMu0 / j2;
    const double v = axis == 0 ? ta * jx - tb * jy : ta * jy + tb * jx;
    if (!std::isfinite(v)) throw NumericError("non-finite value in s^n");
    return v;
  };
  for (int j = 0; j < g.ny(); ++j) {
    for (int i = 0; i < g.nx(); ++i) {
      const auto k = g.index(i, j);
      if (!domain.inside(k)) continue;
      if (domain.inside(i + 1, j)) {
        f.sx[k] = face_s(k, g.index(i + 1, j), 0);
        f.has_x[k] = 1;
      }
      if (domain.inside(i, j + 1)) {
        f.sy[k] = face_s(k, g.index(i, j + 1), 1);
        f.has_y[k] = 1;
      }
    }
  }
  return f;
}

/// Discrete divergence of a face field at the interior pixels of `region`.
inline ScalarField face_divergence(const FaceField& f, const Grid2D& g, const DomainMask& region) {
  ScalarField out(g, 0.0);
  for (int j = 0; j < g.ny(); ++j) {
    for (int i = 0; i < g.nx(); ++i) {
      const auto k = g.index(i, j);
      if (!region.interior(k)) continue;
      const auto w = g.index(i - 1, j), s = g.index(i, j - 1);
      if (!f.has_x[k] || !f.has_x[w] || !f.has_y[k] || !f.has_y[s]) {
        throw GeometryError("interior region must keep one pixel clear of the domain edge");
      }
      out[k] = (f.sx[k] - f.sx[w]) / g.hx() + (f.sy[k] - f.sy[s]) / g.hy();
    }
  }
  return out;
}

struct StepRecord {
  int n = 0;           // index of the new iterate
  double step_norm = 0.0;
  double re = std::numeric_limits<double>::quiet_NaN();
  bool clamped = false;
};

/// Owns the constant operators of one reconstruction: the interior Poisson
/// solver and the |J| floor.
class HarmonicBzSolver {
 public:
  HarmonicBzSolver(const ReconstructionConfig& cfg, const BoundarySpec& bc, const DomainMask& interior,
                   DataBundle data)
      : cfg_(cfg), bc_(bc), interior_(interior), data_(std::move(data)), poisson_(interior, cfg.solver) {
    cfg_.validate();
    if (!bc_.domain.contains(interior_)) throw GeometryError("interior region must lie inside the domain");
  }

  const ReconstructionConfig& config() const { return cfg_; }
  const DataBundle& data() const { return data_; }
  const DomainMask& interior() const { return interior_; }
  const DomainMask& domain() const { return bc_.domain; }

  IterationState initial_state() const {
    const auto& g = bc_.grid();
    return IterationState{0, ScalarField(g, cfg_.sigma_b, Unit::SiemensPerMeter),
                          ScalarField(g, std::log(cfg_.sigma_b)), std::nullopt, false};
  }

  /// One harmonic Bz step sigma^n -> sigma^{n+1}; returns the new state and
  /// the sup-norm of the log update over the interior.
  IterationState step(const IterationState& state, double& step_norm) {
    const auto& g = bc_.grid();
    auto cond = solve_conduction(state.sigma, bc_, cfg_.current, cfg_.solver);
    const auto s = assemble_s_faces(state.sigma, cond.u, data_.J, data_.laplace_bz, bc_.domain, data_.j_floor);
    const auto rhs = face_divergence(s, g, interior_);
    const ScalarField boundary(g, std::log(cfg_.sigma_b));
    auto log_next = poisson_.solve(rhs, boundary);
    IterationState next{state.n + 1, ScalarField(g, cfg_.sigma_b, Unit::SiemensPerMeter),
                        ScalarField(g, std::log(cfg_.sigma_b)), std::move(cond.u), false};
    step_norm = 0.0;
    for (std::size_t k = 0; k < g.size(); ++k) {
      if (!interior_.inside(k)) continue;
      double v = log_next[k];
      if (!std::isfinite(v)) throw NumericError("non-finite conductivity update");
      if (std::abs(v) > cfg_.log_clamp) {
        v = std::copysign(cfg_.log_clamp, v);
        next.clamped = true;
      }
      next.log_sigma[k] = v;
      next.sigma[k] = std::exp(v);
      step_norm = std::max(step_norm, std::abs(v - state.log_sigma[k]));
    }
    return next;
  }

 private:
  ReconstructionConfig cfg_;
  BoundarySpec bc_;
  DomainMask interior_;
  DataBundle data_;
  PoissonDirichletSolver poisson_;
};

/// Builds the data bundle: Laplacian of Bz on the domain (or a supplied
/// one), recovered J, and the |J| floor over the interior.
inline DataBundle prepare_data(const ScalarField& bz, const BoundarySpec& bc, const DomainMask& interior,
                               const ReconstructionConfig& cfg, CurrentRecovery& recovery,
                               const ScalarField* laplace_override = nullptr,
                               RecoveredCurrent* recovered_out = nullptr) {
  ScalarField lap = laplace_override ? *laplace_override : laplacian(bz, bc.domain);
  auto rec = recovery.recover(lap, cfg.current, interior, cfg.j_floor_fraction);
  DataBundle data{bz, std::move(lap), rec.J, cfg.j_floor_fraction * rec.max_J, rec.min_J};
  if (recovered_out) *recovered_out = std::move(rec);
  return data;
}

struct ReconstructionResult {
  ScalarField sigma;
  std::vector<StepRecord> steps;
  Verdict verdict = Verdict::Cap;
  bool clamped = false;
  int iterations = 0;
  std::vector<ScalarField> snapshots;  // iterates requested through snapshot_at

  std::vector<double> step_norms() const {
    std::vector<double> v;
    for (const auto& s : steps) v.push_back(s.step_norm);
    return v;
  }
  std::vector<double> re_series() const {
    std::vector<double> v;
    for (const auto& s : steps)
      if (std::isfinite(s.re)) v.push_back(s.re);
    return v;
  }
};

struct RunOptions {
  const ScalarField* sigma_star = nullptr;
  std::vector<int> snapshot_at;
  std::function<void(const StepRecord&, const IterationState&)> on_step;
  VerdictRule verdict_rule;
};

/// Iterates from sigma^0 = sigma_b until the step norm drops to eps_stop or
/// the cap is reached.
inline ReconstructionResult run_schbz(HarmonicBzSolver& solver, const RunOptions& opt = {}) {
  const auto& cfg = solver.config();
  auto state = solver.initial_state();
  ReconstructionResult res{state.sigma, {}, Verdict::Cap, false, 0, {}};
  for (int it = 0; it < cfg.max_iterations; ++it) {
    double norm = 0.0;
    state = solver.step(state, norm);
    StepRecord rec{state.n, norm, std::numeric_limits<double>::quiet_NaN(), state.clamped};
    if (opt.sigma_star) rec.re = compute_re(state.sigma, *opt.sigma_star, solver.domain());
    res.clamped = res.clamped || state.clamped;
    res.steps.push_back(rec);
    if (opt.on_step) opt.on_step(rec, state);
    for (int n : opt.snapshot_at)
      if (n == state.n) res.snapshots.push_back(state.sigma);
    if (cfg.stop_on_tolerance && norm <= cfg.eps_stop) break;
  }
  res.iterations = state.n;
  res.sigma = state.sigma;
  const auto re = res.re_series();
  res.verdict = classify_run(res.step_norms(), re, cfg.eps_stop, res.clamped, opt.verdict_rule);
  return res;
}


struct AdmissibilityReport {
  double grad_log_sup = 0.0;  // sup |grad ln sigma| over the domain
  double sigma_min = 0.0;
  double sigma_max = 0.0;
  bool band_is_background = true;  // sigma == sigma_b on domain minus interior
  double K = 0.0;
  bool gradient_ok = false;  // grad_log_sup < 1/(4K)
  bool eps0_ok = false;      // configured eps0 < 1/(4K)
  bool range_ok = false;     // sigma within [sigma-0, sigma+0]

  bool admissible() const { return band_is_background && gradient_ok && range_ok; }
};

/// K = sup over the domain of sum_{interior} h^2 / (2 pi |r - r'|); the self
/// cell uses the exact integral of 1/|r| over the pixel rectangle.
inline double estimate_K(const DomainMask& domain, const DomainMask& interior, int padding = 2) {
  const auto& g = domain.grid();
  std::vector<double> ind(g.size(), 0.0);
  for (std::size_t k = 0; k < g.size(); ++k) ind[k] = interior.inside(k) ? 1.0 : 0.0;
  const double a = 0.5 * g.hx(), b = 0.5 * g.hy();
  const double self = 4.0 * (a * std::asinh(b / a) + b * std::asinh(a / b)) / (2.0 * M_PI);
  const double area = g.cell_area();
  const std::array<const std::vector<double>*, 1> src{&ind};
  const auto conv = detail::padded_convolution<1>(
      g, src,
      [&](int di, int dj) {
        if (di == 0 && dj == 0) return std::array<double, 1>{self};
        return std::array<double, 1>{area / (2.0 * M_PI * std::hypot(di * g.hx(), dj * g.hy()))};
      },
      padding);
  double K = 0.0;
  for (std::size_t k = 0; k < g.size(); ++k)
    if (domain.inside(k)) K = std::max(K, conv[k]);
  return K;
}

inline AdmissibilityReport validate_admissible(const ScalarField& sigma, const ReconstructionConfig& cfg,
                                               const DomainMask& domain, const DomainMask& interior) {
  AdmissibilityReport r;
  r.sigma_min = std::numeric_limits<double>::infinity();
  r.sigma_max = -std::numeric_limits<double>::infinity();
  ScalarField ls(sigma.grid(), 0.0);
  for (std::size_t k = 0; k < sigma.size(); ++k) {
    if (!domain.inside(k)) continue;
    r.sigma_min = std::min(r.sigma_min, sigma[k]);
    r.sigma_max = std::max(r.sigma_max, sigma[k]);
    ls[k] = sigma[k] > 0.0 ? std::log(sigma[k]) : -std::numeric_limits<double>::infinity();
    if (!interior.inside(k) && sigma[k] != cfg.sigma_b) r.band_is_background = false;
  }
  if (r.sigma_min > 0.0) r.grad_log_sup = sup_norm(gradient(ls, domain), domain);
  else r.grad_log_sup = std::numeric_limits<double>::infinity();
  r.K = estimate_K(domain, interior);
  r.gradient_ok = r.grad_log_sup < 1.0 / (4.0 * r.K);
  r.eps0_ok = cfg.eps0 < 1.0 / (4.0 * r.K);
  r.range_ok = r.sigma_min >= cfg.sigma_min0 && r.sigma_max <= cfg.sigma_max0;
  return r;
}

}  // namespace mreit
