#pragma once

#include <chrono>
#include <cmath>
#include <string>
#include <vector>

#include "mreit/mreit.hpp"

namespace mreit::testing {

/// [-1, 1]^2 with electrodes on the x = +-1 edges over |y| <= 0.15.
inline Geometry toy_geometry(int n, int margin = 4) {
  const double half = 1.0 / (n - 1);
  return make_geometry(build_grid(n, n, 2.0, 2.0, {-1.0, -1.0}), SquareShape{},
                       ElectrodeBox{-1.1, -1.0 + half, -0.15, 0.15}, ElectrodeBox{1.0 - half, 1.1, -0.15, 0.15}, margin);
}

/// 0.45 m disc in a 0.6 m field of view with opposing 0.0972 m arcs.
inline Geometry shepp_geometry(int n, int margin = 4) {
  return make_geometry(build_grid(n, n, 0.6, 0.6, {-0.3, -0.3}), DiscShape{{0.0, 0.0}, 0.45},
                       ElectrodeArc{M_PI, 0.0972}, ElectrodeArc{0.0, 0.0972}, margin);
}

/// Pixels of `m` whose 5x5 neighbourhood lies in `m`.
inline DomainMask deep_interior(const DomainMask& m) { return shrink_interior(m, 2); }

inline double rel_l2(const VectorField2D& a, const VectorField2D& b, const DomainMask& m) {
  double num = 0.0, den = 0.0;
  for (std::size_t k = 0; k < a.vx().size(); ++k) {
    if (!m.inside(k)) continue;
    const double dx = a.vx()[k] - b.vx()[k], dy = a.vy()[k] - b.vy()[k];
    num += dx * dx + dy * dy;
    den += b.vx()[k] * b.vx()[k] + b.vy()[k] * b.vy()[k];
  }
  return std::sqrt(num / den);
}

/// Biot-Savart cell sum evaluated term by term from the physical law
/// Bz = mu0/(4 pi) int (J x (r - r'))_z / |r - r'|^3 dV', integrated over an
/// infinite z-line: mu0/(2 pi) h^2 sum ((y - y') Jx - (x - x') Jy) / rho^2.
inline double biot_savart_at(const VectorField2D& J, int i, int j) {
  const auto& g = J.grid();
  double acc = 0.0;
  for (std::size_t k = 0; k < g.size(); ++k) {
    const int a = g.col(k), b = g.row(k);
    if (a == i && b == j) continue;
    const double dx = g.x(i) - g.x(a), dy = g.y(j) - g.y(b);
    acc += (dy * J.vx()[k] - dx * J.vy()[k]) / (dx * dx + dy * dy);
  }
  return kMu0 / (2.0 * M_PI) * g.cell_area() * acc;
}

inline double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---------------------------------------------------------------------------
// operator invariants

struct InvariantCheck {
  std::string name;
  double value;
  double limit;
  bool ok() const { return value <= limit; }
};

/// sup |lap(a + bx + cy)| on the domain against the rounding scale.
inline InvariantCheck affine_annihilation(const Geometry& geo) {
  const auto& g = geo.grid;
  const double a = 0.7, b = -1.3, c = 2.1;
  auto f = ScalarField::from_function(g, [&](double x, double y) { return a + b * x + c * y; });
  const double scale = 64.0 * std::numeric_limits<double>::epsilon() * sup_norm(f, geo.domain) / (g.hx() * g.hx());
  return {"affine annihilation", sup_norm(laplacian(f, geo.domain), geo.domain), scale};
}

/// sup |div perp grad f| on pixels whose stencils stay centred.
inline InvariantCheck div_perp_grad(const Geometry& geo) {
  const auto& g = geo.grid;
  auto f = ScalarField::from_function(g, [](double x, double y) { return std::sin(2 * x) * std::cosh(y) + x * x * y; });
  const auto d = divergence(perp(gradient(f, geo.domain)), geo.domain);
  const auto deep = deep_interior(geo.domain);
  const double scale = sup_norm(f, geo.domain) / (g.hx() * g.hy());
  return {"div perp grad", sup_norm(d, deep) / scale, 1e-10};
}

/// Blur keeps the periodic mean and never leaves the input range.
inline std::vector<InvariantCheck> blur_mean_range(const Grid2D& g) {
  auto f = ScalarField::from_function(g, [](double x, double y) {
    return 1.5 + std::sin(7 * x) * std::cos(5 * y) + (x * y > 0.1 ? 0.8 : 0.0);
  });
  const auto b = gaussian_blur(f, 5.0, 7);
  double mf = 0.0, mb = 0.0, lo = f[0], hi = f[0], blo = b[0], bhi = b[0];
  for (std::size_t k = 0; k < f.size(); ++k) {
    mf += f[k];
    mb += b[k];
    lo = std::min(lo, f[k]);
    hi = std::max(hi, f[k]);
    blo = std::min(blo, b[k]);
    bhi = std::max(bhi, b[k]);
  }
  const double n = static_cast<double>(f.size());
  const double widen = std::max({0.0, lo - blo, bhi - hi});
  return {{"blur mean", std::abs(mf - mb) / n, 1e-12}, {"blur range", widen, 0.0}};
}

/// Conduction extrema on the electrodes; harmonic Poisson extrema on the boundary.
inline std::vector<InvariantCheck> maximum_principle(const Geometry& geo) {
  const auto& g = geo.grid;
  const auto sigma = toy_sigma(g);
  const auto sol = solve_conduction(sigma, geo.boundary, 0.01);
  double umax = -1e300, umin = 1e300;
  for (std::size_t k = 0; k < g.size(); ++k)
    if (geo.domain.inside(k)) umax = std::max(umax, sol.u[k]), umin = std::min(umin, sol.u[k]);
  const double V = sol.electrode_potential;
  auto boundary = ScalarField::from_function(g, [](double x, double y) { return std::sin(3 * x) * std::cos(2 * y) + 0.3 * y; });
  const auto p = solve_poisson_dirichlet(ScalarField(g, 0.0), boundary, geo.interior);
  double bmax = -1e300, bmin = 1e300, imax = -1e300, imin = 1e300;
  for (std::size_t k = 0; k < g.size(); ++k) {
    if (!geo.interior.inside(k)) continue;
    if (geo.interior.on_boundary(k)) {
      bmax = std::max(bmax, p[k]);
      bmin = std::min(bmin, p[k]);
    } else {
      imax = std::max(imax, p[k]);
      imin = std::min(imin, p[k]);
    }
  }
  const double tol = 1e-8;
  return {{"conduction maximum on E+", std::max(0.0, umax - V) / V, tol},
          {"conduction minimum on E-", std::max(0.0, -umin) / V, tol},
          {"poisson maximum principle", std::max({0.0, imax - bmax, bmin - imin}), tol}};
}

/// Signed electrode fluxes cancel and E+ carries I.
inline std::vector<InvariantCheck> flux_conservation(const Geometry& geo) {
  const double I = 0.01;
  const auto sol = solve_conduction(gaussian_blur(toy_sigma(geo.grid), 5.0, 7), geo.boundary, I);
  return {{"flux balance", std::abs(sol.flux_plus + sol.flux_minus) / I, 1e-8},
          {"flux through E+", std::abs(sol.flux_plus - I) / I, 1e-9}};
}

inline std::vector<InvariantCheck> operator_invariants(int n = 64) {
  const auto toy = toy_geometry(n);
  const auto disc = shepp_geometry(n);
  std::vector<InvariantCheck> out;
  for (const auto* geo : {&toy, &disc}) {
    out.push_back(affine_annihilation(*geo));
    out.push_back(div_perp_grad(*geo));
  }
  for (auto& c : blur_mean_range(toy.grid)) out.push_back(c);
  for (auto& c : maximum_principle(toy)) out.push_back(c);
  for (auto& c : flux_conservation(toy)) out.push_back(c);
  return out;
}

}  // namespace mreit::testing
