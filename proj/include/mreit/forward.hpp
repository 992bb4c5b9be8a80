#pragma once

#include <fftw3.h>

#include <array>
#include <cmath>
#include <complex>
#include <functional>
#include <memory>

#include "mreit/errors.hpp"
#include "mreit/fields.hpp"
#include "mreit/geometry.hpp"
#include "mreit/pde.hpp"

namespace mreit {

inline constexpr double kMu0 = 4.0 * M_PI * 1e-7;  // H/m

/// Quantum of the dyadic grid Bz is snapped to in reference mode.
inline constexpr double kReferenceQuantum = 0x1p-60;  // T

/// J = -sigma grad u on the domain, zero outside. Each component is the mean
/// of the two face fluxes -sigma_f du/h through the pixel's faces along that
/// axis, sigma_f being the harmonic mean used by the conduction solver; a
/// pixel with one face inside the domain takes that face. This keeps J
/// accurate across conductivity jumps, where sigma times a central
/// difference of u is not.
inline VectorField2D compute_J(const ScalarField& sigma, const ScalarField& u, const DomainMask& domain) {
  require_same_grid(sigma.grid(), u.grid(), "compute_J");
  const auto& g = u.grid();
  VectorField2D J(g, Unit::AmperePerSquareMeter);
  auto flux = [&](std::size_t a, std::size_t b, double h) {
    const double sf = 2.0 * sigma[a] * sigma[b] / (sigma[a] + sigma[b]);
    return -sf * (u[b] - u[a]) / h;
  };
  for (int j = 0; j < g.ny(); ++j) {
    for (int i = 0; i < g.nx(); ++i) {
      const auto k = g.index(i, j);
      if (!domain.inside(k)) continue;
      double fx = 0.0, fy = 0.0;
      int nx = 0, ny = 0;
      if (domain.inside(i + 1, j)) fx += flux(k, g.index(i + 1, j), g.hx()), ++nx;
      if (domain.inside(i - 1, j)) fx += flux(g.index(i - 1, j), k, g.hx()), ++nx;
      if (domain.inside(i, j + 1)) fy += flux(k, g.index(i, j + 1), g.hy()), ++ny;
      if (domain.inside(i, j - 1)) fy += flux(g.index(i, j - 1), k, g.hy()), ++ny;
      J.vx()[k] = nx ? fx / nx : 0.0;
      J.vy()[k] = ny ? fy / ny : 0.0;
    }
  }
  return J;
}

namespace detail {

struct FftwFree {
  void operator()(void* p) const { fftw_free(p); }
};
template <class T>
using FftwBuffer = std::unique_ptr<T[], FftwFree>;

template <class T>
FftwBuffer<T> fftw_buffer(std::size_t n) {
  auto* p = static_cast<T*>(fftw_malloc(sizeof(T) * n));
  if (!p) throw NumericError("FFT buffer allocation failed");
  return FftwBuffer<T>(p);
}

/// Kernels x/(x^2+y^2) and y/(x^2+y^2) at a pixel offset; zero at the origin.
inline std::array<double, 2> biot_savart_kernel(const Grid2D& g, int di, int dj) {
  if (di == 0 && dj == 0) return {0.0, 0.0};
  const double x = di * g.hx(), y = dj * g.hy();
  const double r2 = x * x + y * y;
  return {x / r2, y / r2};
}

/// Linear (non-circular) correlation-free convolution of several sources
/// with offset kernels on a zero-padded grid:
///   out(r) = sum_c sum_r' K_c(r - r') src_c(r').
/// `kernel(di, dj)` returns one value per channel.
template <std::size_t C>
std::vector<double> padded_convolution(const Grid2D& g, const std::array<const std::vector<double>*, C>& src,
                                       const std::function<std::array<double, C>(int, int)>& kernel, int padding) {
  if (padding < 2) throw ConfigError("FFT padding factor must be at least 2");
  const int nx = g.nx(), ny = g.ny();
  const int px = padding * nx, py = padding * ny;
  const int pxc = px / 2 + 1;
  const std::size_t real_n = static_cast<std::size_t>(px) * py;
  const std::size_t cplx_n = static_cast<std::size_t>(py) * pxc;
  auto rbuf = fftw_buffer<double>(real_n);
  auto cbuf = fftw_buffer<fftw_complex>(cplx_n);
  auto acc = fftw_buffer<fftw_complex>(cplx_n);
  for (std::size_t k = 0; k < cplx_n; ++k) acc[k][0] = acc[k][1] = 0.0;
  fftw_plan fwd = fftw_plan_dft_r2c_2d(py, px, rbuf.get(), cbuf.get(), FFTW_ESTIMATE);
  fftw_plan inv = fftw_plan_dft_c2r_2d(py, px, acc.get(), rbuf.get(), FFTW_ESTIMATE);
  if (!fwd || !inv) throw NumericError("FFT plan creation failed");

  auto transform = [&](auto&& fill) {
    std::fill(rbuf.get(), rbuf.get() + real_n, 0.0);
    fill();
    fftw_execute(fwd);
  };
  std::vector<std::complex<double>> kernel_hat(cplx_n);
  for (std::size_t c = 0; c < C; ++c) {
    // kernel laid out circularly: offset d stored at index d mod p
    transform([&] {
      for (int dj = -(ny - 1); dj <= ny - 1; ++dj)
        for (int di = -(nx - 1); di <= nx - 1; ++di) {
          const int a = (di + px) % px, b = (dj + py) % py;
          rbuf[static_cast<std::size_t>(b) * px + a] = kernel(di, dj)[c];
        }
    });
    for (std::size_t k = 0; k < cplx_n; ++k) kernel_hat[k] = {cbuf[k][0], cbuf[k][1]};
    transform([&] {
      const auto& s = *src[c];
      for (int j = 0; j < ny; ++j)
        for (int i = 0; i < nx; ++i) rbuf[static_cast<std::size_t>(j) * px + i] = s[g.index(i, j)];
    });
    for (std::size_t k = 0; k < cplx_n; ++k) {
      const std::complex<double> v = kernel_hat[k] * std::complex<double>(cbuf[k][0], cbuf[k][1]);
      acc[k][0] += v.real();
      acc[k][1] += v.imag();
    }
  }
  fftw_execute(inv);
  fftw_destroy_plan(fwd);
  fftw_destroy_plan(inv);
  std::vector<double> out(g.size());
  const double norm = 1.0 / static_cast<double>(real_n);
  for (int j = 0; j < ny; ++j)
    for (int i = 0; i < nx; ++i) out[g.index(i, j)] = rbuf[static_cast<std::size_t>(j) * px + i] * norm;
  return out;
}

inline void require_finite_field(const VectorField2D& J) {
  for (std::size_t k = 0; k < J.vx().size(); ++k) {
    if (!std::isfinite(J.vx()[k]) || !std::isfinite(J.vy()[k])) throw NumericError("current density is not finite");
  }
}

inline void require_support(const VectorField2D& J, const DomainMask* support) {
  if (!support) return;
  for (std::size_t k = 0; k < J.vx().size(); ++k) {
    if (!support->inside(k) && (J.vx()[k] != 0.0 || J.vy()[k] != 0.0)) {
      throw NumericError("current density is not supported on the domain mask");
    }
  }
}

}  // namespace detail

/// Bz(r) = mu0/(2 pi) sum_r' h^2 [(y-y')Jx(r') - (x-x')Jy(r')] / |r-r'|^2 by
/// zero-padded FFT convolution, i.e. the z-component of (mu0/4 pi) J x R / |R|^3
/// integrated along an infinite cylinder. Optional `support` rejects J outside
/// the mask.
inline ScalarField bz_fft(const VectorField2D& J, int padding = 2, const DomainMask* support = nullptr) {
  detail::require_finite_field(J);
  detail::require_support(J, support);
  const auto& g = J.grid();
  const std::array<const std::vector<double>*, 2> src{&J.vy(), &J.vx()};
  auto conv = detail::padded_convolution<2>(
      g, src,
      [&](int di, int dj) {
        const auto k = detail::biot_savart_kernel(g, di, dj);
        return std::array<double, 2>{-k[0], k[1]};
      },
      padding);
  const double scale = kMu0 / (2.0 * M_PI) * g.cell_area();
  for (auto& v : conv) v *= scale;
  return ScalarField(g, std::move(conv), Unit::Tesla);
}

/// Same quadrature as bz_fft by explicit pairwise summation.
inline ScalarField bz_direct(const VectorField2D& J, const DomainMask* support = nullptr) {
  detail::require_finite_field(J);
  detail::require_support(J, support);
  const auto& g = J.grid();
  std::vector<std::size_t> active;
  for (std::size_t k = 0; k < g.size(); ++k)
    if (J.vx()[k] != 0.0 || J.vy()[k] != 0.0) active.push_back(k);
  ScalarField out(g, 0.0, Unit::Tesla);
  const double scale = kMu0 / (2.0 * M_PI) * g.cell_area();
  for (std::size_t k = 0; k < g.size(); ++k) {
    const int i = g.col(k), j = g.row(k);
    double acc = 0.0;
    for (const auto q : active) {
      const auto kern = detail::biot_savart_kernel(g, i - g.col(q), j - g.row(q));
      acc += kern[1] * J.vx()[q] - kern[0] * J.vy()[q];
    }
    out[k] = scale * acc;
  }
  return out;
}

/// Snaps Bz onto the dyadic grid q*Z (reference mode). Sums and differences
/// of snapped values are then exact, which keeps reconstructions bitwise
/// reproducible under affine perturbations.
inline ScalarField quantize_reference(const ScalarField& bz) {
  ScalarField out = bz;
  for (auto& v : out.values()) {
    const double m = std::nearbyint(v / kReferenceQuantum);
    if (std::abs(m) > 0x1p50) throw NumericError("Bz too large for reference quantization");
    v = m * kReferenceQuantum;
  }
  return out;
}

struct StrayField {
  double a = 0.0;  // T
  double b = 0.0;  // T/m
  double c = 0.0;  // T/m
};

/// Bz + a + b x + c y. In reference mode the polynomial is rounded to the
/// dyadic grid as an exact affine function of the pixel indices, so the
/// five-point Laplacian annihilates it bit for bit.
inline ScalarField add_stray_field(const ScalarField& bz, const StrayField& h, bool reference = false) {
  const auto& g = bz.grid();
  ScalarField out = bz;
  if (!reference) {
    for (int j = 0; j < g.ny(); ++j)
      for (int i = 0; i < g.nx(); ++i) out(i, j) += h.a + h.b * g.x(i) + h.c * g.y(j);
    return out;
  }
  const double q = kReferenceQuantum;
  const double A = std::nearbyint((h.a + h.b * g.x(0) + h.c * g.y(0)) / q);
  const double B = std::nearbyint(h.b * g.hx() / q);
  const double C = std::nearbyint(h.c * g.hy() / q);
  for (int j = 0; j < g.ny(); ++j)
    for (int i = 0; i < g.nx(); ++i) {
      const double m = std::nearbyint(out(i, j) / q) + A + B * i + C * j;
      if (std::abs(m) > 0x1p52) throw NumericError("stray field exceeds the reference-mode range");
      out(i, j) = m * q;
    }
  return out;
}

/// Laplacian of Bz from sigma and u alone, -mu0 curl J =
/// mu0 (d/dx(sigma du/dy) - d/dy(sigma du/dx)), with the masked stencils.
inline ScalarField analytic_laplace_bz(const ScalarField& sigma, const ScalarField& u, const DomainMask& domain) {
  const auto& g = u.grid();
  const auto gu = gradient(u, domain);
  ScalarField sx(g, 0.0), sy(g, 0.0);
  for (std::size_t k = 0; k < g.size(); ++k) {
    sx[k] = sigma[k] * gu.vx()[k];
    sy[k] = sigma[k] * gu.vy()[k];
  }
  const auto dsy = gradient(sy, domain);
  const auto dsx = gradient(sx, domain);
  ScalarField out(g, 0.0, Unit::TeslaPerSquareMeter);
  for (std::size_t k = 0; k < g.size(); ++k)
    if (domain.inside(k)) out[k] = kMu0 * (dsy.vx()[k] - dsx.vy()[k]);
  return out;
}

struct ForwardOptions {
  int fft_padding = 2;
  bool direct_quadrature = false;
  SolverOptions solver;
};

struct ForwardSolution {
  ScalarField u;
  VectorField2D J;
  ScalarField bz;
  double current = 0.0;
  double mu0 = kMu0;
  double electrode_potential = 0.0;
  double flux_plus = 0.0;
  double flux_minus = 0.0;
};

inline ForwardSolution solve_forward(const ScalarField& sigma, const BoundarySpec& bc, double current,
                                     const ForwardOptions& opt = {}) {
  auto cond = solve_conduction(sigma, bc, current, opt.solver);
  auto J = compute_J(sigma, cond.u, bc.domain);
  auto bz = opt.direct_quadrature ? bz_direct(J, &bc.domain) : bz_fft(J, opt.fft_padding, &bc.domain);
  return ForwardSolution{std::move(cond.u), std::move(J),     std::move(bz),  current,
                         kMu0,              cond.electrode_potential, cond.flux_plus, cond.flux_minus};
}

}  // namespace mreit
