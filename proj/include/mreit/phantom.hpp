#pragma once

#include <array>
#include <cmath>
#include <optional>
#include <string>
#include <variant>

#include "mreit/fields.hpp"
#include "mreit/geometry.hpp"
#include "mreit/image_io.hpp"

namespace mreit {

/// Radially symmetric lens on [-1,1]^2:
///   1 + (cos r - sqrt(3)/2)/2 + jump_offset  for r <= pi/8, else 1.
/// With the default offset of 1 the profile jumps from ~2.029 to 1 at r = pi/8.
struct ToyLensPhantom {
  double jump_offset = 1.0;
};

/// Modified Shepp-Logan head. `half_width` is the physical size (m) of the
/// phantom's unit half-square; intensities in [0,1] map affinely onto
/// [sigma_min, sigma_max].
struct SheppLoganPhantom {
  Point center{0.0, 0.0};
  double half_width = 0.2;
  double sigma_min = 0.5;
  double sigma_max = 2.0;
};

/// sigma = gray/255 + 1 from an 8-bit image resampled onto the grid.
struct ImagePhantom {
  std::string path;
};

struct UniformPhantom {
  double value = 1.0;
};

using PhantomKind = std::variant<ToyLensPhantom, SheppLoganPhantom, ImagePhantom, UniformPhantom>;

struct BlurSpec {
  double nu = 1.0;  // pixels
  int window = 3;
};

struct PhantomSpec {
  PhantomKind kind;
  std::optional<BlurSpec> blur;
  double sigma_b = 1.0;
  double clamp_min = 1e-3;
  double clamp_max = 1e6;
};

inline double toy_lens_value(double x, double y, double jump_offset = 1.0) {
  const double r = std::hypot(x, y);
  if (r <= M_PI / 8.0) return 1.0 + 0.5 * (std::cos(r) - std::sqrt(3.0) / 2.0) + jump_offset;
  return 1.0;
}

inline ScalarField toy_sigma(const Grid2D& grid, const ToyLensPhantom& p = {}) {
  return ScalarField::from_function(
      grid, [&](double x, double y) { return toy_lens_value(x, y, p.jump_offset); }, Unit::SiemensPerMeter);
}

/// Standard modified Shepp-Logan table: intensity, semi-axes a, b, centre, tilt (deg).
struct SheppEllipse {
  double intensity, a, b, x0, y0, phi_deg;
};

inline constexpr std::array<SheppEllipse, 10> kModifiedSheppLogan = {{
    {1.0, 0.69, 0.92, 0.0, 0.0, 0.0},
    {-0.8, 0.6624, 0.8740, 0.0, -0.0184, 0.0},
    {-0.2, 0.1100, 0.3100, 0.22, 0.0, -18.0},
    {-0.2, 0.1600, 0.4100, -0.22, 0.0, 18.0},
    {0.1, 0.2100, 0.2500, 0.0, 0.35, 0.0},
    {0.1, 0.0460, 0.0460, 0.0, 0.1, 0.0},
    {0.1, 0.0460, 0.0460, 0.0, -0.1, 0.0},
    {0.1, 0.0460, 0.0230, -0.08, -0.605, 0.0},
    {0.1, 0.0230, 0.0230, 0.0, -0.606, 0.0},
    {0.1, 0.0230, 0.0460, 0.06, -0.605, 0.0},
}};

/// Intensity at a point in the phantom's normalised [-1,1]^2 frame.
inline double shepp_logan_intensity(double u, double v) {
  double total = 0.0;
  for (const auto& e : kModifiedSheppLogan) {
    const double t = e.phi_deg * M_PI / 180.0;
    const double du = u - e.x0, dv = v - e.y0;
    const double p = du * std::cos(t) + dv * std::sin(t);
    const double q = -du * std::sin(t) + dv * std::cos(t);
    if ((p * p) / (e.a * e.a) + (q * q) / (e.b * e.b) <= 1.0) total += e.intensity;
  }
  return total;
}

inline double shepp_logan_sigma_at(const SheppLoganPhantom& p, double x, double y) {
  const double u = (x - p.center.x) / p.half_width, v = (y - p.center.y) / p.half_width;
  return p.sigma_min + (p.sigma_max - p.sigma_min) * shepp_logan_intensity(u, v);
}

/// Shepp-Logan conductivity on the disc; sigma_min (the zero-intensity
/// background) outside the ellipses and outside the disc.
inline ScalarField shepp_logan_sigma(const Grid2D& grid, const DomainMask& disc, const SheppLoganPhantom& p = {}) {
  require_same_grid(grid, disc.grid(), "shepp_logan_sigma");
  ScalarField out(grid, p.sigma_min, Unit::SiemensPerMeter);
  for (int j = 0; j < grid.ny(); ++j)
    for (int i = 0; i < grid.nx(); ++i)
      if (disc.inside(i, j)) out(i, j) = shepp_logan_sigma_at(p, grid.x(i), grid.y(j));
  return out;
}

inline double gray_to_sigma(int gray) { return gray / 255.0 + 1.0; }

/// sigma = gray/255 + 1 on every grid pixel after nearest-neighbour resampling.
inline ScalarField image_sigma(const GrayImage& image, const Grid2D& grid) {
  const auto gray = resample_to_grid(image, grid);
  ScalarField out(grid, 0.0, Unit::SiemensPerMeter);
  for (std::size_t k = 0; k < gray.size(); ++k) out[k] = gray_to_sigma(gray[k]);
  return out;
}

inline ScalarField apply_blur(const BlurSpec& blur, const ScalarField& sigma) {
  return gaussian_blur(sigma, blur.nu, blur.window);
}

/// Full phantom pipeline: raw conductivity, sigma_b outside the domain,
/// optional periodic blur, positivity clamp.
inline ScalarField generate_phantom(const PhantomSpec& spec, const DomainMask& domain) {
  const auto& grid = domain.grid();
  if (!(spec.sigma_b > 0.0)) throw ConfigError("background conductivity must be positive");
  ScalarField sigma(grid, spec.sigma_b, Unit::SiemensPerMeter);
  if (const auto* toy = std::get_if<ToyLensPhantom>(&spec.kind)) {
    sigma = toy_sigma(grid, *toy);
  } else if (const auto* sl = std::get_if<SheppLoganPhantom>(&spec.kind)) {
    sigma = shepp_logan_sigma(grid, domain, *sl);
  } else if (const auto* im = std::get_if<ImagePhantom>(&spec.kind)) {
    sigma = image_sigma(read_gray_image(im->path), grid);
  } else {
    sigma = ScalarField(grid, std::get<UniformPhantom>(spec.kind).value, Unit::SiemensPerMeter);
  }
  for (std::size_t k = 0; k < sigma.size(); ++k)
    if (!domain.inside(k)) sigma[k] = spec.sigma_b;
  if (spec.blur) sigma = apply_blur(*spec.blur, sigma);
  for (auto& v : sigma.values()) v = std::clamp(v, spec.clamp_min, spec.clamp_max);
  return sigma;
}

}  // namespace mreit
