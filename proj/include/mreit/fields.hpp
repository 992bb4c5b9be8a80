#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "mreit/errors.hpp"
#include "mreit/geometry.hpp"

namespace mreit {

enum class Unit {
  Dimensionless,
  SiemensPerMeter,
  Volt,
  Tesla,
  AmperePerSquareMeter,
  VoltPerMeter,
  PerMeter,
  TeslaPerSquareMeter,
  AmperePerCubicMeter,
};

inline std::string_view unit_symbol(Unit u) {
  switch (u) {
    case Unit::Dimensionless: return "1";
    case Unit::SiemensPerMeter: return "S/m";
    case Unit::Volt: return "V";
    case Unit::Tesla: return "T";
    case Unit::AmperePerSquareMeter: return "A/m^2";
    case Unit::VoltPerMeter: return "V/m";
    case Unit::PerMeter: return "1/m";
    case Unit::TeslaPerSquareMeter: return "T/m^2";
    case Unit::AmperePerCubicMeter: return "A/m^3";
  }
  return "?";
}

inline Unit parse_unit(std::string_view s) {
  for (Unit u : {Unit::Dimensionless, Unit::SiemensPerMeter, Unit::Volt, Unit::Tesla, Unit::AmperePerSquareMeter,
                 Unit::VoltPerMeter, Unit::PerMeter, Unit::TeslaPerSquareMeter, Unit::AmperePerCubicMeter}) {
    if (unit_symbol(u) == s) return u;
  }
  throw ConfigError("unknown unit '" + std::string(s) + "'");
}

class ScalarField {
 public:
  explicit ScalarField(const Grid2D& grid, double fill = 0.0, Unit unit = Unit::Dimensionless)
      : grid_(grid), values_(grid.size(), fill), unit_(unit) {}
  ScalarField(const Grid2D& grid, std::vector<double> values, Unit unit)
      : grid_(grid), values_(std::move(values)), unit_(unit) {
    if (values_.size() != grid_.size()) throw GeometryError("field size does not match grid");
  }

  const Grid2D& grid() const { return grid_; }
  Unit unit() const { return unit_; }
  void set_unit(Unit u) { unit_ = u; }

  double& operator[](std::size_t k) { return values_[k]; }
  double operator[](std::size_t k) const { return values_[k]; }
  double& operator()(int i, int j) { return values_[grid_.index(i, j)]; }
  double operator()(int i, int j) const { return values_[grid_.index(i, j)]; }

  std::vector<double>& values() { return values_; }
  const std::vector<double>& values() const { return values_; }
  const double* data() const { return values_.data(); }
  std::size_t size() const { return values_.size(); }

  template <class F>
  static ScalarField from_function(const Grid2D& grid, F&& f, Unit unit = Unit::Dimensionless) {
    ScalarField out(grid, 0.0, unit);
    for (int j = 0; j < grid.ny(); ++j)
      for (int i = 0; i < grid.nx(); ++i) out(i, j) = f(grid.x(i), grid.y(j));
    return out;
  }

 private:
  Grid2D grid_;
  std::vector<double> values_;
  Unit unit_;
};

class VectorField2D {
 public:
  explicit VectorField2D(const Grid2D& grid, Unit unit = Unit::Dimensionless)
      : grid_(grid), vx_(grid.size(), 0.0), vy_(grid.size(), 0.0), unit_(unit) {}

  const Grid2D& grid() const { return grid_; }
  Unit unit() const { return unit_; }
  void set_unit(Unit u) { unit_ = u; }

  std::vector<double>& vx() { return vx_; }
  std::vector<double>& vy() { return vy_; }
  const std::vector<double>& vx() const { return vx_; }
  const std::vector<double>& vy() const { return vy_; }
  double norm(std::size_t k) const { return std::hypot(vx_[k], vy_[k]); }

  ScalarField x_component() const { return ScalarField(grid_, vx_, unit_); }
  ScalarField y_component() const { return ScalarField(grid_, vy_, unit_); }

 private:
  Grid2D grid_;
  std::vector<double> vx_;
  std::vector<double> vy_;
  Unit unit_;
};

/// Right-angle rotation v -> (vy, -vx); perp(perp(v)) == -v exactly.
inline VectorField2D perp(const VectorField2D& v) {
  VectorField2D out(v.grid(), v.unit());
  for (std::size_t k = 0; k < v.vx().size(); ++k) {
    out.vx()[k] = v.vy()[k];
    out.vy()[k] = -v.vx()[k];
  }
  return out;
}

namespace detail {

inline void require_mask_grid(const Grid2D& g, const DomainMask& m, const char* what) {
  require_same_grid(g, m.grid(), what);
}

// First derivative along one axis at pixel (i, j). Central where both
// neighbours are inside, one-sided second order next to the mask edge,
// first order when only one neighbour exists.
inline double axis_derivative(const double* f, const DomainMask& m, int i, int j, int di, int dj, double h) {
  const Grid2D& g = m.grid();
  auto in = [&](int s) { return m.inside(i + s * di, j + s * dj); };
  auto at = [&](int s) { return f[g.index(i + s * di, j + s * dj)]; };
  const bool p1 = in(1), m1 = in(-1);
  if (p1 && m1) return (at(1) - at(-1)) / (2.0 * h);
  if (p1 && in(2)) return (-3.0 * at(0) + 4.0 * at(1) - at(2)) / (2.0 * h);
  if (m1 && in(-2)) return (3.0 * at(0) - 4.0 * at(-1) + at(-2)) / (2.0 * h);
  if (p1) return (at(1) - at(0)) / h;
  if (m1) return (at(0) - at(-1)) / h;
  return 0.0;
}

// Second derivative along one axis; five-point where possible, else the
// four-point one-sided formula (exact for cubics, annihilates affine data).
inline double axis_second_derivative(const double* f, const DomainMask& m, int i, int j, int di, int dj,
                                     double h) {
  const Grid2D& g = m.grid();
  auto in = [&](int s) { return m.inside(i + s * di, j + s * dj); };
  auto at = [&](int s) { return f[g.index(i + s * di, j + s * dj)]; };
  const double h2 = h * h;
  if (in(1) && in(-1)) return (at(1) - 2.0 * at(0) + at(-1)) / h2;
  for (int s : {1, -1}) {
    if (in(s) && in(2 * s) && in(3 * s)) return (2.0 * at(0) - 5.0 * at(s) + 4.0 * at(2 * s) - at(3 * s)) / h2;
  }
  for (int s : {1, -1}) {
    if (in(s) && in(2 * s)) return (at(0) - 2.0 * at(s) + at(2 * s)) / h2;
  }
  return 0.0;
}

inline void require_finite_on(const std::vector<double>& v, const DomainMask& m, const char* what) {
  for (std::size_t k = 0; k < v.size(); ++k) {
    if (m.inside(k) && !std::isfinite(v[k])) throw NumericError(std::string("non-finite value in ") + what);
  }
}

inline Unit gradient_unit(Unit u) {
  switch (u) {
    case Unit::Volt: return Unit::VoltPerMeter;
    case Unit::Dimensionless: return Unit::PerMeter;
    default: return u;
  }
}

}  // namespace detail

/// Masked gradient. Outside the mask the result is zero.
inline VectorField2D gradient(const ScalarField& f, const DomainMask& mask) {
  detail::require_mask_grid(f.grid(), mask, "gradient");
  const auto& g = f.grid();
  VectorField2D out(g, detail::gradient_unit(f.unit()));
  for (int j = 0; j < g.ny(); ++j) {
    for (int i = 0; i < g.nx(); ++i) {
      const auto k = g.index(i, j);
      if (!mask.inside(k)) continue;
      out.vx()[k] = detail::axis_derivative(f.data(), mask, i, j, 1, 0, g.hx());
      out.vy()[k] = detail::axis_derivative(f.data(), mask, i, j, 0, 1, g.hy());
    }
  }
  return out;
}

/// Masked divergence with the same stencils as gradient(); central
/// differences make it the negative adjoint of gradient() in the interior.
inline ScalarField divergence(const VectorField2D& v, const DomainMask& mask) {
  detail::require_mask_grid(v.grid(), mask, "divergence");
  const auto& g = v.grid();
  ScalarField out(g, 0.0, Unit::Dimensionless);
  for (int j = 0; j < g.ny(); ++j) {
    for (int i = 0; i < g.nx(); ++i) {
      const auto k = g.index(i, j);
      if (!mask.inside(k)) continue;
      out[k] = detail::axis_derivative(v.vx().data(), mask, i, j, 1, 0, g.hx()) +
               detail::axis_derivative(v.vy().data(), mask, i, j, 0, 1, g.hy());
    }
  }
  return out;
}

/// Five-point Laplacian (anisotropic when hx != hy) on mask pixels.
inline ScalarField laplacian(const ScalarField& f, const DomainMask& mask) {
  detail::require_mask_grid(f.grid(), mask, "laplacian");
  const auto& g = f.grid();
  ScalarField out(g, 0.0, f.unit() == Unit::Tesla ? Unit::TeslaPerSquareMeter : Unit::Dimensionless);
  for (int j = 0; j < g.ny(); ++j) {
    for (int i = 0; i < g.nx(); ++i) {
      const auto k = g.index(i, j);
      if (!mask.inside(k)) continue;
      out[k] = detail::axis_second_derivative(f.data(), mask, i, j, 1, 0, g.hx()) +
               detail::axis_second_derivative(f.data(), mask, i, j, 0, 1, g.hy());
    }
  }
  return out;
}

/// The whole grid as a mask, for fields defined everywhere.
inline DomainMask full_mask(const Grid2D& grid) {
  return DomainMask(grid, std::vector<std::uint8_t>(grid.size(), 1));
}

/// Normalised Gaussian weights on a window x window stencil; nu in pixels.
inline std::vector<double> gaussian_kernel(double nu, int window) {
  if (!(nu > 0.0)) throw ConfigError("blur width nu must be positive");
  if (window < 3 || window % 2 == 0) throw ConfigError("blur window must be odd and at least 3");
  const int r = window / 2;
  std::vector<double> w(static_cast<std::size_t>(window) * window);
  double sum = 0.0;
  for (int dy = -r; dy <= r; ++dy)
    for (int dx = -r; dx <= r; ++dx) {
      const double v = std::exp(-(dx * dx + dy * dy) / (2.0 * nu * nu));
      w[static_cast<std::size_t>(dy + r) * window + (dx + r)] = v;
      sum += v;
    }
  for (auto& v : w) v /= sum;
  return w;
}

/// Periodic-extension Gaussian blur over the whole grid.
inline ScalarField gaussian_blur(const ScalarField& f, double nu, int window) {
  const auto w = gaussian_kernel(nu, window);
  const auto& g = f.grid();
  const int r = window / 2, nx = g.nx(), ny = g.ny();
  ScalarField out(g, 0.0, f.unit());
  for (int j = 0; j < ny; ++j) {
    for (int i = 0; i < nx; ++i) {
      double acc = 0.0;
      for (int dy = -r; dy <= r; ++dy) {
        const int jj = ((j - dy) % ny + ny) % ny;
        for (int dx = -r; dx <= r; ++dx) {
          const int ii = ((i - dx) % nx + nx) % nx;
          acc += w[static_cast<std::size_t>(dy + r) * window + (dx + r)] * f(ii, jj);
        }
      }
      out(i, j) = acc;
    }
  }
  return out;
}

/// Sup-norm of |f| over mask pixels.
inline double sup_norm(const ScalarField& f, const DomainMask& mask) {
  double m = 0.0;
  for (std::size_t k = 0; k < f.size(); ++k)
    if (mask.inside(k)) m = std::max(m, std::abs(f[k]));
  return m;
}

inline double sup_norm(const VectorField2D& v, const DomainMask& mask) {
  double m = 0.0;
  for (std::size_t k = 0; k < v.vx().size(); ++k)
    if (mask.inside(k)) m = std::max(m, v.norm(k));
  return m;
}

// ---------------------------------------------------------------------------
// Serialization: text header terminated by "end\n", then little-endian
// float64 payload, component-major.

namespace detail {

inline void write_f64_le(std::ostream& out, double v) {
  std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
  unsigned char b[8];
  for (int s = 0; s < 8; ++s) b[s] = static_cast<unsigned char>(bits >> (8 * s));
  out.write(reinterpret_cast<const char*>(b), 8);
}

inline double read_f64_le(std::istream& in) {
  unsigned char b[8];
  in.read(reinterpret_cast<char*>(b), 8);
  if (in.gcount() != 8) throw ConfigError("truncated field payload");
  std::uint64_t bits = 0;
  for (int s = 0; s < 8; ++s) bits |= static_cast<std::uint64_t>(b[s]) << (8 * s);
  return std::bit_cast<double>(bits);
}

inline void write_field_header(std::ostream& out, const Grid2D& g, int components, Unit unit) {
  out << std::setprecision(17);
  out << "MREITFIELD 1\n"
      << "nx " << g.nx() << "\nny " << g.ny() << "\nfov_x " << g.fov_x() << "\nfov_y " << g.fov_y()
      << "\norigin_x " << g.origin().x << "\norigin_y " << g.origin().y << "\ncomponents " << components
      << "\nunit " << unit_symbol(unit) << "\nend\n";
}

struct FieldHeader {
  int nx = 0, ny = 0, components = 0;
  double fov_x = 0, fov_y = 0, ox = 0, oy = 0;
  Unit unit = Unit::Dimensionless;
};

inline FieldHeader read_field_header(std::istream& in, const std::string& path) {
  std::string line;
  std::getline(in, line);
  if (line != "MREITFIELD 1") throw ConfigError("not a field file: " + path);
  FieldHeader h;
  while (std::getline(in, line)) {
    if (line == "end") return h;
    std::istringstream ls(line);
    std::string key, value;
    ls >> key >> value;
    if (key == "nx") h.nx = std::stoi(value);
    else if (key == "ny") h.ny = std::stoi(value);
    else if (key == "fov_x") h.fov_x = std::stod(value);
    else if (key == "fov_y") h.fov_y = std::stod(value);
    else if (key == "origin_x") h.ox = std::stod(value);
    else if (key == "origin_y") h.oy = std::stod(value);
    else if (key == "components") h.components = std::stoi(value);
    else if (key == "unit") h.unit = parse_unit(value);
    else throw ConfigError("unknown field header key '" + key + "' in " + path);
  }
  throw ConfigError("field header not terminated in " + path);
}

}  // namespace detail

inline void write_field_binary(const std::string& path, const ScalarField& f) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write " + path);
  detail::write_field_header(out, f.grid(), 1, f.unit());
  for (double v : f.values()) detail::write_f64_le(out, v);
}

inline void write_field_binary(const std::string& path, const VectorField2D& v) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write " + path);
  detail::write_field_header(out, v.grid(), 2, v.unit());
  for (double x : v.vx()) detail::write_f64_le(out, x);
  for (double y : v.vy()) detail::write_f64_le(out, y);
}

inline ScalarField read_field_binary(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open " + path);
  const auto h = detail::read_field_header(in, path);
  if (h.components != 1) throw ConfigError("expected a scalar field in " + path);
  Grid2D g(h.nx, h.ny, h.fov_x, h.fov_y, {h.ox, h.oy});
  ScalarField f(g, 0.0, h.unit);
  for (auto& v : f.values()) v = detail::read_f64_le(in);
  return f;
}

inline void write_field_csv(const std::string& path, const ScalarField& f) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path);
  out << std::setprecision(17) << "i,j,x,y,value\n";
  const auto& g = f.grid();
  for (int j = 0; j < g.ny(); ++j)
    for (int i = 0; i < g.nx(); ++i) out << i << ',' << j << ',' << g.x(i) << ',' << g.y(j) << ',' << f(i, j) << '\n';
}

}  // namespace mreit
