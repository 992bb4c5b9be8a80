#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <queue>
#include <string>
#include <variant>
#include <vector>

#include "mreit/errors.hpp"
#include "mreit/image_io.hpp"

namespace mreit {

struct Point {
  double x = 0.0;
  double y = 0.0;
};

struct PixelIndex {
  int i = 0;
  int j = 0;
  bool operator==(const PixelIndex&) const = default;
};

/// Uniform node grid. Pixel (i, j) sits at origin + (i*hx, j*hy); j grows with y.
class Grid2D {
 public:
  static constexpr int kMinCount = 8;

  Grid2D(int nx, int ny, double fov_x, double fov_y, Point origin)
      : nx_(nx), ny_(ny), fov_x_(fov_x), fov_y_(fov_y), origin_(origin) {
    if (nx < kMinCount || ny < kMinCount) {
      throw GeometryError("grid needs at least " + std::to_string(kMinCount) + " pixels per axis, got " +
                          std::to_string(nx) + "x" + std::to_string(ny));
    }
    if (!(fov_x > 0.0) || !(fov_y > 0.0) || !std::isfinite(fov_x) || !std::isfinite(fov_y)) {
      throw GeometryError("field of view must be positive and finite");
    }
    hx_ = fov_x / (nx - 1);
    hy_ = fov_y / (ny - 1);
  }

  int nx() const { return nx_; }
  int ny() const { return ny_; }
  double fov_x() const { return fov_x_; }
  double fov_y() const { return fov_y_; }
  double hx() const { return hx_; }
  double hy() const { return hy_; }
  Point origin() const { return origin_; }
  std::size_t size() const { return static_cast<std::size_t>(nx_) * ny_; }
  double cell_area() const { return hx_ * hy_; }

  std::size_t index(int i, int j) const { return static_cast<std::size_t>(j) * nx_ + i; }
  int col(std::size_t k) const { return static_cast<int>(k % nx_); }
  int row(std::size_t k) const { return static_cast<int>(k / nx_); }
  bool contains(int i, int j) const { return i >= 0 && j >= 0 && i < nx_ && j < ny_; }

  double x(int i) const { return origin_.x + i * hx_; }
  double y(int j) const { return origin_.y + j * hy_; }
  Point position(int i, int j) const { return {x(i), y(j)}; }
  Point position(std::size_t k) const { return position(col(k), row(k)); }

  /// Nearest pixel to a physical point; exact inverse of position() on grid nodes.
  PixelIndex nearest_pixel(Point p) const {
    return {static_cast<int>(std::lround((p.x - origin_.x) / hx_)),
            static_cast<int>(std::lround((p.y - origin_.y) / hy_))};
  }

  bool operator==(const Grid2D& o) const {
    return nx_ == o.nx_ && ny_ == o.ny_ && fov_x_ == o.fov_x_ && fov_y_ == o.fov_y_ &&
           origin_.x == o.origin_.x && origin_.y == o.origin_.y;
  }

 private:
  int nx_;
  int ny_;
  double fov_x_;
  double fov_y_;
  Point origin_;
  double hx_ = 0.0;
  double hy_ = 0.0;
};

inline Grid2D build_grid(int nx, int ny, double fov_x, double fov_y, Point origin) {
  return Grid2D(nx, ny, fov_x, fov_y, origin);
}

inline void require_same_grid(const Grid2D& a, const Grid2D& b, const char* what) {
  if (!(a == b)) throw GeometryError(std::string("grid mismatch in ") + what);
}

namespace detail {

// Moore neighbourhood in counterclockwise order starting east.
inline constexpr std::array<std::array<int, 2>, 8> kMoore = {
    {{1, 0}, {1, 1}, {0, 1}, {-1, 1}, {-1, 0}, {-1, -1}, {0, -1}, {1, -1}}};
inline constexpr std::array<std::array<int, 2>, 4> kNeighbors4 = {{{1, 0}, {-1, 0}, {0, 1}, {0, -1}}};

inline int moore_direction(int di, int dj) {
  for (int d = 0; d < 8; ++d) {
    if (kMoore[d][0] == di && kMoore[d][1] == dj) return d;
  }
  return -1;
}

}  // namespace detail

/// Pixel-mask domain with its boundary loop ordered counterclockwise.
///
/// Boundary pixels are inside pixels with at least one 4-neighbour outside the
/// mask (off-grid counts as outside). The mask is validated on construction:
/// nonempty, 4-connected, and bounded by a single simple loop.
class DomainMask {
 public:
  DomainMask(Grid2D grid, std::vector<std::uint8_t> cells) : grid_(grid), cells_(std::move(cells)) {
    if (cells_.size() != grid_.size()) throw GeometryError("mask size does not match grid");
    for (auto& c : cells_) c = c ? 1 : 0;
    count_ = static_cast<std::size_t>(std::count(cells_.begin(), cells_.end(), std::uint8_t{1}));
    if (count_ == 0) throw GeometryError("domain mask is empty");
    check_connected();
    boundary_.assign(cells_.size(), 0);
    std::size_t nboundary = 0;
    for (std::size_t k = 0; k < cells_.size(); ++k) {
      if (!cells_[k]) continue;
      const int i = grid_.col(k), j = grid_.row(k);
      for (const auto& d : detail::kNeighbors4) {
        if (!inside(i + d[0], j + d[1])) {
          boundary_[k] = 1;
          ++nboundary;
          break;
        }
      }
    }
    trace_loop(nboundary);
  }

  const Grid2D& grid() const { return grid_; }
  const std::vector<std::uint8_t>& cells() const { return cells_; }
  std::size_t count() const { return count_; }

  bool inside(int i, int j) const { return grid_.contains(i, j) && cells_[grid_.index(i, j)] != 0; }
  bool inside(std::size_t k) const { return cells_[k] != 0; }
  bool on_boundary(std::size_t k) const { return boundary_[k] != 0; }
  bool on_boundary(int i, int j) const { return grid_.contains(i, j) && boundary_[grid_.index(i, j)] != 0; }
  /// Inside and not on the boundary loop.
  bool interior(std::size_t k) const { return cells_[k] != 0 && boundary_[k] == 0; }

  const std::vector<std::size_t>& boundary_loop() const { return loop_; }

  Point centroid() const {
    double sx = 0.0, sy = 0.0;
    for (std::size_t k = 0; k < cells_.size(); ++k) {
      if (!cells_[k]) continue;
      const auto p = grid_.position(k);
      sx += p.x;
      sy += p.y;
    }
    return {sx / count_, sy / count_};
  }

  /// Pixelwise subset test.
  bool contains(const DomainMask& other) const {
    for (std::size_t k = 0; k < cells_.size(); ++k) {
      if (other.cells_[k] && !cells_[k]) return false;
    }
    return true;
  }

 private:
  void check_connected() const {
    std::vector<std::uint8_t> seen(cells_.size(), 0);
    const auto start = static_cast<std::size_t>(std::find(cells_.begin(), cells_.end(), std::uint8_t{1}) - cells_.begin());
    std::queue<std::size_t> todo;
    todo.push(start);
    seen[start] = 1;
    std::size_t reached = 0;
    while (!todo.empty()) {
      const auto k = todo.front();
      todo.pop();
      ++reached;
      const int i = grid_.col(k), j = grid_.row(k);
      for (const auto& d : detail::kNeighbors4) {
        const int a = i + d[0], b = j + d[1];
        if (!inside(a, b)) continue;
        const auto q = grid_.index(a, b);
        if (!seen[q]) {
          seen[q] = 1;
          todo.push(q);
        }
      }
    }
    if (reached != count_) throw GeometryError("domain mask is not 4-connected");
  }

  // Moore-neighbour contour tracing from the lowest-then-leftmost pixel.
  void trace_loop(std::size_t nboundary) {
    std::size_t start = cells_.size();
    for (std::size_t k = 0; k < cells_.size(); ++k) {
      if (cells_[k]) {
        start = k;
        break;
      }
    }
    loop_.clear();
    loop_.push_back(start);
    if (count_ > 1) {
      int ci = grid_.col(start), cj = grid_.row(start);
      int back = 6;  // pixel below the start is outside by construction
      std::optional<std::size_t> second;
      const std::size_t guard = 4 * cells_.size() + 8;
      for (std::size_t step = 0; step < guard; ++step) {
        int found = -1;
        for (int s = 1; s <= 8; ++s) {
          const int d = (back + s) % 8;
          if (inside(ci + detail::kMoore[d][0], cj + detail::kMoore[d][1])) {
            found = d;
            break;
          }
        }
        if (found < 0) break;
        const int prev = (found + 7) % 8;
        const int bi = ci + detail::kMoore[prev][0], bj = cj + detail::kMoore[prev][1];
        const int ni = ci + detail::kMoore[found][0], nj = cj + detail::kMoore[found][1];
        back = detail::moore_direction(bi - ni, bj - nj);
        const auto next = grid_.index(ni, nj);
        if (!second) {
          second = next;
        } else if (loop_.back() == start && next == *second) {
          loop_.pop_back();
          break;
        }
        loop_.push_back(next);
        ci = ni;
        cj = nj;
      }
      if (loop_.size() > 1 && loop_.back() == start) loop_.pop_back();
    }
    // Orientation by the shoelace formula over pixel indices (y grows with j).
    double area2 = 0.0;
    for (std::size_t a = 0; a < loop_.size(); ++a) {
      const auto p = loop_[a], q = loop_[(a + 1) % loop_.size()];
      area2 += static_cast<double>(grid_.col(p)) * grid_.row(q) - static_cast<double>(grid_.col(q)) * grid_.row(p);
    }
    if (area2 < 0.0) std::reverse(loop_.begin() + 1, loop_.end());

    std::vector<std::uint8_t> visited(cells_.size(), 0);
    for (auto k : loop_) {
      if (visited[k] || !boundary_[k]) throw GeometryError("domain boundary is not a simple closed loop");
      visited[k] = 1;
    }
    if (loop_.size() != nboundary) throw GeometryError("domain boundary is not a single closed loop (holes?)");
  }

  Grid2D grid_;
  std::vector<std::uint8_t> cells_;
  std::vector<std::uint8_t> boundary_;
  std::vector<std::size_t> loop_;
  std::size_t count_ = 0;
};

struct SquareShape {};

struct DiscShape {
  Point center;
  double diameter = 0.0;
};

/// Interior where gray value >= threshold. Resampled to the grid by
/// nearest-neighbour subsampling; image row 0 maps to the largest y.
struct MaskImageShape {
  std::string path;
  int threshold = 1;
};

using DomainShape = std::variant<SquareShape, DiscShape, MaskImageShape>;

/// Nearest-neighbour resample of an image onto the grid's pixel lattice.
inline std::vector<std::uint8_t> resample_to_grid(const GrayImage& img, const Grid2D& grid) {
  std::vector<std::uint8_t> out(grid.size());
  for (int j = 0; j < grid.ny(); ++j) {
    const int row = (grid.ny() - 1 - j) * img.height / grid.ny();
    for (int i = 0; i < grid.nx(); ++i) {
      const int col = i * img.width / grid.nx();
      out[grid.index(i, j)] = img.at(col, row);
    }
  }
  return out;
}

inline DomainMask build_domain(const Grid2D& grid, const DomainShape& shape) {
  std::vector<std::uint8_t> cells(grid.size(), 0);
  if (std::holds_alternative<SquareShape>(shape)) {
    std::fill(cells.begin(), cells.end(), std::uint8_t{1});
  } else if (const auto* disc = std::get_if<DiscShape>(&shape)) {
    const double r = 0.5 * disc->diameter;
    if (!(r > 0.0)) throw GeometryError("disc diameter must be positive");
    const auto o = grid.origin();
    const double tol = 1e-12 * std::max(grid.fov_x(), grid.fov_y());
    if (disc->center.x - r < o.x - tol || disc->center.x + r > o.x + grid.fov_x() + tol ||
        disc->center.y - r < o.y - tol || disc->center.y + r > o.y + grid.fov_y() + tol) {
      throw GeometryError("disc exceeds the field of view");
    }
    for (int j = 0; j < grid.ny(); ++j) {
      for (int i = 0; i < grid.nx(); ++i) {
        const double dx = grid.x(i) - disc->center.x, dy = grid.y(j) - disc->center.y;
        cells[grid.index(i, j)] = dx * dx + dy * dy <= r * r ? 1 : 0;
      }
    }
  } else {
    const auto& m = std::get<MaskImageShape>(shape);
    const auto img = read_gray_image(m.path);
    const auto gray = resample_to_grid(img, grid);
    for (std::size_t k = 0; k < cells.size(); ++k) cells[k] = gray[k] >= m.threshold ? 1 : 0;
  }
  return DomainMask(grid, std::move(cells));
}

/// Morphological erosion (4-neighbour cross) repeated `margin` times.
inline DomainMask shrink_interior(const DomainMask& mask, int margin) {
  if (margin < 1) throw GeometryError("interior margin must be at least one pixel");
  const auto& g = mask.grid();
  std::vector<std::uint8_t> cur = mask.cells();
  std::vector<std::uint8_t> next(cur.size());
  for (int pass = 0; pass < margin; ++pass) {
    for (int j = 0; j < g.ny(); ++j) {
      for (int i = 0; i < g.nx(); ++i) {
        const auto k = g.index(i, j);
        std::uint8_t keep = cur[k];
        if (keep) {
          for (const auto& d : detail::kNeighbors4) {
            const int a = i + d[0], b = j + d[1];
            if (!g.contains(a, b) || !cur[g.index(a, b)]) {
              keep = 0;
              break;
            }
          }
        }
        next[k] = keep;
      }
    }
    std::swap(cur, next);
  }
  if (std::none_of(cur.begin(), cur.end(), [](std::uint8_t c) { return c != 0; })) {
    throw GeometryError("erosion by " + std::to_string(margin) + " pixels empties the domain");
  }
  return DomainMask(g, std::move(cur));
}

enum class BoundaryPart : std::uint8_t { None, ElectrodePlus, GammaPlus, ElectrodeMinus, GammaMinus };

/// Half-open range [begin, end) of positions along BoundarySpec::loop.
struct LoopRange {
  std::size_t begin = 0;
  std::size_t end = 0;
  std::size_t size() const { return end - begin; }
};

/// Boundary pixels inside an axis-aligned physical box.
struct ElectrodeBox {
  double xmin, xmax, ymin, ymax;
};

/// Boundary arc centred where the ray from the domain centroid at `angle`
/// (radians) meets the loop, with total arc length `length` (m).
struct ElectrodeArc {
  double angle = 0.0;
  double length = 0.0;
};

using ElectrodeSpec = std::variant<ElectrodeBox, ElectrodeArc>;

/// Partition of the boundary loop into E+, Gamma+, E-, Gamma- (counterclockwise).
/// The loop is rotated so that position 0 is the first E+ pixel.
struct BoundarySpec {
  DomainMask domain;
  std::vector<std::size_t> loop;
  LoopRange e_plus, gamma_plus, e_minus, gamma_minus;
  std::vector<BoundaryPart> part;  // per grid pixel

  const Grid2D& grid() const { return domain.grid(); }
  BoundaryPart part_at(std::size_t k) const { return part[k]; }
  bool is_electrode(std::size_t k) const {
    return part[k] == BoundaryPart::ElectrodePlus || part[k] == BoundaryPart::ElectrodeMinus;
  }
  bool is_gamma(std::size_t k) const {
    return part[k] == BoundaryPart::GammaPlus || part[k] == BoundaryPart::GammaMinus;
  }
};

namespace detail {

inline double loop_step(const Grid2D& g, std::size_t a, std::size_t b) {
  const double dx = (g.col(b) - g.col(a)) * g.hx(), dy = (g.row(b) - g.row(a)) * g.hy();
  return std::hypot(dx, dy);
}

// Membership flags over loop positions -> the single cyclic run they form.
inline LoopRange cyclic_run(const std::vector<std::uint8_t>& member, const char* name) {
  const std::size_t n = member.size();
  const auto cnt = static_cast<std::size_t>(std::count(member.begin(), member.end(), std::uint8_t{1}));
  if (cnt == 0) throw GeometryError(std::string(name) + " does not intersect the boundary");
  if (cnt == n) throw GeometryError(std::string(name) + " covers the whole boundary");
  std::size_t begin = n;
  for (std::size_t p = 0; p < n; ++p) {
    if (member[p] && !member[(p + n - 1) % n]) {
      if (begin != n) throw GeometryError(std::string(name) + " is not contiguous along the boundary");
      begin = p;
    }
  }
  return {begin, begin + cnt};  // end may exceed n; callers wrap
}

inline std::vector<std::uint8_t> select_electrode(const DomainMask& mask, const std::vector<std::size_t>& loop,
                                                  const ElectrodeSpec& spec) {
  const auto& g = mask.grid();
  const std::size_t n = loop.size();
  std::vector<std::uint8_t> member(n, 0);
  if (const auto* box = std::get_if<ElectrodeBox>(&spec)) {
    for (std::size_t p = 0; p < n; ++p) {
      const auto q = g.position(loop[p]);
      member[p] = q.x >= box->xmin && q.x <= box->xmax && q.y >= box->ymin && q.y <= box->ymax ? 1 : 0;
    }
    return member;
  }
  const auto& arc = std::get<ElectrodeArc>(spec);
  if (!(arc.length > 0.0)) throw GeometryError("electrode arc length must be positive");
  const auto c = mask.centroid();
  std::size_t centre = 0;
  double best = 1e300;
  for (std::size_t p = 0; p < n; ++p) {
    const auto q = g.position(loop[p]);
    double d = std::atan2(q.y - c.y, q.x - c.x) - arc.angle;
    d = std::remainder(d, 2.0 * M_PI);
    if (std::abs(d) < best) {
      best = std::abs(d);
      centre = p;
    }
  }
  member[centre] = 1;
  const double half = 0.5 * arc.length;
  double s = 0.0;
  for (std::size_t step = 1; step < n; ++step) {
    const auto a = (centre + step - 1) % n, b = (centre + step) % n;
    s += loop_step(g, loop[a], loop[b]);
    if (s > half) break;
    member[b] = 1;
  }
  s = 0.0;
  for (std::size_t step = 1; step < n; ++step) {
    const auto a = (centre + n - step + 1) % n, b = (centre + n - step) % n;
    s += loop_step(g, loop[a], loop[b]);
    if (s > half) break;
    member[b] = 1;
  }
  return member;
}

}  // namespace detail

inline BoundarySpec place_electrodes(const DomainMask& mask, const ElectrodeSpec& plus, const ElectrodeSpec& minus) {
  const auto& base = mask.boundary_loop();
  const std::size_t n = base.size();
  const auto mp = detail::select_electrode(mask, base, plus);
  const auto mm = detail::select_electrode(mask, base, minus);
  for (std::size_t p = 0; p < n; ++p) {
    if (mp[p] && mm[p]) throw GeometryError("electrodes overlap");
  }
  const auto rp = detail::cyclic_run(mp, "E+ electrode");
  const auto rm = detail::cyclic_run(mm, "E- electrode");

  BoundarySpec spec{mask, {}, {}, {}, {}, {}, std::vector<BoundaryPart>(mask.grid().size(), BoundaryPart::None)};
  spec.loop.resize(n);
  for (std::size_t p = 0; p < n; ++p) spec.loop[p] = base[(rp.begin + p) % n];
  const std::size_t e_minus_begin = (rm.begin + n - rp.begin) % n;
  spec.e_plus = {0, rp.size()};
  spec.gamma_plus = {rp.size(), e_minus_begin};
  spec.e_minus = {e_minus_begin, e_minus_begin + rm.size()};
  spec.gamma_minus = {e_minus_begin + rm.size(), n};
  if (spec.gamma_plus.end <= spec.gamma_plus.begin || spec.gamma_minus.end <= spec.gamma_minus.begin) {
    throw GeometryError("electrodes must be separated by insulated arcs on both sides");
  }
  auto label = [&](LoopRange r, BoundaryPart part) {
    for (std::size_t p = r.begin; p < r.end; ++p) spec.part[spec.loop[p]] = part;
  };
  label(spec.e_plus, BoundaryPart::ElectrodePlus);
  label(spec.gamma_plus, BoundaryPart::GammaPlus);
  label(spec.e_minus, BoundaryPart::ElectrodeMinus);
  label(spec.gamma_minus, BoundaryPart::GammaMinus);
  return spec;
}

/// Everything the solvers need about the imaging domain.
struct Geometry {
  Grid2D grid;
  DomainMask domain;
  BoundarySpec boundary;
  DomainMask interior;  // the eroded region where sigma is unknown
};

inline Geometry make_geometry(const Grid2D& grid, const DomainShape& shape, const ElectrodeSpec& plus,
                              const ElectrodeSpec& minus, int margin) {
  auto domain = build_domain(grid, shape);
  auto boundary = place_electrodes(domain, plus, minus);
  auto interior = shrink_interior(domain, margin);
  return Geometry{grid, std::move(domain), std::move(boundary), std::move(interior)};
}

}  // namespace mreit
