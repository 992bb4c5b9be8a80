#include <gtest/gtest.h>

#include <filesystem>

#include "support.hpp"

using namespace mreit;

namespace {

Grid2D unit_grid(int n) { return build_grid(n, n, 2.0, 2.0, {-1.0, -1.0}); }

double sin_gradient_error(int n) {
  const auto g = unit_grid(n);
  const auto m = full_mask(g);
  const auto d = gradient(ScalarField::from_function(g, [](double x, double) { return std::sin(x); }), m);
  double e = 0.0;
  for (int j = 0; j < n; ++j)
    for (int i = 0; i < n; ++i) e = std::max(e, std::abs(d.vx()[g.index(i, j)] - std::cos(g.x(i))));
  return e;
}

}  // namespace

TEST(Gradient, ExactForAffine) {
  const auto g = unit_grid(33);
  const auto d = gradient(ScalarField::from_function(g, [](double x, double) { return 3 * x; }), full_mask(g));
  for (std::size_t k = 0; k < g.size(); ++k) {
    EXPECT_NEAR(d.vx()[k], 3.0, 1e-12);
    EXPECT_NEAR(d.vy()[k], 0.0, 1e-12);
  }
}

TEST(Gradient, ExactForQuadraticAtInteriorPixels) {
  const auto g = unit_grid(33);
  const auto m = full_mask(g);
  const auto d = gradient(ScalarField::from_function(g, [](double x, double) { return x * x; }), m);
  for (std::size_t k = 0; k < g.size(); ++k)
    if (m.interior(k)) {
      EXPECT_NEAR(d.vx()[k], 2 * g.position(k).x, 1e-12);
    }
}

TEST(Gradient, SecondOrderUnderRefinement) {
  const double r1 = sin_gradient_error(32) / sin_gradient_error(64);
  const double r2 = sin_gradient_error(64) / sin_gradient_error(128);
  EXPECT_NEAR(r1, 4.0, 0.5);
  EXPECT_NEAR(r2, 4.0, 0.5);
}

TEST(Divergence, OfPositionIsTwo) {
  const auto g = unit_grid(40);
  const auto m = full_mask(g);
  VectorField2D v(g);
  for (std::size_t k = 0; k < g.size(); ++k) {
    v.vx()[k] = g.position(k).x;
    v.vy()[k] = g.position(k).y;
  }
  const auto d = divergence(v, m);
  for (std::size_t k = 0; k < g.size(); ++k) EXPECT_NEAR(d[k], 2.0, 1e-12);
}

TEST(Divergence, SecondOrderForSmoothField) {
  auto err = [](int n) {
    const auto g = unit_grid(n);
    const auto m = full_mask(g);
    VectorField2D v(g);
    for (std::size_t k = 0; k < g.size(); ++k) {
      const auto p = g.position(k);
      v.vx()[k] = std::sin(p.x) * p.y;
      v.vy()[k] = std::exp(0.5 * p.y);
    }
    const auto d = divergence(v, m);
    double e = 0.0;
    for (std::size_t k = 0; k < g.size(); ++k) {
      const auto p = g.position(k);
      if (m.interior(k)) e = std::max(e, std::abs(d[k] - (std::cos(p.x) * p.y + 0.5 * std::exp(0.5 * p.y))));
    }
    return e;
  };
  EXPECT_NEAR(err(32) / err(64), 4.0, 0.5);
  EXPECT_NEAR(err(64) / err(128), 4.0, 0.5);
}

TEST(Divergence, PerpGradientIsDivergenceFree) {
  for (const auto& geo : {mreit::testing::toy_geometry(64), mreit::testing::shepp_geometry(64)}) {
    const auto c = mreit::testing::div_perp_grad(geo);
    EXPECT_TRUE(c.ok()) << c.value;
  }
}

TEST(Perp, TwiceNegates) {
  const auto g = unit_grid(9);
  VectorField2D v(g);
  for (std::size_t k = 0; k < g.size(); ++k) {
    v.vx()[k] = 0.1 * k - 2.0;
    v.vy()[k] = std::sin(0.3 * k);
  }
  const auto w = perp(perp(v));
  for (std::size_t k = 0; k < g.size(); ++k) {
    EXPECT_EQ(w.vx()[k], -v.vx()[k]);
    EXPECT_EQ(w.vy()[k], -v.vy()[k]);
  }
  const auto p = perp(v);
  EXPECT_EQ(p.vx()[3], v.vy()[3]);
  EXPECT_EQ(p.vy()[3], -v.vx()[3]);
}

TEST(Laplacian, AnnihilatesAffine) {
  for (const auto& geo : {mreit::testing::toy_geometry(64), mreit::testing::shepp_geometry(64)}) {
    const auto c = mreit::testing::affine_annihilation(geo);
    EXPECT_TRUE(c.ok()) << c.value;
  }
}

TEST(Laplacian, QuadraticGivesFour) {
  const auto geo = mreit::testing::shepp_geometry(64);
  const auto f = ScalarField::from_function(geo.grid, [](double x, double y) { return x * x + y * y; });
  const auto l = laplacian(f, geo.domain);
  for (std::size_t k = 0; k < f.size(); ++k)
    if (geo.domain.inside(k)) {
      EXPECT_NEAR(l[k], 4.0, 1e-8);
    }
}

TEST(Blur, ConstantStaysConstant) {
  const auto g = unit_grid(32);
  const auto b = gaussian_blur(ScalarField(g, 1.7), 5.0, 7);
  for (std::size_t k = 0; k < g.size(); ++k) EXPECT_NEAR(b[k], 1.7, 1e-14);
}

TEST(Blur, ImpulseReproducesKernel) {
  const auto g = unit_grid(16);
  ScalarField f(g, 0.0);
  f(8, 8) = 1.0;
  const auto b = gaussian_blur(f, 1.2, 7);
  const auto w = gaussian_kernel(1.2, 7);
  double sum = 0.0;
  for (double v : w) sum += v;
  EXPECT_NEAR(sum, 1.0, 1e-15);
  for (int dy = -3; dy <= 3; ++dy)
    for (int dx = -3; dx <= 3; ++dx) EXPECT_DOUBLE_EQ(b(8 + dx, 8 + dy), w[(dy + 3) * 7 + (dx + 3)]);
  double total = 0.0;
  for (double v : b.values()) total += v;
  EXPECT_NEAR(total, 1.0, 1e-14);
}

TEST(Blur, KeepsMeanAndRange) {
  for (const auto& c : mreit::testing::blur_mean_range(unit_grid(64))) EXPECT_TRUE(c.ok()) << c.name << " " << c.value;
}

TEST(Blur, RejectsEvenWindow) {
  EXPECT_THROW(gaussian_kernel(5.0, 6), ConfigError);
  EXPECT_THROW(gaussian_kernel(0.0, 3), ConfigError);
}

TEST(FieldIo, BinaryRoundTrip) {
  const auto g = build_grid(11, 9, 0.3, 0.2, {0.1, -0.05});
  auto f = ScalarField::from_function(g, [](double x, double y) { return std::exp(x) - y / 3; }, Unit::Tesla);
  const auto path = (std::filesystem::temp_directory_path() / "mreit_field_roundtrip.bin").string();
  write_field_binary(path, f);
  const auto r = read_field_binary(path);
  EXPECT_TRUE(r.grid() == g);
  EXPECT_EQ(r.unit(), Unit::Tesla);
  for (std::size_t k = 0; k < f.size(); ++k) EXPECT_EQ(r[k], f[k]);
  std::filesystem::remove(path);
}
