#include <gtest/gtest.h>

#include "support.hpp"

using namespace mreit;
using mreit::testing::toy_geometry;

namespace {

double rel_sup(const ScalarField& a, const ScalarField& b) {
  double num = 0.0, den = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    num = std::max(num, std::abs(a[k] - b[k]));
    den = std::max(den, std::abs(b[k]));
  }
  return num / den;
}

}  // namespace

TEST(CurrentDensity, UniformLinearPotential) {
  const auto geo = toy_geometry(32);
  const auto u = ScalarField::from_function(geo.grid, [](double x, double) { return -x; });
  const auto J = compute_J(ScalarField(geo.grid, 1.0), u, geo.domain);
  for (std::size_t k = 0; k < u.size(); ++k) {
    EXPECT_NEAR(J.vx()[k], 1.0, 1e-12);
    EXPECT_NEAR(J.vy()[k], 0.0, 1e-12);
  }
}

TEST(CurrentDensity, ExponentialPair) {
  const auto geo = toy_geometry(128);
  const auto sigma = ScalarField::from_function(geo.grid, [](double x, double) { return std::exp(x); });
  const auto u = ScalarField::from_function(geo.grid, [](double x, double) { return std::exp(-x); });
  const auto J = compute_J(sigma, u, geo.domain);
  for (std::size_t k = 0; k < u.size(); ++k) {
    EXPECT_NEAR(J.vx()[k], 1.0, 1e-4);
    EXPECT_NEAR(J.vy()[k], 0.0, 1e-12);
  }
}

TEST(CurrentDensity, ForwardCurrentIsNearlySolenoidal) {
  const auto geo = toy_geometry(128);
  const auto sigma = gaussian_blur(toy_sigma(geo.grid), 5.0, 7);
  const auto sol = solve_forward(sigma, geo.boundary, 0.01);
  const auto d = divergence(sol.J, geo.domain);
  const double scale = sup_norm(sol.J, geo.interior) / geo.grid.hx();
  EXPECT_LT(sup_norm(d, geo.interior) / scale, 0.05);
}

TEST(BiotSavart, ZeroCurrentGivesZeroField) {
  const auto g = build_grid(32, 32, 1.0, 1.0, {0.0, 0.0});
  const auto bz = bz_fft(VectorField2D(g));
  for (double v : bz.values()) EXPECT_EQ(v, 0.0);
}

TEST(BiotSavart, SinglePixelMatchesPointLaw) {
  const auto g = build_grid(33, 33, 2.0, 2.0, {-1.0, -1.0});
  VectorField2D J(g);
  const double A = 3.0;
  J.vy()[g.index(16, 16)] = A;
  const auto fft = bz_fft(J), direct = bz_direct(J);
  const double h2 = g.cell_area();
  for (int j = 0; j < 33; j += 4) {
    for (int i = 0; i < 33; i += 4) {
      if (i == 16 && j == 16) continue;
      const double x = g.x(i), y = g.y(j);
      const double expected = -kMu0 / (2 * M_PI) * h2 * A * x / (x * x + y * y);
      EXPECT_NEAR(direct(i, j), expected, 1e-12 * std::abs(expected) + 1e-30);
      EXPECT_NEAR(fft(i, j), expected, 1e-10 * kMu0 * h2 * A);
    }
  }
  EXPECT_EQ(direct(16, 16), 0.0);
}

TEST(BiotSavart, ToyFieldMatchesTermByTermSum) {
  const auto geo = toy_geometry(48);
  const auto sol = solve_forward(toy_sigma(geo.grid), geo.boundary, 0.01);
  const double scale = sup_norm(sol.bz, geo.domain);
  for (auto [i, j] : {std::pair{0, 0}, {5, 40}, {24, 24}, {47, 13}, {30, 2}}) {
    EXPECT_NEAR(sol.bz(i, j), mreit::testing::biot_savart_at(sol.J, i, j), 1e-10 * scale);
  }
}

TEST(BiotSavart, MirrorSymmetricCurrentGivesOddField) {
  const auto geo = toy_geometry(64);
  const auto sol = solve_forward(ScalarField(geo.grid, 1.0), geo.boundary, 0.01);
  const auto& g = geo.grid;
  const double s = sup_norm(sol.bz, geo.domain);
  // uniform conductivity: (x, y, Jx, Jy) -> (x, -y, Jx, -Jy) symmetric, so Bz(x, -y) = -Bz(x, y)
  for (int j = 0; j < g.ny(); ++j)
    for (int i = 0; i < g.nx(); ++i) EXPECT_NEAR(sol.bz(i, j), -sol.bz(i, g.ny() - 1 - j), 1e-8 * s);
}

TEST(BiotSavart, MirrorOfPixelFlipsPattern) {
  const auto g = build_grid(33, 33, 2.0, 2.0, {-1.0, -1.0});
  VectorField2D a(g), b(g);
  a.vy()[g.index(10, 16)] = 1.0;
  b.vy()[g.index(22, 16)] = 1.0;
  const auto ba = bz_direct(a), bb = bz_direct(b);
  for (int j = 0; j < 33; ++j)
    for (int i = 0; i < 33; ++i) EXPECT_NEAR(ba(i, j), -bb(32 - i, j), 1e-20);
}

TEST(BiotSavart, FftMatchesDirectOn64) {
  const auto geo = toy_geometry(64);
  const auto sol = solve_forward(toy_sigma(geo.grid), geo.boundary, 0.01);
  EXPECT_LE(rel_sup(bz_fft(sol.J), bz_direct(sol.J)), 1e-10);
}

TEST(BiotSavart, LinearInCurrent) {
  const auto geo = toy_geometry(48);
  const auto sigma = toy_sigma(geo.grid);
  const auto a = solve_forward(sigma, geo.boundary, 0.01), b = solve_forward(sigma, geo.boundary, 0.02);
  EXPECT_LE(rel_sup(b.bz, [&] {
              auto t = a.bz;
              for (auto& v : t.values()) v *= 2.0;
              return t;
            }()),
            1e-10);
}

TEST(StrayField, IdentityForZeroCoefficients) {
  const auto geo = toy_geometry(32);
  const auto sol = solve_forward(toy_sigma(geo.grid), geo.boundary, 0.01);
  EXPECT_EQ(add_stray_field(sol.bz, {}).values(), sol.bz.values());
}

TEST(StrayField, LaplacianUnchangedInReferenceMode) {
  const auto geo = toy_geometry(64);
  const auto bz = quantize_reference(solve_forward(toy_sigma(geo.grid), geo.boundary, 0.01).bz);
  const auto base = laplacian(bz, geo.domain);
  for (StrayField h : {StrayField{1e-8, 0, 0}, StrayField{0, 1e-8, 1e-8}, StrayField{1e-6, -1e-6, 1e-6}}) {
    EXPECT_EQ(laplacian(add_stray_field(bz, h, true), geo.domain).values(), base.values());
  }
}

TEST(StrayField, LaplacianUnchangedToRounding) {
  const auto geo = toy_geometry(64);
  const auto bz = solve_forward(toy_sigma(geo.grid), geo.boundary, 0.01).bz;
  const auto base = laplacian(bz, geo.domain);
  const auto l = laplacian(add_stray_field(bz, {1e-8, 1e-8, -1e-8}), geo.domain);
  const double scale = 1e-8 / (geo.grid.hx() * geo.grid.hx());
  for (std::size_t k = 0; k < l.size(); ++k) EXPECT_NEAR(l[k], base[k], 1e-12 * scale);
}

TEST(Laplacian, NumericMatchesAnalyticForBlurredToy) {
  const auto geo = toy_geometry(128);
  const auto sigma = gaussian_blur(toy_sigma(geo.grid), 5.0, 7);
  const auto sol = solve_forward(sigma, geo.boundary, 0.01);
  const auto numeric = laplacian(sol.bz, geo.domain);
  const auto analytic = analytic_laplace_bz(sigma, sol.u, geo.domain);
  // two pixels clear of the interior edge, which lines up with the electrode corners
  const auto region = mreit::testing::deep_interior(geo.interior);
  double num = 0.0, den = 0.0;
  for (std::size_t k = 0; k < numeric.size(); ++k) {
    if (!region.inside(k)) continue;
    num += (numeric[k] - analytic[k]) * (numeric[k] - analytic[k]);
    den += analytic[k] * analytic[k];
  }
  EXPECT_LE(std::sqrt(num / den), 0.05);
}
