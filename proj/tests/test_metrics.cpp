#include <gtest/gtest.h>

#include "support.hpp"

using namespace mreit;

TEST(RelativeError, Basics) {
  const auto g = build_grid(16, 16, 1.0, 1.0, {0.0, 0.0});
  const auto mask = build_domain(g, SquareShape{});
  // ln s = x, whose sup over [0, 1] is 1
  const auto s = ScalarField::from_function(g, [](double x, double) { return std::exp(x); });
  EXPECT_EQ(compute_re(s, s, mask), 0.0);
  auto scaled = s;
  for (auto& v : scaled.values()) v *= M_E;
  EXPECT_NEAR(compute_re(scaled, s, mask), 1.0, 1e-12);
  auto bad = s;
  bad(3, 3) = std::numeric_limits<double>::infinity();
  EXPECT_TRUE(std::isinf(compute_re(bad, s, mask)));
  bad(3, 3) = -1.0;
  EXPECT_THROW(compute_re(bad, s, mask), NumericError);
}

TEST(RelativeError, OnlyCountsMask) {
  const auto geo = mreit::testing::shepp_geometry(32);
  ScalarField a(geo.grid, 2.0), b(geo.grid, 2.0);
  for (std::size_t k = 0; k < a.size(); ++k)
    if (!geo.domain.inside(k)) a[k] = 7.0;
  EXPECT_EQ(compute_re(a, b, geo.domain), 0.0);
  EXPECT_TRUE(std::isinf(compute_re(a, ScalarField(geo.grid, 1.0), geo.domain)));
}

TEST(Theta, GeometricSeries) {
  std::vector<double> s;
  for (int n = 0; n < 40; ++n) s.push_back(std::pow(0.8, n));
  const auto fit = fit_theta(s);
  ASSERT_TRUE(fit.has_rate);
  EXPECT_NEAR(fit.theta, 0.8, 1e-6);
  EXPECT_EQ(fit.window_begin, 0u);
  EXPECT_EQ(fit.window_end, 40u);
}

TEST(Theta, StopsAtPlateau) {
  std::vector<double> s;
  for (int n = 0; n < 10; ++n) s.push_back(std::pow(0.5, n));
  for (int n = 0; n < 10; ++n) s.push_back(s.back());
  const auto fit = fit_theta(s);
  ASSERT_TRUE(fit.has_rate);
  EXPECT_NEAR(fit.theta, 0.5, 1e-9);
  EXPECT_EQ(fit.window_end, 10u);
}

TEST(Theta, NoRate) {
  EXPECT_FALSE(fit_theta(std::vector<double>(10, 1.0)).has_rate);
  EXPECT_FALSE(fit_theta({1, 2, 3, 4, 5, 6}).has_rate);
  EXPECT_FALSE(fit_theta({1.0, 0.5, 0.25, 0.3, 0.2, 0.1}).has_rate);
  EXPECT_THROW(fit_theta({1.0, 0.5, 0.25}), NumericError);
}

TEST(Verdict, Rules) {
  EXPECT_EQ(classify_run({1.0, 1e-7}, {}, 1e-6, false), Verdict::Converged);
  EXPECT_EQ(classify_run({1.0, 1e-7}, {}, 1e-6, true), Verdict::Cap);
  std::vector<double> zig;
  for (int n = 0; n < 30; ++n) zig.push_back(n % 2 ? 0.5 : 0.6);
  EXPECT_EQ(classify_run(std::vector<double>(30, 0.1), zig, 1e-6, false), Verdict::Zigzag);
  std::vector<double> flat;
  for (int n = 0; n < 30; ++n) flat.push_back(0.3 + 1e-3 * std::exp(-n));
  EXPECT_EQ(classify_run(std::vector<double>(30, 0.1), flat, 1e-6, false), Verdict::Plateaued);
  std::vector<double> down;
  for (int n = 0; n < 30; ++n) down.push_back(std::pow(0.9, n));
  EXPECT_EQ(classify_run(down, down, 1e-9, false), Verdict::Cap);
}

TEST(Verdict, IncreaseFraction) {
  EXPECT_EQ(increase_fraction({3, 2, 1}), 0.0);
  EXPECT_EQ(increase_fraction({1, 2, 3}), 1.0);
  EXPECT_EQ(increase_fraction({1, 1 + 1e-6, 1}), 0.0);
  EXPECT_NEAR(increase_fraction({1, 2, 1, 2, 1}), 0.5, 1e-15);
}
