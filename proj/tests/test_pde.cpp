#include <gtest/gtest.h>

#include "support.hpp"

using namespace mreit;
using mreit::testing::toy_geometry;

namespace {

// sigma = e^x with exact solutions e^{-x} and e^{(y-x)/2}
double manufactured_error(int n, bool one_dimensional) {
  const auto g = build_grid(n, n, 2.0, 2.0, {-1.0, -1.0});
  const auto mask = build_domain(g, SquareShape{});
  const auto sigma = ScalarField::from_function(g, [](double x, double) { return std::exp(x); });
  const auto exact = ScalarField::from_function(
      g, [&](double x, double y) { return one_dimensional ? std::exp(-x) : std::exp(0.5 * (y - x)); });
  const auto u = solve_dirichlet_conduction(sigma, mask, exact);
  double e = 0.0;
  for (std::size_t k = 0; k < g.size(); ++k)
    if (mask.interior(k)) e = std::max(e, std::abs(u[k] - exact[k]));
  return e;
}

double poisson_error(int n) {
  const auto g = build_grid(n, n, 2.0, 2.0, {-1.0, -1.0});
  const auto region = build_domain(g, DiscShape{{0.0, 0.0}, 1.9});
  auto f = [](double x, double y) { return std::sin(2 * x) * std::exp(y); };
  const auto rhs = ScalarField::from_function(g, [](double x, double y) { return -3.0 * std::sin(2 * x) * std::exp(y); });
  const auto exact = ScalarField::from_function(g, f);
  const auto p = solve_poisson_dirichlet(rhs, exact, region);
  double e = 0.0;
  for (std::size_t k = 0; k < g.size(); ++k)
    if (region.inside(k)) e = std::max(e, std::abs(p[k] - exact[k]));
  return e;
}

}  // namespace

TEST(Conduction, UniformSquareIsAntisymmetric) {
  const auto geo = toy_geometry(64);
  const auto sol = solve_conduction(ScalarField(geo.grid, 1.0), geo.boundary, 0.01);
  const auto& g = geo.grid;
  const double V = sol.electrode_potential;
  for (int j = 0; j < g.ny(); ++j)
    for (int i = 0; i < g.nx(); ++i) EXPECT_NEAR(sol.u(i, j) + sol.u(g.nx() - 1 - i, j), V, 1e-8 * V);
}

TEST(Conduction, OneDimensionalPairIsReproducedExactly) {
  // every link carries the same flux, so only the solver tolerance is left
  for (int n : {32, 64, 128}) EXPECT_LT(manufactured_error(n, true), 1e-8);
}

TEST(Conduction, ManufacturedSolutionIsSecondOrder) {
  const double e32 = manufactured_error(32, false), e64 = manufactured_error(64, false),
               e128 = manufactured_error(128, false);
  EXPECT_GE(e32 / e64, 3.5);
  EXPECT_LE(e32 / e64, 4.5);
  EXPECT_GE(e64 / e128, 3.5);
  EXPECT_LE(e64 / e128, 4.5);
}

TEST(Conduction, ElectrodeFluxEqualsCurrent) {
  for (const auto& geo : {toy_geometry(64), mreit::testing::shepp_geometry(96)}) {
    const auto sigma = gaussian_blur(toy_sigma(geo.grid), 2.0, 5);
    const double I = 0.01;
    const auto sol = solve_conduction(sigma, geo.boundary, I);
    EXPECT_NEAR(sol.flux_plus, I, 10 * 1e-10 * I);
    EXPECT_NEAR(sol.flux_minus, -I, 1e-8 * I);
  }
}

TEST(Conduction, InvariantsHold) {
  const auto geo = toy_geometry(64);
  for (const auto& c : mreit::testing::maximum_principle(geo)) EXPECT_TRUE(c.ok()) << c.name << " " << c.value;
  for (const auto& c : mreit::testing::flux_conservation(geo)) EXPECT_TRUE(c.ok()) << c.name << " " << c.value;
}

TEST(Conduction, ScalesLinearlyWithCurrent) {
  const auto geo = toy_geometry(48);
  const auto sigma = toy_sigma(geo.grid);
  const auto a = solve_conduction(sigma, geo.boundary, 0.01), b = solve_conduction(sigma, geo.boundary, 0.03);
  for (std::size_t k = 0; k < a.u.size(); ++k) EXPECT_NEAR(b.u[k], 3.0 * a.u[k], 1e-12 * b.electrode_potential);
}

TEST(Poisson, HomogeneousGivesZero) {
  const auto geo = toy_geometry(40);
  const auto p = solve_poisson_dirichlet(ScalarField(geo.grid, 0.0), ScalarField(geo.grid, 0.0), geo.interior);
  for (double v : p.values()) EXPECT_EQ(v, 0.0);
}

TEST(Poisson, ExactForQuadratic) {
  const auto geo = mreit::testing::shepp_geometry(64);
  const auto q = ScalarField::from_function(geo.grid, [](double x, double y) { return x * x + y * y; });
  const auto p = solve_poisson_dirichlet(ScalarField(geo.grid, 4.0), q, geo.interior);
  for (std::size_t k = 0; k < q.size(); ++k)
    if (geo.interior.inside(k)) {
      EXPECT_NEAR(p[k], q[k], 1e-10);
    }
}

TEST(Poisson, ManufacturedSolutionIsSecondOrder) {
  const double r1 = poisson_error(32) / poisson_error(64), r2 = poisson_error(64) / poisson_error(128);
  EXPECT_NEAR(r1, 4.0, 1.0);
  EXPECT_NEAR(r2, 4.0, 1.0);
}

TEST(Phi, ZeroDataGivesZero) {
  const auto geo = toy_geometry(48);
  const auto phi = solve_phi(ScalarField(geo.grid, 0.0), geo.boundary);
  for (double v : phi.values()) EXPECT_EQ(v, 0.0);
}

TEST(Phi, ManufacturedSolution) {
  // (1 - x^2)^2 (1 - y^2) vanishes on the whole boundary and has zero normal
  // derivative on the x = +-1 electrodes
  auto err = [](int n) {
    const auto geo = toy_geometry(n);
    auto f = [](double x, double y) { return (1 - x * x) * (1 - x * x) * (1 - y * y); };
    const auto exact = ScalarField::from_function(geo.grid, f);
    const auto rhs = ScalarField::from_function(
        geo.grid, [](double x, double y) { return (12 * x * x - 4) * (1 - y * y) - 2 * (1 - x * x) * (1 - x * x); });
    const auto phi = solve_phi(rhs, geo.boundary);
    double e = 0.0;
    for (std::size_t k = 0; k < exact.size(); ++k) e = std::max(e, std::abs(phi[k] - exact[k]));
    return e;
  };
  const double e64 = err(64), e128 = err(128);
  EXPECT_LT(e64, 1e-2);
  EXPECT_GT(e64 / e128, 3.0);
}

TEST(Psi, MaximumPrincipleAndSymmetry) {
  const auto geo = toy_geometry(96);
  const auto psi = solve_psi(geo.boundary);
  const auto& g = geo.grid;
  for (int j = 0; j < g.ny(); ++j)
    for (int i = 0; i < g.nx(); ++i) {
      EXPECT_LE(std::abs(psi(i, j)), 1.0 + 1e-12);
      EXPECT_NEAR(psi(i, j), -psi(i, g.ny() - 1 - j), 1e-8);
    }
}

TEST(Psi, LineIntegralAlongElectrode) {
  for (const auto& geo : {toy_geometry(128), mreit::testing::shepp_geometry(128)}) {
    const auto psi = solve_psi(geo.boundary);
    const auto [a, b] = check_beta(ScalarField(geo.grid, 0.0), psi, geo.boundary);
    EXPECT_EQ(a, 0.0);
    EXPECT_NEAR(b, -2.0, 0.04);
  }
}
