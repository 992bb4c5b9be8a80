#pragma once

#include <Eigen/IterativeLinearSolvers>
#include <Eigen/SparseCholesky>
#include <Eigen/SparseCore>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <optional>
#include <vector>

#include "mreit/errors.hpp"
#include "mreit/fields.hpp"
#include "mreit/geometry.hpp"

namespace mreit {

struct SolverOptions {
  double rel_tol = 1e-10;
  int max_iterations = 20000;
  /// Direct factorisation is attempted when PCG stalls and the system has
  /// at most this many unknowns.
  std::size_t direct_fallback_max_unknowns = 64 * 64;
  bool record_residuals = false;
};

struct SolveReport {
  int iterations = 0;
  double rel_residual = 0.0;
  bool used_direct = false;
  std::vector<double> residual_history;
};

enum class NodeRole : std::uint8_t { Inactive, Unknown, Dirichlet };

/// FiniteVolume weights links by the active squares they border; FivePoint
/// uses full links and unit volumes, valid when every unknown has four
/// active neighbours (Dirichlet-bounded regions).
enum class Stencil : std::uint8_t { FiniteVolume, FivePoint };

/// Node-centred finite-volume operator -div(c grad .) on a pixel mask.
///
/// Pixels are nodes; the domain is the union of grid squares whose four
/// corners are active, so boundary pixels sit on the boundary and own half
/// (edge) or quarter (corner) control volumes. The conductance of a link is
/// proportional to the number of active squares it borders, which makes the
/// boundary condition between active and inactive squares zero flux
/// (homogeneous Neumann). Interior rows reduce to the five-point stencil.
/// Dirichlet pixels are eliminated into the right-hand side, leaving a
/// symmetric positive definite system. The link coefficient is the harmonic
/// mean of the two adjacent pixel values, or 1 when no coefficient field is
/// given. In FivePoint mode every unknown row is the plain five-point
/// equation.
class EllipticOperator {
 public:
  using SparseMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor>;

  EllipticOperator(const Grid2D& grid, std::vector<NodeRole> roles, const ScalarField* coefficient,
                   SolverOptions options = {}, Stencil stencil = Stencil::FiniteVolume)
      : grid_(grid), roles_(std::move(roles)), options_(options), stencil_(stencil) {
    if (roles_.size() != grid_.size()) throw GeometryError("role map does not match grid");
    if (coefficient) {
      require_same_grid(grid_, coefficient->grid(), "elliptic operator");
      coef_ = coefficient->values();
      for (std::size_t k = 0; k < coef_.size(); ++k) {
        if (roles_[k] != NodeRole::Inactive && !(coef_[k] > 0.0 && std::isfinite(coef_[k]))) {
          throw NumericError("conductivity must be positive and finite on the domain");
        }
      }
    }
    unknown_index_.assign(grid_.size(), -1);
    for (std::size_t k = 0; k < grid_.size(); ++k) {
      if (roles_[k] == NodeRole::Unknown) unknown_index_[k] = static_cast<int>(unknowns_.size()), unknowns_.push_back(k);
    }
    if (unknowns_.empty()) throw GeometryError("elliptic problem has no unknowns");
    if (stencil_ == Stencil::FivePoint) {
      for (auto k : unknowns_) {
        const int i = grid_.col(k), j = grid_.row(k);
        for (const auto& d : detail::kNeighbors4)
          if (!active(i + d[0], j + d[1])) throw GeometryError("five-point unknown with an inactive neighbour");
      }
    }
    assemble();
  }

  const Grid2D& grid() const { return grid_; }
  const std::vector<NodeRole>& roles() const { return roles_; }
  std::size_t unknowns() const { return unknowns_.size(); }
  const SparseMatrix& matrix() const { return matrix_; }
  const SolveReport& last_report() const { return report_; }

  /// Conductance of the link between adjacent active pixels a and b.
  /// A link bordering no active square (a one-pixel spur) keeps half weight.
  double face_weight(std::size_t a, std::size_t b) const {
    const int ia = grid_.col(a), ja = grid_.row(a), ib = grid_.col(b), jb = grid_.row(b);
    const bool horizontal = ja == jb;
    const double geom = horizontal ? grid_.hy() / grid_.hx() : grid_.hx() / grid_.hy();
    if (stencil_ == Stencil::FivePoint) {
      if (coef_.empty()) return geom;
      return geom * 2.0 * coef_[a] * coef_[b] / (coef_[a] + coef_[b]);
    }
    const int i0 = std::min(ia, ib), j0 = std::min(ja, jb);
    const int squares = horizontal ? square_active(i0, j0) + square_active(i0, j0 - 1)
                                   : square_active(i0, j0) + square_active(i0 - 1, j0);
    const double frac = squares == 0 ? 0.5 : 0.5 * squares;
    if (coef_.empty()) return geom * frac;
    return geom * frac * 2.0 * coef_[a] * coef_[b] / (coef_[a] + coef_[b]);
  }

  /// Control volume of pixel k as a fraction of h^2 (at least a quarter).
  double volume_fraction(std::size_t k) const {
    if (stencil_ == Stencil::FivePoint) return 1.0;
    const int i = grid_.col(k), j = grid_.row(k);
    const int n = square_active(i, j) + square_active(i - 1, j) + square_active(i, j - 1) + square_active(i - 1, j - 1);
    return n == 0 ? 0.25 : 0.25 * n;
  }

  bool active(int i, int j) const {
    return grid_.contains(i, j) && roles_[grid_.index(i, j)] != NodeRole::Inactive;
  }

  /// Whether the square with lower-left corner (i, j) has four active corners.
  int square_active(int i, int j) const {
    return active(i, j) && active(i + 1, j) && active(i, j + 1) && active(i + 1, j + 1) ? 1 : 0;
  }

  /// Solves -div(c grad u) = source with u = boundary on Dirichlet pixels.
  /// `source` is a density (per unit area); null means zero.
  ScalarField solve(const ScalarField& boundary, const ScalarField* source, Unit unit = Unit::Dimensionless) {
    require_same_grid(grid_, boundary.grid(), "elliptic solve");
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(unknowns_.size()));
    const double area = grid_.cell_area();
    for (std::size_t r = 0; r < unknowns_.size(); ++r) {
      const auto k = unknowns_[r];
      double b = source ? (*source)[k] * area * volume_fraction(k) : 0.0;
      const int i = grid_.col(k), j = grid_.row(k);
      for (const auto& d : detail::kNeighbors4) {
        const int a = i + d[0], c = j + d[1];
        if (!active(a, c)) continue;
        const auto q = grid_.index(a, c);
        if (roles_[q] == NodeRole::Dirichlet) b += face_weight(k, q) * boundary[q];
      }
      rhs[static_cast<Eigen::Index>(r)] = b;
    }
    const Eigen::VectorXd x = solve_system(rhs);
    ScalarField out(grid_, 0.0, unit);
    for (std::size_t k = 0; k < grid_.size(); ++k) {
      if (roles_[k] == NodeRole::Dirichlet) out[k] = boundary[k];
    }
    for (std::size_t r = 0; r < unknowns_.size(); ++r) out[unknowns_[r]] = x[static_cast<Eigen::Index>(r)];
    return out;
  }

  /// Net flux -c grad u leaving the pixel set `members` into other active pixels.
  double outward_flux(const ScalarField& u, const std::vector<std::uint8_t>& members) const {
    double flux = 0.0;
    for (std::size_t k = 0; k < grid_.size(); ++k) {
      if (!members[k]) continue;
      const int i = grid_.col(k), j = grid_.row(k);
      for (const auto& d : detail::kNeighbors4) {
        const int a = i + d[0], c = j + d[1];
        if (!active(a, c)) continue;
        const auto q = grid_.index(a, c);
        if (!members[q]) flux += face_weight(k, q) * (u[k] - u[q]);
      }
    }
    return flux;
  }

 private:
  void assemble() {
    std::vector<Eigen::Triplet<double>> trip;
    trip.reserve(unknowns_.size() * 5);
    for (std::size_t r = 0; r < unknowns_.size(); ++r) {
      const auto k = unknowns_[r];
      const int i = grid_.col(k), j = grid_.row(k);
      double diag = 0.0;
      for (const auto& d : detail::kNeighbors4) {
        const int a = i + d[0], c = j + d[1];
        if (!active(a, c)) continue;
        const auto q = grid_.index(a, c);
        const double w = face_weight(k, q);
        diag += w;
        if (roles_[q] == NodeRole::Unknown) trip.emplace_back(static_cast<int>(r), unknown_index_[q], -w);
      }
      trip.emplace_back(static_cast<int>(r), static_cast<int>(r), diag);
    }
    const auto n = static_cast<Eigen::Index>(unknowns_.size());
    matrix_.resize(n, n);
    matrix_.setFromTriplets(trip.begin(), trip.end());
    matrix_.makeCompressed();
  }

  Eigen::VectorXd solve_system(const Eigen::VectorXd& rhs) {
    report_ = SolveReport{};
    const double bnorm = rhs.norm();
    if (bnorm == 0.0) return Eigen::VectorXd::Zero(rhs.size());
    if (!precond_) {
      precond_ = std::make_unique<Eigen::IncompleteCholesky<double>>();
      csc_ = matrix_;
      precond_->compute(csc_);
      if (precond_->info() != Eigen::Success) precond_.reset();
    }
    // Preconditioned conjugate gradients, zero initial guess.
    Eigen::VectorXd x = Eigen::VectorXd::Zero(rhs.size());
    Eigen::VectorXd r = rhs;
    Eigen::VectorXd z = precond_ ? Eigen::VectorXd(precond_->solve(r)) : r;
    Eigen::VectorXd p = z;
    Eigen::VectorXd ap(rhs.size());
    double rz = r.dot(z);
    double relres = 1.0;
    int it = 0;
    for (; it < options_.max_iterations; ++it) {
      ap.noalias() = matrix_ * p;
      const double pap = p.dot(ap);
      if (!(pap > 0.0)) break;
      const double alpha = rz / pap;
      x.noalias() += alpha * p;
      r.noalias() -= alpha * ap;
      relres = r.norm() / bnorm;
      if (options_.record_residuals) report_.residual_history.push_back(relres);
      if (relres <= options_.rel_tol) {
        ++it;
        break;
      }
      z = precond_ ? Eigen::VectorXd(precond_->solve(r)) : r;
      const double rz_next = r.dot(z);
      p = z + (rz_next / rz) * p;
      rz = rz_next;
    }
    report_.iterations = it;
    report_.rel_residual = relres;
    if (std::isfinite(relres) && relres <= options_.rel_tol) return x;
    if (unknowns_.size() <= options_.direct_fallback_max_unknowns) {
      Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt;
      if (csc_.rows() == 0) csc_ = matrix_;
      ldlt.compute(csc_);
      if (ldlt.info() == Eigen::Success) {
        Eigen::VectorXd xd = ldlt.solve(rhs);
        report_.used_direct = true;
        report_.rel_residual = (rhs - matrix_ * xd).norm() / bnorm;
        if (std::isfinite(report_.rel_residual)) return xd;
      }
    }
    throw NumericError("linear solve did not converge (relative residual " + std::to_string(relres) + " after " +
                       std::to_string(it) + " iterations)");
  }

  Grid2D grid_;
  std::vector<NodeRole> roles_;
  std::vector<double> coef_;
  SolverOptions options_;
  Stencil stencil_;
  std::vector<int> unknown_index_;
  std::vector<std::size_t> unknowns_;
  SparseMatrix matrix_;
  Eigen::SparseMatrix<double> csc_;
  std::unique_ptr<Eigen::IncompleteCholesky<double>> precond_;
  SolveReport report_;
};

// ---------------------------------------------------------------------------

struct ConductionSolution {
  ScalarField u;            // V, zero on E-
  double electrode_potential = 0.0;  // u on E+
  double flux_plus = 0.0;   // current leaving through E+ (A per unit depth)
  double flux_minus = 0.0;  // current leaving through E- (equals -flux_plus)
  int iterations = 0;
};

inline std::vector<std::uint8_t> part_members(const BoundarySpec& b, BoundaryPart part) {
  std::vector<std::uint8_t> m(b.part.size(), 0);
  for (std::size_t k = 0; k < m.size(); ++k) m[k] = b.part[k] == part ? 1 : 0;
  return m;
}

/// Two-electrode conduction problem with equipotential electrodes carrying
/// total current I, insulated gaps, and E- grounded.
///
/// Solved through the auxiliary potential w (w = 1 on E+, 0 on E-, zero flux
/// elsewhere): u = (I / I_w) w, where I_w is the discrete flux of w through E+.
inline ConductionSolution solve_conduction(const ScalarField& sigma, const BoundarySpec& bc, double current,
                                           SolverOptions options = {}) {
  require_same_grid(sigma.grid(), bc.grid(), "solve_conduction");
  const auto& g = bc.grid();
  std::vector<NodeRole> roles(g.size(), NodeRole::Inactive);
  ScalarField w_boundary(g, 0.0, Unit::Volt);
  for (std::size_t k = 0; k < g.size(); ++k) {
    if (!bc.domain.inside(k)) continue;
    if (bc.part[k] == BoundaryPart::ElectrodePlus) {
      roles[k] = NodeRole::Dirichlet;
      w_boundary[k] = 1.0;
    } else if (bc.part[k] == BoundaryPart::ElectrodeMinus) {
      roles[k] = NodeRole::Dirichlet;
    } else {
      roles[k] = NodeRole::Unknown;
    }
  }
  EllipticOperator op(g, std::move(roles), &sigma, options);
  ScalarField w = op.solve(w_boundary, nullptr, Unit::Volt);
  const auto plus = part_members(bc, BoundaryPart::ElectrodePlus);
  const auto minus = part_members(bc, BoundaryPart::ElectrodeMinus);
  const double iw = op.outward_flux(w, plus);
  if (!(iw > 0.0) || !std::isfinite(iw)) throw NumericError("auxiliary conduction flux is not positive");
  const double scale = current / iw;
  for (auto& v : w.values()) v *= scale;
  ConductionSolution sol{std::move(w), scale, 0.0, 0.0, op.last_report().iterations};
  sol.flux_plus = op.outward_flux(sol.u, plus);
  sol.flux_minus = op.outward_flux(sol.u, minus);
  return sol;
}

/// Conduction equation with Dirichlet data on every boundary pixel of `mask`.
inline ScalarField solve_dirichlet_conduction(const ScalarField& sigma, const DomainMask& mask,
                                              const ScalarField& boundary_values, SolverOptions options = {}) {
  const auto& g = mask.grid();
  std::vector<NodeRole> roles(g.size(), NodeRole::Inactive);
  for (std::size_t k = 0; k < g.size(); ++k) {
    if (mask.inside(k)) roles[k] = mask.on_boundary(k) ? NodeRole::Dirichlet : NodeRole::Unknown;
  }
  EllipticOperator op(g, std::move(roles), &sigma, options, Stencil::FivePoint);
  return op.solve(boundary_values, nullptr, boundary_values.unit());
}

/// Reusable Dirichlet Poisson solver on a region: boundary pixels of the
/// region carry values, interior pixels satisfy the five-point equation.
class PoissonDirichletSolver {
 public:
  explicit PoissonDirichletSolver(const DomainMask& region, SolverOptions options = {})
      : region_(region), op_(region.grid(), roles_for(region), nullptr, options, Stencil::FivePoint) {}

  const DomainMask& region() const { return region_; }
  const SolveReport& last_report() const { return op_.last_report(); }

  /// Returns f with lap(f) = rhs on the interior and f = boundary on the region boundary.
  ScalarField solve(const ScalarField& rhs, const ScalarField& boundary) {
    ScalarField source(rhs.grid(), 0.0);
    for (std::size_t k = 0; k < rhs.size(); ++k) source[k] = -rhs[k];
    return op_.solve(boundary, &source, boundary.unit());
  }

 private:
  static std::vector<NodeRole> roles_for(const DomainMask& region) {
    std::vector<NodeRole> roles(region.grid().size(), NodeRole::Inactive);
    for (std::size_t k = 0; k < roles.size(); ++k) {
      if (region.inside(k)) roles[k] = region.on_boundary(k) ? NodeRole::Dirichlet : NodeRole::Unknown;
    }
    return roles;
  }

  DomainMask region_;
  EllipticOperator op_;
};

inline ScalarField solve_poisson_dirichlet(const ScalarField& rhs, const ScalarField& boundary_value,
                                           const DomainMask& region, SolverOptions options = {}) {
  PoissonDirichletSolver solver(region, options);
  return solver.solve(rhs, boundary_value);
}

/// Laplacian with zero flux on the electrodes and Dirichlet data on the
/// insulated arcs; shared by the phi and psi problems.
class MixedLaplaceSolver {
 public:
  explicit MixedLaplaceSolver(const BoundarySpec& bc, SolverOptions options = {})
      : bc_(bc), op_(bc.grid(), roles_for(bc), nullptr, options) {}

  const BoundarySpec& boundary() const { return bc_; }
  const SolveReport& last_report() const { return op_.last_report(); }

  /// lap(phi) = rhs in the domain, n.grad(phi) = 0 on E+/E-, phi = 0 on Gamma+/-.
  ScalarField solve_phi(const ScalarField& rhs) {
    require_same_grid(rhs.grid(), bc_.grid(), "solve_phi");
    ScalarField source(rhs.grid(), 0.0);
    for (std::size_t k = 0; k < rhs.size(); ++k) source[k] = bc_.domain.inside(k) ? -rhs[k] : 0.0;
    return op_.solve(ScalarField(bc_.grid(), 0.0), &source);
  }

  /// Harmonic, n.grad(psi) = 0 on E+/E-, psi = +1 on Gamma+ and -1 on Gamma-.
  ScalarField solve_psi() {
    ScalarField boundary(bc_.grid(), 0.0);
    for (std::size_t k = 0; k < boundary.size(); ++k) {
      if (bc_.part[k] == BoundaryPart::GammaPlus) boundary[k] = 1.0;
      if (bc_.part[k] == BoundaryPart::GammaMinus) boundary[k] = -1.0;
    }
    return op_.solve(boundary, nullptr);
  }

 private:
  static std::vector<NodeRole> roles_for(const BoundarySpec& bc) {
    std::vector<NodeRole> roles(bc.grid().size(), NodeRole::Inactive);
    for (std::size_t k = 0; k < roles.size(); ++k) {
      if (!bc.domain.inside(k)) continue;
      roles[k] = bc.is_gamma(k) ? NodeRole::Dirichlet : NodeRole::Unknown;
    }
    return roles;
  }

  BoundarySpec bc_;
  EllipticOperator op_;
};

inline ScalarField solve_phi(const ScalarField& laplace_bz_over_mu0, const BoundarySpec& bc, SolverOptions options = {}) {
  MixedLaplaceSolver solver(bc, options);
  return solver.solve_phi(laplace_bz_over_mu0);
}

inline ScalarField solve_psi(const BoundarySpec& bc, SolverOptions options = {}) {
  MixedLaplaceSolver solver(bc, options);
  return solver.solve_psi();
}

}  // namespace mreit
