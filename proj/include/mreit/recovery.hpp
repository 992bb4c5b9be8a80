#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "mreit/fields.hpp"
#include "mreit/forward.hpp"
#include "mreit/geometry.hpp"
#include "mreit/pde.hpp"

namespace mreit {

struct RecoveredCurrent {
  VectorField2D J;
  ScalarField phi;
  ScalarField psi;
  double beta = 0.0;
  double phi_integral = 0.0;
  double psi_integral = 0.0;
  double min_J = 0.0;  // over the interior region
  double max_J = 0.0;
  std::vector<std::string> warnings;
};

/// Tangential line integrals of perp-grad phi and perp-grad psi along E+,
/// evaluated as endpoint differences of the traces. E+ is traversed from its
/// Gamma+ end to its Gamma- end; its endpoints are the boundary pixels that
/// close the electrode run, i.e. the neighbouring arc pixels on the loop.
inline std::pair<double, double> check_beta(const ScalarField& phi, const ScalarField& psi, const BoundarySpec& bc) {
  const auto& loop = bc.loop;
  const std::size_t n = loop.size();
  const std::size_t before = loop[(bc.e_plus.begin + n - 1) % n], after = loop[bc.e_plus.end % n];
  return {phi[before] - phi[after], psi[before] - psi[after]};
}

/// Same integrals with each junction placed midway between the end electrode
/// pixel and its arc neighbour. The trace has a square-root singularity
/// there, so this estimate converges like sqrt(h).
inline std::pair<double, double> check_beta_midpoint(const ScalarField& phi, const ScalarField& psi,
                                                     const BoundarySpec& bc) {
  const auto& loop = bc.loop;
  const std::size_t n = loop.size();
  const std::size_t first = bc.e_plus.begin, last = bc.e_plus.end - 1;
  const std::size_t before = loop[(first + n - 1) % n], after = loop[(last + 1) % n];
  auto diff = [&](const ScalarField& f) {
    return 0.5 * (f[loop[first]] + f[before]) - 0.5 * (f[loop[last]] + f[after]);
  };
  return {diff(phi), diff(psi)};
}

/// J = perp grad(phi - (I/2) psi) from Bz alone. psi depends only on the
/// geometry and is solved once per instance.
class CurrentRecovery {
 public:
  explicit CurrentRecovery(const BoundarySpec& bc, SolverOptions options = {})
      : solver_(bc, options), psi_(solver_.solve_psi()) {}

  const BoundarySpec& boundary() const { return solver_.boundary(); }
  const ScalarField& psi() const { return psi_; }

  /// `laplace_bz` is the Laplacian of Bz (T/m^2) on the domain.
  RecoveredCurrent recover(const ScalarField& laplace_bz, double current, const DomainMask& interior,
                           double floor_fraction = 1e-3) {
    const auto& bc = solver_.boundary();
    require_same_grid(laplace_bz.grid(), bc.grid(), "recover_current");
    detail::require_finite_on(laplace_bz.values(), bc.domain, "Laplacian of Bz");
    ScalarField rhs(bc.grid(), 0.0);
    for (std::size_t k = 0; k < rhs.size(); ++k) rhs[k] = laplace_bz[k] / kMu0;
    ScalarField phi = solver_.solve_phi(rhs);
    const double beta = -0.5 * current;
    ScalarField potential(bc.grid(), 0.0);
    for (std::size_t k = 0; k < potential.size(); ++k) potential[k] = phi[k] + beta * psi_[k];
    VectorField2D J = perp(gradient(potential, bc.domain));
    J.set_unit(Unit::AmperePerSquareMeter);
    RecoveredCurrent out{std::move(J), std::move(phi), psi_, beta, 0.0, 0.0, 0.0, 0.0, {}};
    std::tie(out.phi_integral, out.psi_integral) = check_beta(out.phi, out.psi, bc);
    double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
    for (std::size_t k = 0; k < rhs.size(); ++k) {
      if (!interior.inside(k)) continue;
      lo = std::min(lo, out.J.norm(k));
      hi = std::max(hi, out.J.norm(k));
    }
    out.min_J = lo;
    out.max_J = hi;
    if (lo < floor_fraction * hi) {
      out.warnings.push_back("min |J| over the interior (" + std::to_string(lo) + ") is below the floor " +
                             std::to_string(floor_fraction * hi) + "; 1/|J|^2 will be clamped");
    }
    return out;
  }

 private:
  MixedLaplaceSolver solver_;
  ScalarField psi_;
};

inline RecoveredCurrent recover_current(const ScalarField& bz, double current, const BoundarySpec& bc,
                                        const DomainMask& interior, SolverOptions options = {}) {
  CurrentRecovery rec(bc, options);
  return rec.recover(laplacian(bz, bc.domain), current, interior);
}

}  // namespace mreit
