#pragma once

#include <cmath>
#include <limits>
#include <string_view>
#include <vector>

#include "mreit/errors.hpp"
#include "mreit/fields.hpp"
#include "mreit/geometry.hpp"

namespace mreit {

/// sup |ln sigma - ln sigma*| / sup |ln sigma*| over the mask pixels;
/// +inf when sigma* is identically 1 there.
inline double compute_re(const ScalarField& sigma, const ScalarField& sigma_star, const DomainMask& mask) {
  require_same_grid(sigma.grid(), sigma_star.grid(), "compute_re");
  double num = 0.0, den = 0.0;
  for (std::size_t k = 0; k < sigma.size(); ++k) {
    if (!mask.inside(k)) continue;
    if (!(sigma[k] > 0.0) || !(sigma_star[k] > 0.0)) throw NumericError("relative error needs positive fields");
    const double ls = std::log(sigma_star[k]);
    num = std::max(num, std::abs(std::log(sigma[k]) - ls));
    den = std::max(den, std::abs(ls));
  }
  if (den == 0.0) return std::numeric_limits<double>::infinity();
  return num / den;
}

struct ThetaFit {
  bool has_rate = false;
  double theta = 0.0;
  std::size_t window_begin = 0;  // inclusive index into the series
  std::size_t window_end = 0;    // exclusive
};

/// Geometric rate of a decaying series. The window starts at the first
/// decrease and stops before the first plateau step (relative change below
/// `plateau_tol`) or the first increase; theta = exp(least-squares slope of
/// log values). Windows shorter than `min_points`, or a non-negative slope,
/// give no rate.
inline ThetaFit fit_theta(const std::vector<double>& series, double plateau_tol = 1e-3, std::size_t min_points = 5) {
  if (series.size() < min_points) throw NumericError("series too short to fit a rate");
  ThetaFit fit;
  std::size_t b = 0;
  while (b + 1 < series.size() && !(series[b + 1] < series[b])) ++b;
  std::size_t e = b + 1;
  while (e < series.size()) {
    const double prev = series[e - 1], cur = series[e];
    if (!(cur > 0.0) || !(cur < prev) || (prev - cur) < plateau_tol * prev) break;
    ++e;
  }
  fit.window_begin = b;
  fit.window_end = e;
  if (e - b < min_points || !(series[b] > 0.0)) return fit;
  double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
  const double m = static_cast<double>(e - b);
  for (std::size_t k = b; k < e; ++k) {
    const double x = static_cast<double>(k), y = std::log(series[k]);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  const double slope = (m * sxy - sx * sy) / (m * sxx - sx * sx);
  if (!(slope < 0.0)) return fit;
  fit.has_rate = true;
  fit.theta = std::exp(slope);
  return fit;
}

enum class Verdict { Converged, Plateaued, Zigzag, Cap };

inline std::string_view verdict_name(Verdict v) {
  switch (v) {
    case Verdict::Converged: return "converged";
    case Verdict::Plateaued: return "plateaued";
    case Verdict::Zigzag: return "zigzag";
    case Verdict::Cap: return "cap";
  }
  return "cap";
}

/// Fraction of the last `window` steps of `series` that fail to decrease.
/// Rises smaller than `rel_tol` times the previous value count as flat.
inline double increase_fraction(const std::vector<double>& series, std::size_t window = 20, double rel_tol = 1e-3) {
  if (series.size() < 2) return 0.0;
  const std::size_t first = series.size() > window ? series.size() - window : 1;
  std::size_t up = 0, total = 0;
  for (std::size_t k = std::max<std::size_t>(first, 1); k < series.size(); ++k, ++total) {
    if (series[k] - series[k - 1] > rel_tol * std::abs(series[k - 1])) ++up;
  }
  return total ? static_cast<double>(up) / total : 0.0;
}

struct VerdictRule {
  std::size_t window = 20;
  double zigzag_fraction = 0.3;
  double rel_tol = 1e-3;
  double plateau_tol = 1e-3;
};

/// converged: last step norm within eps (never for clamped runs).
/// zigzag: at least the rule's fraction of recent steps increase.
/// plateaued: the tracked series stopped moving; cap otherwise.
inline Verdict classify_run(const std::vector<double>& step_norms, const std::vector<double>& re, double eps,
                            bool clamped, const VerdictRule& rule = {}) {
  if (!clamped && !step_norms.empty() && step_norms.back() <= eps) return Verdict::Converged;
  const auto& tracked = re.empty() ? step_norms : re;
  if (increase_fraction(tracked, rule.window, rule.rel_tol) >= rule.zigzag_fraction) return Verdict::Zigzag;
  if (tracked.size() >= 2) {
    const double a = tracked[tracked.size() - 2], b = tracked.back();
    if (std::abs(b - a) <= rule.plateau_tol * std::abs(a)) return Verdict::Plateaued;
  }
  return Verdict::Cap;
}

}  // namespace mreit
