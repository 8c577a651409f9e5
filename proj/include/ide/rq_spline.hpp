#pragma once

#include "ide/common.hpp"

namespace ide {

// Monotonic rational-quadratic spline bijection on [-B, B], identity with
// zero log-derivative outside. Raw (unconstrained) parameters are mapped to
// strictly valid knots: bin widths/heights through a normalized exponential
// with an absolute minimum bin size, interior derivatives through softplus
// with a positive floor; boundary derivatives are fixed at 1 so the spline
// joins the outside identity with a continuous derivative.

inline constexpr double kMinBinSize = 1e-3;
inline constexpr double kMinDerivative = 1e-3;

// Raw-parameter value that maps to a derivative of exactly 1.
inline double identity_raw_derivative() {
  return std::log(std::expm1(1.0 - kMinDerivative));
}

struct RQSplineParams {
  Vector raw_widths;   // length n_bins
  Vector raw_heights;  // length n_bins
  Vector raw_derivs;   // length n_bins - 1 (interior knots)
  double bound = 1.0;  // B > 0

  // Equal bins, unit derivatives: the identity map.
  static RQSplineParams identity(int n_bins, double bound) {
    check(n_bins >= 1 && bound > 0.0, "spline: need n_bins >= 1 and B > 0");
    RQSplineParams p;
    p.raw_widths = Vector::Zero(n_bins);
    p.raw_heights = Vector::Zero(n_bins);
    p.raw_derivs = Vector::Constant(std::max(n_bins - 1, 0), identity_raw_derivative());
    p.bound = bound;
    return p;
  }
};

// Normalized knot arrays: positions x, y (n_bins + 1 each, spanning [-B, B])
// and derivatives d (n_bins + 1, endpoints = 1).
struct SplineKnots {
  Vector x, y, d;
  double bound = 1.0;
};

inline Vector constrained_bins(const Vector& raw, double bound) {
  const Eigen::Index k = raw.size();
  check(2.0 * bound > static_cast<double>(k) * kMinBinSize,
        "spline: interval too small for the minimum bin size");
  Vector e = (raw.array() - raw.maxCoeff()).exp();
  Vector soft = e / e.sum();
  return Vector::Constant(k, kMinBinSize) +
         (2.0 * bound - static_cast<double>(k) * kMinBinSize) * soft;
}

inline SplineKnots make_knots(const RQSplineParams& p) {
  check(p.raw_widths.size() == p.raw_heights.size() &&
            p.raw_derivs.size() == p.raw_widths.size() - 1,
        "spline: inconsistent parameter lengths");
  const Eigen::Index k = p.raw_widths.size();
  SplineKnots kn;
  kn.bound = p.bound;
  Vector w = constrained_bins(p.raw_widths, p.bound);
  Vector h = constrained_bins(p.raw_heights, p.bound);
  kn.x = Vector(k + 1);
  kn.y = Vector(k + 1);
  kn.x(0) = -p.bound;
  kn.y(0) = -p.bound;
  for (Eigen::Index i = 0; i < k; ++i) {
    kn.x(i + 1) = kn.x(i) + w(i);
    kn.y(i + 1) = kn.y(i) + h(i);
  }
  kn.x(k) = p.bound;  // absorb accumulated roundoff
  kn.y(k) = p.bound;
  kn.d = Vector(k + 1);
  kn.d(0) = 1.0;
  kn.d(k) = 1.0;
  for (Eigen::Index i = 0; i + 1 < k; ++i) {
    const double r = p.raw_derivs(i);
    const double sp = r > 0.0 ? r + std::log1p(std::exp(-r)) : std::log1p(std::exp(r));
    kn.d(i + 1) = kMinDerivative + sp;
  }
  return kn;
}

namespace detail {
// Largest bin index i with knots(i) <= v, clamped to [0, n_bins - 1].
inline Eigen::Index locate_bin(const Vector& knots, double v) {
  Eigen::Index lo = 0, hi = knots.size() - 1;
  while (hi - lo > 1) {
    const Eigen::Index mid = (lo + hi) / 2;
    if (v < knots(mid))
      hi = mid;
    else
      lo = mid;
  }
  return lo;
}
}  // namespace detail

// Forward map x -> y; *log_deriv receives log dy/dx.
inline double rq_forward(const SplineKnots& kn, double x, double* log_deriv = nullptr) {
  check(std::isfinite(x), "spline: non-finite input");
  if (x <= -kn.bound || x >= kn.bound) {
    if (log_deriv) *log_deriv = 0.0;
    return x;
  }
  const Eigen::Index b = detail::locate_bin(kn.x, x);
  const double w = kn.x(b + 1) - kn.x(b), h = kn.y(b + 1) - kn.y(b);
  const double s = h / w;
  const double dk = kn.d(b), dk1 = kn.d(b + 1);
  const double xi = (x - kn.x(b)) / w;
  const double xi1m = xi * (1.0 - xi);
  const double den = s + (dk1 + dk - 2.0 * s) * xi1m;
  const double num = h * (s * xi * xi + dk * xi1m);
  if (log_deriv) {
    const double dnum = s * s * (dk1 * xi * xi + 2.0 * s * xi1m + dk * (1.0 - xi) * (1.0 - xi));
    *log_deriv = std::log(dnum) - 2.0 * std::log(den);
  }
  return kn.y(b) + num / den;
}

// Inverse map y -> x; *log_deriv receives log dx/dy.
inline double rq_inverse(const SplineKnots& kn, double y, double* log_deriv = nullptr) {
  check(std::isfinite(y), "spline: non-finite input");
  if (y <= -kn.bound || y >= kn.bound) {
    if (log_deriv) *log_deriv = 0.0;
    return y;
  }
  const Eigen::Index b = detail::locate_bin(kn.y, y);
  const double w = kn.x(b + 1) - kn.x(b), h = kn.y(b + 1) - kn.y(b);
  const double s = h / w;
  const double dk = kn.d(b), dk1 = kn.d(b + 1);
  const double dy = y - kn.y(b);
  const double t = dk1 + dk - 2.0 * s;
  const double qa = h * (s - dk) + dy * t;
  const double qb = h * dk - dy * t;
  const double qc = -s * dy;
  const double disc = qb * qb - 4.0 * qa * qc;
  check_runtime(disc >= 0.0, "spline inverse: negative discriminant");
  const double xi = 2.0 * qc / (-qb - std::sqrt(disc));
  if (log_deriv) {
    const double xi1m = xi * (1.0 - xi);
    const double den = s + t * xi1m;
    const double dnum = s * s * (dk1 * xi * xi + 2.0 * s * xi1m + dk * (1.0 - xi) * (1.0 - xi));
    *log_deriv = 2.0 * std::log(den) - std::log(dnum);
  }
  return kn.x(b) + xi * w;
}

// Spec-facing convenience: apply in either direction.
enum class SplineDirection { Forward, Inverse };

inline std::pair<double, double> rq_spline_apply(const RQSplineParams& params, double x,
                                                 SplineDirection dir) {
  const SplineKnots kn = make_knots(params);
  double ld = 0.0;
  const double out = dir == SplineDirection::Forward ? rq_forward(kn, x, &ld)
                                                     : rq_inverse(kn, x, &ld);
  return {out, ld};
}

}  // namespace ide
