#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace ide {

// Dense double-precision storage, row-major.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using IntVector = Eigen::VectorXi;

inline void check(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

inline void check_runtime(bool cond, const std::string& msg) {
  if (!cond) throw std::runtime_error(msg);
}

// ---------------------------------------------------------------------------
// Deterministic RNG. std::mt19937_64 plus hand-rolled transforms, so that
// streams are identical across standard libraries and platforms.
// ---------------------------------------------------------------------------
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  double uniform() {  // in [0, 1)
    return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Box-Muller; one value per call, cache the partner draw.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * M_PI * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  double normal(double mean, double sd) { return mean + sd * normal(); }

  double logistic() {  // Logistic(0, 1) via inverse CDF
    double u = uniform();
    while (u <= 0.0 || u >= 1.0) u = uniform();
    return std::log(u / (1.0 - u));
  }

  // Uniform integer in [0, n).
  std::int64_t index(std::int64_t n) {
    return static_cast<std::int64_t>(uniform() * static_cast<double>(n)) % n;
  }

  std::uint64_t raw() { return gen_(); }

 private:
  std::mt19937_64 gen_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// splitmix64-style mixing for deriving independent sub-seeds.
inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// ---------------------------------------------------------------------------
// Scalar normal helpers
// ---------------------------------------------------------------------------
inline constexpr double kLogTwoPi = 1.8378770664093454836;
inline constexpr double kLogStdNormalAtZero = -0.9189385332046727418;  // -0.5*log(2*pi)

inline double normal_pdf(double x, double mean = 0.0, double sd = 1.0) {
  const double z = (x - mean) / sd;
  return std::exp(-0.5 * z * z) / (sd * std::sqrt(2.0 * M_PI));
}

inline double normal_log_pdf(double x, double mean = 0.0, double sd = 1.0) {
  const double z = (x - mean) / sd;
  return -0.5 * z * z - std::log(sd) - 0.5 * kLogTwoPi;
}

inline double normal_cdf(double x, double mean = 0.0, double sd = 1.0) {
  return 0.5 * std::erfc(-(x - mean) / (sd * std::sqrt(2.0)));
}

// Inverse standard-normal CDF: Acklam's rational approximation followed by
// one Halley polish, accurate to ~1e-15 over (0, 1).
inline double normal_quantile(double p) {
  check(p > 0.0 && p < 1.0, "normal_quantile: p must lie in (0, 1)");
  static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                             -2.759285104469687e+02, 1.383577518672690e+02,
                             -3.066479806614716e+01, 2.506628277459239e+00};
  static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                             -1.556989798598866e+02, 6.680131188771972e+01,
                             -1.328068155288572e+01};
  static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                             -2.400758277161838e+00, -2.549732539343734e+00,
                             4.374664141464968e+00,  2.938163982698783e+00};
  static const double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                             2.445134137142996e+00, 3.754408661907416e+00};
  const double plow = 0.02425, phigh = 1.0 - plow;
  double x;
  if (p < plow) {
    const double q = std::sqrt(-2.0 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else if (p <= phigh) {
    const double q = p - 0.5, r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  } else {
    const double q = std::sqrt(-2.0 * std::log(1.0 - p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  const double e = normal_cdf(x) - p;
  const double u = e * std::sqrt(2.0 * M_PI) * std::exp(0.5 * x * x);
  return x - u / (1.0 + 0.5 * x * u);
}

// ---------------------------------------------------------------------------
// Adaptive Simpson quadrature
// ---------------------------------------------------------------------------
namespace detail {
template <typename F>
double simpson(const F& f, double a, double fa, double b, double fb, double fm) {
  return (b - a) / 6.0 * (fa + 4.0 * fm + fb);
}

template <typename F>
double adaptive_simpson_rec(const F& f, double a, double b, double fa, double fb, double fm,
                            double whole, double tol, int depth, bool& converged) {
  const double m = 0.5 * (a + b);
  const double lm = 0.5 * (a + m), rm = 0.5 * (m + b);
  const double flm = f(lm), frm = f(rm);
  const double left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
  const double right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
  const double delta = left + right - whole;
  if (std::abs(delta) <= 15.0 * tol || depth <= 0) {
    if (depth <= 0 && std::abs(delta) > 15.0 * tol) converged = false;
    return left + right + delta / 15.0;
  }
  return adaptive_simpson_rec(f, a, m, fa, fm, flm, left, tol / 2.0, depth - 1, converged) +
         adaptive_simpson_rec(f, m, b, fm, fb, frm, right, tol / 2.0, depth - 1, converged);
}
}  // namespace detail

struct QuadratureResult {
  double value = 0.0;
  bool converged = true;
};

template <typename F>
QuadratureResult integrate_adaptive(const F& f, double a, double b, double abs_tol = 1e-6,
                                    int max_depth = 30) {
  QuadratureResult res;
  const double fa = f(a), fb = f(b), fm = f(0.5 * (a + b));
  const double whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
  res.value = detail::adaptive_simpson_rec(f, a, b, fa, fb, fm, whole, abs_tol, max_depth,
                                           res.converged);
  return res;
}

inline double logsumexp(const Vector& v) {
  const double m = v.maxCoeff();
  if (!std::isfinite(m)) return m;
  return m + std::log((v.array() - m).exp().sum());
}

}  // namespace ide
