#pragma once

#include "ide/autodiff.hpp"
#include "ide/mlp.hpp"
#include "ide/rq_spline.hpp"

#include <json.hpp>

#include <variant>
#include <vector>

namespace ide {

// ---------------------------------------------------------------------------
// Differentiable rational-quadratic spline, composed from autodiff primitives
// so the gradient comes for free. Parameter matrices may have a single row
// (shared across all inputs) or one row per input.
// ---------------------------------------------------------------------------
struct SplineAdResult {
  ad::Var out;        // n x 1
  ad::Var log_deriv;  // n x 1
};

SplineAdResult spline_apply_ad(const ad::Var& x, const ad::Var& raw_w, const ad::Var& raw_h,
                               const ad::Var& raw_d, double bound, bool inverse);

// Splits a flat parameter vector [widths | heights | derivatives].
RQSplineParams split_raw_params(const Vector& theta, int n_bins, double bound);

inline int spline_param_count(int n_bins) { return 3 * n_bins - 1; }

// ---------------------------------------------------------------------------
// Transform layers
// ---------------------------------------------------------------------------
class SplineLayer {
 public:
  SplineLayer(int n_bins, double bound)
      : bound_(bound),
        raw_w_(ad::parameter(Matrix::Zero(1, n_bins))),
        raw_h_(ad::parameter(Matrix::Zero(1, n_bins))),
        raw_d_(ad::parameter(
            Matrix::Constant(1, std::max(n_bins - 1, 1), identity_raw_derivative()))) {
    check(n_bins >= 2, "spline layer: need at least 2 bins");
  }

  SplineAdResult apply_ad(const ad::Var& x, bool inverse) const {
    return spline_apply_ad(x, raw_w_, raw_h_, raw_d_, bound_, inverse);
  }

  SplineKnots knots() const {
    RQSplineParams p;
    p.raw_widths = raw_w_.value().row(0).transpose();
    p.raw_heights = raw_h_.value().row(0).transpose();
    p.raw_derivs = raw_d_.value().row(0).transpose();
    p.bound = bound_;
    return make_knots(p);
  }

  double bound() const { return bound_; }
  std::vector<ad::Var> parameters() const { return {raw_w_, raw_h_, raw_d_}; }

  nlohmann::json to_json() const;
  static SplineLayer from_json(const nlohmann::json& j);

 private:
  double bound_;
  ad::Var raw_w_, raw_h_, raw_d_;
};

// y = x * exp(log_scale) + shift
class AffineLayer {
 public:
  AffineLayer()
      : shift_(ad::parameter(Matrix::Zero(1, 1))), log_scale_(ad::parameter(Matrix::Zero(1, 1))) {}

  SplineAdResult apply_ad(const ad::Var& x, bool inverse) const;

  double shift() const { return shift_.value()(0, 0); }
  double log_scale() const { return log_scale_.value()(0, 0); }
  std::vector<ad::Var> parameters() const { return {shift_, log_scale_}; }

  nlohmann::json to_json() const;
  static AffineLayer from_json(const nlohmann::json& j);

 private:
  ad::Var shift_, log_scale_;
};

using Transform = std::variant<SplineLayer, AffineLayer>;

// ---------------------------------------------------------------------------
// Unconditional normalizing flow over a standard-normal base. Supports
// one-dimensional outcomes (a stack of transforms) and two-dimensional
// outcomes (per-dimension splines where the second dimension's parameters
// come from a conditioner network reading the first dimension).
// ---------------------------------------------------------------------------
class Flow {
 public:
  Flow() = default;

  static Flow make_1d(int n_bins, double bound, int n_spline_layers = 1,
                      bool with_affine = false);
  static Flow make_2d(int n_bins, double bound_dim1, double bound_dim2, int cond_hidden,
                      Rng& rng);

  int dim() const { return dim_; }

  // log density under the flow; y is an n x dim constant, result n x 1.
  ad::Var log_prob_ad(const Matrix& y) const;

  Vector log_prob(const Matrix& y) const;
  double log_prob_scalar(const Vector& y) const;

  Matrix sample(int n, Rng& rng) const;

  // Exact quantile function for dim == 1: forward transform of the base quantile.
  double quantile(double q) const;

  std::vector<ad::Var> parameters() const;

  nlohmann::json to_json() const;
  static Flow from_json(const nlohmann::json& j);

 private:
  int dim_ = 1;
  std::vector<Transform> layers_;  // dim 1 chain (applied base -> data order)
  // dim == 2 extras
  int n_bins2_ = 0;
  double bound2_ = 0.0;
  Mlp conditioner_;  // y1 -> raw spline params for dim 2

  friend Flow flow_with_parameters(const Flow&, const std::vector<Matrix>&);
};

// Copy of `flow` with parameter values replaced (EMA snapshots).
Flow flow_with_parameters(const Flow& flow, const std::vector<Matrix>& values);

}  // namespace ide
