#pragma once

#include "ide/nuisance.hpp"

#include <string>

namespace ide {

// Equidistant evaluation grid on [y_min, y_max] for the quadrature form of
// the cross-entropy losses (one-dimensional outcomes).
struct QuadratureGrid {
  Vector points;
  double step = 0.0;

  static QuadratureGrid from_range(double y_min, double y_max, int k) {
    check(k >= 2, "quadrature grid: need at least two points");
    check(y_max > y_min, "quadrature grid: empty range");
    QuadratureGrid g;
    g.points = Vector::LinSpaced(k, y_min, y_max);
    g.step = (y_max - y_min) / static_cast<double>(k - 1);
    return g;
  }

  // Bounds come from the training outcomes only. When the training split
  // carries counterfactual outcomes (benchmark data), both potential
  // outcomes define the range so the grid covers the interventional support.
  static QuadratureGrid from_train(const ObservationalDataset& train, int k, int dim = 0) {
    auto [lo, hi] = train_outcome_range(train, dim);
    return from_range(lo, hi, k);
  }

  static std::pair<double, double> train_outcome_range(const ObservationalDataset& train,
                                                       int dim) {
    double lo = train.Y.col(dim).minCoeff(), hi = train.Y.col(dim).maxCoeff();
    if (train.Y_cf) {
      lo = std::min(lo, train.Y_cf->col(dim).minCoeff());
      hi = std::max(hi, train.Y_cf->col(dim).maxCoeff());
    }
    return {lo, hi};
  }
};

struct BiasCorrConfig {
  double clip = 0.05;   // units with arm propensity below this are excluded
  bool enabled = true;  // disabled: plain covariate-adjusted cross-entropy fit

  BiasCorrConfig() = default;
  BiasCorrConfig(double clip_, bool enabled_) : clip(clip_), enabled(enabled_) {
    check(clip > 0.0 && clip < 0.5, "bias correction: clip threshold must be in (0, 0.5)");
  }
};

struct TargetHyperparams {
  int n_knots = 5;
  double lr = 0.005;
  int batch = 64;
  int n_iter = 4000;
  double ema_gamma = 0.995;
  int grid_k = 100;             // quadrature grid size (d_Y = 1) or MC draws (d_Y = 2)
  int cond_hidden = 10;         // conditioner width of the 2-D target flow
  std::string loss_log_path;    // per-iteration loss CSV when non-empty
};

// ---------------------------------------------------------------------------
// Cross-entropy losses. W is the matrix of conditional densities
// P(Y = y_j | X_i, A = a) over the batch rows and the grid (b x K).
// ---------------------------------------------------------------------------

// L_CE = -h * sum_j log g(y_j) * mean_i W_ij
ad::Var ce_loss_ad(const Flow& g, const Matrix& W, const QuadratureGrid& grid);

// Per-row conditional cross entropies: -h * sum_j log g(y_j) * W_ij  (b x 1)
ad::Var cce_rows_ad(const Flow& g, const Matrix& W, const QuadratureGrid& grid);

double ce_loss(const Flow& g, const CondDensityModel& nuisance, const Matrix& X_batch, int a,
               const QuadratureGrid& grid);
double cce_loss(const Flow& g, const CondDensityModel& nuisance, const Vector& x, int a,
                const QuadratureGrid& grid);

// Quadrature cores on precomputed log densities (the same sums the autodiff
// path evaluates; exposed for oracle checks).
double ce_from_logs(const Vector& logg_grid, const Matrix& W, const QuadratureGrid& grid);
Vector cce_from_logs(const Vector& logg_grid, const Matrix& W, const QuadratureGrid& grid);

// L_T = L_CE + mean_i [ 1(A_i = a and pi_a(X_i) >= clip) / pi_a(X_i)
//                       * (-log g(Y_i) - L_CCE(X_i)) ]
double bias_corrected_loss(const Flow& g, const CondDensityModel& nuisance, const Matrix& X,
                           const Vector& A, const Matrix& Y, int a, const QuadratureGrid& grid,
                           const BiasCorrConfig& cfg);

// Correction weights 1(A_i = a and pi_a >= clip) / pi_a, zero when excluded.
Vector correction_weights(const Vector& pi1, const Vector& A, int a, double clip);

// ---------------------------------------------------------------------------
// Fitted per-arm unconditional flows (EMA parameters). Densities and samples
// are reported in original outcome units through the standardization params.
// ---------------------------------------------------------------------------
struct TargetFlowPair {
  Flow flow0, flow1;
  StandardizationParams std_params = StandardizationParams::identity(1);
  double grid_min = 0.0, grid_max = 0.0;  // train-split grid bounds (diagnostics)

  const Flow& arm(int a) const {
    check(a == 0 || a == 1, "target flow pair: unknown arm " + std::to_string(a));
    return a == 1 ? flow1 : flow0;
  }

  double inf_log_prob(int a, const Vector& y) const;
  Vector inf_log_prob_rows(int a, const Matrix& y) const;
  Matrix inf_sample(int a, int n, std::uint64_t seed) const;

  nlohmann::json to_json() const;
  static TargetFlowPair from_json(const nlohmann::json& j);
};

// Two-step stage 2: both arms advance once per iteration on a shared
// minibatch; Adam steps, EMA snapshots returned as the final parameters.
TargetFlowPair train_target(const CondDensityModel& nuisance, const ObservationalDataset& train,
                            const TargetHyperparams& hp, const BiasCorrConfig& bias,
                            std::uint64_t seed,
                            const StandardizationParams& std_params =
                                StandardizationParams::identity(1));

}  // namespace ide
