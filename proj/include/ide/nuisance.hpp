#pragma once

#include "ide/datasets.hpp"
#include "ide/flow.hpp"

#include <memory>

namespace ide {

// ---------------------------------------------------------------------------
// Contract between the conditional-outcome stage and everything downstream
// (target training, plug-in estimators, corruption wrappers, oracles).
// Propensity is reported for arm 1; arm 0 is the complement.
// ---------------------------------------------------------------------------
class CondDensityModel {
 public:
  virtual ~CondDensityModel() = default;
  virtual int outcome_dim() const = 0;
  virtual Vector propensity(const Matrix& X) const = 0;
  // One-dimensional outcomes: conditional density at each grid point, n x K.
  virtual Matrix cond_density(const Matrix& X, int a, const Vector& grid) const = 0;
  // log P(Y = y_i | X = x_i, A = a_i) per row.
  virtual Vector cond_log_prob(const Matrix& X, const Vector& A, const Matrix& Y) const = 0;
  // k draws per row from P(. | x_i, a), stacked as (rows * k) x d_Y grouped by row.
  virtual Matrix cond_sample(const Matrix& X, int a, int k, Rng& rng) const = 0;
};

inline Vector arm_propensity(const Vector& pi1, int a) {
  return a == 1 ? pi1 : Vector(Vector::Ones(pi1.size()) - pi1);
}

// ---------------------------------------------------------------------------
// Hypernetwork skeleton shared by the conditional-flow model and the
// conditional-density baselines: FC1 maps covariates to a representation plus
// a propensity logit, FC2 maps [representation, treatment] to the parameters
// of a conditional distribution.
// ---------------------------------------------------------------------------
struct Hypernet {
  Mlp fc1;  // d_X -> hidden -> d_rep + 1
  Mlp fc2;  // d_rep + 1 -> hidden -> head_dim
  int d_rep = 10;

  Hypernet() = default;
  Hypernet(int d_x, int d_rep_, int hidden, int head_dim, Rng& rng)
      : fc1({d_x, hidden, d_rep_ + 1}, Activation::LeakySoftplus, rng, /*linear_skip=*/true),
        fc2({d_rep_ + 1, hidden, head_dim}, Activation::LeakySoftplus, rng, true),
        d_rep(d_rep_) {}

  struct Repr {
    ad::Var r;      // n x d_rep
    ad::Var logit;  // n x 1
  };

  Repr repr_ad(const ad::Var& x) const {
    ad::Var out = fc1.forward(x);
    return {ad::slice_cols(out, 0, d_rep), ad::slice_cols(out, d_rep, 1)};
  }

  // head(x, a) combining FC1 and FC2 without a graph (frozen evaluation)
  Matrix head_plain(const Matrix& X, const Vector& A) const {
    Matrix out1 = fc1.forward_plain(X);
    Matrix in2(X.rows(), d_rep + 1);
    in2.leftCols(d_rep) = out1.leftCols(d_rep);
    in2.col(d_rep) = A;
    return fc2.forward_plain(in2);
  }

  Vector propensity_plain(const Matrix& X) const {
    Matrix out1 = fc1.forward_plain(X);
    return out1.col(d_rep).unaryExpr([](double l) { return 1.0 / (1.0 + std::exp(-l)); });
  }

  std::vector<ad::Var> parameters() const {
    auto out = fc1.parameters();
    auto p2 = fc2.parameters();
    out.insert(out.end(), p2.begin(), p2.end());
    return out;
  }

  nlohmann::json to_json() const;
  static Hypernet from_json(const nlohmann::json& j);
};

// ---------------------------------------------------------------------------
// Conditional spline flow with hypernetwork parameters: the stage-1 model
// estimating P(Y | X, A) and the propensity score. Doubles as the
// conditional-normalizing-flow plug-in baseline.
// ---------------------------------------------------------------------------
struct NoiseRegConfig {
  double var_x = 0.0;  // representation noise variance
  double var_y = 0.0;  // outcome noise variance
};

struct NuisanceHyperparams {
  int n_knots = 5;
  double lr = 0.005;
  int batch = 64;
  int n_iter = 5000;
  double alpha = 1.0;  // weight of the propensity loss
  int hidden = 10;
  int d_rep = 10;
};

class NuisanceModel : public CondDensityModel {
 public:
  NuisanceModel() = default;
  NuisanceModel(int d_x, int d_y, const NuisanceHyperparams& hp, const Vector& bounds,
                Rng& rng);

  // Batch loss: mean[-log P(Y~ | X, A) + alpha * BCE(pi(X), A)] with fresh
  // noise draws perturbing the representation and the evaluated outcome.
  ad::Var loss(const Matrix& X, const Vector& A, const Matrix& Y, const NoiseRegConfig& noise,
               double alpha, Rng& rng) const;

  int outcome_dim() const override { return d_y_; }
  Vector propensity(const Matrix& X) const override { return net_.propensity_plain(X); }
  Matrix cond_density(const Matrix& X, int a, const Vector& grid) const override;
  Vector cond_log_prob(const Matrix& X, const Vector& A, const Matrix& Y) const override;
  Matrix cond_sample(const Matrix& X, int a, int k, Rng& rng) const override;

  double cond_log_prob_one(const Vector& x, int a, const Vector& y) const;

  std::vector<ad::Var> parameters() const;
  const Vector& bounds() const { return bounds_; }
  int n_knots() const { return n_knots_; }

  nlohmann::json to_json() const;
  static NuisanceModel from_json(const nlohmann::json& j);

 private:
  // raw spline parameters for dim 1 per row (plain path)
  Matrix theta1_plain(const Matrix& X, const Vector& A) const {
    return net_.head_plain(X, A);
  }
  Matrix theta2_plain(const Matrix& X, const Vector& A, const Vector& y1) const;

  int d_y_ = 1;
  int n_knots_ = 5;
  Vector bounds_;  // per outcome dimension
  Hypernet net_;   // fc2 head: spline params for outcome dim 1
  Mlp ar_;         // [R, A, y1] -> spline params for outcome dim 2
};

// Stage-1 training: SGD with momentum 0.9 on minibatches.
NuisanceModel train_nuisance(const ObservationalDataset& train,
                             const NuisanceHyperparams& hp, const NoiseRegConfig& noise,
                             std::uint64_t seed);

// ---------------------------------------------------------------------------
// Ground-truth nuisance for the synthetic SCM, optionally expressed in
// standardized outcome units so it can stand in for a fitted model.
// ---------------------------------------------------------------------------
class ScmOracleNuisance : public CondDensityModel {
 public:
  explicit ScmOracleNuisance(double b,
                             StandardizationParams std_params = StandardizationParams::identity(1))
      : b_(b), std_(std::move(std_params)) {}

  int outcome_dim() const override { return 1; }
  Vector propensity(const Matrix& X) const override;
  Matrix cond_density(const Matrix& X, int a, const Vector& grid) const override;
  Vector cond_log_prob(const Matrix& X, const Vector& A, const Matrix& Y) const override;
  Matrix cond_sample(const Matrix& X, int a, int k, Rng& rng) const override;

 private:
  double b_;
  StandardizationParams std_;
};

// Replaces the propensity with a constant (degrades the treatment model).
class ConstantPropensity : public CondDensityModel {
 public:
  ConstantPropensity(std::shared_ptr<const CondDensityModel> base, double pi1)
      : base_(std::move(base)), pi1_(pi1) {}

  int outcome_dim() const override { return base_->outcome_dim(); }
  Vector propensity(const Matrix& X) const override {
    return Vector::Constant(X.rows(), pi1_);
  }
  Matrix cond_density(const Matrix& X, int a, const Vector& grid) const override {
    return base_->cond_density(X, a, grid);
  }
  Vector cond_log_prob(const Matrix& X, const Vector& A, const Matrix& Y) const override {
    return base_->cond_log_prob(X, A, Y);
  }
  Matrix cond_sample(const Matrix& X, int a, int k, Rng& rng) const override {
    return base_->cond_sample(X, a, k, rng);
  }

 private:
  std::shared_ptr<const CondDensityModel> base_;
  double pi1_;
};

// Widens the conditional density by `factor` around a fixed center
// (degrades the outcome model while keeping it a proper density).
class WidenedConditional : public CondDensityModel {
 public:
  WidenedConditional(std::shared_ptr<const CondDensityModel> base, double factor,
                     double center = 0.0)
      : base_(std::move(base)), s_(factor), c_(center) {
    check(factor > 0.0, "widened conditional: factor must be positive");
  }

  int outcome_dim() const override { return base_->outcome_dim(); }
  Vector propensity(const Matrix& X) const override { return base_->propensity(X); }
  Matrix cond_density(const Matrix& X, int a, const Vector& grid) const override;
  Vector cond_log_prob(const Matrix& X, const Vector& A, const Matrix& Y) const override;
  Matrix cond_sample(const Matrix& X, int a, int k, Rng& rng) const override;

 private:
  std::shared_ptr<const CondDensityModel> base_;
  double s_, c_;
};

}  // namespace ide
