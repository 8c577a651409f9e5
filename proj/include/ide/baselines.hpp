#pragma once

#include "ide/nuisance.hpp"
#include "ide/target.hpp"

namespace ide {

// ---------------------------------------------------------------------------
// Semi-parametric plug-in estimator: average the conditional density over a
// reference covariate sample.
// ---------------------------------------------------------------------------
double plugin_density(const CondDensityModel& cond, const Matrix& X_ref, int a,
                      const Vector& y);

// Grid evaluation in one pass (d_Y = 1).
Vector plugin_density_grid(const CondDensityModel& cond, const Matrix& X_ref, int a,
                           const Vector& grid);

// log of the plug-in density at each row of Ys (any outcome dimension).
Vector plugin_log_prob_rows(const CondDensityModel& cond, const Matrix& X_ref, int a,
                            const Matrix& Ys);

// Plug-in sampling: a uniformly drawn reference covariate row, then one
// conditional draw.
Matrix plugin_sample(const CondDensityModel& cond, const Matrix& X_ref, int a, int n, Rng& rng);

// ---------------------------------------------------------------------------
// TARNet*: hypernetwork conditional mean plus one global homoscedastic scale.
// ---------------------------------------------------------------------------
struct TarnetHyperparams {
  double lr = 0.005;
  int batch = 64;
  int n_iter = 5000;
  int hidden = 10;
  int d_rep = 10;
  NoiseRegConfig noise;
};

class TarnetStarModel : public CondDensityModel {
 public:
  TarnetStarModel() = default;
  TarnetStarModel(int d_x, int d_y, int d_rep, int hidden, Rng& rng);

  ad::Var loss(const Matrix& X, const Vector& A, const Matrix& Y,
               const NoiseRegConfig& noise, Rng& rng) const;

  double sigma() const;  // floored at 1e-3
  Matrix cond_mean(const Matrix& X, const Vector& A) const { return net_.head_plain(X, A); }

  int outcome_dim() const override { return d_y_; }
  Vector propensity(const Matrix& X) const override { return net_.propensity_plain(X); }
  Matrix cond_density(const Matrix& X, int a, const Vector& grid) const override;
  Vector cond_log_prob(const Matrix& X, const Vector& A, const Matrix& Y) const override;
  Matrix cond_sample(const Matrix& X, int a, int k, Rng& rng) const override;

  std::vector<ad::Var> parameters() const;

  nlohmann::json to_json() const;
  static TarnetStarModel from_json(const nlohmann::json& j);

 private:
  int d_y_ = 1;
  Hypernet net_;     // head: conditional mean
  ad::Var log_sigma_;  // single unconditional scale
};

TarnetStarModel fit_tarnet_star(const ObservationalDataset& train,
                                const TarnetHyperparams& hp, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Mixture density network: per-(X, A) component logits, means, log scales.
// Components are isotropic normals for multi-dimensional outcomes.
// ---------------------------------------------------------------------------
struct MdnHyperparams {
  int n_components = 5;
  double lr = 0.005;
  int batch = 64;
  int n_iter = 5000;
  int hidden = 10;
  int d_rep = 10;
  NoiseRegConfig noise;
};

class MdnModel : public CondDensityModel {
 public:
  MdnModel() = default;
  MdnModel(int d_x, int d_y, int n_components, int d_rep, int hidden, Rng& rng);

  ad::Var loss(const Matrix& X, const Vector& A, const Matrix& Y,
               const NoiseRegConfig& noise, Rng& rng) const;

  // normalized weights, means (n_c x d_y), scales for one covariate row
  struct MixtureParams {
    Vector weights, scales;
    Matrix means;
  };
  MixtureParams mixture_params(const Vector& x, int a) const;

  int outcome_dim() const override { return d_y_; }
  Vector propensity(const Matrix& X) const override { return net_.propensity_plain(X); }
  Matrix cond_density(const Matrix& X, int a, const Vector& grid) const override;
  Vector cond_log_prob(const Matrix& X, const Vector& A, const Matrix& Y) const override;
  Matrix cond_sample(const Matrix& X, int a, int k, Rng& rng) const override;

  std::vector<ad::Var> parameters() const { return net_.parameters(); }
  int n_components() const { return n_c_; }

  nlohmann::json to_json() const;
  static MdnModel from_json(const nlohmann::json& j);

 private:
  Vector log_mixture_rows(const Matrix& theta, const Matrix& Y) const;

  int d_y_ = 1;
  int n_c_ = 5;
  Hypernet net_;  // head: n_c * (1 + d_y + 1) raw mixture parameters
};

MdnModel fit_mdn(const ObservationalDataset& train, const MdnHyperparams& hp,
                 std::uint64_t seed);

// ---------------------------------------------------------------------------
// KDE: outcome regression + propensity nuisance, density functional
// T_y(Y; h) (normalized Gaussian kernel), one-step corrected average with
// propensity clipping; reported after clip-and-renormalize.
// ---------------------------------------------------------------------------
struct KdeHyperparams {
  double lr = 0.005;
  int batch = 64;
  int n_iter = 10000;
  int hidden = 10;
  int d_rep = 10;
  double alpha = 1.0;
  double clip = 0.05;
};

// Normalized Gaussian density functional T_y(v; h) in d dimensions.
double kde_kernel(const Vector& v, const Vector& y, double h);

class KdeModel {
 public:
  KdeModel() = default;
  KdeModel(int d_x, int d_y, int d_rep, int hidden, Rng& rng);

  ad::Var loss(const Matrix& X, const Vector& A, const Matrix& Y, double alpha,
               Rng& rng) const;

  Vector propensity(const Matrix& X) const { return net_.propensity_plain(X); }
  Matrix regression(const Matrix& X, int a) const;  // E(Y | X, a) rows

  std::vector<ad::Var> parameters() const { return net_.parameters(); }

  Vector bandwidths;  // per arm, median heuristic on the training subsample
  double clip = 0.05;

  nlohmann::json to_json() const;
  static KdeModel from_json(const nlohmann::json& j);

 private:
  Hypernet net_;
};

KdeModel fit_kde(const ObservationalDataset& train, const KdeHyperparams& hp,
                 std::uint64_t seed);

// Raw one-step estimate at y (may be negative).
double kde_aiptw_density_raw(const KdeModel& model, const ObservationalDataset& data, int a,
                             const Vector& y);

// Core of the estimator with the nuisance pieces supplied directly:
// pi1 are propensities for arm 1, yhat the outcome regressions at arm a.
double kde_aiptw_density_raw(const Vector& pi1, const Matrix& yhat,
                             const ObservationalDataset& data, int a, const Vector& y,
                             double bandwidth, double clip);

// ---------------------------------------------------------------------------
// Distributional kernel mean embedding: plug-in weights from a ridge system,
// normalized RBF outcome kernel; reported after clip-and-renormalize.
// ---------------------------------------------------------------------------
struct DkmeHyperparams {
  double sigma_k = 1.0;    // conditional-kernel smoothness, sigma_k = 2 h_k^2
  double epsilon = 0.1;    // ridge regularization
};

struct DKMEModel {
  Matrix Y_arm[2];        // per-arm training outcomes
  Vector beta[2];         // per-arm embedding weights
  Vector bandwidth;       // per-arm outcome-kernel bandwidths (median heuristic)
  double sigma_k = 1.0;
  double epsilon = 0.1;

  nlohmann::json to_json() const;  // weights and kernel hyperparameters
  // outcomes are re-derived from the training split on load
  static DKMEModel from_json(const nlohmann::json& j, const ObservationalDataset& train);
};

DKMEModel fit_dkme(const ObservationalDataset& train, const DkmeHyperparams& hp);

double dkme_density_raw(const DKMEModel& model, const Vector& y, int a);

// Out-of-sample MSE of kernel ridge regression X -> Y, the tuning criterion.
double dkme_ridge_mse(const ObservationalDataset& train, const ObservationalDataset& val,
                      double sigma_k, double epsilon);

// ---------------------------------------------------------------------------
// Truncated cosine-series estimator on outcomes rescaled to [0, 1]:
// g(u) = 1 + sum_j beta_j b_j(u) with b_j(u) = sqrt(2) cos(pi j u).
// Coefficients are the plug-in or one-step-corrected basis means computed
// through a companion conditional-density model.
// ---------------------------------------------------------------------------
double cosine_basis(int j, double u);

struct TSModel {
  int basis_dim = 10;
  int d_y = 1;
  Vector coef[2];       // per arm; length d (d_Y = 1) or d*d row-major (d_Y = 2)
  Vector u_min, u_max;  // per-dim rescaling from the training split

  // density of the rescaled variable u (before clipping); 0 outside [0,1]^d
  double density_u(const Vector& u, int a) const;
  // density in outcome units via the rescaling Jacobian
  double density_raw(const Vector& y, int a) const;

  nlohmann::json to_json() const;
  static TSModel from_json(const nlohmann::json& j);
};

struct TsHyperparams {
  int basis_dim = 10;
  int grid_k = 100;   // quadrature grid (d_Y = 1) or MC draws (d_Y = 2)
  std::uint64_t mc_seed = 0;
};

TSModel ts_fit(const CondDensityModel& nuisance, const ObservationalDataset& train,
               const TsHyperparams& hp, const BiasCorrConfig& bias);

// ---------------------------------------------------------------------------
// Clip-and-renormalize wrapper for estimators that can go negative. The
// reporting grid spans [y_min - 1, y_max + 1] per dimension.
// ---------------------------------------------------------------------------
class ClippedDensity {
 public:
  // d_Y = 1
  ClippedDensity(std::function<double(const Vector&)> raw, double y_min, double y_max,
                 int grid_points = 1000);
  // d_Y = 2 (grid_points per dimension)
  ClippedDensity(std::function<double(const Vector&)> raw, const Vector& y_min,
                 const Vector& y_max, int grid_points_per_dim = 32);

  double operator()(const Vector& y) const;
  double normalization() const { return z_; }

 private:
  std::function<double(const Vector&)> raw_;
  double z_ = 1.0;
};

}  // namespace ide
