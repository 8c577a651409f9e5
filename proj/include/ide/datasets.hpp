#pragma once

#include "ide/common.hpp"

#include <optional>
#include <string>
#include <vector>

namespace ide {

// ---------------------------------------------------------------------------
// Observational data: covariates X, binary treatment A, outcomes Y, plus the
// counterfactual outcomes when a generator (or benchmark file) provides them.
// ---------------------------------------------------------------------------
struct ObservationalDataset {
  Matrix X;             // n x d_X
  Vector A;             // n, entries in {0, 1}
  Matrix Y;             // n x d_Y
  std::optional<Matrix> Y_cf;  // same shape as Y
  std::vector<std::string> covariate_names;
  std::vector<std::string> outcome_names;

  Eigen::Index n() const { return X.rows(); }
  Eigen::Index d_x() const { return X.cols(); }
  Eigen::Index d_y() const { return Y.cols(); }
  bool has_counterfactuals() const { return Y_cf.has_value(); }

  void validate() const;

  // Ground-truth draw from the interventional distribution:
  // Y[a]_i = 1(A_i = a) Y_i + 1(A_i != a) Y_cf_i. Requires counterfactuals.
  Matrix interventional_sample(int a) const;

  ObservationalDataset rows(const std::vector<Eigen::Index>& idx) const;
};

// ---------------------------------------------------------------------------
// Synthetic structural causal model (one-dimensional covariate and outcome):
//   X ~ 0.5 N(0,1) + 0.5 N(b,1)
//   pi(x) = N(x;0,1) / (N(x;0,1) + N(x;b,1))
//   A = 1 iff -U_A < logit(pi(x)), U_A ~ Logistic(0,1)
//   Y[1] = X^2 - 1.82 X + 2 + U_Y,  Y[0] = 2.18 X + 1.5 + U_Y,  U_Y ~ N(0,1)
// The same U_Y draw realizes both potential outcomes of a unit, which makes
// the counterfactual column well defined.
// ---------------------------------------------------------------------------
struct SCMConfig {
  double b = 3.0;
  Eigen::Index n = 1000;
  std::uint64_t seed = 0;
};

ObservationalDataset scm_sample(const SCMConfig& cfg);

double scm_outcome_mean(double x, int a);
double scm_propensity(double x, double b);  // P(A = 1 | X = x)

// Interventional density P(Y[a] = y) via adaptive quadrature over the
// covariate mixture on [-6, b + 6]. Throws when quadrature does not converge.
double scm_oracle_density(double y, int a, double b, double abs_tol = 1e-6);

// ---------------------------------------------------------------------------
// Two-dimensional benchmark: interleaving half-circles with noise sigma;
// the half-circle membership is the treatment. One shared eps ~ N(0, 0.1^2)
// per unit perturbs both the rotation angles and the additive outcome noise:
//   alpha_0 = pi/4 + eps, alpha_1 = -pi/4 + eps, Y = R(alpha_A) X + eps (1,1)^T.
// ---------------------------------------------------------------------------
struct MoonsConfig {
  double sigma = 0.75;
  Eigen::Index n = 1000;
  std::uint64_t seed = 0;
};

ObservationalDataset moons_sample(const MoonsConfig& cfg);

// Outcome mechanism for a single unit given the shared noise draw eps.
Eigen::Vector2d moons_outcome(const Eigen::Vector2d& x, int a, double eps);

// ---------------------------------------------------------------------------
// CSV ingestion. Header row, '.' decimal separator, one record per row.
// Column roles are assigned by name; counterfactual columns are optional.
// ---------------------------------------------------------------------------
struct CsvSchema {
  std::vector<std::string> covariates;
  std::string treatment;
  std::vector<std::string> outcomes;
  std::vector<std::string> counterfactuals;  // empty or parallel to outcomes

  // Infers roles from conventional names: a/treatment, y*/outcome,
  // y_cf*/counterfactual, all remaining columns are covariates.
  static CsvSchema infer(const std::vector<std::string>& header);
};

ObservationalDataset load_csv(const std::string& path, const CsvSchema& schema);
ObservationalDataset load_csv(const std::string& path);  // inferred schema
void save_csv(const ObservationalDataset& data, const std::string& path);

// ---------------------------------------------------------------------------
// Outcome standardization. Population variance convention (divide by n);
// counterfactual outcomes are shifted and scaled with the factual parameters.
// ---------------------------------------------------------------------------
struct StandardizationParams {
  Vector mean;   // d_Y
  Vector scale;  // d_Y, strictly positive

  static StandardizationParams identity(Eigen::Index d_y) {
    return {Vector::Zero(d_y), Vector::Ones(d_y)};
  }

  Matrix apply(const Matrix& y) const;
  Matrix invert(const Matrix& y_std) const;
  // log p_orig(y) = log p_std((y - m)/s) - sum_j log s_j
  double log_density_offset() const { return scale.array().log().sum(); }
};

std::pair<ObservationalDataset, StandardizationParams> standardize(
    const ObservationalDataset& data);

ObservationalDataset apply_standardization(const ObservationalDataset& data,
                                           const StandardizationParams& p);

// ---------------------------------------------------------------------------
// Seed-deterministic disjoint row partition. Fold f takes the f-th test-sized
// chunk of a seeded permutation, so consecutive folds tile the sample.
// ---------------------------------------------------------------------------
struct SplitResult {
  ObservationalDataset train, test;
  std::vector<Eigen::Index> train_idx, test_idx;
};

SplitResult split(const ObservationalDataset& data, double train_fraction, int fold,
                  std::uint64_t seed);

}  // namespace ide
