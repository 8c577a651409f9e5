#pragma once

#include "ide/common.hpp"

#include <json.hpp>

#include <functional>
#include <string>

namespace ide {

// ---------------------------------------------------------------------------
// Goodness-of-fit metrics between an estimated density and a ground-truth
// interventional sample.
// ---------------------------------------------------------------------------

struct AvgLogProbResult {
  double value = 0.0;
  bool degenerate = false;  // a zero or negative density was hit (value is -inf)
};

// Mean log density over the sample rows. A non-positive density flips the
// degenerate flag and yields -infinity rather than an exception.
AvgLogProbResult avg_log_prob(const std::function<double(const Vector&)>& density,
                              const Matrix& sample);
AvgLogProbResult avg_log_prob_from_logs(const Vector& log_densities);

// Empirical p-Wasserstein distance between two one-dimensional samples via
// empirical quantile functions. Equal sizes reduce to the mean absolute
// difference of the sorted samples (p = 1); unequal sizes integrate
// |F1^-1 - F2^-1| over (0, 1) with right-continuous quantiles.
double empirical_wasserstein(const Vector& sample1, const Vector& sample2, double p = 1.0);

struct MedianBandwidthResult {
  double h = 0.0;
  bool degenerate = false;  // all points identical
};

// h = sqrt(0.5 * median ||y_i - y_j||^2) over pairs i < j; lower median for
// an even pair count.
MedianBandwidthResult median_bandwidth(const Matrix& sample);

// ---------------------------------------------------------------------------
// Per-run evaluation record.
// ---------------------------------------------------------------------------
struct MetricReport {
  std::string method;
  std::string dataset;
  int arm = 0;
  int fold = 0;
  std::uint64_t seed = 0;
  double log_prob_in = 0.0;
  double log_prob_out = 0.0;
  double wasserstein_in = std::numeric_limits<double>::quiet_NaN();
  double wasserstein_out = std::numeric_limits<double>::quiet_NaN();
  double runtime_seconds = 0.0;

  nlohmann::json to_json() const;
  std::string csv_row() const;  // deterministic columns only
  static std::string csv_header();
};

}  // namespace ide
