#include "ide/metrics.hpp"

#include <algorithm>
#include <cstdio>

namespace ide {

AvgLogProbResult avg_log_prob(const std::function<double(const Vector&)>& density,
                              const Matrix& sample) {
  check(sample.rows() > 0, "avg_log_prob: empty sample");
  Vector logs(sample.rows());
  for (Eigen::Index i = 0; i < sample.rows(); ++i) {
    const double d = density(sample.row(i).transpose());
    logs(i) = d > 0.0 ? std::log(d) : -std::numeric_limits<double>::infinity();
  }
  return avg_log_prob_from_logs(logs);
}

AvgLogProbResult avg_log_prob_from_logs(const Vector& log_densities) {
  check(log_densities.size() > 0, "avg_log_prob: empty sample");
  AvgLogProbResult res;
  for (Eigen::Index i = 0; i < log_densities.size(); ++i) {
    if (!(log_densities(i) > -std::numeric_limits<double>::infinity())) {
      res.degenerate = true;
      res.value = -std::numeric_limits<double>::infinity();
      return res;
    }
  }
  res.value = log_densities.mean();
  return res;
}

double empirical_wasserstein(const Vector& sample1, const Vector& sample2, double p) {
  check(sample1.size() > 0 && sample2.size() > 0, "wasserstein: empty sample");
  check(p >= 1.0, "wasserstein: order must be >= 1");
  Vector a = sample1, b = sample2;
  std::sort(a.data(), a.data() + a.size());
  std::sort(b.data(), b.data() + b.size());
  const Eigen::Index n = a.size(), m = b.size();
  if (n == m) {
    double acc = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) acc += std::pow(std::abs(a(i) - b(i)), p);
    return std::pow(acc / static_cast<double>(n), 1.0 / p);
  }
  // piecewise-constant quantile functions; right-continuous convention:
  // F^-1(q) = x_(ceil(q * n)) for q in ((i-1)/n, i/n]
  double acc = 0.0;
  double q = 0.0;
  Eigen::Index i = 0, j = 0;  // next breakpoints at (i+1)/n and (j+1)/m
  while (q < 1.0 - 1e-15) {
    const double qa = static_cast<double>(i + 1) / static_cast<double>(n);
    const double qb = static_cast<double>(j + 1) / static_cast<double>(m);
    const double q_next = std::min(qa, qb);
    acc += std::pow(std::abs(a(i) - b(j)), p) * (q_next - q);
    if (qa <= q_next + 1e-15 && i + 1 < n) ++i;
    if (qb <= q_next + 1e-15 && j + 1 < m) ++j;
    q = q_next;
  }
  return std::pow(acc, 1.0 / p);
}

MedianBandwidthResult median_bandwidth(const Matrix& sample) {
  const Eigen::Index n = sample.rows();
  check(n >= 2, "median_bandwidth: need at least two points");
  std::vector<double> d2;
  d2.reserve(static_cast<size_t>(n * (n - 1) / 2));
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = i + 1; j < n; ++j)
      d2.push_back((sample.row(i) - sample.row(j)).squaredNorm());
  // lower-median convention for an even pair count
  const size_t mid = (d2.size() - 1) / 2;
  std::nth_element(d2.begin(), d2.begin() + static_cast<long>(mid), d2.end());
  const double med = d2[mid];
  MedianBandwidthResult res;
  res.h = std::sqrt(0.5 * med);
  res.degenerate = med == 0.0;  // zero bandwidth is unusable downstream
  return res;
}

nlohmann::json MetricReport::to_json() const {
  nlohmann::json j = {{"method", method},   {"dataset", dataset},
                      {"arm", arm},         {"fold", fold},
                      {"seed", seed},       {"log_prob_in", log_prob_in},
                      {"log_prob_out", log_prob_out}, {"runtime_seconds", runtime_seconds}};
  if (std::isfinite(wasserstein_in)) j["wasserstein_in"] = wasserstein_in;
  if (std::isfinite(wasserstein_out)) j["wasserstein_out"] = wasserstein_out;
  return j;
}

std::string MetricReport::csv_header() {
  return "dataset,method,arm,fold,seed,log_prob_in,log_prob_out,wasserstein_in,wasserstein_out";
}

namespace {
std::string fmt_metric(double v) {
  if (!std::isfinite(v)) return std::isnan(v) ? "" : (v > 0 ? "inf" : "-inf");
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}
}  // namespace

std::string MetricReport::csv_row() const {
  return dataset + "," + method + "," + std::to_string(arm) + "," + std::to_string(fold) + "," +
         std::to_string(seed) + "," + fmt_metric(log_prob_in) + "," + fmt_metric(log_prob_out) +
         "," + fmt_metric(wasserstein_in) + "," + fmt_metric(wasserstein_out);
}

}  // namespace ide
