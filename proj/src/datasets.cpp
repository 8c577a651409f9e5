#include "ide/datasets.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

namespace ide {

void ObservationalDataset::validate() const {
  check(X.rows() == A.size() && X.rows() == Y.rows(), "dataset: row counts differ");
  if (Y_cf) check(Y_cf->rows() == Y.rows() && Y_cf->cols() == Y.cols(),
                  "dataset: counterfactual shape differs from outcome shape");
  for (Eigen::Index i = 0; i < A.size(); ++i)
    check(A(i) == 0.0 || A(i) == 1.0, "dataset: treatment must be 0 or 1");
}

Matrix ObservationalDataset::interventional_sample(int a) const {
  check(Y_cf.has_value(), "interventional sample requires counterfactual outcomes");
  Matrix out(Y.rows(), Y.cols());
  for (Eigen::Index i = 0; i < Y.rows(); ++i)
    out.row(i) = (static_cast<int>(A(i)) == a) ? Y.row(i) : Y_cf->row(i);
  return out;
}

ObservationalDataset ObservationalDataset::rows(const std::vector<Eigen::Index>& idx) const {
  ObservationalDataset out;
  const Eigen::Index m = static_cast<Eigen::Index>(idx.size());
  out.X.resize(m, X.cols());
  out.A.resize(m);
  out.Y.resize(m, Y.cols());
  if (Y_cf) out.Y_cf = Matrix(m, Y.cols());
  for (Eigen::Index i = 0; i < m; ++i) {
    out.X.row(i) = X.row(idx[i]);
    out.A(i) = A(idx[i]);
    out.Y.row(i) = Y.row(idx[i]);
    if (Y_cf) out.Y_cf->row(i) = Y_cf->row(idx[i]);
  }
  out.covariate_names = covariate_names;
  out.outcome_names = outcome_names;
  return out;
}

// ------------------------------- SCM --------------------------------------

double scm_outcome_mean(double x, int a) {
  return a == 1 ? x * x - 1.82 * x + 2.0 : 2.18 * x + 1.5;
}

double scm_propensity(double x, double b) {
  const double p0 = normal_pdf(x, 0.0, 1.0);
  const double pb = normal_pdf(x, b, 1.0);
  return p0 / (p0 + pb);
}

ObservationalDataset scm_sample(const SCMConfig& cfg) {
  check(cfg.n >= 1, "scm: n must be >= 1");
  Rng rng(cfg.seed);
  ObservationalDataset d;
  d.X.resize(cfg.n, 1);
  d.A.resize(cfg.n);
  d.Y.resize(cfg.n, 1);
  d.Y_cf = Matrix(cfg.n, 1);
  for (Eigen::Index i = 0; i < cfg.n; ++i) {
    const double x = rng.uniform() < 0.5 ? rng.normal() : cfg.b + rng.normal();
    const double pi = scm_propensity(x, cfg.b);
    const double u_a = rng.logistic();
    const int a = (-u_a < std::log(pi / (1.0 - pi))) ? 1 : 0;
    const double u_y = rng.normal();
    const double y1 = scm_outcome_mean(x, 1) + u_y;
    const double y0 = scm_outcome_mean(x, 0) + u_y;
    d.X(i, 0) = x;
    d.A(i) = a;
    d.Y(i, 0) = a == 1 ? y1 : y0;
    (*d.Y_cf)(i, 0) = a == 1 ? y0 : y1;
  }
  d.covariate_names = {"x0"};
  d.outcome_names = {"y0"};
  return d;
}

double scm_oracle_density(double y, int a, double b, double abs_tol) {
  const auto integrand = [&](double x) {
    const double mix = 0.5 * normal_pdf(x, 0.0, 1.0) + 0.5 * normal_pdf(x, b, 1.0);
    return normal_pdf(y, scm_outcome_mean(x, a), 1.0) * mix;
  };
  const double lo = std::min(0.0, b) - 6.0, hi = std::max(0.0, b) + 6.0;
  // Unit panels: the integrand is a product of narrow bumps the adaptive rule
  // can otherwise step over.
  double total = 0.0;
  for (double left = lo; left < hi; left += 1.0) {
    const double right = std::min(left + 1.0, hi);
    const auto res = integrate_adaptive(integrand, left, right, abs_tol / (hi - lo));
    if (!res.converged) {
      std::ostringstream msg;
      msg << "scm oracle density: quadrature did not converge at y=" << y
          << " (residual above " << abs_tol << ")";
      throw std::runtime_error(msg.str());
    }
    total += res.value;
  }
  return total;
}

// ------------------------------- moons ------------------------------------

Eigen::Vector2d moons_outcome(const Eigen::Vector2d& x, int a, double eps) {
  const double angle = (a == 1 ? -M_PI / 4.0 : M_PI / 4.0) + eps;
  const double c = std::cos(angle), s = std::sin(angle);
  Eigen::Vector2d y;
  y(0) = c * x(0) - s * x(1) + eps;
  y(1) = s * x(0) + c * x(1) + eps;
  return y;
}

ObservationalDataset moons_sample(const MoonsConfig& cfg) {
  check(cfg.sigma >= 0.0, "moons: sigma must be >= 0");
  check(cfg.n >= 1, "moons: n must be >= 1");
  Rng rng(cfg.seed);
  ObservationalDataset d;
  d.X.resize(cfg.n, 2);
  d.A.resize(cfg.n);
  d.Y.resize(cfg.n, 2);
  d.Y_cf = Matrix(cfg.n, 2);
  for (Eigen::Index i = 0; i < cfg.n; ++i) {
    const int a = rng.uniform() < 0.5 ? 0 : 1;  // half-circle membership
    const double t = M_PI * rng.uniform();
    Eigen::Vector2d x;
    if (a == 0) {  // top half-circle
      x << std::cos(t), std::sin(t);
    } else {  // bottom half-circle, interleaved
      x << 1.0 - std::cos(t), 0.5 - std::sin(t);
    }
    x(0) += cfg.sigma * rng.normal();
    x(1) += cfg.sigma * rng.normal();
    const double eps = 0.1 * rng.normal();  // shared by angles and additive noise
    d.X.row(i) = x.transpose();
    d.A(i) = a;
    d.Y.row(i) = moons_outcome(x, a, eps).transpose();
    d.Y_cf->row(i) = moons_outcome(x, 1 - a, eps).transpose();
  }
  d.covariate_names = {"x0", "x1"};
  d.outcome_names = {"y0", "y1"};
  return d;
}

// -------------------------------- CSV -------------------------------------

namespace {

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::stringstream ss(line);
  while (std::getline(ss, field, ',')) {
    // trim whitespace and a possible trailing \r
    const auto b = field.find_first_not_of(" \t\r");
    const auto e = field.find_last_not_of(" \t\r");
    out.push_back(b == std::string::npos ? "" : field.substr(b, e - b + 1));
  }
  if (!line.empty() && line.back() == ',') out.push_back("");
  return out;
}

double parse_number(const std::string& s, Eigen::Index row, const std::string& col) {
  try {
    size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    throw std::invalid_argument("csv: malformed value '" + s + "' in column '" + col +
                                "' at data row " + std::to_string(row));
  }
}

Eigen::Index column_index(const std::vector<std::string>& header, const std::string& name) {
  const auto it = std::find(header.begin(), header.end(), name);
  check(it != header.end(), "csv: missing column '" + name + "'");
  return static_cast<Eigen::Index>(it - header.begin());
}

// Matches prefix followed only by digits, e.g. "y", "y0", "y_cf12".
bool prefixed_index_name(const std::string& s, const std::string& prefix) {
  if (s.rfind(prefix, 0) != 0) return false;
  return std::all_of(s.begin() + static_cast<long>(prefix.size()), s.end(),
                     [](char c) { return c >= '0' && c <= '9'; });
}

}  // namespace

CsvSchema CsvSchema::infer(const std::vector<std::string>& header) {
  CsvSchema s;
  for (const auto& name : header) {
    if (name == "a" || name == "treatment") {
      s.treatment = name;
    } else if (prefixed_index_name(name, "y_cf")) {
      s.counterfactuals.push_back(name);
    } else if (prefixed_index_name(name, "y")) {
      s.outcomes.push_back(name);
    } else {
      s.covariates.push_back(name);
    }
  }
  check(!s.treatment.empty(), "csv: could not infer a treatment column (expected 'a')");
  check(!s.outcomes.empty(), "csv: could not infer outcome columns (expected 'y*')");
  check(s.counterfactuals.empty() || s.counterfactuals.size() == s.outcomes.size(),
        "csv: counterfactual columns must match outcome columns");
  return s;
}

ObservationalDataset load_csv(const std::string& path, const CsvSchema& schema) {
  std::ifstream in(path);
  check(in.good(), "csv: cannot open '" + path + "'");
  std::string line;
  check(static_cast<bool>(std::getline(in, line)), "csv: empty file '" + path + "'");
  const auto header = split_line(line);

  std::vector<Eigen::Index> xi, yi, ci;
  for (const auto& c : schema.covariates) xi.push_back(column_index(header, c));
  for (const auto& c : schema.outcomes) yi.push_back(column_index(header, c));
  for (const auto& c : schema.counterfactuals) ci.push_back(column_index(header, c));
  const Eigen::Index ai = column_index(header, schema.treatment);
  check(!yi.empty(), "csv: schema needs at least one outcome column");
  check(ci.empty() || ci.size() == yi.size(),
        "csv: counterfactual columns must match outcome columns");

  std::vector<std::vector<double>> rows;
  Eigen::Index row = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto fields = split_line(line);
    if (fields.size() != header.size())
      throw std::invalid_argument("csv: row " + std::to_string(row) + " has " +
                                  std::to_string(fields.size()) + " fields, expected " +
                                  std::to_string(header.size()));
    std::vector<double> vals(fields.size());
    for (size_t j = 0; j < fields.size(); ++j) vals[j] = parse_number(fields[j], row, header[j]);
    const double a = vals[static_cast<size_t>(ai)];
    if (a != 0.0 && a != 1.0)
      throw std::invalid_argument("csv: non-binary treatment value " + std::to_string(a) +
                                  " at data row " + std::to_string(row));
    rows.push_back(std::move(vals));
    ++row;
  }

  ObservationalDataset d;
  const Eigen::Index n = static_cast<Eigen::Index>(rows.size());
  d.X.resize(n, static_cast<Eigen::Index>(xi.size()));
  d.A.resize(n);
  d.Y.resize(n, static_cast<Eigen::Index>(yi.size()));
  if (!ci.empty()) d.Y_cf = Matrix(n, static_cast<Eigen::Index>(yi.size()));
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& vals = rows[static_cast<size_t>(i)];
    for (size_t j = 0; j < xi.size(); ++j)
      d.X(i, static_cast<Eigen::Index>(j)) = vals[static_cast<size_t>(xi[j])];
    for (size_t j = 0; j < yi.size(); ++j)
      d.Y(i, static_cast<Eigen::Index>(j)) = vals[static_cast<size_t>(yi[j])];
    for (size_t j = 0; j < ci.size(); ++j)
      (*d.Y_cf)(i, static_cast<Eigen::Index>(j)) = vals[static_cast<size_t>(ci[j])];
    d.A(i) = vals[static_cast<size_t>(ai)];
  }
  d.covariate_names = schema.covariates;
  d.outcome_names = schema.outcomes;
  d.validate();
  return d;
}

ObservationalDataset load_csv(const std::string& path) {
  std::ifstream in(path);
  check(in.good(), "csv: cannot open '" + path + "'");
  std::string line;
  check(static_cast<bool>(std::getline(in, line)), "csv: empty file '" + path + "'");
  return load_csv(path, CsvSchema::infer(split_line(line)));
}

void save_csv(const ObservationalDataset& data, const std::string& path) {
  data.validate();
  std::ofstream out(path);
  check(out.good(), "csv: cannot write '" + path + "'");
  const auto name_or = [](const std::vector<std::string>& names, Eigen::Index i,
                          const std::string& prefix) {
    return i < static_cast<Eigen::Index>(names.size()) ? names[static_cast<size_t>(i)]
                                                       : prefix + std::to_string(i);
  };
  for (Eigen::Index j = 0; j < data.d_x(); ++j)
    out << name_or(data.covariate_names, j, "x") << ",";
  out << "a";
  for (Eigen::Index j = 0; j < data.d_y(); ++j)
    out << "," << name_or(data.outcome_names, j, "y");
  if (data.Y_cf)
    for (Eigen::Index j = 0; j < data.d_y(); ++j) out << ",y_cf" << j;
  out << "\n";
  char buf[32];
  const auto fmt = [&buf](double v) {
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return std::string(buf);
  };
  for (Eigen::Index i = 0; i < data.n(); ++i) {
    for (Eigen::Index j = 0; j < data.d_x(); ++j) out << fmt(data.X(i, j)) << ",";
    out << static_cast<int>(data.A(i));
    for (Eigen::Index j = 0; j < data.d_y(); ++j) out << "," << fmt(data.Y(i, j));
    if (data.Y_cf)
      for (Eigen::Index j = 0; j < data.d_y(); ++j) out << "," << fmt((*data.Y_cf)(i, j));
    out << "\n";
  }
}

// --------------------------- standardization ------------------------------

Matrix StandardizationParams::apply(const Matrix& y) const {
  check(y.cols() == mean.size(), "standardize: dimension mismatch");
  return (y.rowwise() - mean.transpose()).array().rowwise() / scale.transpose().array();
}

Matrix StandardizationParams::invert(const Matrix& y_std) const {
  check(y_std.cols() == mean.size(), "standardize: dimension mismatch");
  return (y_std.array().rowwise() * scale.transpose().array()).matrix().rowwise() +
         mean.transpose();
}

std::pair<ObservationalDataset, StandardizationParams> standardize(
    const ObservationalDataset& data) {
  check(data.n() >= 2, "standardize: need at least two rows");
  StandardizationParams p;
  p.mean = data.Y.colwise().mean();
  Matrix centered = data.Y.rowwise() - p.mean.transpose();
  p.scale = (centered.array().square().colwise().mean()).sqrt();
  for (Eigen::Index j = 0; j < p.scale.size(); ++j)
    check(p.scale(j) > 0.0, "standardize: outcome dimension " + std::to_string(j) +
                                " has zero variance");
  return {apply_standardization(data, p), p};
}

ObservationalDataset apply_standardization(const ObservationalDataset& data,
                                           const StandardizationParams& p) {
  ObservationalDataset out = data;
  out.Y = p.apply(data.Y);
  if (data.Y_cf) out.Y_cf = p.apply(*data.Y_cf);
  return out;
}

// -------------------------------- split -----------------------------------

SplitResult split(const ObservationalDataset& data, double train_fraction, int fold,
                  std::uint64_t seed) {
  check(train_fraction > 0.0 && train_fraction < 1.0, "split: fraction must be in (0, 1)");
  const Eigen::Index n = data.n();
  const Eigen::Index n_test = n - static_cast<Eigen::Index>(std::floor(
                                      train_fraction * static_cast<double>(n)));
  check(n_test >= 1 && n_test < n, "split: a side would be empty");
  check(fold >= 0 && (fold + 1) * n_test <= n,
        "split: fold " + std::to_string(fold) + " exceeds the sample");

  std::vector<Eigen::Index> perm(static_cast<size_t>(n));
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng(seed);
  for (Eigen::Index i = n - 1; i > 0; --i)
    std::swap(perm[static_cast<size_t>(i)], perm[static_cast<size_t>(rng.index(i + 1))]);

  SplitResult res;
  const Eigen::Index t0 = fold * n_test;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (i >= t0 && i < t0 + n_test)
      res.test_idx.push_back(perm[static_cast<size_t>(i)]);
    else
      res.train_idx.push_back(perm[static_cast<size_t>(i)]);
  }
  std::sort(res.train_idx.begin(), res.train_idx.end());
  std::sort(res.test_idx.begin(), res.test_idx.end());
  res.train = data.rows(res.train_idx);
  res.test = data.rows(res.test_idx);
  return res;
}

}  // namespace ide
