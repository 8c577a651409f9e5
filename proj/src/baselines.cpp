#include "ide/baselines.hpp"

#include "ide/metrics.hpp"
#include "ide/train_loop.hpp"

namespace ide {

using ad::Var;

// ------------------------------- plug-in -----------------------------------

double plugin_density(const CondDensityModel& cond, const Matrix& X_ref, int a,
                      const Vector& y) {
  check(X_ref.rows() > 0, "plugin density: empty reference set");
  const Vector arm = Vector::Constant(X_ref.rows(), static_cast<double>(a));
  Matrix Y = y.transpose().replicate(X_ref.rows(), 1);
  const Vector lp = cond.cond_log_prob(X_ref, arm, Y);
  return lp.array().exp().mean();
}

Vector plugin_density_grid(const CondDensityModel& cond, const Matrix& X_ref, int a,
                           const Vector& grid) {
  check(X_ref.rows() > 0, "plugin density: empty reference set");
  const Matrix W = cond.cond_density(X_ref, a, grid);
  return W.colwise().mean();
}

Vector plugin_log_prob_rows(const CondDensityModel& cond, const Matrix& X_ref, int a,
                            const Matrix& Ys) {
  check(X_ref.rows() > 0, "plugin density: empty reference set");
  const Eigen::Index m = Ys.rows(), n = X_ref.rows();
  if (cond.outcome_dim() == 1) {
    // one conditional-parameter pass per reference row, all query points at once
    const Matrix W = cond.cond_density(X_ref, a, Ys.col(0));
    Vector out(m);
    for (Eigen::Index j = 0; j < m; ++j) {
      const double d = W.col(j).mean();
      out(j) = d > 0.0 ? std::log(d) : -std::numeric_limits<double>::infinity();
    }
    return out;
  }
  const Vector arm = Vector::Constant(n, static_cast<double>(a));
  Vector out(m);
  for (Eigen::Index j = 0; j < m; ++j) {
    Matrix Yrep = Ys.row(j).replicate(n, 1);
    const Vector lp = cond.cond_log_prob(X_ref, arm, Yrep);
    out(j) = logsumexp(lp) - std::log(static_cast<double>(n));
  }
  return out;
}

Matrix plugin_sample(const CondDensityModel& cond, const Matrix& X_ref, int a, int n, Rng& rng) {
  Matrix out(n, cond.outcome_dim());
  for (int i = 0; i < n; ++i) {
    Matrix x = X_ref.row(rng.index(X_ref.rows()));
    out.row(i) = cond.cond_sample(x, a, 1, rng).row(0);
  }
  return out;
}

// ------------------------------- TARNet* -----------------------------------

TarnetStarModel::TarnetStarModel(int d_x, int d_y, int d_rep, int hidden, Rng& rng)
    : d_y_(d_y),
      net_(d_x, d_rep, hidden, d_y, rng),
      log_sigma_(ad::parameter(Matrix::Zero(1, 1))) {}

double TarnetStarModel::sigma() const {
  return std::max(std::exp(log_sigma_.value()(0, 0)), 1e-3);
}

Var TarnetStarModel::loss(const Matrix& X, const Vector& A, const Matrix& Y,
                          const NoiseRegConfig& noise, Rng& rng) const {
  const Eigen::Index n = X.rows();
  auto repr = net_.repr_ad(ad::constant(X));
  Matrix xi_x = Matrix::Zero(n, net_.d_rep);
  Matrix y_noisy = Y;
  if (noise.var_x > 0.0) {
    const double sd = std::sqrt(noise.var_x);
    for (Eigen::Index i = 0; i < xi_x.size(); ++i) xi_x.data()[i] = sd * rng.normal();
  }
  if (noise.var_y > 0.0) {
    const double sd = std::sqrt(noise.var_y);
    for (Eigen::Index i = 0; i < y_noisy.size(); ++i) y_noisy.data()[i] += sd * rng.normal();
  }
  Var mu = net_.fc2.forward(ad::concat_cols(repr.r + ad::constant(xi_x), ad::constant(A)));
  Var resid = mu - ad::constant(y_noisy);
  Var ls = ad::matmul(ad::constant(Matrix::Ones(n, 1)), log_sigma_);
  // NLL of N(y; mu, sigma^2) summed over outcome dims
  Var quad = ad::row_sum(ad::square(resid)) * 0.5;
  Var inv_var = ad::exp(ls * -2.0);
  const double d = static_cast<double>(d_y_);
  return ad::mean(quad * inv_var + ls * d) + 0.5 * d * kLogTwoPi;
}

Matrix TarnetStarModel::cond_density(const Matrix& X, int a, const Vector& grid) const {
  check(d_y_ == 1, "tarnet cond_density grid: one-dimensional outcomes");
  const Vector arm = Vector::Constant(X.rows(), static_cast<double>(a));
  const Matrix mu = cond_mean(X, arm);
  const double s = sigma();
  Matrix out(X.rows(), grid.size());
  for (Eigen::Index i = 0; i < X.rows(); ++i)
    for (Eigen::Index j = 0; j < grid.size(); ++j)
      out(i, j) = normal_pdf(grid(j), mu(i, 0), s);
  return out;
}

Vector TarnetStarModel::cond_log_prob(const Matrix& X, const Vector& A,
                                      const Matrix& Y) const {
  const Matrix mu = cond_mean(X, A);
  const double s = sigma();
  Vector out(X.rows());
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    double lp = 0.0;
    for (Eigen::Index j = 0; j < Y.cols(); ++j) lp += normal_log_pdf(Y(i, j), mu(i, j), s);
    out(i) = lp;
  }
  return out;
}

Matrix TarnetStarModel::cond_sample(const Matrix& X, int a, int k, Rng& rng) const {
  const Vector arm = Vector::Constant(X.rows(), static_cast<double>(a));
  const Matrix mu = cond_mean(X, arm);
  const double s = sigma();
  Matrix out(X.rows() * k, d_y_);
  for (Eigen::Index i = 0; i < X.rows(); ++i)
    for (int r = 0; r < k; ++r)
      for (Eigen::Index j = 0; j < d_y_; ++j)
        out(i * k + r, j) = mu(i, j) + s * rng.normal();
  return out;
}

std::vector<Var> TarnetStarModel::parameters() const {
  auto out = net_.parameters();
  out.push_back(log_sigma_);
  return out;
}

nlohmann::json TarnetStarModel::to_json() const {
  return {{"d_y", d_y_}, {"net", net_.to_json()}, {"log_sigma", log_sigma_.value()(0, 0)}};
}

TarnetStarModel TarnetStarModel::from_json(const nlohmann::json& j) {
  TarnetStarModel m;
  m.d_y_ = j.at("d_y").get<int>();
  m.net_ = Hypernet::from_json(j.at("net"));
  m.log_sigma_ = ad::parameter(Matrix::Constant(1, 1, j.at("log_sigma").get<double>()));
  return m;
}

TarnetStarModel fit_tarnet_star(const ObservationalDataset& train, const TarnetHyperparams& hp,
                                std::uint64_t seed) {
  train.validate();
  Rng rng(seed);
  TarnetStarModel model(static_cast<int>(train.d_x()), static_cast<int>(train.d_y()), hp.d_rep,
                        hp.hidden, rng);
  auto params = model.parameters();
  auto opt = ad::Optimizer::sgd_momentum(hp.lr, 0.9);
  minibatch_descent(
      opt, params,
      [&](const std::vector<Eigen::Index>& idx) {
        Matrix Xb(idx.size(), train.d_x());
        Vector Ab(idx.size());
        Matrix Yb(idx.size(), train.d_y());
        for (size_t i = 0; i < idx.size(); ++i) {
          Xb.row(static_cast<Eigen::Index>(i)) = train.X.row(idx[i]);
          Ab(static_cast<Eigen::Index>(i)) = train.A(idx[i]);
          Yb.row(static_cast<Eigen::Index>(i)) = train.Y.row(idx[i]);
        }
        return model.loss(Xb, Ab, Yb, hp.noise, rng);
      },
      hp.n_iter, train.n(), hp.batch, rng, "tarnet training");
  return model;
}

// --------------------------------- MDN -------------------------------------

MdnModel::MdnModel(int d_x, int d_y, int n_components, int d_rep, int hidden, Rng& rng)
    : d_y_(d_y), n_c_(n_components) {
  const int head = n_components * (1 + d_y + 1);  // logit, mean, log scale
  net_ = Hypernet(d_x, d_rep, hidden, head, rng);
}

namespace {
// log of an isotropic normal mixture at one point
double log_mixture_point(const Vector& theta, int n_c, int d_y, const Vector& y) {
  Vector terms(n_c);
  Vector logits = theta.segment(0, n_c);
  const double lmax = logits.maxCoeff();
  const double lse = lmax + std::log((logits.array() - lmax).exp().sum());
  for (int c = 0; c < n_c; ++c) {
    const double log_w = logits(c) - lse;
    const double log_s = theta(n_c + n_c * d_y + c);
    const double s = std::exp(log_s);
    double lp = 0.0;
    for (int j = 0; j < d_y; ++j)
      lp += normal_log_pdf(y(j), theta(n_c + c * d_y + j), s);
    terms(c) = log_w + lp;
  }
  return logsumexp(terms);
}
}  // namespace

Vector MdnModel::log_mixture_rows(const Matrix& theta, const Matrix& Y) const {
  Vector out(theta.rows());
  for (Eigen::Index i = 0; i < theta.rows(); ++i)
    out(i) = log_mixture_point(theta.row(i).transpose(), n_c_, d_y_, Y.row(i).transpose());
  return out;
}

MdnModel::MixtureParams MdnModel::mixture_params(const Vector& x, int a) const {
  Matrix X(1, x.size());
  X.row(0) = x.transpose();
  const Vector theta =
      net_.head_plain(X, Vector::Constant(1, static_cast<double>(a))).row(0).transpose();
  MixtureParams p;
  Vector logits = theta.segment(0, n_c_);
  const double lmax = logits.maxCoeff();
  Vector e = (logits.array() - lmax).exp();
  p.weights = e / e.sum();
  p.means = Matrix(n_c_, d_y_);
  for (int c = 0; c < n_c_; ++c)
    for (int j = 0; j < d_y_; ++j) p.means(c, j) = theta(n_c_ + c * d_y_ + j);
  p.scales = theta.segment(n_c_ + n_c_ * d_y_, n_c_).array().exp();
  return p;
}

Var MdnModel::loss(const Matrix& X, const Vector& A, const Matrix& Y,
                   const NoiseRegConfig& noise, Rng& rng) const {
  const Eigen::Index n = X.rows();
  auto repr = net_.repr_ad(ad::constant(X));
  Matrix xi_x = Matrix::Zero(n, net_.d_rep);
  Matrix y_noisy = Y;
  if (noise.var_x > 0.0) {
    const double sd = std::sqrt(noise.var_x);
    for (Eigen::Index i = 0; i < xi_x.size(); ++i) xi_x.data()[i] = sd * rng.normal();
  }
  if (noise.var_y > 0.0) {
    const double sd = std::sqrt(noise.var_y);
    for (Eigen::Index i = 0; i < y_noisy.size(); ++i) y_noisy.data()[i] += sd * rng.normal();
  }
  Var theta = net_.fc2.forward(ad::concat_cols(repr.r + ad::constant(xi_x), ad::constant(A)));

  // stable mixture NLL: logsumexp over components of log w_c + log N(y; mu_c, s_c)
  Var logits = ad::slice_cols(theta, 0, n_c_);
  Matrix shift = logits.value().rowwise().maxCoeff().replicate(1, n_c_);
  Var e = ad::exp(logits - ad::constant(shift));
  Var log_norm = ad::log(ad::row_sum(e));  // n x 1; log sum exp minus shift col

  Var acc_shift = ad::constant(Matrix(shift.col(0)));
  // component log densities, then a logsumexp across components
  Matrix comp_vals(n, n_c_);
  std::vector<Var> comps;
  for (int c = 0; c < n_c_; ++c) {
    Var log_w = ad::slice_cols(logits, c, 1) - acc_shift - log_norm;
    Var log_s = ad::slice_cols(theta, n_c_ + n_c_ * d_y_ + c, 1);
    Var inv_var = ad::exp(log_s * -2.0);
    Var quad = ad::constant(Matrix::Zero(n, 1));
    for (int j = 0; j < d_y_; ++j) {
      Var mu = ad::slice_cols(theta, n_c_ + c * d_y_ + j, 1);
      quad = quad + ad::square(mu - ad::constant(Matrix(y_noisy.col(j))));
    }
    const double d = static_cast<double>(d_y_);
    Var lp = log_w - (quad * inv_var * 0.5) - (log_s * d) - 0.5 * d * kLogTwoPi;
    comps.push_back(lp);
    comp_vals.col(c) = lp.value().col(0);
  }
  // logsumexp across components with a constant per-row shift
  Matrix cshift = comp_vals.rowwise().maxCoeff();
  Var total = ad::constant(Matrix::Zero(n, 1));
  for (int c = 0; c < n_c_; ++c)
    total = total + ad::exp(comps[static_cast<size_t>(c)] - ad::constant(Matrix(cshift)));
  Var log_mix = ad::log(total) + ad::constant(Matrix(cshift));
  return ad::mean(log_mix * -1.0);
}

Matrix MdnModel::cond_density(const Matrix& X, int a, const Vector& grid) const {
  check(d_y_ == 1, "mdn cond_density grid: one-dimensional outcomes");
  const Vector arm = Vector::Constant(X.rows(), static_cast<double>(a));
  const Matrix theta = net_.head_plain(X, arm);
  Matrix out(X.rows(), grid.size());
  for (Eigen::Index i = 0; i < X.rows(); ++i)
    for (Eigen::Index j = 0; j < grid.size(); ++j) {
      Vector y(1);
      y(0) = grid(j);
      out(i, j) = std::exp(log_mixture_point(theta.row(i).transpose(), n_c_, d_y_, y));
    }
  return out;
}

Vector MdnModel::cond_log_prob(const Matrix& X, const Vector& A, const Matrix& Y) const {
  return log_mixture_rows(net_.head_plain(X, A), Y);
}

Matrix MdnModel::cond_sample(const Matrix& X, int a, int k, Rng& rng) const {
  const Vector arm = Vector::Constant(X.rows(), static_cast<double>(a));
  const Matrix theta = net_.head_plain(X, arm);
  Matrix out(X.rows() * k, d_y_);
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    const Vector t = theta.row(i).transpose();
    Vector logits = t.segment(0, n_c_);
    const double lmax = logits.maxCoeff();
    Vector w = (logits.array() - lmax).exp();
    w /= w.sum();
    for (int r = 0; r < k; ++r) {
      double u = rng.uniform();
      int c = 0;
      while (c + 1 < n_c_ && u > w(c)) {
        u -= w(c);
        ++c;
      }
      const double s = std::exp(t(n_c_ + n_c_ * d_y_ + c));
      for (int j = 0; j < d_y_; ++j)
        out(i * k + r, j) = t(n_c_ + c * d_y_ + j) + s * rng.normal();
    }
  }
  return out;
}

nlohmann::json MdnModel::to_json() const {
  return {{"d_y", d_y_}, {"n_c", n_c_}, {"net", net_.to_json()}};
}

MdnModel MdnModel::from_json(const nlohmann::json& j) {
  MdnModel m;
  m.d_y_ = j.at("d_y").get<int>();
  m.n_c_ = j.at("n_c").get<int>();
  m.net_ = Hypernet::from_json(j.at("net"));
  return m;
}

MdnModel fit_mdn(const ObservationalDataset& train, const MdnHyperparams& hp,
                 std::uint64_t seed) {
  train.validate();
  Rng rng(seed);
  MdnModel model(static_cast<int>(train.d_x()), static_cast<int>(train.d_y()),
                 hp.n_components, hp.d_rep, hp.hidden, rng);
  auto params = model.parameters();
  auto opt = ad::Optimizer::sgd_momentum(hp.lr, 0.9);
  minibatch_descent(
      opt, params,
      [&](const std::vector<Eigen::Index>& idx) {
        Matrix Xb(idx.size(), train.d_x());
        Vector Ab(idx.size());
        Matrix Yb(idx.size(), train.d_y());
        for (size_t i = 0; i < idx.size(); ++i) {
          Xb.row(static_cast<Eigen::Index>(i)) = train.X.row(idx[i]);
          Ab(static_cast<Eigen::Index>(i)) = train.A(idx[i]);
          Yb.row(static_cast<Eigen::Index>(i)) = train.Y.row(idx[i]);
        }
        return model.loss(Xb, Ab, Yb, hp.noise, rng);
      },
      hp.n_iter, train.n(), hp.batch, rng, "mdn training");
  return model;
}

// --------------------------------- KDE -------------------------------------

double kde_kernel(const Vector& v, const Vector& y, double h) {
  check(h > 0.0, "kde kernel: bandwidth must be positive");
  const double d = static_cast<double>(v.size());
  const double q = (v - y).squaredNorm() / (2.0 * h * h);
  return std::exp(-q) / std::pow(h * std::sqrt(2.0 * M_PI), d);
}

KdeModel::KdeModel(int d_x, int d_y, int d_rep, int hidden, Rng& rng)
    : net_(d_x, d_rep, hidden, d_y, rng) {}

Var KdeModel::loss(const Matrix& X, const Vector& A, const Matrix& Y, double alpha,
                   Rng& rng) const {
  (void)rng;
  auto repr = net_.repr_ad(ad::constant(X));
  Var yhat = net_.fc2.forward(ad::concat_cols(repr.r, ad::constant(A)));
  Var mse = ad::mean(ad::row_sum(ad::square(yhat - ad::constant(Y))));
  Matrix targets = A;
  return mse + alpha * ad::mean(ad::bce_with_logits(repr.logit, targets));
}

Matrix KdeModel::regression(const Matrix& X, int a) const {
  const Vector arm = Vector::Constant(X.rows(), static_cast<double>(a));
  return net_.head_plain(X, arm);
}

nlohmann::json KdeModel::to_json() const {
  return {{"net", net_.to_json()},
          {"bandwidths", std::vector<double>(bandwidths.data(),
                                             bandwidths.data() + bandwidths.size())},
          {"clip", clip}};
}

KdeModel KdeModel::from_json(const nlohmann::json& j) {
  KdeModel m;
  m.net_ = Hypernet::from_json(j.at("net"));
  const auto b = j.at("bandwidths").get<std::vector<double>>();
  m.bandwidths = Eigen::Map<const Vector>(b.data(), static_cast<Eigen::Index>(b.size()));
  m.clip = j.at("clip").get<double>();
  return m;
}

KdeModel fit_kde(const ObservationalDataset& train, const KdeHyperparams& hp,
                 std::uint64_t seed) {
  train.validate();
  Rng rng(seed);
  KdeModel model(static_cast<int>(train.d_x()), static_cast<int>(train.d_y()), hp.d_rep,
                 hp.hidden, rng);
  model.clip = hp.clip;
  auto params = model.parameters();
  auto opt = ad::Optimizer::adam(hp.lr);
  minibatch_descent(
      opt, params,
      [&](const std::vector<Eigen::Index>& idx) {
        Matrix Xb(idx.size(), train.d_x());
        Vector Ab(idx.size());
        Matrix Yb(idx.size(), train.d_y());
        for (size_t i = 0; i < idx.size(); ++i) {
          Xb.row(static_cast<Eigen::Index>(i)) = train.X.row(idx[i]);
          Ab(static_cast<Eigen::Index>(i)) = train.A(idx[i]);
          Yb.row(static_cast<Eigen::Index>(i)) = train.Y.row(idx[i]);
        }
        return model.loss(Xb, Ab, Yb, hp.alpha, rng);
      },
      hp.n_iter, train.n(), hp.batch, rng, "kde training");
  // per-arm bandwidths from the training subsamples
  model.bandwidths = Vector(2);
  for (int a : {0, 1}) {
    std::vector<Eigen::Index> rows;
    for (Eigen::Index i = 0; i < train.n(); ++i)
      if (static_cast<int>(train.A(i)) == a) rows.push_back(i);
    check_runtime(rows.size() >= 2, "kde: arm " + std::to_string(a) + " has fewer than 2 units");
    Matrix Ya(static_cast<Eigen::Index>(rows.size()), train.d_y());
    for (size_t i = 0; i < rows.size(); ++i)
      Ya.row(static_cast<Eigen::Index>(i)) = train.Y.row(rows[i]);
    const auto bw = median_bandwidth(Ya);
    check_runtime(!bw.degenerate, "kde: degenerate bandwidth for arm " + std::to_string(a));
    model.bandwidths(a) = bw.h;
  }
  return model;
}

double kde_aiptw_density_raw(const Vector& pi1, const Matrix& yhat,
                             const ObservationalDataset& data, int a, const Vector& y,
                             double bandwidth, double clip) {
  const Vector pia = arm_propensity(pi1, a);
  double acc = 0.0;
  for (Eigen::Index i = 0; i < data.n(); ++i) {
    const double mu_hat = kde_kernel(yhat.row(i).transpose(), y, bandwidth);
    double term = mu_hat;
    if (static_cast<int>(data.A(i)) == a && pia(i) >= clip)
      term += (kde_kernel(data.Y.row(i).transpose(), y, bandwidth) - mu_hat) / pia(i);
    acc += term;
  }
  return acc / static_cast<double>(data.n());
}

double kde_aiptw_density_raw(const KdeModel& model, const ObservationalDataset& data, int a,
                             const Vector& y) {
  return kde_aiptw_density_raw(model.propensity(data.X), model.regression(data.X, a), data, a,
                               y, model.bandwidths(a), model.clip);
}

// -------------------------------- DKME -------------------------------------

namespace {
Matrix rbf_gram(const Matrix& A, const Matrix& B, double sigma_k) {
  Matrix out(A.rows(), B.rows());
  for (Eigen::Index i = 0; i < A.rows(); ++i)
    for (Eigen::Index j = 0; j < B.rows(); ++j)
      out(i, j) = std::exp(-(A.row(i) - B.row(j)).squaredNorm() / sigma_k);
  return out;
}
}  // namespace

DKMEModel fit_dkme(const ObservationalDataset& train, const DkmeHyperparams& hp) {
  train.validate();
  check(hp.epsilon > 0.0, "dkme: epsilon must be positive");
  check(hp.sigma_k > 0.0, "dkme: kernel smoothness must be positive");
  DKMEModel model;
  model.sigma_k = hp.sigma_k;
  model.epsilon = hp.epsilon;
  model.bandwidth = Vector(2);
  const Eigen::Index n = train.n();
  for (int a : {0, 1}) {
    std::vector<Eigen::Index> rows;
    for (Eigen::Index i = 0; i < n; ++i)
      if (static_cast<int>(train.A(i)) == a) rows.push_back(i);
    if (rows.empty()) {  // arm absent from the sample; queries for it will fail
      model.bandwidth(a) = 0.0;
      continue;
    }
    const Eigen::Index na = static_cast<Eigen::Index>(rows.size());
    Matrix Xa(na, train.d_x()), Ya(na, train.d_y());
    for (Eigen::Index i = 0; i < na; ++i) {
      Xa.row(i) = train.X.row(rows[static_cast<size_t>(i)]);
      Ya.row(i) = train.Y.row(rows[static_cast<size_t>(i)]);
    }
    Matrix K = rbf_gram(Xa, Xa, hp.sigma_k);
    Matrix Kt = rbf_gram(Xa, train.X, hp.sigma_k);  // n_a x n
    Matrix sys = K + static_cast<double>(na) * hp.epsilon * Matrix::Identity(na, na);
    Eigen::LDLT<Matrix> solver(sys);
    check_runtime(solver.info() == Eigen::Success, "dkme: singular ridge system");
    Vector ones_m = Vector::Constant(n, 1.0 / static_cast<double>(n));
    model.beta[a] = solver.solve(Kt * ones_m);
    model.Y_arm[a] = Ya;
    if (na >= 2) {
      const auto bw = median_bandwidth(Ya);
      check_runtime(!bw.degenerate, "dkme: degenerate outcome bandwidth");
      model.bandwidth(a) = bw.h;
    } else {
      model.bandwidth(a) = 1.0;
    }
  }
  return model;
}

double dkme_density_raw(const DKMEModel& model, const Vector& y, int a) {
  check(model.beta[a].size() > 0, "dkme: no fitted weights for arm " + std::to_string(a));
  const Matrix& Ya = model.Y_arm[a];
  const Vector& beta = model.beta[a];
  double acc = 0.0;
  for (Eigen::Index i = 0; i < Ya.rows(); ++i)
    acc += beta(i) * kde_kernel(Ya.row(i).transpose(), y, model.bandwidth(a));
  return acc;
}

double dkme_ridge_mse(const ObservationalDataset& train, const ObservationalDataset& val,
                      double sigma_k, double epsilon) {
  double total = 0.0;
  Eigen::Index count = 0;
  for (int a : {0, 1}) {
    std::vector<Eigen::Index> tr, va;
    for (Eigen::Index i = 0; i < train.n(); ++i)
      if (static_cast<int>(train.A(i)) == a) tr.push_back(i);
    for (Eigen::Index i = 0; i < val.n(); ++i)
      if (static_cast<int>(val.A(i)) == a) va.push_back(i);
    if (tr.empty() || va.empty()) continue;
    const Eigen::Index na = static_cast<Eigen::Index>(tr.size());
    Matrix Xa(na, train.d_x()), Ya(na, train.d_y());
    for (Eigen::Index i = 0; i < na; ++i) {
      Xa.row(i) = train.X.row(tr[static_cast<size_t>(i)]);
      Ya.row(i) = train.Y.row(tr[static_cast<size_t>(i)]);
    }
    Matrix K = rbf_gram(Xa, Xa, sigma_k);
    Matrix sys = K + static_cast<double>(na) * epsilon * Matrix::Identity(na, na);
    Eigen::LDLT<Matrix> solver(sys);
    check_runtime(solver.info() == Eigen::Success, "dkme tuning: singular ridge system");
    Matrix alpha = solver.solve(Ya);  // kernel ridge weights
    for (auto vi : va) {
      Vector k_new(na);
      for (Eigen::Index i = 0; i < na; ++i)
        k_new(i) = std::exp(-(Xa.row(i) - val.X.row(vi)).squaredNorm() / sigma_k);
      const Vector pred = alpha.transpose() * k_new;
      total += (pred - val.Y.row(vi).transpose()).squaredNorm();
      ++count;
    }
  }
  check_runtime(count > 0, "dkme tuning: no validation units");
  return total / static_cast<double>(count);
}

nlohmann::json DKMEModel::to_json() const {
  nlohmann::json j;
  j["sigma_k"] = sigma_k;
  j["epsilon"] = epsilon;
  j["bandwidth"] = std::vector<double>(bandwidth.data(), bandwidth.data() + bandwidth.size());
  for (int a : {0, 1}) {
    j["beta" + std::to_string(a)] =
        std::vector<double>(beta[a].data(), beta[a].data() + beta[a].size());
  }
  return j;
}

DKMEModel DKMEModel::from_json(const nlohmann::json& j, const ObservationalDataset& train) {
  DKMEModel m;
  m.sigma_k = j.at("sigma_k").get<double>();
  m.epsilon = j.at("epsilon").get<double>();
  const auto b = j.at("bandwidth").get<std::vector<double>>();
  m.bandwidth = Eigen::Map<const Vector>(b.data(), static_cast<Eigen::Index>(b.size()));
  for (int a : {0, 1}) {
    const auto w = j.at("beta" + std::to_string(a)).get<std::vector<double>>();
    m.beta[a] = Eigen::Map<const Vector>(w.data(), static_cast<Eigen::Index>(w.size()));
    std::vector<Eigen::Index> rows;
    for (Eigen::Index i = 0; i < train.n(); ++i)
      if (static_cast<int>(train.A(i)) == a) rows.push_back(i);
    check(static_cast<Eigen::Index>(rows.size()) == m.beta[a].size(),
          "dkme from_json: arm size mismatch with the provided training split");
    m.Y_arm[a] = Matrix(static_cast<Eigen::Index>(rows.size()), train.d_y());
    for (size_t i = 0; i < rows.size(); ++i)
      m.Y_arm[a].row(static_cast<Eigen::Index>(i)) = train.Y.row(rows[i]);
  }
  return m;
}

nlohmann::json TSModel::to_json() const {
  nlohmann::json j;
  j["basis_dim"] = basis_dim;
  j["d_y"] = d_y;
  j["u_min"] = std::vector<double>(u_min.data(), u_min.data() + u_min.size());
  j["u_max"] = std::vector<double>(u_max.data(), u_max.data() + u_max.size());
  for (int a : {0, 1})
    j["coef" + std::to_string(a)] =
        std::vector<double>(coef[a].data(), coef[a].data() + coef[a].size());
  return j;
}

TSModel TSModel::from_json(const nlohmann::json& j) {
  TSModel m;
  m.basis_dim = j.at("basis_dim").get<int>();
  m.d_y = j.at("d_y").get<int>();
  const auto lo = j.at("u_min").get<std::vector<double>>();
  const auto hi = j.at("u_max").get<std::vector<double>>();
  m.u_min = Eigen::Map<const Vector>(lo.data(), static_cast<Eigen::Index>(lo.size()));
  m.u_max = Eigen::Map<const Vector>(hi.data(), static_cast<Eigen::Index>(hi.size()));
  for (int a : {0, 1}) {
    const auto c = j.at("coef" + std::to_string(a)).get<std::vector<double>>();
    m.coef[a] = Eigen::Map<const Vector>(c.data(), static_cast<Eigen::Index>(c.size()));
  }
  return m;
}

// ------------------------------ CNF + TS ------------------------------------

double cosine_basis(int j, double u) { return std::sqrt(2.0) * std::cos(M_PI * j * u); }

double TSModel::density_u(const Vector& u, int a) const {
  for (Eigen::Index j = 0; j < u.size(); ++j)
    if (u(j) < 0.0 || u(j) > 1.0) return 0.0;
  const Vector& c = coef[a];
  if (d_y == 1) {
    double g = 1.0;
    for (int j = 1; j <= basis_dim; ++j) g += c(j - 1) * cosine_basis(j, u(0));
    return g;
  }
  double g = 1.0;
  for (int j = 1; j <= basis_dim; ++j)
    for (int k = 1; k <= basis_dim; ++k)
      g += c((j - 1) * basis_dim + (k - 1)) * cosine_basis(j, u(0)) * cosine_basis(k, u(1));
  return g;
}

double TSModel::density_raw(const Vector& y, int a) const {
  Vector u(y.size());
  double jac = 1.0;
  for (Eigen::Index j = 0; j < y.size(); ++j) {
    const double range = u_max(j) - u_min(j);
    u(j) = (y(j) - u_min(j)) / range;
    jac /= range;
  }
  return density_u(u, a) * jac;
}

TSModel ts_fit(const CondDensityModel& nuisance, const ObservationalDataset& train,
               const TsHyperparams& hp, const BiasCorrConfig& bias) {
  train.validate();
  check(hp.basis_dim >= 1, "ts: basis dimension must be >= 1");
  const int d_y = static_cast<int>(train.d_y());
  check(d_y == 1 || d_y == 2, "ts: outcome dimension must be 1 or 2");
  TSModel model;
  model.basis_dim = hp.basis_dim;
  model.d_y = d_y;
  model.u_min = train.Y.colwise().minCoeff();
  model.u_max = train.Y.colwise().maxCoeff();

  const Eigen::Index n = train.n();
  const int n_coef = d_y == 1 ? hp.basis_dim : hp.basis_dim * hp.basis_dim;
  const auto basis_at = [&](const Vector& y) {
    Vector u(d_y);
    for (int j = 0; j < d_y; ++j)
      u(j) = (y(j) - model.u_min(j)) / (model.u_max(j) - model.u_min(j));
    Vector b(n_coef);
    if (d_y == 1) {
      for (int j = 1; j <= hp.basis_dim; ++j) b(j - 1) = cosine_basis(j, u(0));
    } else {
      for (int j = 1; j <= hp.basis_dim; ++j)
        for (int k = 1; k <= hp.basis_dim; ++k)
          b((j - 1) * hp.basis_dim + (k - 1)) = cosine_basis(j, u(0)) * cosine_basis(k, u(1));
    }
    return b;
  };

  // mu_a(X_i) = E(b(Y) | X_i, a): quadrature through the conditional density
  // for one-dimensional outcomes, Monte Carlo otherwise.
  const Vector pi1 = nuisance.propensity(train.X);
  for (int a : {0, 1}) {
    Matrix mu(n, n_coef);
    if (d_y == 1) {
      const QuadratureGrid grid = QuadratureGrid::from_train(train, hp.grid_k);
      const Matrix W = nuisance.cond_density(train.X, a, grid.points);
      Matrix B(grid.points.size(), n_coef);
      for (Eigen::Index g = 0; g < grid.points.size(); ++g)
        B.row(g) = basis_at(Vector::Constant(1, grid.points(g))).transpose();
      mu = grid.step * (W * B);
    } else {
      Rng rng(mix_seed(hp.mc_seed, static_cast<std::uint64_t>(a)));
      const Matrix draws = nuisance.cond_sample(train.X, a, hp.grid_k, rng);
      mu.setZero();
      for (Eigen::Index i = 0; i < n; ++i) {
        for (int s = 0; s < hp.grid_k; ++s)
          mu.row(i) += basis_at(draws.row(i * hp.grid_k + s).transpose()).transpose();
        mu.row(i) /= static_cast<double>(hp.grid_k);
      }
    }
    Vector beta = Vector::Zero(n_coef);
    const Vector w = correction_weights(pi1, train.A, a, bias.clip);
    for (Eigen::Index i = 0; i < n; ++i) {
      Vector term = mu.row(i).transpose();
      if (bias.enabled && w(i) > 0.0)
        term += w(i) * (basis_at(train.Y.row(i).transpose()) - mu.row(i).transpose());
      beta += term;
    }
    model.coef[a] = beta / static_cast<double>(n);
  }
  return model;
}

// --------------------------- clip and renormalize ---------------------------

ClippedDensity::ClippedDensity(std::function<double(const Vector&)> raw, double y_min,
                               double y_max, int grid_points)
    : raw_(std::move(raw)) {
  const double lo = y_min - 1.0, hi = y_max + 1.0;
  const double h = (hi - lo) / static_cast<double>(grid_points);
  double z = 0.0;
  for (int i = 0; i < grid_points; ++i) {
    Vector y(1);
    y(0) = lo + (i + 0.5) * h;
    z += std::max(raw_(y), 0.0) * h;
  }
  check_runtime(z > 0.0, "clipped density: estimator vanishes on the reporting grid");
  z_ = z;
}

ClippedDensity::ClippedDensity(std::function<double(const Vector&)> raw, const Vector& y_min,
                               const Vector& y_max, int grid_points_per_dim)
    : raw_(std::move(raw)) {
  check(y_min.size() == 2, "clipped density: expected two-dimensional bounds");
  const double lo0 = y_min(0) - 1.0, hi0 = y_max(0) + 1.0;
  const double lo1 = y_min(1) - 1.0, hi1 = y_max(1) + 1.0;
  const double h0 = (hi0 - lo0) / grid_points_per_dim, h1 = (hi1 - lo1) / grid_points_per_dim;
  double z = 0.0;
  Vector y(2);
  for (int i = 0; i < grid_points_per_dim; ++i)
    for (int j = 0; j < grid_points_per_dim; ++j) {
      y(0) = lo0 + (i + 0.5) * h0;
      y(1) = lo1 + (j + 0.5) * h1;
      z += std::max(raw_(y), 0.0) * h0 * h1;
    }
  check_runtime(z > 0.0, "clipped density: estimator vanishes on the reporting grid");
  z_ = z;
}

double ClippedDensity::operator()(const Vector& y) const {
  return std::max(raw_(y), 0.0) / z_;
}

}  // namespace ide
