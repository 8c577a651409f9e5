#include "ide/nuisance.hpp"

#include "ide/train_loop.hpp"

namespace ide {

using ad::Var;

// ------------------------------ Hypernet -----------------------------------

namespace {

nlohmann::json mlp_to_json(const Mlp& m) {
  nlohmann::json mats = nlohmann::json::array();
  for (const auto& p : m.parameters())
    mats.push_back({{"rows", p.rows()},
                    {"cols", p.cols()},
                    {"data", std::vector<double>(p.value().data(),
                                                 p.value().data() + p.value().size())}});
  nlohmann::json j;
  j["params"] = mats;
  std::vector<int> sizes;
  sizes.push_back(m.input_dim());
  for (const auto& w : m.weight_vars()) sizes.push_back(static_cast<int>(w.cols()));
  j["sizes"] = sizes;
  j["skip"] = m.has_skip();
  return j;
}

Mlp mlp_from_json(const nlohmann::json& j) {
  Rng rng(0);
  Mlp m(j.at("sizes").get<std::vector<int>>(), Activation::LeakySoftplus, rng,
        j.value("skip", false));
  auto ps = m.parameters();
  const auto& mats = j.at("params");
  check(mats.size() == ps.size(), "mlp from_json: layout mismatch");
  for (size_t i = 0; i < ps.size(); ++i) {
    const auto data = mats[i].at("data").get<std::vector<double>>();
    Matrix& mat = ps[i].mutable_value();
    check(static_cast<size_t>(mat.size()) == data.size(), "mlp from_json: size mismatch");
    std::copy(data.begin(), data.end(), mat.data());
  }
  return m;
}

Matrix noise_matrix(Eigen::Index rows, Eigen::Index cols, double var, Rng& rng) {
  Matrix m = Matrix::Zero(rows, cols);
  if (var > 0.0) {
    const double sd = std::sqrt(var);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = sd * rng.normal();
  }
  return m;
}

Var std_normal_log_pdf_ad(const Var& z) {
  return ad::square(z) * -0.5 + kLogStdNormalAtZero;
}

}  // namespace

nlohmann::json Hypernet::to_json() const {
  return {{"fc1", mlp_to_json(fc1)}, {"fc2", mlp_to_json(fc2)}, {"d_rep", d_rep}};
}

Hypernet Hypernet::from_json(const nlohmann::json& j) {
  Hypernet h;
  h.fc1 = mlp_from_json(j.at("fc1"));
  h.fc2 = mlp_from_json(j.at("fc2"));
  h.d_rep = j.at("d_rep").get<int>();
  return h;
}

// ---------------------------- NuisanceModel --------------------------------

NuisanceModel::NuisanceModel(int d_x, int d_y, const NuisanceHyperparams& hp,
                             const Vector& bounds, Rng& rng)
    : d_y_(d_y), n_knots_(hp.n_knots), bounds_(bounds) {
  check(d_y == 1 || d_y == 2, "nuisance: outcome dimension must be 1 or 2");
  check(bounds.size() == d_y, "nuisance: one bound per outcome dimension");
  const int head = spline_param_count(hp.n_knots);
  net_ = Hypernet(d_x, hp.d_rep, hp.hidden, head, rng);
  if (d_y == 2)
    ar_ = Mlp({hp.d_rep + 2, hp.hidden, head}, Activation::LeakySoftplus, rng, true);
}

Var NuisanceModel::loss(const Matrix& X, const Vector& A, const Matrix& Y,
                        const NoiseRegConfig& noise, double alpha, Rng& rng) const {
  const Eigen::Index n = X.rows();
  check(A.size() == n && Y.rows() == n && Y.cols() == d_y_, "nuisance loss: shape mismatch");
  check(n > 0, "nuisance loss: empty batch");

  auto repr = net_.repr_ad(ad::constant(X));
  Var r_noisy = repr.r + ad::constant(noise_matrix(n, net_.d_rep, noise.var_x, rng));
  Matrix y_noisy = Y + noise_matrix(n, d_y_, noise.var_y, rng);

  Var in2 = ad::concat_cols(r_noisy, ad::constant(A));
  Var theta1 = net_.fc2.forward(in2);
  const int k = n_knots_;
  auto s1 = spline_apply_ad(ad::constant(y_noisy.col(0)), ad::slice_cols(theta1, 0, k),
                            ad::slice_cols(theta1, k, k), ad::slice_cols(theta1, 2 * k, k - 1),
                            bounds_(0), /*inverse=*/true);
  Var log_p = std_normal_log_pdf_ad(s1.out) + s1.log_deriv;

  if (d_y_ == 2) {
    Var in_ar = ad::concat_cols(ad::concat_cols(r_noisy, ad::constant(A)),
                                ad::constant(y_noisy.col(0)));
    Var theta2 = ar_.forward(in_ar);
    auto s2 = spline_apply_ad(ad::constant(y_noisy.col(1)), ad::slice_cols(theta2, 0, k),
                              ad::slice_cols(theta2, k, k),
                              ad::slice_cols(theta2, 2 * k, k - 1), bounds_(1), true);
    log_p = log_p + std_normal_log_pdf_ad(s2.out) + s2.log_deriv;
  }

  Var nll = ad::mean(log_p * -1.0);
  if (alpha == 0.0) return nll;
  Matrix targets = A;
  return nll + alpha * ad::mean(ad::bce_with_logits(repr.logit, targets));
}

Matrix NuisanceModel::theta2_plain(const Matrix& X, const Vector& A, const Vector& y1) const {
  Matrix out1 = net_.fc1.forward_plain(X);
  Matrix in_ar(X.rows(), net_.d_rep + 2);
  in_ar.leftCols(net_.d_rep) = out1.leftCols(net_.d_rep);
  in_ar.col(net_.d_rep) = A;
  in_ar.col(net_.d_rep + 1) = y1;
  return ar_.forward_plain(in_ar);
}

Matrix NuisanceModel::cond_density(const Matrix& X, int a, const Vector& grid) const {
  check(d_y_ == 1, "cond_density grid evaluation applies to one-dimensional outcomes");
  const Eigen::Index n = X.rows(), k = grid.size();
  const Vector arm = Vector::Constant(n, static_cast<double>(a));
  const Matrix theta = theta1_plain(X, arm);
  Matrix out(n, k);
  for (Eigen::Index i = 0; i < n; ++i) {
    const SplineKnots kn =
        make_knots(split_raw_params(theta.row(i).transpose(), n_knots_, bounds_(0)));
    for (Eigen::Index j = 0; j < k; ++j) {
      double ld = 0.0;
      const double z = rq_inverse(kn, grid(j), &ld);
      out(i, j) = std::exp(normal_log_pdf(z) + ld);
    }
  }
  return out;
}

Vector NuisanceModel::cond_log_prob(const Matrix& X, const Vector& A, const Matrix& Y) const {
  const Eigen::Index n = X.rows();
  const Matrix theta = theta1_plain(X, A);
  Vector lp(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const SplineKnots kn =
        make_knots(split_raw_params(theta.row(i).transpose(), n_knots_, bounds_(0)));
    double ld = 0.0;
    const double z = rq_inverse(kn, Y(i, 0), &ld);
    lp(i) = normal_log_pdf(z) + ld;
  }
  if (d_y_ == 2) {
    const Matrix theta2 = theta2_plain(X, A, Y.col(0));
    for (Eigen::Index i = 0; i < n; ++i) {
      const SplineKnots kn =
          make_knots(split_raw_params(theta2.row(i).transpose(), n_knots_, bounds_(1)));
      double ld = 0.0;
      const double z = rq_inverse(kn, Y(i, 1), &ld);
      lp(i) += normal_log_pdf(z) + ld;
    }
  }
  return lp;
}

double NuisanceModel::cond_log_prob_one(const Vector& x, int a, const Vector& y) const {
  Matrix X(1, x.size());
  X.row(0) = x.transpose();
  Matrix Y(1, y.size());
  Y.row(0) = y.transpose();
  return cond_log_prob(X, Vector::Constant(1, static_cast<double>(a)), Y)(0);
}

Matrix NuisanceModel::cond_sample(const Matrix& X, int a, int k, Rng& rng) const {
  const Eigen::Index n = X.rows();
  const Vector arm = Vector::Constant(n, static_cast<double>(a));
  const Matrix theta = theta1_plain(X, arm);
  Matrix out(n * k, d_y_);
  for (Eigen::Index i = 0; i < n; ++i) {
    const SplineKnots kn =
        make_knots(split_raw_params(theta.row(i).transpose(), n_knots_, bounds_(0)));
    for (int s = 0; s < k; ++s) out(i * k + s, 0) = rq_forward(kn, rng.normal(), nullptr);
  }
  if (d_y_ == 2) {
    for (Eigen::Index i = 0; i < n; ++i) {
      Matrix Xrep = X.row(i).replicate(k, 1);
      Vector arm_k = Vector::Constant(k, static_cast<double>(a));
      Vector y1 = out.col(0).segment(i * k, k);
      const Matrix theta2 = theta2_plain(Xrep, arm_k, y1);
      for (int s = 0; s < k; ++s) {
        const SplineKnots kn =
            make_knots(split_raw_params(theta2.row(s).transpose(), n_knots_, bounds_(1)));
        out(i * k + s, 1) = rq_forward(kn, rng.normal(), nullptr);
      }
    }
  }
  return out;
}

std::vector<Var> NuisanceModel::parameters() const {
  auto out = net_.parameters();
  if (d_y_ == 2) {
    auto p = ar_.parameters();
    out.insert(out.end(), p.begin(), p.end());
  }
  return out;
}

nlohmann::json NuisanceModel::to_json() const {
  nlohmann::json j = {
      {"d_y", d_y_},
      {"n_knots", n_knots_},
      {"bounds", std::vector<double>(bounds_.data(), bounds_.data() + bounds_.size())},
      {"net", net_.to_json()}};
  if (d_y_ == 2) j["ar"] = mlp_to_json(ar_);
  return j;
}

NuisanceModel NuisanceModel::from_json(const nlohmann::json& j) {
  NuisanceModel m;
  m.d_y_ = j.at("d_y").get<int>();
  m.n_knots_ = j.at("n_knots").get<int>();
  const auto b = j.at("bounds").get<std::vector<double>>();
  m.bounds_ = Eigen::Map<const Vector>(b.data(), static_cast<Eigen::Index>(b.size()));
  m.net_ = Hypernet::from_json(j.at("net"));
  if (m.d_y_ == 2) m.ar_ = mlp_from_json(j.at("ar"));
  return m;
}

NuisanceModel train_nuisance(const ObservationalDataset& train, const NuisanceHyperparams& hp,
                             const NoiseRegConfig& noise, std::uint64_t seed) {
  train.validate();
  Rng rng(seed);
  Vector bounds(train.d_y());
  for (Eigen::Index j = 0; j < train.d_y(); ++j)
    bounds(j) = train.Y.col(j).maxCoeff() - train.Y.col(j).minCoeff() + 5.0;
  NuisanceModel model(static_cast<int>(train.d_x()), static_cast<int>(train.d_y()), hp,
                      bounds, rng);
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
        return model.loss(Xb, Ab, Yb, noise, hp.alpha, rng);
      },
      hp.n_iter, train.n(), hp.batch, rng, "nuisance training");
  return model;
}

// --------------------------- ScmOracleNuisance -----------------------------

Vector ScmOracleNuisance::propensity(const Matrix& X) const {
  Vector out(X.rows());
  for (Eigen::Index i = 0; i < X.rows(); ++i) out(i) = scm_propensity(X(i, 0), b_);
  return out;
}

Matrix ScmOracleNuisance::cond_density(const Matrix& X, int a, const Vector& grid) const {
  Matrix out(X.rows(), grid.size());
  const double s = std_.scale(0), m = std_.mean(0);
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    const double mu = scm_outcome_mean(X(i, 0), a);
    for (Eigen::Index j = 0; j < grid.size(); ++j)
      out(i, j) = normal_pdf(m + s * grid(j), mu, 1.0) * s;
  }
  return out;
}

Vector ScmOracleNuisance::cond_log_prob(const Matrix& X, const Vector& A,
                                        const Matrix& Y) const {
  Vector out(X.rows());
  const double s = std_.scale(0), m = std_.mean(0);
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    const double mu = scm_outcome_mean(X(i, 0), static_cast<int>(A(i)));
    out(i) = normal_log_pdf(m + s * Y(i, 0), mu, 1.0) + std::log(s);
  }
  return out;
}

Matrix ScmOracleNuisance::cond_sample(const Matrix& X, int a, int k, Rng& rng) const {
  Matrix out(X.rows() * k, 1);
  const double s = std_.scale(0), m = std_.mean(0);
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    const double mu = scm_outcome_mean(X(i, 0), a);
    for (int j = 0; j < k; ++j) out(i * k + j, 0) = (mu + rng.normal() - m) / s;
  }
  return out;
}

// --------------------------- WidenedConditional ----------------------------

Matrix WidenedConditional::cond_density(const Matrix& X, int a, const Vector& grid) const {
  Vector mapped = ((grid.array() - c_) / s_ + c_).matrix();
  return base_->cond_density(X, a, mapped) / s_;
}

Vector WidenedConditional::cond_log_prob(const Matrix& X, const Vector& A,
                                         const Matrix& Y) const {
  Matrix mapped = ((Y.array() - c_) / s_ + c_).matrix();
  const double d = static_cast<double>(Y.cols());
  return (base_->cond_log_prob(X, A, mapped).array() - d * std::log(s_)).matrix();
}

Matrix WidenedConditional::cond_sample(const Matrix& X, int a, int k, Rng& rng) const {
  Matrix base = base_->cond_sample(X, a, k, rng);
  return ((base.array() - c_) * s_ + c_).matrix();
}

}  // namespace ide
