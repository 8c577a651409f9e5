#include "ide/target.hpp"

#include "ide/train_loop.hpp"

#include <fstream>

namespace ide {

using ad::Var;

// ------------------------------ loss pieces --------------------------------

ad::Var ce_loss_ad(const Flow& g, const Matrix& W, const QuadratureGrid& grid) {
  check(W.cols() == grid.points.size(), "ce loss: weight/grid size mismatch");
  Var logg = g.log_prob_ad(grid.points);  // K x 1
  Matrix wbar = W.colwise().mean();       // 1 x K
  return ad::matmul(ad::constant(wbar), logg) * -grid.step;
}

ad::Var cce_rows_ad(const Flow& g, const Matrix& W, const QuadratureGrid& grid) {
  check(W.cols() == grid.points.size(), "cce rows: weight/grid size mismatch");
  Var logg = g.log_prob_ad(grid.points);
  return ad::matmul(ad::constant(W), logg) * -grid.step;
}

double ce_loss(const Flow& g, const CondDensityModel& nuisance, const Matrix& X_batch, int a,
               const QuadratureGrid& grid) {
  check(X_batch.rows() > 0, "ce loss: empty batch");
  const Matrix W = nuisance.cond_density(X_batch, a, grid.points);
  return ce_loss_ad(g, W, grid).value()(0, 0);
}

double ce_from_logs(const Vector& logg_grid, const Matrix& W, const QuadratureGrid& grid) {
  check(W.cols() == grid.points.size() && logg_grid.size() == grid.points.size(),
        "ce_from_logs: size mismatch");
  const Vector wbar = W.colwise().mean();
  return -grid.step * wbar.dot(logg_grid);
}

Vector cce_from_logs(const Vector& logg_grid, const Matrix& W, const QuadratureGrid& grid) {
  check(W.cols() == grid.points.size() && logg_grid.size() == grid.points.size(),
        "cce_from_logs: size mismatch");
  return -grid.step * (W * logg_grid);
}

double cce_loss(const Flow& g, const CondDensityModel& nuisance, const Vector& x, int a,
                const QuadratureGrid& grid) {
  Matrix X(1, x.size());
  X.row(0) = x.transpose();
  const Matrix W = nuisance.cond_density(X, a, grid.points);
  return cce_rows_ad(g, W, grid).value()(0, 0);
}

Vector correction_weights(const Vector& pi1, const Vector& A, int a, double clip) {
  const Vector pia = arm_propensity(pi1, a);
  Vector w = Vector::Zero(pi1.size());
  for (Eigen::Index i = 0; i < w.size(); ++i)
    if (static_cast<int>(A(i)) == a && pia(i) >= clip) w(i) = 1.0 / pia(i);
  return w;
}

double bias_corrected_loss(const Flow& g, const CondDensityModel& nuisance, const Matrix& X,
                           const Vector& A, const Matrix& Y, int a, const QuadratureGrid& grid,
                           const BiasCorrConfig& cfg) {
  check(X.rows() > 0, "bias corrected loss: empty batch");
  const Matrix W = nuisance.cond_density(X, a, grid.points);
  const double ce = ce_loss_ad(g, W, grid).value()(0, 0);
  if (!cfg.enabled) return ce;
  const Vector cce = cce_rows_ad(g, W, grid).value().col(0);
  const Vector w = correction_weights(nuisance.propensity(X), A, a, cfg.clip);
  const Vector logg_y = g.log_prob(Y);
  double corr = 0.0;
  for (Eigen::Index i = 0; i < X.rows(); ++i)
    corr += w(i) * (-logg_y(i) - cce(i));
  return ce + corr / static_cast<double>(X.rows());
}

// ---------------------------- TargetFlowPair -------------------------------

double TargetFlowPair::inf_log_prob(int a, const Vector& y) const {
  Matrix m(1, y.size());
  m.row(0) = y.transpose();
  return inf_log_prob_rows(a, m)(0);
}

Vector TargetFlowPair::inf_log_prob_rows(int a, const Matrix& y) const {
  const Flow& f = arm(a);
  return (f.log_prob(std_params.apply(y)).array() - std_params.log_density_offset()).matrix();
}

Matrix TargetFlowPair::inf_sample(int a, int n, std::uint64_t seed) const {
  Rng rng(seed);
  return std_params.invert(arm(a).sample(n, rng));
}

nlohmann::json TargetFlowPair::to_json() const {
  return {{"flow0", flow0.to_json()},
          {"flow1", flow1.to_json()},
          {"std_mean", std::vector<double>(std_params.mean.data(),
                                           std_params.mean.data() + std_params.mean.size())},
          {"std_scale", std::vector<double>(std_params.scale.data(),
                                            std_params.scale.data() + std_params.scale.size())},
          {"grid_min", grid_min},
          {"grid_max", grid_max}};
}

TargetFlowPair TargetFlowPair::from_json(const nlohmann::json& j) {
  TargetFlowPair p;
  p.flow0 = Flow::from_json(j.at("flow0"));
  p.flow1 = Flow::from_json(j.at("flow1"));
  const auto m = j.at("std_mean").get<std::vector<double>>();
  const auto s = j.at("std_scale").get<std::vector<double>>();
  p.std_params.mean = Eigen::Map<const Vector>(m.data(), static_cast<Eigen::Index>(m.size()));
  p.std_params.scale = Eigen::Map<const Vector>(s.data(), static_cast<Eigen::Index>(s.size()));
  p.grid_min = j.at("grid_min").get<double>();
  p.grid_max = j.at("grid_max").get<double>();
  return p;
}

// ------------------------------ training -----------------------------------

namespace {

struct ArmState {
  Flow flow;
  std::vector<Var> params;
  ad::Optimizer opt = ad::Optimizer::adam(0.005);
  ad::EmaState ema;
  Matrix w_full;   // n x K conditional densities (d_Y = 1)
  Vector corr_w;   // n correction weights
};

// One-dimensional loss graph from precomputed conditional densities.
Var arm_loss_1d(ArmState& st, const std::vector<Eigen::Index>& idx, const Matrix& Y,
                const QuadratureGrid& grid, bool bias_enabled) {
  const Eigen::Index b = static_cast<Eigen::Index>(idx.size());
  Matrix Wb(b, st.w_full.cols());
  Matrix Yb(b, 1);
  Vector wb(b);
  for (Eigen::Index i = 0; i < b; ++i) {
    Wb.row(i) = st.w_full.row(idx[static_cast<size_t>(i)]);
    Yb(i, 0) = Y(idx[static_cast<size_t>(i)], 0);
    wb(i) = st.corr_w(idx[static_cast<size_t>(i)]);
  }
  Var logg_grid = st.flow.log_prob_ad(grid.points);
  Var ce = ad::matmul(ad::constant(Matrix(Wb.colwise().mean())), logg_grid) * -grid.step;
  if (!bias_enabled) return ce;
  Var cce = ad::matmul(ad::constant(Wb), logg_grid) * -grid.step;  // b x 1
  Var logg_y = st.flow.log_prob_ad(Yb);
  Var resid = (logg_y * -1.0) - cce;
  Var corr = ad::sum(ad::constant(Matrix(wb)) * resid) * (1.0 / static_cast<double>(b));
  return ce + corr;
}

// Monte-Carlo loss graph for two-dimensional outcomes. Draws are refreshed
// every iteration from the frozen nuisance model.
Var arm_loss_2d(ArmState& st, const std::vector<Eigen::Index>& idx,
                const ObservationalDataset& train, int a, const CondDensityModel& nuisance,
                int k_draws, bool bias_enabled, Rng& rng) {
  const Eigen::Index b = static_cast<Eigen::Index>(idx.size());
  // batch-mixture draws for the cross entropy
  Matrix X_mix(k_draws, train.d_x());
  for (int j = 0; j < k_draws; ++j)
    X_mix.row(j) = train.X.row(idx[static_cast<size_t>(rng.index(b))]);
  const Matrix ce_draws = nuisance.cond_sample(X_mix, a, 1, rng);
  Var ce = ad::mean(st.flow.log_prob_ad(ce_draws)) * -1.0;
  if (!bias_enabled) return ce;

  // per-unit draws for the conditional cross entropy, corrected units only
  std::vector<Eigen::Index> corr_rows;
  for (Eigen::Index i = 0; i < b; ++i)
    if (st.corr_w(idx[static_cast<size_t>(i)]) > 0.0) corr_rows.push_back(idx[static_cast<size_t>(i)]);
  if (corr_rows.empty()) return ce;

  const Eigen::Index m = static_cast<Eigen::Index>(corr_rows.size());
  Matrix Xm(m, train.d_x());
  Matrix Ym(m, train.d_y());
  Vector wm(m);
  for (Eigen::Index i = 0; i < m; ++i) {
    Xm.row(i) = train.X.row(corr_rows[static_cast<size_t>(i)]);
    Ym.row(i) = train.Y.row(corr_rows[static_cast<size_t>(i)]);
    wm(i) = st.corr_w(corr_rows[static_cast<size_t>(i)]);
  }
  const Matrix cce_draws = nuisance.cond_sample(Xm, a, k_draws, rng);
  Var logg_draws = st.flow.log_prob_ad(cce_draws);  // (m * k) x 1
  Matrix avg = Matrix::Zero(m, m * k_draws);
  for (Eigen::Index i = 0; i < m; ++i)
    for (int j = 0; j < k_draws; ++j) avg(i, i * k_draws + j) = -1.0 / k_draws;
  Var cce = ad::matmul(ad::constant(std::move(avg)), logg_draws);  // m x 1
  Var logg_y = st.flow.log_prob_ad(Ym);
  Var resid = (logg_y * -1.0) - cce;
  Var corr = ad::sum(ad::constant(Matrix(wm)) * resid) * (1.0 / static_cast<double>(b));
  return ce + corr;
}

}  // namespace

TargetFlowPair train_target(const CondDensityModel& nuisance, const ObservationalDataset& train,
                            const TargetHyperparams& hp, const BiasCorrConfig& bias,
                            std::uint64_t seed, const StandardizationParams& std_params) {
  train.validate();
  check(train.d_y() == nuisance.outcome_dim(), "train_target: outcome dimension mismatch");
  const Eigen::Index n = train.n();
  const int d_y = static_cast<int>(train.d_y());
  Rng rng(seed);

  QuadratureGrid grid;
  if (d_y == 1) grid = QuadratureGrid::from_train(train, hp.grid_k);

  const Vector pi1 = nuisance.propensity(train.X);

  std::vector<ArmState> arms;
  for (int a : {0, 1}) {
    ArmState st;
    if (d_y == 1) {
      const auto [lo, hi] = QuadratureGrid::train_outcome_range(train, 0);
      st.flow = Flow::make_1d(hp.n_knots, hi - lo + 5.0);
      st.w_full = nuisance.cond_density(train.X, a, grid.points);
    } else {
      Vector bounds(2);
      for (int j = 0; j < 2; ++j) {
        const auto [lo, hi] = QuadratureGrid::train_outcome_range(train, j);
        bounds(j) = hi - lo + 5.0;
      }
      st.flow = Flow::make_2d(hp.n_knots, bounds(0), bounds(1), hp.cond_hidden, rng);
    }
    st.params = st.flow.parameters();
    st.opt = ad::Optimizer::adam(hp.lr);
    st.ema = ad::EmaState(hp.ema_gamma, st.params);
    st.corr_w = bias.enabled ? correction_weights(pi1, train.A, a, bias.clip)
                             : Vector(Vector::Zero(n));
    arms.push_back(std::move(st));
  }

  std::ofstream loss_log;
  if (!hp.loss_log_path.empty()) {
    loss_log.open(hp.loss_log_path);
    check_runtime(loss_log.good(), "train_target: cannot open loss log");
    loss_log << "iteration,arm,loss\n";
  }

  for (int it = 0; it < hp.n_iter; ++it) {
    const auto idx = sample_batch(n, hp.batch, rng);  // shared by both arms
    for (int a : {0, 1}) {
      ArmState& st = arms[static_cast<size_t>(a)];
      Var loss = d_y == 1
                     ? arm_loss_1d(st, idx, train.Y, grid, bias.enabled)
                     : arm_loss_2d(st, idx, train, a, nuisance, hp.grid_k, bias.enabled, rng);
      if (!std::isfinite(loss.value()(0, 0)))
        throw std::runtime_error("target training diverged (arm " + std::to_string(a) +
                                 ", iteration " + std::to_string(it) + ")");
      ad::backward(loss);
      st.opt.step(st.params);
      st.ema.update(st.params);
      if (loss_log.is_open())
        loss_log << it << "," << a << "," << loss.value()(0, 0) << "\n";
    }
  }

  TargetFlowPair pair;
  pair.flow0 = flow_with_parameters(arms[0].flow, arms[0].ema.smoothed());
  pair.flow1 = flow_with_parameters(arms[1].flow, arms[1].ema.smoothed());
  pair.std_params = std_params;
  if (d_y == 1) {
    pair.grid_min = grid.points(0);
    pair.grid_max = grid.points(grid.points.size() - 1);
  }
  return pair;
}

}  // namespace ide
