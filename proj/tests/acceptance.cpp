// Acceptance suite: one pass/fail line per criterion. Exits nonzero when any
// checked criterion fails; skipped data-dependent checks do not fail the run.
#include "ide/experiment.hpp"

#include <chrono>
#include <cstdarg>
#include <cstdio>
#include <cstdlib>
#include <fstream>

using namespace ide;

namespace {

int failures = 0;

void report(int idx, bool pass, const std::string& what, const std::string& detail) {
  std::printf("[%s] %2d. %s - %s\n", pass ? "PASS" : "FAIL", idx, what.c_str(),
              detail.c_str());
  if (!pass) ++failures;
}

void report_skip(int idx, const std::string& what, const std::string& why) {
  std::printf("[SKIP] %2d. %s - %s\n", idx, what.c_str(), why.c_str());
}

double elapsed(const std::chrono::steady_clock::time_point& t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, ...) {
  char buf[512];
  va_list args;
  va_start(args, f);
  std::vsnprintf(buf, sizeof(buf), f, args);
  va_end(args);
  return buf;
}

// Benchmark configuration for the end-to-end criteria. Stage-1 runs longer
// than the Table-style default: at 5000 iterations the rare-arm subgroup fit
// is visibly unconverged on this generator.
NuisanceHyperparams bench_nuisance() {
  NuisanceHyperparams hp;
  hp.n_iter = 20000;
  return hp;
}

const NoiseRegConfig kBenchNoise{0.0025, 0.0025};

double oracle_avg_log_prob(const Matrix& y, int a, double b) {
  double acc = 0.0;
  for (Eigen::Index i = 0; i < y.rows(); ++i)
    acc += std::log(scm_oracle_density(y(i, 0), a, b));
  return acc / static_cast<double>(y.rows());
}

// ---------------------------------------------------------------------------

void criterion_1() {
  const auto t0 = std::chrono::steady_clock::now();
  SCMConfig cfg;
  cfg.b = 3.0;
  cfg.n = 1000000;
  cfg.seed = 2026;
  const auto d = scm_sample(cfg);
  double p1 = 0.0, p0 = 0.0;
  const Matrix y1 = d.interventional_sample(1), y0 = d.interventional_sample(0);
  for (Eigen::Index i = 0; i < d.n(); ++i) {
    p1 += y1(i, 0) < 5.0 ? 1.0 : 0.0;
    p0 += y0(i, 0) < 5.0 ? 1.0 : 0.0;
  }
  p1 /= static_cast<double>(d.n());
  p0 /= static_cast<double>(d.n());
  const double secs = elapsed(t0);
  // tolerance carries the Monte-Carlo standard error of the estimate itself
  const double se1 = 3.0 * std::sqrt(p1 * (1.0 - p1) / static_cast<double>(d.n()));
  const double se0 = 3.0 * std::sqrt(p0 * (1.0 - p0) / static_cast<double>(d.n()));
  const bool pass = std::abs(p1 - 0.63) <= 0.01 + se1 && std::abs(p0 - 0.51) <= 0.01 + se0 &&
                    secs < 30.0;
  report(1, pass, "SCM oracle fidelity: success probabilities below five",
         fmt("P(Y[1]<5)=%.4f (0.63±0.01+3se), P(Y[0]<5)=%.4f (0.51±0.01+3se), %.1fs (<30s)",
             p1, p0, secs));
}

void criterion_2() {
  SCMConfig cfg;
  cfg.b = 3.0;
  cfg.n = 1000000;
  cfg.seed = 2027;
  const auto d = scm_sample(cfg);
  const double m1 = d.interventional_sample(1).col(0).mean();
  const double m0 = d.interventional_sample(0).col(0).mean();
  const bool pass = std::abs(m1 - 4.77) <= 0.02 && std::abs(m0 - 4.77) <= 0.02;
  report(2, pass, "SCM mean check at one million draws",
         fmt("mean Y[1]=%.4f, mean Y[0]=%.4f (both 4.77±0.02)", m1, m0));
}

void criterion_3() {
  const auto t0 = std::chrono::steady_clock::now();
  SCMConfig scm;
  scm.b = 3.0;
  scm.n = 1000;
  scm.seed = 42;
  const auto data = scm_sample(scm);
  double inf_lp = 0.0, orc_lp = 0.0;
  for (int fold = 0; fold < 10; ++fold) {
    const auto sp = split(data, 0.9, fold, mix_seed(42, 0x5917));
    const auto [train_std, std_params] = standardize(sp.train);
    const auto nuis =
        train_nuisance(train_std, bench_nuisance(), kBenchNoise, mix_seed(42, 100 + fold));
    TargetHyperparams thp;
    const auto pair = train_target(nuis, train_std, thp, BiasCorrConfig{},
                                   mix_seed(42, 200 + fold), std_params);
    for (int a : {0, 1}) {
      const Matrix ya = sp.test.interventional_sample(a);
      inf_lp += pair.inf_log_prob_rows(a, ya).mean() / 20.0;
      orc_lp += oracle_avg_log_prob(ya, a, 3.0) / 20.0;
    }
  }
  const double secs = elapsed(t0);
  const double gap = inf_lp - orc_lp;
  const bool pass = std::abs(gap) <= 0.15 && secs < 900.0;
  report(3, pass, "INF end-to-end vs oracle on the SCM benchmark",
         fmt("out-sample log-prob %.4f vs oracle %.4f, gap %+.4f (|gap|<=0.15), %.0fs (<900s)",
             inf_lp, orc_lp, gap, secs));
}

void criterion_4() {
  const auto t0 = std::chrono::steady_clock::now();
  int wins = 0;
  double mean_diff = 0.0;
  for (int s = 1; s <= 10; ++s) {
    SCMConfig scm;
    scm.b = 4.0;
    scm.n = 1000;
    scm.seed = static_cast<std::uint64_t>(s);
    const auto data = scm_sample(scm);
    const auto sp = split(data, 0.9, 0, mix_seed(scm.seed, 0x5917));
    const auto [train_std, std_params] = standardize(sp.train);
    const auto nuis =
        train_nuisance(train_std, bench_nuisance(), kBenchNoise, mix_seed(scm.seed, 1));
    TargetHyperparams thp;
    double lp[2] = {0.0, 0.0};  // 0: with correction, 1: without
    for (int variant : {0, 1}) {
      BiasCorrConfig bias;
      bias.enabled = variant == 0;
      const auto pair =
          train_target(nuis, train_std, thp, bias, mix_seed(scm.seed, 2), std_params);
      for (int a : {0, 1})
        lp[variant] += pair.inf_log_prob_rows(a, sp.test.interventional_sample(a)).mean() / 2.0;
    }
    const double diff = lp[0] - lp[1];
    mean_diff += diff / 10.0;
    if (diff > 0.0) ++wins;
  }
  const bool pass = mean_diff >= -0.01 && wins >= 6;
  report(4, pass, "bias-correction benefit at b=4 over ten seeds",
         fmt("mean(corrected - plain) %+.4f (>= -0.01), strictly better %d/10 (>=6), %.0fs",
             mean_diff, wins, elapsed(t0)));
}

void criterion_5() {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(55);
  double worst_rt = 0.0, worst_anti = 0.0, worst_norm = 0.0, worst_grad = 0.0;
  const int instances = 110;
  for (int inst = 0; inst < instances; ++inst) {
    const int n_bins = 3 + inst % 8;
    const double bound = rng.uniform(1.5, 6.0);
    RQSplineParams p;
    p.raw_widths = Vector(n_bins);
    p.raw_heights = Vector(n_bins);
    p.raw_derivs = Vector(n_bins - 1);
    for (int i = 0; i < n_bins; ++i) {
      p.raw_widths(i) = rng.uniform(-2.0, 2.0);
      p.raw_heights(i) = rng.uniform(-2.0, 2.0);
    }
    for (int i = 0; i + 1 < n_bins; ++i) p.raw_derivs(i) = rng.uniform(-2.0, 2.0);
    p.bound = bound;
    const auto kn = make_knots(p);
    for (int i = 0; i < 20; ++i) {
      const double x = rng.uniform(-bound * 1.2, bound * 1.2);
      double ldf = 0.0, ldi = 0.0;
      const double y = rq_forward(kn, x, &ldf);
      const double back = rq_inverse(kn, y, &ldi);
      worst_rt = std::max(worst_rt, std::abs(back - x));
      worst_anti = std::max(worst_anti, std::abs(ldf + ldi));
    }
    // flow normalization and parameter gradients on a subset (identical
    // machinery each instance; gradients are the slow part)
    Flow f = Flow::make_1d(n_bins, bound);
    {
      auto params = f.parameters();
      params[0].mutable_value() = p.raw_widths.transpose();
      params[1].mutable_value() = p.raw_heights.transpose();
      params[2].mutable_value() = p.raw_derivs.transpose();
    }
    const auto dens = [&](double y) {
      Matrix m(1, 1);
      m(0, 0) = y;
      return std::exp(f.log_prob(m)(0));
    };
    // panelized quadrature: randomly initialized splines can concentrate
    // density into near-minimum-size bins the adaptive rule would step over
    double mass = 0.0;
    const double span = 2.0 * bound + 20.0;
    const int panels = static_cast<int>(std::ceil(span / 0.25));
    for (int q = 0; q < panels; ++q) {
      const double lo = -bound - 10.0 + span * q / panels;
      const double hi = -bound - 10.0 + span * (q + 1) / panels;
      mass += integrate_adaptive(dens, lo, hi, 1e-6 / panels).value;
    }
    worst_norm = std::max(worst_norm, std::abs(mass - 1.0));
    Matrix ys(4, 1);
    for (int i = 0; i < 4; ++i) ys(i, 0) = rng.uniform(-bound, bound);
    ad::Var loss = ad::mean(f.log_prob_ad(ys));
    ad::backward(loss);
    auto params = f.parameters();
    for (auto& prm : params) {
      const Matrix grad = prm.grad();
      Matrix& pv = prm.mutable_value();
      for (Eigen::Index j = 0; j < pv.size(); ++j) {
        const double orig = pv.data()[j], step = 1e-5;
        pv.data()[j] = orig + step;
        const double up = ad::mean(f.log_prob_ad(ys)).value()(0, 0);
        pv.data()[j] = orig - step;
        const double dn = ad::mean(f.log_prob_ad(ys)).value()(0, 0);
        pv.data()[j] = orig;
        const double fd = (up - dn) / (2.0 * step);
        const double an = grad.data()[j];
        const double denom = std::max({std::abs(fd), std::abs(an), 1e-6});
        worst_grad = std::max(worst_grad, std::abs(fd - an) / denom);
      }
    }
  }
  const double secs = elapsed(t0);
  const bool pass = worst_rt <= 1e-8 && worst_anti <= 1e-10 && worst_norm <= 1e-3 &&
                    worst_grad < 1e-4 && secs < 120.0;
  report(5, pass, "flow invariant suite over randomized instances",
         fmt("round-trip %.1e (<=1e-8), antisymmetry %.1e (<=1e-10), normalization %.1e "
             "(<=1e-3), gradient %.1e (<1e-4), %d instances, %.0fs (<120s)",
             worst_rt, worst_anti, worst_norm, worst_grad, instances, secs));
}

void criterion_6() {
  Rng rng(66);
  Flow g = Flow::make_1d(5, 3.0);
  for (auto& p : g.parameters()) {
    Matrix& m = p.mutable_value();
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] += rng.uniform(-1.0, 1.0);
  }
  ScmOracleNuisance nuis(2.0);
  const auto grid = QuadratureGrid::from_range(-4.0, 18.0, 100);
  Matrix X(7, 1);
  for (int i = 0; i < 7; ++i) X(i, 0) = rng.uniform(-1.0, 3.0);
  const double ce = ce_loss(g, nuis, X, 1, grid);
  double mean_cce = 0.0;
  for (int i = 0; i < 7; ++i) mean_cce += cce_loss(g, nuis, X.row(i).transpose(), 1, grid) / 7.0;
  const double equiv_err = std::abs(ce - mean_cce);

  // no-arm batch: correction vanishes entirely
  Vector A0 = Vector::Zero(7);
  Matrix Y(7, 1);
  for (int i = 0; i < 7; ++i) Y(i, 0) = rng.normal(5.0, 2.0);
  const double lt0 = bias_corrected_loss(g, nuis, X, A0, Y, 1, grid, BiasCorrConfig{});
  const double err_noarm = std::abs(lt0 - ce);

  // exact cancellation: unit propensity and one-hot conditionals on the grid
  const Eigen::Index k = grid.points.size();
  Matrix W = Matrix::Zero(4, k);
  Matrix Yc(4, 1);
  std::vector<Eigen::Index> bins = {10, 40, 70, 95};
  for (int i = 0; i < 4; ++i) {
    W(i, bins[static_cast<size_t>(i)]) = 1.0 / grid.step;
    Yc(i, 0) = grid.points(bins[static_cast<size_t>(i)]);
  }
  const Vector logg = g.log_prob(grid.points);
  const Vector cce_rows = cce_from_logs(logg, W, grid);
  const Vector logg_y = g.log_prob(Yc);
  double corr = 0.0;
  for (int i = 0; i < 4; ++i) corr += 1.0 * (-logg_y(i) - cce_rows(i)) / 4.0;
  const double err_cancel = std::abs(corr);

  const bool pass = equiv_err <= 1e-10 && err_noarm <= 1e-12 && err_cancel <= 1e-12;
  report(6, pass, "loss equivalence and vanishing-correction identities",
         fmt("|ce - mean cce| %.1e (<=1e-10), no-arm %.1e (<=1e-12), cancellation %.1e "
             "(<=1e-12)",
             equiv_err, err_noarm, err_cancel));
}

void criterion_7() {
  SCMConfig cfg;
  cfg.b = 3.0;
  cfg.n = 10000;
  cfg.seed = 77;
  const auto data = scm_sample(cfg);
  ScmOracleNuisance oracle(3.0);
  Rng rng(78);
  Flow g = Flow::make_1d(5, 14.0);
  for (auto& p : g.parameters()) {
    Matrix& m = p.mutable_value();
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] += rng.uniform(-1.0, 1.0);
  }
  bool pass = true;
  std::string detail;
  for (int a : {0, 1}) {
    const auto grid = QuadratureGrid::from_train(data, 100);
    const Matrix W = oracle.cond_density(data.X, a, grid.points);
    const Vector cce = cce_from_logs(g.log_prob(grid.points), W, grid);
    const Vector w = correction_weights(oracle.propensity(data.X), data.A, a, 0.05);
    const Vector logg_y = g.log_prob(data.Y);
    Vector terms(data.n());
    for (Eigen::Index i = 0; i < data.n(); ++i) terms(i) = w(i) * (-logg_y(i) - cce(i));
    const double mean = terms.mean();
    const double se =
        std::sqrt((terms.array() - mean).square().mean() / static_cast<double>(data.n()));
    pass = pass && std::abs(mean) < 3.0 * se;
    detail += fmt("arm %d: mean %+.4f vs 3se %.4f; ", a, mean, 3.0 * se);
  }
  report(7, pass, "oracle-nuisance correction term is mean zero", detail);
}

void criterion_8() {
  Vector y(1);
  y << 0.0;
  const double t_peak = kde_kernel(y, y, 1.0);
  ObservationalDataset one;
  one.X = Matrix::Constant(1, 1, 0.4);
  one.A = Vector::Ones(1);
  one.Y = Matrix::Constant(1, 1, 2.0);
  DkmeHyperparams dh;
  dh.sigma_k = 1.0;
  dh.epsilon = 1.0;
  const auto dkme = fit_dkme(one, dh);
  const double w_dkme = dkme.beta[1](0);
  // TS pre-clipping normalization (analytic zero-mean basis)
  Rng rng(88);
  TSModel ts;
  ts.basis_dim = 10;
  ts.d_y = 1;
  ts.coef[0] = Vector(10);
  for (int j = 0; j < 10; ++j) ts.coef[0](j) = rng.uniform(-0.5, 0.5);
  ts.coef[1] = ts.coef[0];
  ts.u_min = Vector::Zero(1);
  ts.u_max = Vector::Ones(1);
  const double ts_mass =
      integrate_adaptive([&](double u) { return ts.density_u(Vector::Constant(1, u), 0); }, 0.0,
                         1.0, 1e-10)
          .value;
  Matrix pts(3, 1);
  pts << 0.0, 1.0, 2.0;
  const double h_med = median_bandwidth(pts).h;
  const bool pass = std::abs(t_peak - 0.398942) <= 1e-6 && std::abs(w_dkme - 0.5) <= 1e-6 &&
                    std::abs(ts_mass - 1.0) <= 1e-6 && std::abs(h_med - 0.707107) <= 1e-6;
  report(8, pass, "baseline closed forms",
         fmt("T_y peak %.6f (0.398942), 1x1 weight %.6f (0.5), series mass %.8f (1), "
             "median bandwidth %.6f (0.707107)",
             t_peak, w_dkme, ts_mass, h_med));
}

void criterion_9() {
  const auto t0 = std::chrono::steady_clock::now();
  double deg_pi = 0.0, deg_cond = 0.0;
  for (int s = 1; s <= 5; ++s) {
    SCMConfig scm;
    scm.b = 3.0;
    scm.n = 1000;
    scm.seed = static_cast<std::uint64_t>(s);
    const auto data = scm_sample(scm);
    const auto sp = split(data, 0.9, 0, mix_seed(scm.seed, 0x5917));
    const auto [train_std, std_params] = standardize(sp.train);
    auto nuis = std::make_shared<NuisanceModel>(
        train_nuisance(train_std, bench_nuisance(), kBenchNoise, mix_seed(scm.seed, 1)));
    TargetHyperparams thp;
    const auto eval_variant = [&](const CondDensityModel& model) {
      const auto pair = train_target(model, train_std, thp, BiasCorrConfig{},
                                     mix_seed(scm.seed, 2), std_params);
      double lp = 0.0;
      for (int a : {0, 1})
        lp += pair.inf_log_prob_rows(a, sp.test.interventional_sample(a)).mean() / 2.0;
      return lp;
    };
    const double full = eval_variant(*nuis);
    const double flat_pi = eval_variant(ConstantPropensity(nuis, 0.5));
    const double wide_cond = eval_variant(WidenedConditional(nuis, 2.0));
    deg_pi += (full - flat_pi) / 5.0;
    deg_cond += (full - wide_cond) / 5.0;
  }
  const bool pass = deg_pi <= 0.1 && deg_cond <= 0.2;
  report(9, pass, "double-robustness smoke test",
         fmt("propensity corrupted: degradation %+.4f (<=0.1); conditional widened: %+.4f "
             "(<=0.2); %.0fs",
             deg_pi, deg_cond, elapsed(t0)));
}

void criterion_10() {
  Vector a(1), b(1);
  a << 0.0;
  b << 1.0;
  const double w1 = empirical_wasserstein(a, b);
  Vector c(2), d(2);
  c << 0.0, 1.0;
  d << 1.0, 2.0;
  const double w2 = empirical_wasserstein(c, d);
  Matrix bad(2, 1);
  bad << 0.0, 10.0;
  const auto res = avg_log_prob(
      [](const Vector& y) { return y(0) < 5.0 ? 0.3 : 0.0; }, bad);
  const bool pass = w1 == 1.0 && w2 == 1.0 && res.degenerate &&
                    res.value == -std::numeric_limits<double>::infinity();
  report(10, pass, "metric hand cases and the -infinity flag path",
         fmt("W({0},{1})=%.1f, W({0,1},{1,2})=%.1f, degenerate flag %s", w1, w2,
             res.degenerate ? "set" : "missing"));
}

void criterion_11() {
  const char* env = std::getenv("IDE_IHDP_CSV");
  const std::string path = env ? env : "data/ihdp.csv";
  if (!std::ifstream(path).good()) {
    report_skip(11, "IHDP reproduction (optional, data dependent)",
                "dataset not present at '" + path +
                    "' (set IDE_IHDP_CSV to a CSV with x*/a/y0/y_cf0 columns)");
    return;
  }
  const auto t0 = std::chrono::steady_clock::now();
  ExperimentConfig cfg;
  cfg.data = "csv";
  cfg.csv_path = path;
  cfg.methods = {"infs"};
  cfg.folds = 10;
  cfg.seed = 42;
  cfg.metrics_std_units = true;  // reference values are on the standardized scale
  cfg.out_dir = "/tmp/ide_ihdp_out";
  cfg.nuisance = bench_nuisance();
  cfg.nuisance_noise = kBenchNoise;
  cfg.target.n_knots = 10;
  cfg.wasserstein = "off";
  const auto result = run_experiment(cfg);
  double lp_in = 0.0;
  int count = 0;
  for (const auto& r : result.rows)
    if (r.arm == 0) {
      lp_in += r.log_prob_in;
      ++count;
    }
  lp_in /= static_cast<double>(count);
  const bool pass = std::abs(lp_in - (-0.912)) <= 0.05;
  report(11, pass, "IHDP reproduction (optional, data dependent)",
         fmt("in-sample log-prob a=0: %.4f (-0.912±0.05), %.0fs", lp_in, elapsed(t0)));
}

}  // namespace

int main() {
  const auto t0 = std::chrono::steady_clock::now();
  criterion_1();
  criterion_2();
  criterion_3();
  criterion_4();
  criterion_5();
  criterion_6();
  criterion_7();
  criterion_8();
  criterion_9();
  criterion_10();
  criterion_11();
  std::printf("acceptance: %s (%d failure%s), total %.0fs\n",
              failures == 0 ? "all criteria passed" : "criteria failed", failures,
              failures == 1 ? "" : "s", elapsed(t0));
  return failures == 0 ? 0 : 1;
}
