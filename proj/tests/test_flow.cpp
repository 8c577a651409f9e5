#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "ide/flow.hpp"

using namespace ide;
using ad::Var;

namespace {

RQSplineParams random_params(Rng& rng, int n_bins, double bound) {
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
  return p;
}

Flow random_flow_1d(Rng& rng, int n_bins, double bound) {
  Flow f = Flow::make_1d(n_bins, bound);
  for (auto& p : f.parameters()) {
    Matrix& m = p.mutable_value();
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] += rng.uniform(-1.5, 1.5);
  }
  return f;
}

}  // namespace

TEST_CASE("identity parameterization maps y = x with zero log-derivative") {
  const auto p = RQSplineParams::identity(5, 4.0);
  const auto kn = make_knots(p);
  for (double x : {-3.9, -1.0, 0.0, 0.3, 2.7, 3.99}) {
    double ld = 1.0;
    CHECK(rq_forward(kn, x, &ld) == doctest::Approx(x).epsilon(1e-12));
    CHECK(std::abs(ld) < 1e-12);
    CHECK(rq_inverse(kn, x, &ld) == doctest::Approx(x).epsilon(1e-12));
    CHECK(std::abs(ld) < 1e-12);
  }
}

TEST_CASE("outside the interval the spline is the identity") {
  Rng rng(1);
  const auto kn = make_knots(random_params(rng, 6, 3.0));
  auto [y, ld] = rq_spline_apply(random_params(rng, 6, 3.0), 4.0, SplineDirection::Forward);
  CHECK(y == doctest::Approx(4.0));
  CHECK(ld == 0.0);
  double ld2 = 1.0;
  CHECK(rq_forward(kn, -3.0 - 1e-9, &ld2) == doctest::Approx(-3.0 - 1e-9));
  CHECK(ld2 == 0.0);
  CHECK_THROWS_AS(rq_forward(kn, std::nan(""), nullptr), std::invalid_argument);
}

TEST_CASE("round trip inverse(forward(x)) = x over random parameters") {
  Rng rng(12);
  for (int rep = 0; rep < 40; ++rep) {
    const auto kn = make_knots(random_params(rng, 2 + rep % 9, rng.uniform(1.0, 8.0)));
    for (int i = 0; i < 25; ++i) {
      const double x = rng.uniform(-kn.bound * 1.2, kn.bound * 1.2);
      const double y = rq_forward(kn, x, nullptr);
      CHECK(std::abs(rq_inverse(kn, y, nullptr) - x) < 1e-8);
      const double z = rq_inverse(kn, x, nullptr);
      CHECK(std::abs(rq_forward(kn, z, nullptr) - x) < 1e-8);
    }
  }
}

TEST_CASE("log-derivative antisymmetry of forward and inverse") {
  Rng rng(13);
  for (int rep = 0; rep < 40; ++rep) {
    const auto kn = make_knots(random_params(rng, 5, 3.5));
    for (int i = 0; i < 25; ++i) {
      const double x = rng.uniform(-3.5, 3.5);
      double ldf = 0.0, ldi = 0.0;
      const double y = rq_forward(kn, x, &ldf);
      rq_inverse(kn, y, &ldi);
      CHECK(std::abs(ldf + ldi) < 1e-10);
    }
  }
}

TEST_CASE("forward map is strictly increasing") {
  Rng rng(14);
  const auto kn = make_knots(random_params(rng, 8, 5.0));
  double prev = -1e300;
  for (int i = 0; i <= 1000; ++i) {
    const double x = -6.0 + 12.0 * i / 1000.0;
    const double y = rq_forward(kn, x, nullptr);
    CHECK(y > prev);
    prev = y;
  }
}

TEST_CASE("knot arrays satisfy the declared invariants") {
  Rng rng(15);
  const auto kn = make_knots(random_params(rng, 7, 4.0));
  for (int i = 0; i < 7; ++i) {
    CHECK(kn.x(i + 1) - kn.x(i) >= kMinBinSize - 1e-12);
    CHECK(kn.y(i + 1) - kn.y(i) >= kMinBinSize - 1e-12);
  }
  CHECK(kn.x(0) == doctest::Approx(-4.0));
  CHECK(kn.x(7) == doctest::Approx(4.0));
  CHECK((kn.d.array() > 0.0).all());
  CHECK(kn.d(0) == 1.0);
}

TEST_CASE("identity flow log density at zero is the standard normal constant") {
  Flow f = Flow::make_1d(5, 4.0);
  Matrix y(1, 1);
  y(0, 0) = 0.0;
  CHECK(f.log_prob(y)(0) == doctest::Approx(-0.918939).epsilon(1e-6));
}

TEST_CASE("pure shift flow evaluates the shifted standard normal") {
  Flow f = Flow::make_1d(5, 4.0, 1, /*with_affine=*/true);
  auto params = f.parameters();  // spline raw_w, raw_h, raw_d, then shift, log_scale
  params[3].mutable_value()(0, 0) = 1.7;
  for (double y : {-1.0, 0.3, 2.5}) {
    Matrix m(1, 1);
    m(0, 0) = y;
    CHECK(f.log_prob(m)(0) == doctest::Approx(normal_log_pdf(y - 1.7)).epsilon(1e-10));
  }
}

TEST_CASE("random flows integrate to one") {
  Rng rng(21);
  for (int rep = 0; rep < 5; ++rep) {
    Flow f = random_flow_1d(rng, 5, 3.0);
    const auto dens = [&](double y) {
      Matrix m(1, 1);
      m(0, 0) = y;
      return std::exp(f.log_prob(m)(0));
    };
    const auto res = integrate_adaptive(dens, -13.0, 13.0, 1e-6);
    CHECK(res.value == doctest::Approx(1.0).epsilon(1e-3));
  }
}

TEST_CASE("flow parameter gradients match finite differences") {
  Rng rng(22);
  Flow f = random_flow_1d(rng, 4, 2.5);
  Matrix y(6, 1);
  for (int i = 0; i < 6; ++i) y(i, 0) = rng.uniform(-3.0, 3.0);
  Var loss = ad::mean(f.log_prob_ad(y) * -1.0);
  ad::backward(loss);
  auto params = f.parameters();
  std::vector<Matrix> grads;
  for (auto& p : params) grads.push_back(p.grad());
  for (size_t k = 0; k < params.size(); ++k) {
    Matrix& pv = params[k].mutable_value();
    for (Eigen::Index j = 0; j < pv.size(); ++j) {
      const double orig = pv.data()[j];
      const double step = 1e-5;
      pv.data()[j] = orig + step;
      const double up = ad::mean(f.log_prob_ad(y) * -1.0).value()(0, 0);
      pv.data()[j] = orig - step;
      const double dn = ad::mean(f.log_prob_ad(y) * -1.0).value()(0, 0);
      pv.data()[j] = orig;
      const double fd = (up - dn) / (2.0 * step);
      const double an = grads[k].data()[j];
      const double denom = std::max({std::abs(fd), std::abs(an), 1e-8});
      CHECK(std::abs(fd - an) / denom < 1e-4);
    }
  }
}

TEST_CASE("autodiff spline path agrees with the plain path") {
  Rng rng(23);
  for (int rep = 0; rep < 10; ++rep) {
    const int n_bins = 3 + rep % 6;
    const double bound = rng.uniform(1.5, 6.0);
    const auto p = random_params(rng, n_bins, bound);
    const auto kn = make_knots(p);
    Matrix xs(40, 1);
    for (int i = 0; i < 40; ++i) xs(i, 0) = rng.uniform(-bound * 1.3, bound * 1.3);
    Var rw = ad::constant(p.raw_widths.transpose());
    Var rh = ad::constant(p.raw_heights.transpose());
    Var rd = ad::constant(p.raw_derivs.transpose());
    for (bool inverse : {false, true}) {
      auto res = spline_apply_ad(ad::constant(xs), rw, rh, rd, bound, inverse);
      for (int i = 0; i < 40; ++i) {
        double ld = 0.0;
        const double ref =
            inverse ? rq_inverse(kn, xs(i, 0), &ld) : rq_forward(kn, xs(i, 0), &ld);
        CHECK(std::abs(res.out.value()(i, 0) - ref) < 1e-11);
        CHECK(std::abs(res.log_deriv.value()(i, 0) - ld) < 1e-10);
      }
    }
  }
}

TEST_CASE("identity flow sample mean obeys the law of large numbers") {
  Flow f = Flow::make_1d(5, 4.0);
  Rng rng(31);
  const int n = 40000;
  Matrix s = f.sample(n, rng);
  CHECK(std::abs(s.col(0).mean()) < 4.0 / std::sqrt(static_cast<double>(n)));
}

TEST_CASE("own sample scores higher than a sample from a shifted flow") {
  Rng rng(32);
  Flow f = random_flow_1d(rng, 5, 3.0);
  Flow shifted = Flow::make_1d(5, 3.0, 1, /*with_affine=*/true);
  {
    auto src = f.parameters();
    auto dst = shifted.parameters();
    for (size_t i = 0; i < src.size(); ++i) dst[i].mutable_value() = src[i].value();
    dst[3].mutable_value()(0, 0) = 5.0;  // shift by 5
  }
  Rng r1(100), r2(100);
  Matrix own = f.sample(2000, r1);
  Matrix other = shifted.sample(2000, r2);
  CHECK(f.log_prob(own).mean() > f.log_prob(other).mean());
}

TEST_CASE("sampling is seed deterministic") {
  Rng rng(33);
  Flow f = random_flow_1d(rng, 5, 3.0);
  Rng a(7), b(7);
  CHECK((f.sample(50, a) - f.sample(50, b)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("json round trip preserves the flow") {
  Rng rng(34);
  Flow f = random_flow_1d(rng, 6, 2.0);
  Flow g = Flow::from_json(f.to_json());
  Matrix y(9, 1);
  for (int i = 0; i < 9; ++i) y(i, 0) = rng.uniform(-4.0, 4.0);
  CHECK((f.log_prob(y) - g.log_prob(y)).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("quantile function inverts the flow CDF") {
  Rng rng(35);
  Flow f = random_flow_1d(rng, 5, 3.0);
  // P(Y <= quantile(q)) = q since the flow is monotone in the base variable.
  for (double q : {0.05, 0.3, 0.5, 0.9}) {
    const double yq = f.quantile(q);
    const auto dens = [&](double y) {
      Matrix m(1, 1);
      m(0, 0) = y;
      return std::exp(f.log_prob(m)(0));
    };
    const double mass = integrate_adaptive(dens, -14.0, yq, 1e-7).value;
    CHECK(mass == doctest::Approx(q).epsilon(2e-3));
  }
}

TEST_CASE("two-dimensional autoregressive flow is a proper density") {
  Rng rng(36);
  Flow f = Flow::make_2d(4, 3.0, 3.0, 8, rng);
  for (auto& p : f.parameters()) {
    Matrix& m = p.mutable_value();
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] += rng.uniform(-0.4, 0.4);
  }
  const int g = 150;
  const double lo = -10.0, hi = 10.0, h = (hi - lo) / g;
  Matrix pts(g * g, 2);
  int k = 0;
  for (int i = 0; i < g; ++i)
    for (int j = 0; j < g; ++j) {
      pts(k, 0) = lo + (i + 0.5) * h;
      pts(k, 1) = lo + (j + 0.5) * h;
      ++k;
    }
  const Vector lp = f.log_prob(pts);
  const double total = (lp.array().exp() * h * h).sum();
  CHECK(total == doctest::Approx(1.0).epsilon(5e-3));

  Matrix y(5, 2);
  for (int i = 0; i < 5; ++i) {
    y(i, 0) = rng.uniform(-2.0, 2.0);
    y(i, 1) = rng.uniform(-2.0, 2.0);
  }
  Var lp_ad = f.log_prob_ad(y);
  CHECK((lp_ad.value().col(0) - f.log_prob(y)).cwiseAbs().maxCoeff() < 1e-10);

  Rng r(9);
  Matrix s = f.sample(200, r);
  CHECK(f.log_prob(s).allFinite());
}
