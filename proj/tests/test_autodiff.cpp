#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "ide/autodiff.hpp"
#include "ide/mlp.hpp"
#include "ide/optim.hpp"

#include <functional>

using namespace ide;
using ad::Var;

namespace {

// Central finite differences of a scalar-valued graph builder with respect to
// one parameter entry. The builder must rebuild the graph from scratch.
double finite_diff(const std::function<double()>& eval, Matrix& param, Eigen::Index i,
                   Eigen::Index j, double step = 1e-5) {
  const double orig = param(i, j);
  param(i, j) = orig + step;
  const double up = eval();
  param(i, j) = orig - step;
  const double down = eval();
  param(i, j) = orig;
  return (up - down) / (2.0 * step);
}

// Checks grad of `build` (fresh scalar graph per call) against central
// differences for every entry of every parameter.
void check_grads(const std::vector<Var>& params, const std::function<Var()>& build,
                 double rel_tol = 1e-4) {
  Var loss = build();
  ad::backward(loss);
  std::vector<Matrix> grads;
  for (const auto& p : params) grads.push_back(p.grad());
  const auto eval = [&]() { return build().value()(0, 0); };
  for (size_t k = 0; k < params.size(); ++k) {
    Matrix& pv = const_cast<Matrix&>(params[k].value());
    for (Eigen::Index i = 0; i < pv.rows(); ++i)
      for (Eigen::Index j = 0; j < pv.cols(); ++j) {
        const double fd = finite_diff(eval, pv, i, j);
        const double an = grads[k](i, j);
        const double denom = std::max({std::abs(fd), std::abs(an), 1e-8});
        CAPTURE(k);
        CAPTURE(i);
        CAPTURE(j);
        CHECK(std::abs(fd - an) / denom < rel_tol);
      }
  }
}

Matrix random_matrix(Rng& rng, Eigen::Index r, Eigen::Index c, double lo = -1.5,
                     double hi = 1.5) {
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(lo, hi);
  return m;
}

}  // namespace

TEST_CASE("d/dx (x*x) at x = 3 is 6") {
  Var x = ad::parameter(Matrix::Constant(1, 1, 3.0));
  Var loss = x * x;
  ad::backward(loss);
  CHECK(x.grad()(0, 0) == doctest::Approx(6.0));
}

TEST_CASE("d/dx log(x) at x = 1 is 1") {
  Var x = ad::parameter(Matrix::Constant(1, 1, 1.0));
  ad::backward(ad::log(x));
  CHECK(x.grad()(0, 0) == doctest::Approx(1.0));
}

TEST_CASE("backward rejects non-scalar loss and flags NaN") {
  Var x = ad::parameter(Matrix::Ones(2, 1));
  CHECK_THROWS_AS(ad::backward(x), std::invalid_argument);
  Var bad = ad::parameter(Matrix::Constant(1, 1, -1.0));
  CHECK_THROWS_AS(ad::backward(ad::log(bad) * 0.0), std::runtime_error);
}

TEST_CASE("gradient accumulates over all paths") {
  Var x = ad::parameter(Matrix::Constant(1, 1, 2.0));
  Var y = x * x + x * 3.0;  // d/dx = 2x + 3 = 7
  ad::backward(y);
  CHECK(x.grad()(0, 0) == doctest::Approx(7.0));
}

TEST_CASE("backward is linear in the loss") {
  Rng rng(7);
  Matrix xv = random_matrix(rng, 3, 2);
  Var x = ad::parameter(xv);
  const auto f = [&]() { return ad::sum(ad::square(x)); };
  const auto g = [&]() { return ad::mean(ad::exp(x)); };
  ad::backward(f());
  Matrix gf = x.grad();
  ad::backward(g());
  Matrix gg = x.grad();
  const double a = 2.5, b = -1.25;
  ad::backward(f() * a + g() * b);
  CHECK((x.grad() - (a * gf + b * gg)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("every differentiable primitive matches central finite differences") {
  Rng rng(42);
  for (int rep = 0; rep < 20; ++rep) {
    Var a = ad::parameter(random_matrix(rng, 3, 4, 0.2, 1.8));  // positive for log/sqrt
    Var b = ad::parameter(random_matrix(rng, 3, 4, 0.2, 1.8));
    Var m = ad::parameter(random_matrix(rng, 4, 2));
    Var r = ad::parameter(random_matrix(rng, 1, 4));
    Var c = ad::parameter(random_matrix(rng, 3, 1, 0.5, 1.5));

    check_grads({a.node() ? a : a, b}, [&] { return ad::sum((a + b) * (a - b)); });
    check_grads({a, b}, [&] { return ad::sum(a / b); });
    check_grads({a}, [&] { return ad::sum(ad::exp(a)); });
    check_grads({a}, [&] { return ad::sum(ad::log(a)); });
    check_grads({a}, [&] { return ad::sum(ad::sqrt(a)); });
    check_grads({a}, [&] { return ad::sum(ad::square(a)); });
    check_grads({a}, [&] { return ad::sum(ad::sigmoid(a)); });
    check_grads({a}, [&] { return ad::sum(ad::softplus(a * 3.0 - 2.0)); });
    check_grads({a}, [&] { return ad::sum(ad::elu(a * 4.0 - 2.0)); });
    check_grads({a}, [&] { return ad::sum(ad::tanh(a)); });
    check_grads({a, m}, [&] { return ad::sum(ad::matmul(a, m)); });
    check_grads({a}, [&] { return ad::sum(ad::row_sum(a)); });
    check_grads({a, r}, [&] { return ad::sum(ad::add_rowvec(a, r)); });
    check_grads({a, c}, [&] { return ad::sum(ad::mul_colvec(a, c)); });
    check_grads({a, c}, [&] { return ad::sum(ad::div_colvec(a, c)); });
    check_grads({a, b}, [&] { return ad::sum(ad::concat_cols(a, b)); });
    check_grads({a}, [&] { return ad::sum(ad::slice_cols(a, 1, 2)); });
    check_grads({a}, [&] { return ad::mean(ad::reciprocal(a)); });
  }
}

TEST_CASE("gather, where, clamp and bce gradients match finite differences") {
  Rng rng(11);
  for (int rep = 0; rep < 20; ++rep) {
    Var src = ad::parameter(random_matrix(rng, 5, 4));
    Var bsrc = ad::parameter(random_matrix(rng, 1, 4));
    std::vector<Eigen::Index> idx = {3, 0, 2, 2, 1};
    check_grads({src}, [&] { return ad::sum(ad::square(ad::gather_cols(src, idx))); });
    check_grads({bsrc}, [&] { return ad::sum(ad::square(ad::gather_cols(bsrc, idx))); });

    Var u = ad::parameter(random_matrix(rng, 5, 1));
    Var v = ad::parameter(random_matrix(rng, 5, 1));
    Matrix mask(5, 1);
    for (int i = 0; i < 5; ++i) mask(i, 0) = rng.uniform() < 0.5 ? 0.0 : 1.0;
    check_grads({u, v}, [&] { return ad::sum(ad::where(mask, u * u, v * 3.0)); });
    check_grads({u}, [&] { return ad::sum(ad::square(ad::clamp(u, -0.9, 0.9))); });

    Matrix targets(5, 1);
    for (int i = 0; i < 5; ++i) targets(i, 0) = rng.uniform() < 0.5 ? 0.0 : 1.0;
    Var logits = ad::parameter(random_matrix(rng, 5, 1, -2.0, 2.0));
    check_grads({logits}, [&] { return ad::mean(ad::bce_with_logits(logits, targets)); });
  }
}

TEST_CASE("two-layer network loss gradient vs central differences") {
  Rng rng(3);
  Mlp net({3, 5, 1}, Activation::Elu, rng);
  Matrix input = random_matrix(rng, 8, 3);
  Matrix target = random_matrix(rng, 8, 1);
  const auto build = [&] {
    Var out = net.forward(ad::constant(input));
    return ad::mean(ad::square(out - ad::constant(target)));
  };
  check_grads(net.parameters(), build);
}

// ------------------------------ optimizers --------------------------------

TEST_CASE("plain gradient step: mu=0, eta=0.1, p=1, g=2 -> 0.8") {
  std::vector<Var> params = {ad::parameter(Matrix::Constant(1, 1, 1.0))};
  auto opt = ad::Optimizer::sgd_momentum(0.1, 0.0);
  ad::backward(params[0] * 2.0);
  opt.step(params);
  CHECK(params[0].value()(0, 0) == doctest::Approx(0.8));
}

TEST_CASE("sgd momentum recurrence: two steps land on 0.42") {
  std::vector<Var> params = {ad::parameter(Matrix::Constant(1, 1, 1.0))};
  auto opt = ad::Optimizer::sgd_momentum(0.1, 0.9);
  for (int i = 0; i < 2; ++i) {
    ad::backward(params[0] * 2.0);  // constant gradient 2
    opt.step(params);
  }
  CHECK(params[0].value()(0, 0) == doctest::Approx(0.42));
}

TEST_CASE("adam and sgd leave parameters unchanged under zero gradients") {
  for (auto opt : {ad::Optimizer::adam(0.1), ad::Optimizer::sgd_momentum(0.1)}) {
    std::vector<Var> params = {ad::parameter(Matrix::Constant(2, 2, 1.5))};
    for (int i = 0; i < 5; ++i) {
      ad::backward(ad::sum(params[0]) * 0.0);
      opt.step(params);
    }
    CHECK((params[0].value().array() == 1.5).all());
  }
}

TEST_CASE("optimizer rejects shape-mismatched gradients") {
  std::vector<Var> params = {ad::parameter(Matrix::Ones(2, 2))};
  auto opt = ad::Optimizer::sgd_momentum(0.1);
  // grad never populated for this param: wrong (empty) shape
  CHECK_THROWS_AS(opt.step(params), std::invalid_argument);
}

// --------------------------------- EMA ------------------------------------

TEST_CASE("ema endpoints and midpoint") {
  std::vector<Var> p = {ad::parameter(Matrix::Constant(1, 1, 2.0))};
  {
    ad::EmaState ema(0.0, {ad::parameter(Matrix::Zero(1, 1))});
    ema.update(p);
    CHECK(ema.smoothed()[0](0, 0) == doctest::Approx(2.0));  // gamma=0: takes fresh
  }
  {
    ad::EmaState ema(1.0, {ad::parameter(Matrix::Zero(1, 1))});
    ema.update(p);
    CHECK(ema.smoothed()[0](0, 0) == doctest::Approx(0.0));  // gamma=1: unchanged
  }
  {
    ad::EmaState ema(0.5, {ad::parameter(Matrix::Zero(1, 1))});
    ema.update(p);
    CHECK(ema.smoothed()[0](0, 0) == doctest::Approx(1.0));
  }
  CHECK_THROWS_AS(ad::EmaState(1.5, p), std::invalid_argument);
}

TEST_CASE("ema at gamma=0.995 converges geometrically to a constant input") {
  const double gamma = 0.995, init = 10.0, fresh = 2.0;
  std::vector<Var> p = {ad::parameter(Matrix::Constant(1, 1, fresh))};
  ad::EmaState ema(gamma, {ad::parameter(Matrix::Constant(1, 1, init))});
  const int T = 400;
  for (int t = 0; t < T; ++t) ema.update(p);
  const double err = std::abs(ema.smoothed()[0](0, 0) - fresh);
  CHECK(err < std::pow(gamma, T) * std::abs(init - fresh) + 1e-12);
}

// --------------------------------- MLP ------------------------------------

TEST_CASE("mlp with zero weights outputs the bias") {
  Rng rng(1);
  Mlp net({2, 3}, Activation::Linear, rng);
  net.weight_vars()[0].mutable_value().setZero();
  Matrix in = random_matrix(rng, 4, 2);
  Matrix out = net.forward_plain(in);
  for (int i = 0; i < 4; ++i)
    CHECK((out.row(i) - net.bias_vars()[0].value().row(0)).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("single identity layer keeps the input") {
  Rng rng(1);
  Mlp net({2, 2}, Activation::Linear, rng);
  net.weight_vars()[0].mutable_value() = Matrix::Identity(2, 2);
  net.bias_vars()[0].mutable_value().setZero();
  Matrix in = random_matrix(rng, 5, 2);
  CHECK((net.forward_plain(in) - in).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("fixed 2x2 weight example reproduces the hand matrix product") {
  Rng rng(1);
  Mlp net({2, 2}, Activation::Linear, rng);
  Matrix w(2, 2);
  w << 1.0, 2.0, 3.0, 4.0;  // out = in * W + b
  Matrix b(1, 2);
  b << 0.5, -0.5;
  net.weight_vars()[0].mutable_value() = w;
  net.bias_vars()[0].mutable_value() = b;
  Matrix in(1, 2);
  in << 2.0, -1.0;
  Matrix out = net.forward_plain(in);
  // (2*1 + -1*3 + 0.5, 2*2 + -1*4 - 0.5) = (-0.5, -0.5)
  CHECK(out(0, 0) == doctest::Approx(-0.5));
  CHECK(out(0, 1) == doctest::Approx(-0.5));
}

TEST_CASE("mlp forward graph equals plain forward") {
  Rng rng(5);
  Mlp net({3, 7, 2}, Activation::Elu, rng);
  Matrix in = random_matrix(rng, 6, 3);
  Var out = net.forward(ad::constant(in));
  CHECK((out.value() - net.forward_plain(in)).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("mlp rejects mismatched input dimension") {
  Rng rng(5);
  Mlp net({3, 4}, Activation::Elu, rng);
  CHECK_THROWS_AS(net.forward(ad::constant(Matrix::Ones(2, 5))), std::invalid_argument);
}
