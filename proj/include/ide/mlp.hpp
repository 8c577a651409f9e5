#pragma once

#include "ide/autodiff.hpp"

#include <vector>

namespace ide {

enum class Activation { Elu, LeakySoftplus, Tanh, Linear };

// Smooth everywhere-differentiable hidden unit that stays asymptotically
// affine on both sides (slope kLeakSlope left, 1 right), so fitted trends
// continue linearly outside the training hull.
inline constexpr double kLeakSlope = 0.1;

inline double leaky_softplus(double x) {
  const double sp = x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
  return kLeakSlope * x + (1.0 - kLeakSlope) * sp;
}

// Fully-connected network with a linear output layer. Parameters live as
// autodiff leaves; forward() builds graph nodes, forward_plain() evaluates
// the same function without a graph for frozen models.
class Mlp {
 public:
  Mlp() = default;

  Mlp(const std::vector<int>& layer_sizes, Activation hidden, Rng& rng,
      bool linear_skip = false)
      : hidden_(hidden), skip_(linear_skip && layer_sizes.size() > 2) {
    check(layer_sizes.size() >= 2, "mlp: need at least input and output size");
    for (size_t l = 0; l + 1 < layer_sizes.size(); ++l) {
      const int fan_in = layer_sizes[l], fan_out = layer_sizes[l + 1];
      const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
      Matrix w(fan_in, fan_out), b(1, fan_out);
      for (Eigen::Index i = 0; i < w.size(); ++i)
        w.data()[i] = rng.uniform(-bound, bound);
      for (Eigen::Index i = 0; i < b.size(); ++i)
        b.data()[i] = rng.uniform(-bound, bound);
      weights_.push_back(ad::parameter(std::move(w)));
      biases_.push_back(ad::parameter(std::move(b)));
    }
    if (skip_) {
      const int fan_in = layer_sizes.front(), fan_out = layer_sizes.back();
      const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
      Matrix w(fan_in, fan_out);
      for (Eigen::Index i = 0; i < w.size(); ++i)
        w.data()[i] = rng.uniform(-bound, bound);
      skip_weight_ = ad::parameter(std::move(w));
    }
  }

  ad::Var forward(const ad::Var& input) const {
    ad::Var h = input;
    for (size_t l = 0; l < weights_.size(); ++l) {
      h = ad::add_rowvec(ad::matmul(h, weights_[l]), biases_[l]);
      if (l + 1 < weights_.size()) h = activate(h);
    }
    if (skip_) h = h + ad::matmul(input, skip_weight_);
    return h;
  }

  Matrix forward_plain(const Matrix& input) const {
    Matrix h = input;
    for (size_t l = 0; l < weights_.size(); ++l) {
      h = (h * weights_[l].value()).rowwise() + biases_[l].value().row(0);
      if (l + 1 < weights_.size()) h = activate_plain(h);
    }
    if (skip_) h += input * skip_weight_.value();
    return h;
  }

  std::vector<ad::Var> parameters() const {
    std::vector<ad::Var> out;
    for (size_t l = 0; l < weights_.size(); ++l) {
      out.push_back(weights_[l]);
      out.push_back(biases_[l]);
    }
    if (skip_) out.push_back(skip_weight_);
    return out;
  }

  int input_dim() const { return static_cast<int>(weights_.front().rows()); }
  bool has_skip() const { return skip_; }
  int output_dim() const { return static_cast<int>(weights_.back().cols()); }
  size_t n_layers() const { return weights_.size(); }
  Activation activation() const { return hidden_; }

  const std::vector<ad::Var>& weight_vars() const { return weights_; }
  const std::vector<ad::Var>& bias_vars() const { return biases_; }

 private:
  ad::Var activate(const ad::Var& h) const {
    switch (hidden_) {
      case Activation::Elu: return ad::elu(h);
      case Activation::LeakySoftplus:
        return h * kLeakSlope + ad::softplus(h) * (1.0 - kLeakSlope);
      case Activation::Tanh: return ad::tanh(h);
      case Activation::Linear: return h;
    }
    return h;
  }

  Matrix activate_plain(const Matrix& h) const {
    switch (hidden_) {
      case Activation::Elu:
        return h.unaryExpr([](double x) { return x > 0.0 ? x : std::expm1(x); });
      case Activation::LeakySoftplus:
        return h.unaryExpr([](double x) { return leaky_softplus(x); });
      case Activation::Tanh: return h.array().tanh();
      case Activation::Linear: return h;
    }
    return h;
  }

  Activation hidden_ = Activation::Elu;
  bool skip_ = false;
  ad::Var skip_weight_;
  std::vector<ad::Var> weights_, biases_;
};

}  // namespace ide
