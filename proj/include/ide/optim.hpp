#pragma once

#include "ide/autodiff.hpp"

#include <vector>

namespace ide::ad {

// SGD with momentum and Adam behind one state object. Buffers are keyed by
// position in the parameter list, so the same list must be passed every step.
class Optimizer {
 public:
  enum class Kind { SgdMomentum, Adam };

  static Optimizer sgd_momentum(double lr, double momentum = 0.9) {
    Optimizer o;
    o.kind_ = Kind::SgdMomentum;
    o.lr_ = lr;
    o.momentum_ = momentum;
    return o;
  }

  static Optimizer adam(double lr, double beta1 = 0.9, double beta2 = 0.999,
                        double eps = 1e-8) {
    Optimizer o;
    o.kind_ = Kind::Adam;
    o.lr_ = lr;
    o.beta1_ = beta1;
    o.beta2_ = beta2;
    o.eps_ = eps;
    return o;
  }

  Kind kind() const { return kind_; }
  long step_count() const { return step_; }

  // Applies one update using each parameter's accumulated gradient.
  void step(std::vector<Var>& params) {
    init_buffers(params);
    ++step_;
    for (size_t i = 0; i < params.size(); ++i) {
      const Matrix& g = params[i].grad();
      check(g.rows() == params[i].rows() && g.cols() == params[i].cols(),
            "optimizer step: gradient shape mismatch");
      check_runtime(g.allFinite(), "optimizer step: non-finite gradient");
      Matrix& p = params[i].mutable_value();
      if (kind_ == Kind::SgdMomentum) {
        velocity_[i] = momentum_ * velocity_[i] + g;
        p -= lr_ * velocity_[i];
      } else {
        m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * g;
        v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * g.cwiseProduct(g);
        const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(step_));
        const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(step_));
        Matrix mhat = m_[i] / bc1;
        Matrix vhat = v_[i] / bc2;
        p -= lr_ * mhat.cwiseQuotient((vhat.cwiseSqrt().array() + eps_).matrix());
      }
    }
  }

 private:
  void init_buffers(const std::vector<Var>& params) {
    if (!velocity_.empty() || !m_.empty()) return;
    for (const auto& p : params) {
      Matrix z = Matrix::Zero(p.rows(), p.cols());
      if (kind_ == Kind::SgdMomentum) {
        velocity_.push_back(z);
      } else {
        m_.push_back(z);
        v_.push_back(z);
      }
    }
  }

  Kind kind_ = Kind::SgdMomentum;
  double lr_ = 0.01;
  double momentum_ = 0.9;
  double beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
  long step_ = 0;
  std::vector<Matrix> velocity_;
  std::vector<Matrix> m_, v_;
};

// Exponential moving average of a parameter list:
// smoothed <- gamma * smoothed + (1 - gamma) * fresh.
class EmaState {
 public:
  EmaState() = default;

  EmaState(double gamma, const std::vector<Var>& params) : gamma_(gamma) {
    check(gamma >= 0.0 && gamma <= 1.0, "ema: gamma must lie in [0, 1]");
    for (const auto& p : params) smoothed_.push_back(p.value());
  }

  void update(const std::vector<Var>& params) {
    check(params.size() == smoothed_.size(), "ema: parameter count changed");
    for (size_t i = 0; i < params.size(); ++i) {
      check(params[i].rows() == smoothed_[i].rows() && params[i].cols() == smoothed_[i].cols(),
            "ema: parameter shape changed");
      smoothed_[i] = gamma_ * smoothed_[i] + (1.0 - gamma_) * params[i].value();
    }
  }

  const std::vector<Matrix>& smoothed() const { return smoothed_; }

  void write_to(std::vector<Var>& params) const {
    check(params.size() == smoothed_.size(), "ema: parameter count changed");
    for (size_t i = 0; i < params.size(); ++i) params[i].mutable_value() = smoothed_[i];
  }

 private:
  double gamma_ = 0.0;
  std::vector<Matrix> smoothed_;
};

}  // namespace ide::ad
