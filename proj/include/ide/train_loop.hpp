#pragma once

#include "ide/autodiff.hpp"
#include "ide/optim.hpp"

#include <string>
#include <vector>

namespace ide {

// Uniform-with-replacement minibatch indices.
inline std::vector<Eigen::Index> sample_batch(Eigen::Index n, int batch, Rng& rng) {
  std::vector<Eigen::Index> idx(static_cast<size_t>(batch));
  for (auto& i : idx) i = rng.index(n);
  return idx;
}

// Generic minibatch descent: make_loss builds a fresh scalar graph from the
// sampled row indices. Throws naming the iteration when the loss diverges.
template <typename LossFn>
void minibatch_descent(ad::Optimizer& opt, std::vector<ad::Var>& params, LossFn&& make_loss,
                       int n_iter, Eigen::Index n, int batch, Rng& rng,
                       const std::string& what) {
  for (int it = 0; it < n_iter; ++it) {
    const auto idx = sample_batch(n, batch, rng);
    ad::Var loss = make_loss(idx);
    if (!std::isfinite(loss.value()(0, 0)))
      throw std::runtime_error(what + ": loss diverged (non-finite) at iteration " +
                               std::to_string(it));
    ad::backward(loss);
    opt.step(params);
  }
}

}  // namespace ide
