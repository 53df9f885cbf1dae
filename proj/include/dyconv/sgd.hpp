// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>
#include <vector>

#include "dyconv/tensor.hpp"

namespace dyconv {

struct SgdHyper {
  double lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 0.0;
};

/// v <- momentum * v + grad + weight_decay * param; param <- param - lr * v.
/// An empty `grad` is treated as zero.
void sgd_step(std::span<double> param, std::span<const double> grad, std::span<double> velocity,
              const SgdHyper& hyper);

/// Momentum SGD over a fixed parameter list; consumes and clears gradients.
class SgdOptimizer {
 public:
  explicit SgdOptimizer(std::vector<Tensor> params);

  void step(const SgdHyper& hyper);
  void zero_grad();
  const std::vector<Tensor>& params() const { return params_; }

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> velocity_;
};

}  // namespace dyconv
