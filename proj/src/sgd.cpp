// SPDX-License-Identifier: Apache-2.0
#include "dyconv/sgd.hpp"

#include "dyconv/error.hpp"

namespace dyconv {

void sgd_step(std::span<double> param, std::span<const double> grad, std::span<double> velocity,
              const SgdHyper& hyper) {
  if (velocity.size() != param.size() || (!grad.empty() && grad.size() != param.size())) {
    throw ShapeError("sgd_step: parameter, gradient and momentum buffer sizes differ");
  }
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double g = grad.empty() ? 0.0 : grad[i];
    velocity[i] = hyper.momentum * velocity[i] + g + hyper.weight_decay * param[i];
    param[i] -= hyper.lr * velocity[i];
  }
}

SgdOptimizer::SgdOptimizer(std::vector<Tensor> params) : params_(std::move(params)) {
  velocity_.reserve(params_.size());
  for (const auto& p : params_) velocity_.emplace_back(p.size(), 0.0);
}

void SgdOptimizer::step(const SgdHyper& hyper) {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& p = params_[i];
    sgd_step(p.mutable_data(), p.grad(), velocity_[i], hyper);
    detail::round_to(p.dtype(), p.mutable_data());
    p.zero_grad();
  }
}

void SgdOptimizer::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

}  // namespace dyconv
