// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <random>

#include "dyconv/tensor.hpp"

namespace dyconv {

/// Trainable tensor with entries drawn from U(-bound, bound).
inline Tensor uniform_parameter(Shape shape, double bound, std::mt19937_64& rng,
                                DType dtype = DType::F32) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> values(numel(shape));
  for (auto& v : values) v = dist(rng);
  return Tensor::from(std::move(shape), std::move(values), dtype, true);
}

/// He-uniform bound for ReLU networks.
inline double kaiming_bound(std::size_t fan_in) {
  return std::sqrt(6.0 / static_cast<double>(fan_in));
}

}  // namespace dyconv
