// SPDX-License-Identifier: Apache-2.0
//
// Differentiable primitives. Every op records onto the active Tape when any
// input requires grad; outputs take the promoted dtype of their inputs.
#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "dyconv/tensor.hpp"

namespace dyconv {

struct ConvGeometry {
  std::size_t stride = 1;
  std::size_t padding = 0;
  std::size_t groups = 1;
};

/// Output extent of a convolution along one spatial axis.
std::size_t conv_output_extent(std::size_t in, std::size_t kernel, std::size_t stride,
                               std::size_t padding);

/// input [N, C_in, H, W], weight [C_out, C_in/groups, Dk, Dk], bias [C_out].
Tensor conv2d(const Tensor& input, const Tensor& weight, const std::optional<Tensor>& bias,
              ConvGeometry geometry);

/// Same as conv2d but sample n is convolved with weight[n] / bias[n]:
/// weight [N, C_out, C_in/groups, Dk, Dk], bias [N, C_out].
Tensor conv2d_per_sample(const Tensor& input, const Tensor& weight,
                         const std::optional<Tensor>& bias, ConvGeometry geometry);

/// y = x W^T + b with x [N, C_in], weight [C_out, C_in], bias [C_out].
Tensor fully_connected(const Tensor& input, const Tensor& weight,
                       const std::optional<Tensor>& bias);

/// [N, C, H, W] -> [N, C].
Tensor global_avg_pool(const Tensor& input);

Tensor relu(const Tensor& input);
Tensor relu6(const Tensor& input);

struct BatchNormState {
  std::vector<double> running_mean;  // empty until initialized
  std::vector<double> running_var;
  double momentum = 0.1;
  double eps = 1e-5;

  static BatchNormState with_defaults(std::size_t channels);
  bool initialized() const { return !running_mean.empty(); }
};

enum class BnMode { Train, Eval };

/// Per-channel normalization of [N, C, ...]. Train mode normalizes with batch
/// statistics and folds them into the running stats; eval mode uses the
/// running stats and throws StateError when they are missing.
Tensor batch_norm(const Tensor& input, const Tensor& gamma, const Tensor& beta,
                  BatchNormState& state, BnMode mode);

/// Row-wise softmax of z / temperature over [N, K].
Tensor softmax_with_temperature(const Tensor& logits, double temperature);

/// Mean over the batch of -log softmax(logits)[label].
Tensor cross_entropy_loss(const Tensor& logits, std::span<const int> labels);

Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);

/// Shannon entropy (nats) of one probability row.
double entropy(std::span<const double> probabilities);

}  // namespace dyconv
