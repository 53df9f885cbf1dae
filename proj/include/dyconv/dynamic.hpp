// SPDX-License-Identifier: Apache-2.0
//
// Dynamic convolution: K parallel kernels aggregated per sample by a
// squeeze-style attention branch with a temperature softmax.
#pragma once

#include <array>
#include <cstddef>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "dyconv/ops.hpp"
#include "dyconv/tensor.hpp"

namespace dyconv {

using Rng = std::mt19937_64;

/// Width of the attention bottleneck: C_in / 4, never below one unit.
std::size_t reduction_dim(std::size_t c_in);

/// GAP -> FC -> ReLU -> FC -> softmax(z / temperature).
struct AttentionBranch {
  Tensor fc1_weight;  // [r, C_in]
  Tensor fc1_bias;    // [r]
  Tensor fc2_weight;  // [K, r]
  Tensor fc2_bias;    // [K]
  double temperature = 1.0;

  /// fc1 is fan-in uniform, fc2 starts at zero so initial attention is uniform.
  static AttentionBranch create(std::size_t c_in, std::size_t kernel_count, Rng& rng,
                                DType dtype = DType::F32);

  std::size_t in_channels() const { return fc1_weight.dim(1); }
  std::size_t kernel_count() const { return fc2_weight.dim(0); }

  /// x [N, C_in, H, W] -> attention [N, K].
  Tensor forward(const Tensor& x) const;
  std::vector<Tensor> parameters() const { return {fc1_weight, fc1_bias, fc2_weight, fc2_bias}; }
};

struct AggregatedKernels {
  Tensor weight;  // [N, C_out, C_in/g, Dk, Dk]
  Tensor bias;    // [N, C_out]
};

/// Per-sample convex combination of the kernel bank. `attention` rows must lie
/// on the simplex (sum within 1e-5, no negative entries) or InvariantError.
AggregatedKernels aggregate_kernels(const Tensor& attention, const Tensor& kernels,
                                    const Tensor& biases);

enum class AggregationMode { Attention, Average, MaxAttention, ShufflePerSample, ShuffleAcrossSamples };

inline constexpr std::array<AggregationMode, 5> kAllAggregationModes{
    AggregationMode::Attention, AggregationMode::Average, AggregationMode::MaxAttention,
    AggregationMode::ShufflePerSample, AggregationMode::ShuffleAcrossSamples};

const char* to_string(AggregationMode mode);
AggregationMode parse_aggregation_mode(std::string_view name);

/// Permutation of [0, n) with no fixed point, by rejection sampling. n >= 2.
std::vector<std::size_t> random_derangement(std::size_t n, Rng& rng);

/// Rewrites attention [N, K] according to `mode`. Non-Attention modes return
/// a fresh tensor with no tape history. `sample_permutation` (ShuffleAcrossSamples)
/// maps row n to the source row whose attention it receives.
Tensor apply_aggregation_mode(const Tensor& attention, AggregationMode mode, Rng& rng,
                              const std::vector<std::size_t>& sample_permutation = {});

enum class Activation { Relu, Relu6, None };

const char* to_string(Activation act);
Activation parse_activation(std::string_view name);
Tensor activate(const Tensor& x, Activation act);

struct DynamicConvConfig {
  std::size_t c_in = 0;
  std::size_t c_out = 0;
  std::size_t kernel = 3;
  std::size_t stride = 1;
  std::size_t padding = 1;
  std::size_t groups = 1;
  std::size_t kernel_count = 4;
  Activation activation = Activation::Relu;
  double temperature = 1.0;
};

struct DynamicForwardOptions {
  bool training = false;
  AggregationMode mode = AggregationMode::Attention;
  Rng* rng = nullptr;                                      // shuffle modes
  const std::vector<std::size_t>* sample_permutation = nullptr;  // ShuffleAcrossSamples
  std::vector<double>* attention_sink = nullptr;           // receives raw attention rows
};

/// y_n = act(BN(conv2d(x_n, sum_k pi_k(x_n) W_k, sum_k pi_k(x_n) b_k))).
class DynamicConv2d {
 public:
  DynamicConv2d(const DynamicConvConfig& config, Rng& rng, DType dtype = DType::F32);

  Tensor forward(const Tensor& x, const DynamicForwardOptions& options = {});

  const DynamicConvConfig& config() const { return config_; }
  ConvGeometry geometry() const { return {config_.stride, config_.padding, config_.groups}; }
  void set_temperature(double tau);
  double temperature() const { return attention.temperature; }

  std::vector<Tensor> parameters() const;

  Tensor kernels;  // [K, C_out, C_in/g, Dk, Dk]
  Tensor biases;   // [K, C_out]
  AttentionBranch attention;
  Tensor bn_gamma;
  Tensor bn_beta;
  BatchNormState bn;

 private:
  DynamicConvConfig config_;
};

/// A linear map y = W^T x + b with W stored [in][out].
struct LinearFunction {
  std::size_t in = 0;
  std::size_t out = 0;
  std::vector<double> weight;
  std::vector<double> bias;
};

/// g(sum_k pi_k W_k^T x + sum_k pi_k b_k). InvariantError unless pi is on the
/// simplex within 1e-6.
std::vector<double> dynamic_perceptron_forward(const std::vector<LinearFunction>& functions,
                                               std::span<const double> attention,
                                               std::span<const double> x,
                                               Activation activation = Activation::None);

/// The two hand-built linear functions of the single-layer XOR solution.
std::vector<LinearFunction> xor_dynamic_functions();
/// Attention for the hand-built XOR solution: [x2, 1 - x2].
std::array<double, 2> xor_dynamic_attention(std::span<const double> x);
/// First output of the hand-built single-layer dynamic perceptron.
double dynamic_perceptron_xor(std::span<const double> x);

/// w^T max(0, W^T x + b) with the classic two-layer XOR constants.
double static_perceptron_xor(std::span<const double> x);

}  // namespace dyconv
