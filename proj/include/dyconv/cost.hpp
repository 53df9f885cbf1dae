// SPDX-License-Identifier: Apache-2.0
//
// Analytic Mult-Adds accounting for static and dynamic networks.
//
// Counting convention: one multiply-accumulate is one MAdd. Convolutions are
// counted over output positions, the classifier FC is counted, and BN,
// activations, residual adds and pooling outside an attention branch are
// free. A dynamic layer adds the cost of its attention branch
// (H*W*C_in + C_in*r + r*K, r = max(C_in/4, 1)) and of kernel aggregation
// (K*C_in/g*C_out*Dk^2 + K*C_out).
#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace dyconv {

enum class LayerKind { Conv, DepthwiseConv, FullyConnected, Pool, BatchNorm, Activation };

const char* to_string(LayerKind kind);
LayerKind parse_layer_kind(std::string_view name);

struct LayerSpec {
  std::string name;
  LayerKind kind = LayerKind::Conv;
  std::size_t c_in = 0;
  std::size_t c_out = 0;
  std::size_t kernel = 1;
  std::size_t stride = 1;
  std::size_t padding = 0;
  std::size_t groups = 1;
  std::size_t in_h = 1;
  std::size_t in_w = 1;
  bool dynamic = false;  // eligible for (and, in network_madds, turned into) a dynamic layer
  std::size_t kernel_count = 1;

  bool is_conv() const { return kind == LayerKind::Conv || kind == LayerKind::DepthwiseConv; }
  std::size_t out_h() const;
  std::size_t out_w() const;
};

struct NetworkSpec {
  std::string name;
  std::size_t in_c = 3;
  std::size_t in_h = 224;
  std::size_t in_w = 224;
  double width_multiplier = 1.0;
  std::vector<LayerSpec> layers;

  /// Checks the channel/resolution chain and that the first conv is static.
  void validate() const;
};

struct LayerCost {
  std::string name;
  LayerKind kind = LayerKind::Conv;
  bool dynamic = false;
  std::uint64_t conv_madds = 0;  // base cost: convolution or fully connected
  std::uint64_t attention_madds = 0;
  std::uint64_t aggregation_madds = 0;
  double constraint_ratio = 0.0;  // (attention + aggregation) / conv, 0 for static layers
};

struct CostReport {
  std::string network;
  bool dynamic = false;
  std::size_t kernel_count = 0;
  std::vector<LayerCost> layers;
  std::uint64_t conv_total = 0;
  std::uint64_t attention_total = 0;
  std::uint64_t aggregation_total = 0;

  std::uint64_t total() const { return conv_total + attention_total + aggregation_total; }
  /// Extra cost of the dynamic parts relative to the static cost.
  double overall_constraint_ratio() const;
};

/// H'*W'*(C_in/g)*C_out*Dk^2. ConfigError for non-convolution layers.
std::uint64_t conv_madds(const LayerSpec& spec);
/// Conv cost, C_in*C_out for fully connected, zero for free layers.
std::uint64_t base_madds(const LayerSpec& spec);
/// ConfigError unless spec.dynamic.
std::uint64_t attention_madds(const LayerSpec& spec);
std::uint64_t aggregation_madds(const LayerSpec& spec);
/// (attention + aggregation) / base cost of a dynamic layer with K kernels.
double check_constraint(const LayerSpec& spec, std::size_t kernel_count);

/// Static report when `dynamic` is false; otherwise every dynamic-eligible
/// layer gets `kernel_count` kernels.
CostReport network_madds(const NetworkSpec& net, bool dynamic, std::size_t kernel_count);

/// Round channels to the nearest multiple of `divisor` (>= min_value), never
/// dropping below 90% of the requested width.
std::size_t make_divisible(double value, std::size_t divisor = 8, std::size_t min_value = 8);

/// Standard MobileNetV2 inverted-residual stack. The stem and the final 1x1
/// feature conv are static; every bottleneck conv is dynamic-eligible.
NetworkSpec mobilenet_v2_spec(double width_multiplier, std::size_t resolution = 224,
                              std::size_t num_classes = 1000);

NetworkSpec network_from_json(const nlohmann::json& doc);
nlohmann::json network_to_json(const NetworkSpec& net);
nlohmann::json report_to_json(const CostReport& report);
/// Aligned-column text rendering of a report.
std::string report_to_table(const CostReport& report);

}  // namespace dyconv
