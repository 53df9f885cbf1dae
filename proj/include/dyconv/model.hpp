// SPDX-License-Identifier: Apache-2.0
//
// Trainable models: the desk-scale DY-CNN and the dynamic perceptron used for
// the XOR demonstration. Both expose their dynamic layers grouped into
// stages (runs of layers sharing an input resolution) for inspection.
#pragma once

#include <memory>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "dyconv/cost.hpp"
#include "dyconv/dynamic.hpp"
#include "dyconv/tensor.hpp"

namespace dyconv {

struct ForwardContext {
  bool training = false;
  AggregationMode mode = AggregationMode::Attention;
  /// One flag per stage; false stages aggregate with uniform weights. Empty = all enabled.
  std::vector<bool> stage_mask;
  Rng* rng = nullptr;
  /// When set, receives the raw attention rows of every dynamic layer, in layer order.
  std::vector<std::vector<double>>* attention_sinks = nullptr;
};

struct StageInfo {
  std::size_t in_h = 0;
  std::size_t in_w = 0;
  std::vector<std::string> layers;
  std::vector<std::size_t> dynamic_layers;  // indices into the model's dynamic layer list
};

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

class Model {
 public:
  virtual ~Model() = default;

  virtual Tensor forward(const Tensor& x, const ForwardContext& ctx) = 0;
  virtual std::vector<Tensor> parameters() const = 0;
  /// Parameters and buffers (BN running statistics) by stable name.
  virtual NamedTensors state() const = 0;
  virtual void load_state(const NamedTensors& state) = 0;

  virtual void set_temperature(double tau) = 0;
  virtual double temperature() const = 0;
  virtual std::size_t kernel_count() const = 0;
  virtual std::size_t num_classes() const = 0;
  virtual Shape input_shape() const = 0;
  virtual std::size_t dynamic_layer_count() const = 0;
  virtual std::vector<StageInfo> stages() const = 0;
  virtual nlohmann::json config_json() const = 0;
};

/// Static conv -> BN -> activation.
struct ConvBnAct {
  Tensor weight;
  Tensor gamma;
  Tensor beta;
  BatchNormState bn;
  ConvGeometry geometry;
  Activation activation = Activation::Relu;

  ConvBnAct(std::size_t c_in, std::size_t c_out, std::size_t kernel, std::size_t stride, Activation act,
            Rng& rng, DType dtype);
  Tensor forward(const Tensor& x, bool training);
};

struct DyCnnConfig {
  struct Block {
    std::size_t channels = 16;
    std::size_t stride = 1;
  };
  std::size_t in_channels = 1;
  std::size_t in_h = 28;
  std::size_t in_w = 28;
  std::size_t num_classes = 10;
  std::size_t stem_channels = 8;
  std::size_t stem_stride = 1;
  std::vector<Block> blocks{{16, 2}, {24, 2}, {32, 1}};
  std::size_t kernel_count = 4;
  bool dynamic = true;
  Activation activation = Activation::Relu;
  double temperature = 1.0;
  DType dtype = DType::F32;

  static DyCnnConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

/// conv stem -> dynamic 3x3 blocks -> GAP -> FC. With dynamic=false every
/// block is a static ConvBnAct.
class DyCnn : public Model {
 public:
  DyCnn(const DyCnnConfig& config, std::uint64_t seed);

  Tensor forward(const Tensor& x, const ForwardContext& ctx) override;
  std::vector<Tensor> parameters() const override;
  NamedTensors state() const override;
  void load_state(const NamedTensors& state) override;
  void set_temperature(double tau) override;
  double temperature() const override;
  std::size_t kernel_count() const override { return config_.dynamic ? config_.kernel_count : 1; }
  std::size_t num_classes() const override { return config_.num_classes; }
  Shape input_shape() const override { return {config_.in_channels, config_.in_h, config_.in_w}; }
  std::size_t dynamic_layer_count() const override { return config_.dynamic ? dynamic_.size() : 0; }
  std::vector<StageInfo> stages() const override;
  nlohmann::json config_json() const override;

  /// Layer description consumed by the analytic cost model.
  NetworkSpec network_spec() const;
  const DyCnnConfig& config() const { return config_; }
  std::vector<DynamicConv2d>& dynamic_layers() { return dynamic_; }

 private:
  DyCnn(const DyCnnConfig& config, Rng rng);

  DyCnnConfig config_;
  ConvBnAct stem_;
  std::vector<DynamicConv2d> dynamic_;
  std::vector<ConvBnAct> static_blocks_;
  Tensor fc_weight_;
  Tensor fc_bias_;
};

struct PerceptronConfig {
  std::size_t in = 2;
  std::size_t out = 2;
  std::size_t kernel_count = 2;
  double temperature = 1.0;
  DType dtype = DType::F64;

  static PerceptronConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

/// y = sum_k pi_k(x) (W_k x + b_k) with pi = softmax(A x + c, tau).
class DynamicPerceptron : public Model {
 public:
  DynamicPerceptron(const PerceptronConfig& config, std::uint64_t seed);

  Tensor forward(const Tensor& x, const ForwardContext& ctx) override;
  std::vector<Tensor> parameters() const override;
  NamedTensors state() const override;
  void load_state(const NamedTensors& state) override;
  void set_temperature(double tau) override { temperature_ = tau; }
  double temperature() const override { return temperature_; }
  std::size_t kernel_count() const override { return config_.kernel_count; }
  std::size_t num_classes() const override { return config_.out; }
  Shape input_shape() const override { return {config_.in}; }
  std::size_t dynamic_layer_count() const override { return 1; }
  std::vector<StageInfo> stages() const override;
  nlohmann::json config_json() const override;

 private:
  PerceptronConfig config_;
  double temperature_;
  Tensor attention_weight_;  // [K, in]
  Tensor attention_bias_;    // [K]
  Tensor weights_;           // [K, out, in, 1, 1]
  Tensor biases_;            // [K, out]
};

/// Builds a model from {"kind": "dycnn" | "perceptron", ...}.
std::unique_ptr<Model> make_model(const nlohmann::json& config, std::uint64_t seed);

/// FNV-1a over the bit patterns of every state tensor, for detecting mutation.
std::uint64_t state_checksum(const Model& model);

}  // namespace dyconv
