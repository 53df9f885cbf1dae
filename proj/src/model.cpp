// SPDX-License-Identifier: Apache-2.0
#include "dyconv/model.hpp"

#include <cstring>
#include <map>

#include "dyconv/error.hpp"
#include "dyconv/init.hpp"
#include "dyconv/ops.hpp"
#include "json_util.hpp"

namespace dyconv {

namespace {

using json_util::reject_unknown;
using json_util::take;
using json_util::take_or;

Tensor buffer_tensor(const std::vector<double>& values) {
  return Tensor::from({values.size()}, values, DType::F64);
}

void add_bn(NamedTensors& out, const std::string& prefix, const Tensor& gamma, const Tensor& beta,
            const BatchNormState& bn) {
  out.emplace_back(prefix + ".gamma", gamma);
  out.emplace_back(prefix + ".beta", beta);
  out.emplace_back(prefix + ".running_mean", buffer_tensor(bn.running_mean));
  out.emplace_back(prefix + ".running_var", buffer_tensor(bn.running_var));
}

class StateLookup {
 public:
  explicit StateLookup(const NamedTensors& state) {
    for (const auto& [name, t] : state) by_name_[name] = t;
  }

  void copy_into(const std::string& name, Tensor& target) const {
    const Tensor& src = find(name, target.shape());
    auto dst = target.mutable_data();
    std::copy(src.data().begin(), src.data().end(), dst.begin());
    detail::round_to(target.dtype(), dst);
  }

  void copy_into(const std::string& name, std::vector<double>& target) const {
    const Tensor& src = find(name, {target.size()});
    target.assign(src.data().begin(), src.data().end());
  }

  void load_bn(const std::string& prefix, Tensor& gamma, Tensor& beta, BatchNormState& bn) const {
    copy_into(prefix + ".gamma", gamma);
    copy_into(prefix + ".beta", beta);
    if (!bn.initialized()) bn = BatchNormState::with_defaults(gamma.size());
    copy_into(prefix + ".running_mean", bn.running_mean);
    copy_into(prefix + ".running_var", bn.running_var);
  }

 private:
  const Tensor& find(const std::string& name, const Shape& shape) const {
    auto it = by_name_.find(name);
    if (it == by_name_.end()) throw ShapeError("state is missing tensor '" + name + "'");
    if (it->second.shape() != shape) {
      throw ShapeError("tensor '" + name + "' has shape " + shape_string(it->second.shape()) + ", model expects " +
                       shape_string(shape));
    }
    return it->second;
  }

  std::map<std::string, Tensor> by_name_;
};

std::vector<bool> resolve_mask(const ForwardContext& ctx, std::size_t stage_count) {
  if (ctx.stage_mask.empty()) return std::vector<bool>(stage_count, true);
  if (ctx.stage_mask.size() != stage_count) {
    throw ConfigError("stage mask has " + std::to_string(ctx.stage_mask.size()) + " entries, model has " +
                      std::to_string(stage_count) + " stages");
  }
  return ctx.stage_mask;
}

void check_input(const Tensor& x, const Shape& sample) {
  Shape expected{x.rank() > 0 ? x.dim(0) : 0};
  expected.insert(expected.end(), sample.begin(), sample.end());
  if (x.shape() != expected) {
    throw ShapeError("model expects samples of shape " + shape_string(sample) + ", got batch " +
                     shape_string(x.shape()));
  }
}

}  // namespace

ConvBnAct::ConvBnAct(std::size_t c_in, std::size_t c_out, std::size_t kernel, std::size_t stride,
                     Activation act, Rng& rng, DType dtype)
    : weight(uniform_parameter({c_out, c_in, kernel, kernel}, kaiming_bound(c_in * kernel * kernel), rng, dtype)),
      gamma(Tensor::full({c_out}, 1.0, dtype, true)),
      beta(Tensor::zeros({c_out}, dtype, true)),
      bn(BatchNormState::with_defaults(c_out)),
      geometry{stride, kernel / 2, 1},
      activation(act) {}

Tensor ConvBnAct::forward(const Tensor& x, bool training) {
  Tensor y = conv2d(x, weight, std::nullopt, geometry);
  y = batch_norm(y, gamma, beta, bn, training ? BnMode::Train : BnMode::Eval);
  return activate(y, activation);
}

DyCnnConfig DyCnnConfig::from_json(const nlohmann::json& j) {
  reject_unknown(j, {"kind", "in_channels", "in_h", "in_w", "num_classes", "stem_channels", "stem_stride", "blocks",
                     "K", "dynamic", "activation", "temperature", "dtype"},
                 "model");
  DyCnnConfig c;
  c.in_channels = take_or<std::size_t>(j, "in_channels", c.in_channels);
  c.in_h = take_or<std::size_t>(j, "in_h", c.in_h);
  c.in_w = take_or<std::size_t>(j, "in_w", c.in_w);
  c.num_classes = take_or<std::size_t>(j, "num_classes", c.num_classes);
  c.stem_channels = take_or<std::size_t>(j, "stem_channels", c.stem_channels);
  c.stem_stride = take_or<std::size_t>(j, "stem_stride", c.stem_stride);
  if (j.contains("blocks")) {
    c.blocks.clear();
    for (const auto& b : j.at("blocks")) {
      reject_unknown(b, {"channels", "stride"}, "model.blocks[]");
      c.blocks.push_back({take<std::size_t>(b, "channels"), take_or<std::size_t>(b, "stride", 1)});
    }
  }
  c.kernel_count = take_or<std::size_t>(j, "K", c.kernel_count);
  c.dynamic = take_or<bool>(j, "dynamic", c.dynamic);
  c.activation = parse_activation(take_or<std::string>(j, "activation", to_string(c.activation)));
  c.temperature = take_or<double>(j, "temperature", c.temperature);
  c.dtype = json_util::parse_dtype(take_or<std::string>(j, "dtype", to_string(c.dtype)));
  if (c.kernel_count == 0) throw ConfigError("model K must be at least 1");
  if (c.blocks.empty()) throw ConfigError("model needs at least one block");
  return c;
}

nlohmann::json DyCnnConfig::to_json() const {
  nlohmann::json blocks_json = nlohmann::json::array();
  for (const auto& b : blocks) blocks_json.push_back({{"channels", b.channels}, {"stride", b.stride}});
  return {{"kind", "dycnn"},
          {"in_channels", in_channels},
          {"in_h", in_h},
          {"in_w", in_w},
          {"num_classes", num_classes},
          {"stem_channels", stem_channels},
          {"stem_stride", stem_stride},
          {"blocks", blocks_json},
          {"K", kernel_count},
          {"dynamic", dynamic},
          {"activation", to_string(activation)},
          {"temperature", temperature},
          {"dtype", to_string(dtype)}};
}

DyCnn::DyCnn(const DyCnnConfig& config, std::uint64_t seed) : DyCnn(config, Rng(seed)) {}

DyCnn::DyCnn(const DyCnnConfig& config, Rng rng)
    : config_(config),
      stem_(config.in_channels, config.stem_channels, 3, config.stem_stride, config.activation, rng, config.dtype) {
  std::size_t c = config.stem_channels;
  for (const auto& b : config.blocks) {
    if (config.dynamic) {
      DynamicConvConfig dc;
      dc.c_in = c;
      dc.c_out = b.channels;
      dc.kernel = 3;
      dc.stride = b.stride;
      dc.padding = 1;
      dc.kernel_count = config.kernel_count;
      dc.activation = config.activation;
      dc.temperature = config.temperature;
      dynamic_.emplace_back(dc, rng, config.dtype);
    } else {
      static_blocks_.emplace_back(c, b.channels, 3, b.stride, config.activation, rng, config.dtype);
    }
    c = b.channels;
  }
  fc_weight_ = uniform_parameter({config.num_classes, c}, 1.0 / std::sqrt(static_cast<double>(c)), rng, config.dtype);
  fc_bias_ = Tensor::zeros({config.num_classes}, config.dtype, true);
}

Tensor DyCnn::forward(const Tensor& x, const ForwardContext& ctx) {
  check_input(x, input_shape());
  const auto stage_list = stages();
  const auto mask = resolve_mask(ctx, stage_list.size());
  std::vector<bool> layer_enabled(dynamic_.size(), true);
  for (std::size_t s = 0; s < stage_list.size(); ++s)
    for (auto idx : stage_list[s].dynamic_layers) layer_enabled[idx] = mask[s];

  Rng fallback(0);
  Rng& rng = ctx.rng ? *ctx.rng : fallback;
  std::vector<std::size_t> permutation;
  if (ctx.mode == AggregationMode::ShuffleAcrossSamples && config_.dynamic) {
    if (x.dim(0) < 2) throw ConfigError("shuffling attention across samples needs a batch of at least 2");
    permutation = random_derangement(x.dim(0), rng);
  }
  if (ctx.attention_sinks) ctx.attention_sinks->assign(dynamic_layer_count(), {});

  Tensor h = stem_.forward(x, ctx.training);
  if (config_.dynamic) {
    for (std::size_t i = 0; i < dynamic_.size(); ++i) {
      DynamicForwardOptions opts;
      opts.training = ctx.training;
      opts.mode = layer_enabled[i] ? ctx.mode : AggregationMode::Average;
      opts.rng = &rng;
      opts.sample_permutation = permutation.empty() ? nullptr : &permutation;
      opts.attention_sink = ctx.attention_sinks ? &(*ctx.attention_sinks)[i] : nullptr;
      h = dynamic_[i].forward(h, opts);
    }
  } else {
    for (auto& block : static_blocks_) h = block.forward(h, ctx.training);
  }
  return fully_connected(global_avg_pool(h), fc_weight_, fc_bias_);
}

std::vector<Tensor> DyCnn::parameters() const {
  std::vector<Tensor> out{stem_.weight, stem_.gamma, stem_.beta};
  for (const auto& layer : dynamic_)
    for (auto& p : layer.parameters()) out.push_back(p);
  for (const auto& block : static_blocks_) {
    out.push_back(block.weight);
    out.push_back(block.gamma);
    out.push_back(block.beta);
  }
  out.push_back(fc_weight_);
  out.push_back(fc_bias_);
  return out;
}

NamedTensors DyCnn::state() const {
  NamedTensors out;
  out.emplace_back("stem.weight", stem_.weight);
  add_bn(out, "stem.bn", stem_.gamma, stem_.beta, stem_.bn);
  for (std::size_t i = 0; i < dynamic_.size(); ++i) {
    const auto& l = dynamic_[i];
    const std::string p = "block" + std::to_string(i);
    out.emplace_back(p + ".kernels", l.kernels);
    out.emplace_back(p + ".biases", l.biases);
    out.emplace_back(p + ".attention.fc1.weight", l.attention.fc1_weight);
    out.emplace_back(p + ".attention.fc1.bias", l.attention.fc1_bias);
    out.emplace_back(p + ".attention.fc2.weight", l.attention.fc2_weight);
    out.emplace_back(p + ".attention.fc2.bias", l.attention.fc2_bias);
    add_bn(out, p + ".bn", l.bn_gamma, l.bn_beta, l.bn);
  }
  for (std::size_t i = 0; i < static_blocks_.size(); ++i) {
    const auto& b = static_blocks_[i];
    const std::string p = "block" + std::to_string(i);
    out.emplace_back(p + ".weight", b.weight);
    add_bn(out, p + ".bn", b.gamma, b.beta, b.bn);
  }
  out.emplace_back("fc.weight", fc_weight_);
  out.emplace_back("fc.bias", fc_bias_);
  return out;
}

void DyCnn::load_state(const NamedTensors& state) {
  StateLookup lookup(state);
  lookup.copy_into("stem.weight", stem_.weight);
  lookup.load_bn("stem.bn", stem_.gamma, stem_.beta, stem_.bn);
  for (std::size_t i = 0; i < dynamic_.size(); ++i) {
    auto& l = dynamic_[i];
    const std::string p = "block" + std::to_string(i);
    lookup.copy_into(p + ".kernels", l.kernels);
    lookup.copy_into(p + ".biases", l.biases);
    lookup.copy_into(p + ".attention.fc1.weight", l.attention.fc1_weight);
    lookup.copy_into(p + ".attention.fc1.bias", l.attention.fc1_bias);
    lookup.copy_into(p + ".attention.fc2.weight", l.attention.fc2_weight);
    lookup.copy_into(p + ".attention.fc2.bias", l.attention.fc2_bias);
    lookup.load_bn(p + ".bn", l.bn_gamma, l.bn_beta, l.bn);
  }
  for (std::size_t i = 0; i < static_blocks_.size(); ++i) {
    auto& b = static_blocks_[i];
    const std::string p = "block" + std::to_string(i);
    lookup.copy_into(p + ".weight", b.weight);
    lookup.load_bn(p + ".bn", b.gamma, b.beta, b.bn);
  }
  lookup.copy_into("fc.weight", fc_weight_);
  lookup.copy_into("fc.bias", fc_bias_);
}

void DyCnn::set_temperature(double tau) {
  if (!(tau > 0.0)) throw ConfigError("temperature must be positive");
  config_.temperature = tau;
  for (auto& l : dynamic_) l.set_temperature(tau);
}

double DyCnn::temperature() const { return config_.temperature; }

std::vector<StageInfo> DyCnn::stages() const {
  std::vector<StageInfo> out;
  auto place = [&](std::size_t h, std::size_t w, const std::string& name, std::optional<std::size_t> dyn) {
    if (out.empty() || out.back().in_h != h || out.back().in_w != w) out.push_back(StageInfo{h, w, {}, {}});
    out.back().layers.push_back(name);
    if (dyn) out.back().dynamic_layers.push_back(*dyn);
  };
  std::size_t h = config_.in_h, w = config_.in_w;
  place(h, w, "stem", std::nullopt);
  h = conv_output_extent(h, 3, config_.stem_stride, 1);
  w = conv_output_extent(w, 3, config_.stem_stride, 1);
  for (std::size_t i = 0; i < config_.blocks.size(); ++i) {
    place(h, w, "block" + std::to_string(i), config_.dynamic ? std::optional<std::size_t>(i) : std::nullopt);
    h = conv_output_extent(h, 3, config_.blocks[i].stride, 1);
    w = conv_output_extent(w, 3, config_.blocks[i].stride, 1);
  }
  return out;
}

nlohmann::json DyCnn::config_json() const { return config_.to_json(); }

NetworkSpec DyCnn::network_spec() const {
  NetworkSpec net;
  net.name = config_.dynamic ? "dycnn" : "cnn";
  net.in_c = config_.in_channels;
  net.in_h = config_.in_h;
  net.in_w = config_.in_w;
  std::size_t c = config_.in_channels, h = config_.in_h, w = config_.in_w;
  auto conv = [&](const std::string& name, std::size_t c_out, std::size_t stride, bool dynamic) {
    LayerSpec l;
    l.name = name;
    l.kind = LayerKind::Conv;
    l.c_in = c;
    l.c_out = c_out;
    l.kernel = 3;
    l.stride = stride;
    l.padding = 1;
    l.in_h = h;
    l.in_w = w;
    l.dynamic = dynamic;
    l.kernel_count = dynamic ? config_.kernel_count : 1;
    net.layers.push_back(l);
    c = c_out;
    h = l.out_h();
    w = l.out_w();
  };
  conv("stem", config_.stem_channels, config_.stem_stride, false);
  for (std::size_t i = 0; i < config_.blocks.size(); ++i)
    conv("block" + std::to_string(i), config_.blocks[i].channels, config_.blocks[i].stride, config_.dynamic);
  LayerSpec pool;
  pool.name = "pool";
  pool.kind = LayerKind::Pool;
  pool.c_in = pool.c_out = c;
  pool.in_h = h;
  pool.in_w = w;
  net.layers.push_back(pool);
  LayerSpec fc;
  fc.name = "classifier";
  fc.kind = LayerKind::FullyConnected;
  fc.c_in = c;
  fc.c_out = config_.num_classes;
  net.layers.push_back(fc);
  return net;
}

PerceptronConfig PerceptronConfig::from_json(const nlohmann::json& j) {
  reject_unknown(j, {"kind", "in", "out", "K", "temperature", "dtype"}, "model");
  PerceptronConfig c;
  c.in = take_or<std::size_t>(j, "in", c.in);
  c.out = take_or<std::size_t>(j, "out", c.out);
  c.kernel_count = take_or<std::size_t>(j, "K", c.kernel_count);
  c.temperature = take_or<double>(j, "temperature", c.temperature);
  c.dtype = json_util::parse_dtype(take_or<std::string>(j, "dtype", to_string(c.dtype)));
  if (c.kernel_count == 0 || c.in == 0 || c.out == 0) throw ConfigError("perceptron sizes must be positive");
  return c;
}

nlohmann::json PerceptronConfig::to_json() const {
  return {{"kind", "perceptron"}, {"in", in},   {"out", out}, {"K", kernel_count}, {"temperature", temperature},
          {"dtype", to_string(dtype)}};
}

DynamicPerceptron::DynamicPerceptron(const PerceptronConfig& config, std::uint64_t seed)
    : config_(config), temperature_(config.temperature) {
  Rng rng(seed);
  const std::size_t k = config.kernel_count;
  attention_weight_ = uniform_parameter({k, config.in}, 1.0, rng, config.dtype);
  attention_bias_ = Tensor::zeros({k}, config.dtype, true);
  weights_ = uniform_parameter({k, config.out, config.in, 1, 1}, 1.0, rng, config.dtype);
  biases_ = uniform_parameter({k, config.out}, 1.0, rng, config.dtype);
}

Tensor DynamicPerceptron::forward(const Tensor& x, const ForwardContext& ctx) {
  check_input(x, input_shape());
  const std::size_t n = x.dim(0);
  Tensor pi = softmax_with_temperature(fully_connected(x, attention_weight_, attention_bias_), temperature_);
  if (ctx.attention_sinks) ctx.attention_sinks->assign(1, std::vector<double>(pi.data().begin(), pi.data().end()));
  if (ctx.mode != AggregationMode::Attention) {
    if (ctx.training) throw ConfigError("non-attention aggregation modes are evaluation-only");
    Rng fallback(0);
    pi = apply_aggregation_mode(pi, ctx.mode, ctx.rng ? *ctx.rng : fallback);
  }
  if (!resolve_mask(ctx, 1)[0]) {
    Rng unused(0);
    pi = apply_aggregation_mode(pi, AggregationMode::Average, unused);
  }
  AggregatedKernels agg = aggregate_kernels(pi, weights_, biases_);
  Tensor y = conv2d_per_sample(reshape(x, {n, config_.in, 1, 1}), agg.weight, agg.bias, ConvGeometry{});
  return reshape(y, {n, config_.out});
}

std::vector<Tensor> DynamicPerceptron::parameters() const {
  return {attention_weight_, attention_bias_, weights_, biases_};
}

NamedTensors DynamicPerceptron::state() const {
  return {{"attention.weight", attention_weight_},
          {"attention.bias", attention_bias_},
          {"weights", weights_},
          {"biases", biases_}};
}

void DynamicPerceptron::load_state(const NamedTensors& state) {
  StateLookup lookup(state);
  lookup.copy_into("attention.weight", attention_weight_);
  lookup.copy_into("attention.bias", attention_bias_);
  lookup.copy_into("weights", weights_);
  lookup.copy_into("biases", biases_);
}

std::vector<StageInfo> DynamicPerceptron::stages() const {
  return {StageInfo{1, 1, {"perceptron"}, {0}}};
}

nlohmann::json DynamicPerceptron::config_json() const {
  auto j = config_.to_json();
  j["temperature"] = temperature_;
  return j;
}

std::unique_ptr<Model> make_model(const nlohmann::json& config, std::uint64_t seed) {
  const auto kind = take<std::string>(config, "kind");
  if (kind == "dycnn") return std::make_unique<DyCnn>(DyCnnConfig::from_json(config), seed);
  if (kind == "perceptron") return std::make_unique<DynamicPerceptron>(PerceptronConfig::from_json(config), seed);
  throw ConfigError("unknown model kind '" + kind + "'");
}

std::uint64_t state_checksum(const Model& model) {
  std::uint64_t hash = 1469598103934665603ULL;
  for (const auto& [name, t] : model.state()) {
    for (char ch : name) hash = (hash ^ static_cast<unsigned char>(ch)) * 1099511628211ULL;
    for (double v : t.data()) {
      std::uint64_t bits;
      std::memcpy(&bits, &v, sizeof bits);
      hash = (hash ^ bits) * 1099511628211ULL;
    }
  }
  return hash;
}

}  // namespace dyconv
