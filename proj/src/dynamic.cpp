// SPDX-License-Identifier: Apache-2.0
#include "dyconv/dynamic.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numeric>

#include "dyconv/error.hpp"
#include "dyconv/init.hpp"
#include "dyconv/mac_counter.hpp"

namespace dyconv {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMatrix>;
using MutMap = Eigen::Map<RowMatrix>;

constexpr double kSimplexTolerance = 1e-5;

void check_simplex_rows(const Tensor& attention, double tolerance) {
  const std::size_t n = attention.dim(0), k = attention.dim(1);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      const double p = attention[i * k + j];
      if (p < 0.0 || !std::isfinite(p)) {
        throw InvariantError("attention row " + std::to_string(i) + " has entry " + std::to_string(p));
      }
      s += p;
    }
    if (std::abs(s - 1.0) > tolerance) {
      throw InvariantError("attention row " + std::to_string(i) + " sums to " + std::to_string(s));
    }
  }
}

}  // namespace

std::size_t reduction_dim(std::size_t c_in) { return std::max<std::size_t>(c_in / 4, 1); }

AttentionBranch AttentionBranch::create(std::size_t c_in, std::size_t kernel_count, Rng& rng,
                                        DType dtype) {
  if (c_in == 0 || kernel_count == 0) throw ConfigError("attention branch needs C_in >= 1 and K >= 1");
  const std::size_t r = reduction_dim(c_in);
  AttentionBranch b;
  b.fc1_weight = uniform_parameter({r, c_in}, kaiming_bound(c_in), rng, dtype);
  b.fc1_bias = Tensor::zeros({r}, dtype, true);
  b.fc2_weight = Tensor::zeros({kernel_count, r}, dtype, true);
  b.fc2_bias = Tensor::zeros({kernel_count}, dtype, true);
  return b;
}

Tensor AttentionBranch::forward(const Tensor& x) const {
  if (x.rank() != 4 || x.dim(1) != in_channels()) {
    throw ShapeError("attention expects " + std::to_string(in_channels()) + " channels, got " +
                     shape_string(x.shape()));
  }
  MacScope scope(MacCategory::Attention);
  Tensor squeezed = global_avg_pool(x);
  Tensor hidden = relu(fully_connected(squeezed, fc1_weight, fc1_bias));
  Tensor logits = fully_connected(hidden, fc2_weight, fc2_bias);
  return softmax_with_temperature(logits, temperature);
}

AggregatedKernels aggregate_kernels(const Tensor& attention, const Tensor& kernels,
                                    const Tensor& biases) {
  if (attention.rank() != 2) throw ShapeError("attention must be [N, K]");
  const std::size_t n = attention.dim(0), k = attention.dim(1);
  if (kernels.rank() < 2 || kernels.dim(0) != k) {
    throw ShapeError("kernel bank " + shape_string(kernels.shape()) + " does not hold " +
                     std::to_string(k) + " kernels");
  }
  if (biases.rank() != 2 || biases.dim(0) != k || biases.dim(1) != kernels.dim(1)) {
    throw ShapeError("bias bank must be [K, C_out], got " + shape_string(biases.shape()));
  }
  check_simplex_rows(attention, kSimplexTolerance);

  const std::size_t per_kernel = kernels.size() / k;
  const std::size_t c_out = biases.dim(1);
  const auto rows = static_cast<Eigen::Index>(n);
  const auto kk = static_cast<Eigen::Index>(k);
  const auto wcols = static_cast<Eigen::Index>(per_kernel);
  const auto bcols = static_cast<Eigen::Index>(c_out);

  ConstMap pi(attention.data().data(), rows, kk);
  ConstMap bank(kernels.data().data(), kk, wcols);
  ConstMap bias_bank(biases.data().data(), kk, bcols);
  std::vector<double> w(n * per_kernel), b(n * c_out);
  MutMap(w.data(), rows, wcols).noalias() = pi * bank;
  MutMap(b.data(), rows, bcols).noalias() = pi * bias_bank;

  // Rounding in the weighted sum may step outside the bank's per-coordinate
  // range by an ulp; the aggregate of a convex combination never should.
  auto clamp_to_hull = [n](std::vector<double>& out, ConstMap src) {
    const auto cols = src.cols();
    for (Eigen::Index j = 0; j < cols; ++j) {
      const double lo = src.col(j).minCoeff(), hi = src.col(j).maxCoeff();
      for (std::size_t i = 0; i < n; ++i) {
        auto& v = out[i * static_cast<std::size_t>(cols) + static_cast<std::size_t>(j)];
        v = std::clamp(v, lo, hi);
      }
    }
  };
  clamp_to_hull(w, bank);
  clamp_to_hull(b, bias_bank);
  MacCounter::add(MacCategory::Aggregation, n * k * (per_kernel + c_out));

  Shape wshape = kernels.shape();
  wshape[0] = n;
  const DType dtype = promote(attention.dtype(), kernels.dtype());
  AggregatedKernels out{detail::make_result(std::move(wshape), std::move(w), dtype),
                        detail::make_result({n, c_out}, std::move(b), dtype)};

  if (!detail::should_record({&attention, &kernels, &biases})) return out;
  // The two outputs are recorded as separate nodes sharing the inputs.
  auto record_one = [&](Tensor& result, const Tensor& bank_tensor, Eigen::Index cols) {
    detail::record(result, {attention, bank_tensor},
                   [attention, bank_tensor, rows, kk, cols](const TensorImpl& o) {
                     ConstMap g(o.grad.data(), rows, cols);
                     if (attention.requires_grad()) {
                       std::vector<double> dpi(attention.size());
                       MutMap(dpi.data(), rows, kk).noalias() =
                           g * ConstMap(bank_tensor.data().data(), kk, cols).transpose();
                       detail::accumulate_grad(*attention.impl(), dpi);
                     }
                     if (bank_tensor.requires_grad()) {
                       std::vector<double> dbank(bank_tensor.size());
                       MutMap(dbank.data(), kk, cols).noalias() =
                           ConstMap(attention.data().data(), rows, kk).transpose() * g;
                       detail::accumulate_grad(*bank_tensor.impl(), dbank);
                     }
                   });
  };
  record_one(out.weight, kernels, wcols);
  record_one(out.bias, biases, bcols);
  return out;
}

const char* to_string(AggregationMode mode) {
  switch (mode) {
    case AggregationMode::Attention: return "attention";
    case AggregationMode::Average: return "average";
    case AggregationMode::MaxAttention: return "max";
    case AggregationMode::ShufflePerSample: return "shuffle_per_sample";
    case AggregationMode::ShuffleAcrossSamples: return "shuffle_across_samples";
  }
  return "?";
}

AggregationMode parse_aggregation_mode(std::string_view name) {
  for (auto mode : kAllAggregationModes)
    if (name == to_string(mode)) return mode;
  throw ConfigError("unknown aggregation mode '" + std::string(name) + "'");
}

std::vector<std::size_t> random_derangement(std::size_t n, Rng& rng) {
  if (n < 2) throw ConfigError("a derangement needs at least two elements");
  std::vector<std::size_t> perm(n);
  for (;;) {
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::shuffle(perm.begin(), perm.end(), rng);
    bool fixed = false;
    for (std::size_t i = 0; i < n && !fixed; ++i) fixed = perm[i] == i;
    if (!fixed) return perm;
  }
}

Tensor apply_aggregation_mode(const Tensor& attention, AggregationMode mode, Rng& rng,
                              const std::vector<std::size_t>& sample_permutation) {
  if (mode == AggregationMode::Attention) return attention;
  const std::size_t n = attention.dim(0), k = attention.dim(1);
  std::vector<double> out(n * k, 0.0);
  auto in = attention.data();
  switch (mode) {
    case AggregationMode::Average:
      std::fill(out.begin(), out.end(), 1.0 / static_cast<double>(k));
      break;
    case AggregationMode::MaxAttention:
      for (std::size_t i = 0; i < n; ++i) {
        auto row = in.subspan(i * k, k);
        auto best = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
        out[i * k + best] = 1.0;
      }
      break;
    case AggregationMode::ShufflePerSample:
      if (k < 2) throw ConfigError("shuffling attention over kernels needs K >= 2");
      for (std::size_t i = 0; i < n; ++i) {
        auto perm = random_derangement(k, rng);
        for (std::size_t j = 0; j < k; ++j) out[i * k + j] = in[i * k + perm[j]];
      }
      break;
    case AggregationMode::ShuffleAcrossSamples: {
      if (n < 2) throw ConfigError("shuffling attention across samples needs a batch of at least 2");
      auto perm = sample_permutation.empty() ? random_derangement(n, rng) : sample_permutation;
      if (perm.size() != n) throw ConfigError("sample permutation length does not match batch");
      for (std::size_t i = 0; i < n; ++i)
        std::copy_n(in.begin() + static_cast<std::ptrdiff_t>(perm[i] * k), k,
                    out.begin() + static_cast<std::ptrdiff_t>(i * k));
      break;
    }
    case AggregationMode::Attention:
      break;
  }
  return Tensor::from({n, k}, std::move(out), attention.dtype());
}

const char* to_string(Activation act) {
  switch (act) {
    case Activation::Relu: return "relu";
    case Activation::Relu6: return "relu6";
    case Activation::None: return "none";
  }
  return "?";
}

Activation parse_activation(std::string_view name) {
  for (auto act : {Activation::Relu, Activation::Relu6, Activation::None})
    if (name == to_string(act)) return act;
  throw ConfigError("unknown activation '" + std::string(name) + "'");
}

Tensor activate(const Tensor& x, Activation act) {
  switch (act) {
    case Activation::Relu: return relu(x);
    case Activation::Relu6: return relu6(x);
    case Activation::None: return x;
  }
  return x;
}

DynamicConv2d::DynamicConv2d(const DynamicConvConfig& config, Rng& rng, DType dtype)
    : config_(config) {
  if (config.kernel_count == 0) throw ConfigError("dynamic conv needs K >= 1");
  if (config.groups == 0 || config.c_in % config.groups != 0 || config.c_out % config.groups != 0) {
    throw ConfigError("dynamic conv channels not divisible by groups");
  }
  if (config.stride == 0 || config.kernel == 0) throw ConfigError("dynamic conv stride/kernel must be positive");
  const std::size_t cpg = config.c_in / config.groups;
  const std::size_t fan_in = cpg * config.kernel * config.kernel;
  const std::size_t k = config.kernel_count;
  // Each kernel in the bank is drawn independently.
  kernels = uniform_parameter({k, config.c_out, cpg, config.kernel, config.kernel},
                              kaiming_bound(fan_in), rng, dtype);
  biases = uniform_parameter({k, config.c_out}, 1.0 / std::sqrt(static_cast<double>(fan_in)), rng, dtype);
  attention = AttentionBranch::create(config.c_in, k, rng, dtype);
  attention.temperature = config.temperature;
  bn_gamma = Tensor::full({config.c_out}, 1.0, dtype, true);
  bn_beta = Tensor::zeros({config.c_out}, dtype, true);
  bn = BatchNormState::with_defaults(config.c_out);
}

void DynamicConv2d::set_temperature(double tau) {
  if (!(tau > 0.0)) throw ConfigError("temperature must be positive");
  attention.temperature = tau;
  config_.temperature = tau;
}

std::vector<Tensor> DynamicConv2d::parameters() const {
  std::vector<Tensor> out{kernels, biases};
  for (auto& p : attention.parameters()) out.push_back(p);
  out.push_back(bn_gamma);
  out.push_back(bn_beta);
  return out;
}

Tensor DynamicConv2d::forward(const Tensor& x, const DynamicForwardOptions& options) {
  if (options.training && options.mode != AggregationMode::Attention) {
    throw ConfigError(std::string("aggregation mode '") + to_string(options.mode) +
                      "' is evaluation-only");
  }
  Tensor pi = attention.forward(x);
  if (options.attention_sink) {
    options.attention_sink->insert(options.attention_sink->end(), pi.data().begin(), pi.data().end());
  }
  if (options.mode != AggregationMode::Attention) {
    Rng fallback(0);
    Rng& rng = options.rng ? *options.rng : fallback;
    static const std::vector<std::size_t> kNone;
    pi = apply_aggregation_mode(pi, options.mode, rng,
                                options.sample_permutation ? *options.sample_permutation : kNone);
  }
  AggregatedKernels agg = aggregate_kernels(pi, kernels, biases);
  Tensor y = conv2d_per_sample(x, agg.weight, agg.bias, geometry());
  y = batch_norm(y, bn_gamma, bn_beta, bn, options.training ? BnMode::Train : BnMode::Eval);
  return activate(y, config_.activation);
}

std::vector<double> dynamic_perceptron_forward(const std::vector<LinearFunction>& functions,
                                               std::span<const double> attention,
                                               std::span<const double> x, Activation activation) {
  if (functions.empty() || attention.size() != functions.size()) {
    throw ShapeError("dynamic perceptron needs one attention weight per linear function");
  }
  double total = 0.0;
  for (double p : attention) {
    if (p < 0.0 || p > 1.0) throw InvariantError("attention weight outside [0, 1]");
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-6) throw InvariantError("attention weights do not sum to one");
  const std::size_t in = functions.front().in, out = functions.front().out;
  if (x.size() != in) throw ShapeError("dynamic perceptron input has wrong length");

  std::vector<double> w(in * out, 0.0), b(out, 0.0);
  for (std::size_t k = 0; k < functions.size(); ++k) {
    const auto& f = functions[k];
    if (f.in != in || f.out != out || f.weight.size() != in * out || f.bias.size() != out) {
      throw ShapeError("linear functions of a dynamic perceptron must share their shape");
    }
    for (std::size_t i = 0; i < w.size(); ++i) w[i] += attention[k] * f.weight[i];
    for (std::size_t j = 0; j < out; ++j) b[j] += attention[k] * f.bias[j];
  }
  std::vector<double> y(b);
  for (std::size_t i = 0; i < in; ++i)
    for (std::size_t j = 0; j < out; ++j) y[j] += w[i * out + j] * x[i];
  for (auto& v : y) {
    if (activation == Activation::Relu) v = std::max(v, 0.0);
    if (activation == Activation::Relu6) v = std::clamp(v, 0.0, 6.0);
  }
  return y;
}

std::vector<LinearFunction> xor_dynamic_functions() {
  return {LinearFunction{2, 2, {-1, 0, 0, 0}, {1, 0}}, LinearFunction{2, 2, {1, 0, 0, 0}, {0, 0}}};
}

std::array<double, 2> xor_dynamic_attention(std::span<const double> x) {
  if (x.size() != 2) throw ShapeError("XOR input must have two entries");
  return {x[1], 1.0 - x[1]};
}

double dynamic_perceptron_xor(std::span<const double> x) {
  auto pi = xor_dynamic_attention(x);
  return dynamic_perceptron_forward(xor_dynamic_functions(), pi, x)[0];
}

double static_perceptron_xor(std::span<const double> x) {
  if (x.size() != 2) throw ShapeError("XOR input must have two entries");
  // W = [[1, 1], [1, 1]], b = [0, -1], w = [1, -2]
  const double h0 = std::max(0.0, x[0] + x[1]);
  const double h1 = std::max(0.0, x[0] + x[1] - 1.0);
  return h0 - 2.0 * h1;
}

}  // namespace dyconv
