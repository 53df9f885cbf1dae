// SPDX-License-Identifier: Apache-2.0
#include "dyconv/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "dyconv/dynamic.hpp"
#include "dyconv/error.hpp"
#include "dyconv/ops.hpp"

namespace dyconv {

namespace {

Tensor random_tensor(Shape shape, Rng& rng, bool requires_grad = true, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> v(numel(shape));
  for (auto& x : v) x = dist(rng);
  return Tensor::from(std::move(shape), std::move(v), DType::F64, requires_grad);
}

// Values kept at least `margin` away from every kink in `kinks`.
Tensor away_from_kinks(Shape shape, Rng& rng, double lo, double hi, std::vector<double> kinks, double margin) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> v(numel(shape));
  for (auto& x : v) {
    do x = dist(rng);
    while (std::any_of(kinks.begin(), kinks.end(), [&](double k) { return std::abs(x - k) < margin; }));
  }
  return Tensor::from(std::move(shape), std::move(v), DType::F64, true);
}

// Reduces any output to a scalar with fixed random weights, so every output
// coordinate contributes a distinct sensitivity.
GradFn weighted(std::function<Tensor(const std::vector<Tensor>&)> op, Shape out_shape, Rng& rng) {
  Tensor w = random_tensor(std::move(out_shape), rng, false);
  return [op = std::move(op), w](const std::vector<Tensor>& in) { return sum(mul(op(in), w)); };
}

}  // namespace

GradcheckEntry check_gradient(const std::string& name, const GradFn& fn, std::vector<Tensor> inputs,
                              const GradcheckOptions& options) {
  for (auto& t : inputs) {
    if (t.dtype() != DType::F64) throw ConfigError("gradient checks run in f64");
    t.zero_grad();
  }
  std::vector<std::vector<double>> analytic;
  {
    Tape tape;
    const Tensor loss = fn(inputs);
    backward(loss);
    for (const auto& t : inputs) {
      if (t.has_grad()) {
        analytic.emplace_back(t.grad().begin(), t.grad().end());
      } else {
        analytic.emplace_back(t.size(), 0.0);
      }
    }
  }
  if (options.corrupt == name) {
    for (auto& g : analytic)
      for (auto& v : g) v = 1.1 * v + 1e-2;
  }

  GradcheckEntry entry;
  entry.name = name;
  NoGradGuard no_grad;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    auto data = inputs[i].mutable_data();
    const std::size_t n = data.size();
    const std::size_t stride =
        options.max_probes == 0 || n <= options.max_probes ? 1 : (n + options.max_probes - 1) / options.max_probes;
    for (std::size_t j = 0; j < n; j += stride) {
      const double saved = data[j];
      data[j] = saved + options.step;
      const double plus = fn(inputs).item();
      data[j] = saved - options.step;
      const double minus = fn(inputs).item();
      data[j] = saved;
      const double numeric = (plus - minus) / (2.0 * options.step);
      const double a = analytic[i][j];
      const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-6});
      entry.max_rel_error = std::max(entry.max_rel_error, rel);
      ++entry.probes;
    }
  }
  entry.passed = entry.max_rel_error < options.tolerance;
  return entry;
}

std::vector<GradcheckEntry> run_gradcheck_suite(const GradcheckOptions& options) {
  Rng rng(options.seed);
  std::vector<GradcheckEntry> out;
  auto run = [&](const std::string& name, const GradFn& fn, std::vector<Tensor> inputs) {
    out.push_back(check_gradient(name, fn, std::move(inputs), options));
  };
  run("add", weighted([](const auto& v) { return add(v[0], v[1]); }, {3, 4}, rng),
      {random_tensor({3, 4}, rng), random_tensor({3, 4}, rng)});
  run("mul", weighted([](const auto& v) { return mul(v[0], v[1]); }, {3, 4}, rng),
      {random_tensor({3, 4}, rng), random_tensor({3, 4}, rng)});
  run("scale", weighted([](const auto& v) { return scale(v[0], -2.5); }, {5}, rng), {random_tensor({5}, rng)});
  run("sum", [](const auto& v) { return scale(sum(v[0]), 0.7); }, {random_tensor({2, 3}, rng)});
  run("mean", [](const auto& v) { return mean(mul(v[0], v[0])); }, {random_tensor({2, 3}, rng)});
  run("reshape", weighted([](const auto& v) { return reshape(v[0], {3, 2}); }, {3, 2}, rng),
      {random_tensor({2, 3}, rng)});
  run("relu", weighted([](const auto& v) { return relu(v[0]); }, {4, 5}, rng),
      {away_from_kinks({4, 5}, rng, -1.0, 1.0, {0.0}, 0.05)});
  run("relu6", weighted([](const auto& v) { return relu6(v[0]); }, {4, 5}, rng),
      {away_from_kinks({4, 5}, rng, -1.0, 7.0, {0.0, 6.0}, 0.05)});

  run("conv2d", weighted([](const auto& v) { return conv2d(v[0], v[1], v[2], ConvGeometry{2, 1, 1}); },
                         {2, 4, 3, 3}, rng),
      {random_tensor({2, 3, 5, 5}, rng), random_tensor({4, 3, 3, 3}, rng), random_tensor({4}, rng)});
  run("conv2d_grouped",
      weighted([](const auto& v) { return conv2d(v[0], v[1], std::nullopt, ConvGeometry{1, 1, 2}); },
               {2, 4, 4, 4}, rng),
      {random_tensor({2, 4, 4, 4}, rng), random_tensor({4, 2, 3, 3}, rng)});
  run("conv2d_depthwise",
      weighted([](const auto& v) { return conv2d(v[0], v[1], v[2], ConvGeometry{1, 1, 3}); }, {1, 3, 4, 4}, rng),
      {random_tensor({1, 3, 4, 4}, rng), random_tensor({3, 1, 3, 3}, rng), random_tensor({3}, rng)});
  run("conv2d_per_sample",
      weighted([](const auto& v) { return conv2d_per_sample(v[0], v[1], v[2], ConvGeometry{1, 0, 1}); },
               {2, 3, 3, 3}, rng),
      {random_tensor({2, 2, 4, 4}, rng), random_tensor({2, 3, 2, 2, 2}, rng), random_tensor({2, 3}, rng)});
  run("fully_connected", weighted([](const auto& v) { return fully_connected(v[0], v[1], v[2]); }, {3, 4}, rng),
      {random_tensor({3, 5}, rng), random_tensor({4, 5}, rng), random_tensor({4}, rng)});
  run("global_avg_pool", weighted([](const auto& v) { return global_avg_pool(v[0]); }, {2, 3}, rng),
      {random_tensor({2, 3, 3, 3}, rng)});
  {
    auto state = std::make_shared<BatchNormState>(BatchNormState::with_defaults(3));
    run("batch_norm",
        weighted([state](const auto& v) { return batch_norm(v[0], v[1], v[2], *state, BnMode::Train); },
                 {2, 3, 3, 3}, rng),
        {random_tensor({2, 3, 3, 3}, rng), random_tensor({3}, rng, true, 0.5, 1.5), random_tensor({3}, rng)});
  }
  run("softmax_tau1", weighted([](const auto& v) { return softmax_with_temperature(v[0], 1.0); }, {3, 4}, rng),
      {random_tensor({3, 4}, rng, true, -3.0, 3.0)});
  run("softmax_tau30", weighted([](const auto& v) { return softmax_with_temperature(v[0], 30.0); }, {3, 4}, rng),
      {random_tensor({3, 4}, rng, true, -3.0, 3.0)});
  {
    const std::vector<int> labels{2, 0, 1};
    run("cross_entropy", [labels](const auto& v) { return cross_entropy_loss(v[0], labels); },
        {random_tensor({3, 4}, rng, true, -2.0, 2.0)});
  }
  run("aggregate_kernels",
      [w = random_tensor({2, 3, 2, 3, 3}, rng, false)](const auto& v) {
        // Attention enters through a softmax so perturbations stay on the simplex.
        const auto agg = aggregate_kernels(softmax_with_temperature(v[0], 1.0), v[1], v[2]);
        return add(sum(mul(agg.weight, w)), sum(mul(agg.bias, agg.bias)));
      },
      {random_tensor({2, 3}, rng), random_tensor({3, 3, 2, 3, 3}, rng), random_tensor({3, 3}, rng)});
  {
    auto branch = std::make_shared<AttentionBranch>(AttentionBranch::create(4, 3, rng, DType::F64));
    branch->fc2_weight = random_tensor({3, 1}, rng);
    branch->fc2_bias = random_tensor({3}, rng);
    // positive inputs, weights and bias keep the hidden ReLU away from its kink
    branch->fc1_weight = random_tensor({1, 4}, rng, true, 0.0, 1.0);
    branch->fc1_bias = random_tensor({1}, rng, true, 0.5, 1.0);
    branch->temperature = 2.0;
    run("attention_branch",
        weighted(
            [branch](const auto& v) {
              AttentionBranch b = *branch;
              b.fc1_weight = v[1];
              b.fc1_bias = v[2];
              b.fc2_weight = v[3];
              b.fc2_bias = v[4];
              return b.forward(v[0]);
            },
            {2, 3}, rng),
        {random_tensor({2, 4, 3, 3}, rng, true, 0.0, 1.0), branch->fc1_weight, branch->fc1_bias,
         branch->fc2_weight, branch->fc2_bias});
  }
  {
    DynamicConvConfig cfg;
    cfg.c_in = 4;
    cfg.c_out = 3;
    cfg.kernel = 3;
    cfg.stride = 1;
    cfg.padding = 1;
    cfg.kernel_count = 3;
    cfg.activation = Activation::None;
    auto layer = std::make_shared<DynamicConv2d>(cfg, rng, DType::F64);
    // fc2 starts at zero; randomize so the attention path carries gradient.
    layer->attention.fc2_weight = random_tensor(layer->attention.fc2_weight.shape(), rng);
    layer->attention.fc2_bias = random_tensor(layer->attention.fc2_bias.shape(), rng);
    layer->attention.fc1_weight = random_tensor(layer->attention.fc1_weight.shape(), rng, true, 0.0, 1.0);
    layer->attention.fc1_bias = random_tensor(layer->attention.fc1_bias.shape(), rng, true, 0.5, 1.0);
    std::vector<Tensor> inputs{random_tensor({2, 4, 4, 4}, rng, true, 0.0, 1.0)};
    for (const auto& p : layer->parameters()) inputs.push_back(p);
    run("dynamic_conv_forward",
        weighted(
            [layer](const auto& v) {
              DynamicForwardOptions opts;
              opts.training = true;
              return layer->forward(v[0], opts);
            },
            {2, 3, 4, 4}, rng),
        inputs);
  }
  if (!options.corrupt.empty() &&
      std::none_of(out.begin(), out.end(), [&](const GradcheckEntry& e) { return e.name == options.corrupt; })) {
    throw ConfigError("unknown op to corrupt: " + options.corrupt);
  }
  return out;
}

}  // namespace dyconv
