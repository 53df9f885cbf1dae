// SPDX-License-Identifier: Apache-2.0
#include "dyconv/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <nlohmann/json.hpp>

#include "dyconv/error.hpp"
#include "dyconv/ops.hpp"
#include "dyconv/sgd.hpp"

namespace dyconv {

namespace {

std::size_t argmax_row(std::span<const double> logits, std::size_t row, std::size_t classes) {
  const auto first = logits.begin() + static_cast<std::ptrdiff_t>(row * classes);
  return static_cast<std::size_t>(std::max_element(first, first + static_cast<std::ptrdiff_t>(classes)) - first);
}

// Batch boundaries; a trailing batch of one sample is folded into its predecessor
// so every batch can be permuted across samples.
std::vector<std::pair<std::size_t, std::size_t>> batch_ranges(std::size_t n, std::size_t batch) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t begin = 0; begin < n; begin += batch) out.emplace_back(begin, std::min(n, begin + batch));
  if (out.size() > 1 && out.back().second - out.back().first == 1) {
    out.pop_back();
    out.back().second = n;
  }
  return out;
}

}  // namespace

void TrainConfig::validate() const {
  if (epochs <= 0) throw ConfigError("epochs must be positive");
  if (batch_size == 0 || eval_batch_size == 0) throw ConfigError("batch sizes must be positive");
  if (momentum < 0.0 || !std::isfinite(momentum)) throw ConfigError("momentum must be non-negative");
  if (weight_decay < 0.0 || !std::isfinite(weight_decay)) throw ConfigError("weight_decay must be non-negative");
  lr.validate();
  tau.validate();
}

std::string to_jsonl(const EpochMetrics& m) {
  nlohmann::ordered_json j;
  j["epoch"] = m.epoch;
  j["loss"] = m.loss;
  j["top1"] = m.top1;
  j["tau"] = m.tau;
  j["lr"] = m.lr;
  return j.dump();
}

DType model_dtype(const Model& model) {
  const auto params = model.parameters();
  return params.empty() ? DType::F64 : params.front().dtype();
}

namespace {

bool parameters_finite(const std::vector<Tensor>& params) {
  for (const auto& p : params) {
    for (double v : p.data()) {
      if (!std::isfinite(v)) return false;
    }
  }
  return true;
}

}  // namespace

std::vector<EpochMetrics> train(Model& model, const Dataset& train_set, const Dataset& test_set,
                                const TrainConfig& config, const EpochCallback& on_epoch) {
  config.validate();
  train_set.validate();
  test_set.validate();
  if (train_set.size() == 0) throw DataError("training set is empty");
  if (train_set.sample_shape != model.input_shape()) {
    throw ShapeError("dataset samples have shape " + shape_string(train_set.sample_shape) + ", model expects " +
                     shape_string(model.input_shape()));
  }
  if (train_set.num_classes > model.num_classes()) throw ShapeError("dataset has more classes than the model");

  const DType dtype = model_dtype(model);
  const auto params = model.parameters();
  SgdOptimizer optimizer(params);
  Rng shuffle_rng(config.seed);
  std::vector<std::size_t> order(train_set.size());
  std::vector<EpochMetrics> history;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const double tau = tau_at(config.tau, epoch);
    const double lr = lr_at(config.lr, epoch, config.epochs);
    model.set_temperature(tau);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    double loss_sum = 0.0;
    for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size) {
      const std::size_t end = std::min(order.size(), begin + config.batch_size);
      std::span<const std::size_t> idx(order.data() + begin, end - begin);
      const Tensor x = train_set.batch(idx, dtype);
      const auto labels = train_set.batch_labels(idx);

      Tape tape;
      ForwardContext ctx;
      ctx.training = true;
      const Tensor loss = cross_entropy_loss(model.forward(x, ctx), labels);
      const double value = loss.item();
      if (!std::isfinite(value)) {
        throw DivergenceError("non-finite training loss at epoch " + std::to_string(epoch), epoch);
      }
      backward(loss);
      optimizer.step(SgdHyper{lr, config.momentum, config.weight_decay});
      if (!parameters_finite(params)) {
        throw DivergenceError("non-finite parameters after an update at epoch " + std::to_string(epoch), epoch);
      }
      loss_sum += value * static_cast<double>(idx.size());
    }

    EpochMetrics m;
    m.epoch = epoch;
    m.loss = loss_sum / static_cast<double>(order.size());
    m.tau = tau;
    m.lr = lr;
    EvalOptions eval;
    eval.batch_size = config.eval_batch_size;
    m.top1 = test_set.size() > 0 ? evaluate(model, test_set, eval) : 0.0;
    history.push_back(m);
    if (on_epoch) on_epoch(m);
  }
  return history;
}

double evaluate(Model& model, const Dataset& data, const EvalOptions& options) {
  if (data.size() == 0) throw DataError("cannot evaluate on an empty dataset");
  if (options.batch_size == 0) throw ConfigError("evaluation batch size must be positive");
  if (data.sample_shape != model.input_shape()) {
    throw ShapeError("dataset samples have shape " + shape_string(data.sample_shape) + ", model expects " +
                     shape_string(model.input_shape()));
  }
  const DType dtype = model_dtype(model);
  const std::size_t classes = model.num_classes();
  Rng rng(options.seed);
  NoGradGuard no_grad;
  std::size_t correct = 0;
  std::vector<std::size_t> idx;
  for (auto [begin, end] : batch_ranges(data.size(), options.batch_size)) {
    idx.resize(end - begin);
    std::iota(idx.begin(), idx.end(), begin);
    ForwardContext ctx;
    ctx.mode = options.mode;
    ctx.stage_mask = options.stage_mask;
    ctx.rng = &rng;
    const Tensor logits = model.forward(data.batch(idx, dtype), ctx);
    for (std::size_t r = 0; r < idx.size(); ++r) {
      if (static_cast<int>(argmax_row(logits.data(), r, classes)) == data.labels[idx[r]]) ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

XorRun train_xor(std::uint64_t seed, int max_steps, double lr, double momentum) {
  PerceptronConfig cfg;
  DynamicPerceptron model(cfg, seed);
  const Dataset data = make_xor();
  std::vector<std::size_t> idx(data.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  const Tensor x = data.batch(idx, cfg.dtype);
  const auto params = model.parameters();
  SgdOptimizer optimizer(params);

  XorRun run;
  for (int step = 0; step <= max_steps; ++step) {
    if (evaluate(model, data) == 1.0) {
      run.solved = true;
      run.steps = step;
      break;
    }
    if (step == max_steps) {
      run.steps = step;
      break;
    }
    Tape tape;
    ForwardContext ctx;
    ctx.training = true;
    const Tensor loss = cross_entropy_loss(model.forward(x, ctx), data.labels);
    run.final_loss = loss.item();
    backward(loss);
    optimizer.step(SgdHyper{lr, momentum, 0.0});
  }
  return run;
}

}  // namespace dyconv
