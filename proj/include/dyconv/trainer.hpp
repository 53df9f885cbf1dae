// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "dyconv/dataset.hpp"
#include "dyconv/model.hpp"
#include "dyconv/schedule.hpp"

namespace dyconv {

struct TrainConfig {
  int epochs = 10;
  std::size_t batch_size = 64;
  LrSchedule lr;
  double momentum = 0.9;
  double weight_decay = 0.0;
  TauSchedule tau = TauSchedule::constant(1.0);
  std::uint64_t seed = 0;
  std::size_t eval_batch_size = 250;

  void validate() const;
};

struct EpochMetrics {
  int epoch = 0;
  double loss = 0.0;  // mean training loss over the epoch
  double top1 = 0.0;  // test accuracy after the epoch
  double tau = 0.0;
  double lr = 0.0;

  bool operator==(const EpochMetrics&) const = default;
};

/// One JSON object per line: {"epoch","loss","top1","tau","lr"}.
std::string to_jsonl(const EpochMetrics& m);

using EpochCallback = std::function<void(const EpochMetrics&)>;

/// Seeded minibatch SGD. tau and lr are set at the start of every epoch.
/// Throws DivergenceError on a non-finite loss.
std::vector<EpochMetrics> train(Model& model, const Dataset& train_set, const Dataset& test_set,
                                const TrainConfig& config, const EpochCallback& on_epoch = {});

struct EvalOptions {
  AggregationMode mode = AggregationMode::Attention;
  std::vector<bool> stage_mask;
  std::uint64_t seed = 0;
  std::size_t batch_size = 250;
};

/// Top-1 accuracy with BN in eval mode. Never mutates the model.
double evaluate(Model& model, const Dataset& data, const EvalOptions& options = {});

/// Element type of the model's parameters; inputs are fed in the same type.
DType model_dtype(const Model& model);

struct XorRun {
  bool solved = false;
  int steps = 0;  // full-batch steps taken until 4/4 (or the limit)
  double final_loss = 0.0;
};

/// Full-batch SGD of a K=2 dynamic perceptron on the four XOR points.
XorRun train_xor(std::uint64_t seed, int max_steps = 2000, double lr = 0.1, double momentum = 0.9);

}  // namespace dyconv
