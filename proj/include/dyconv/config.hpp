// SPDX-License-Identifier: Apache-2.0
//
// Run configuration file:
//
//   {
//     "spec_version": 1,
//     "seed": 0,
//     "output_dir": "runs/mnist",                       optional
//     "model":   {"kind": "dycnn", "K": 4, ...},
//     "dataset": {"id": "mnist", "path": "data/mnist5k", "train_limit": 0, "test_limit": 0}
//              | {"id": "blobs", "per_class": 100, "classes": 10, "side": 12, "noise": 1.0}
//              | {"id": "xor"},
//     "train":   {"epochs": 10, "batch_size": 64, "lr0": 0.1,
//                 "lr_schedule": {"kind": "cosine"} | {"kind": "step", "milestones": [..], "factor": 0.1},
//                 "momentum": 0.9, "weight_decay": 0, "eval_batch_size": 250, "dtype": "f32",
//                 "tau_schedule": {"kind": "constant", "tau": 1}
//                               | {"kind": "anneal", "start": 30, "end": 1, "epochs": 10}},
//     "cost":    {"network": "mobilenet_v2" | "file:PATH", "width": 1.0, "K": 4}   optional
//   }
//
// Unknown keys are rejected at every level. A relative dataset path is
// resolved against the directory holding the config file.
#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "dyconv/dataset.hpp"
#include "dyconv/trainer.hpp"

namespace dyconv {

inline constexpr int kConfigSpecVersion = 1;

struct DatasetConfig {
  std::string id = "mnist";
  std::filesystem::path path;
  std::size_t train_limit = 0;  // 0 = all
  std::size_t test_limit = 0;
  bool normalize = true;
  // blobs
  std::size_t per_class = 100;
  std::size_t test_per_class = 50;
  std::size_t classes = 10;
  std::size_t side = 12;
  double noise = 1.0;
};

struct CostConfig {
  std::string network = "mobilenet_v2";
  double width = 1.0;
  std::size_t kernel_count = 4;
};

struct RunConfig {
  std::uint64_t seed = 0;
  std::optional<std::filesystem::path> output_dir;
  nlohmann::json model;
  DatasetConfig dataset;
  TrainConfig train;
  std::optional<CostConfig> cost;
};

/// ConfigError on a missing/unsupported spec_version, unknown keys or bad values.
RunConfig parse_run_config(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
RunConfig load_run_config(const std::filesystem::path& path);

struct DatasetPair {
  Dataset train;
  Dataset test;
};

/// ConfigError when the configuration is incomplete (e.g. mnist without a path);
/// DataError/FormatError from the loaders otherwise.
DatasetPair load_datasets(const DatasetConfig& config, std::uint64_t seed);

}  // namespace dyconv
