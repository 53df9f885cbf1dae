// SPDX-License-Identifier: Apache-2.0
#include "dyconv/config.hpp"

#include <fstream>

#include "dyconv/error.hpp"
#include "json_util.hpp"

namespace dyconv {

namespace {

using json_util::reject_unknown;
using json_util::take;
using json_util::take_or;

DatasetConfig parse_dataset(const nlohmann::json& j, const std::filesystem::path& base_dir) {
  reject_unknown(j, {"id", "path", "train_limit", "test_limit", "normalize", "per_class", "test_per_class",
                     "classes", "side", "noise"},
                 "dataset");
  DatasetConfig d;
  d.id = take<std::string>(j, "id");
  if (d.id != "mnist" && d.id != "blobs" && d.id != "xor") throw ConfigError("unknown dataset id '" + d.id + "'");
  if (j.contains("path")) {
    d.path = take<std::string>(j, "path");
    if (d.path.is_relative() && !base_dir.empty()) d.path = base_dir / d.path;
  }
  d.train_limit = take_or<std::size_t>(j, "train_limit", d.train_limit);
  d.test_limit = take_or<std::size_t>(j, "test_limit", d.test_limit);
  d.normalize = take_or<bool>(j, "normalize", d.normalize);
  d.per_class = take_or<std::size_t>(j, "per_class", d.per_class);
  d.test_per_class = take_or<std::size_t>(j, "test_per_class", d.test_per_class);
  d.classes = take_or<std::size_t>(j, "classes", d.classes);
  d.side = take_or<std::size_t>(j, "side", d.side);
  d.noise = take_or<double>(j, "noise", d.noise);
  if (d.id == "mnist" && d.path.empty()) throw ConfigError("mnist dataset needs a 'path'");
  return d;
}

LrSchedule parse_lr(const nlohmann::json& train) {
  LrSchedule lr;
  lr.lr0 = take_or<double>(train, "lr0", lr.lr0);
  if (!train.contains("lr_schedule")) return lr;
  const auto& j = train.at("lr_schedule");
  reject_unknown(j, {"kind", "milestones", "factor"}, "train.lr_schedule");
  const auto kind = take<std::string>(j, "kind");
  if (kind == "cosine") {
    lr.kind = LrSchedule::Kind::Cosine;
  } else if (kind == "step") {
    lr.kind = LrSchedule::Kind::Step;
    lr.milestones = take_or<std::vector<int>>(j, "milestones", {});
    lr.factor = take_or<double>(j, "factor", lr.factor);
  } else {
    throw ConfigError("unknown lr schedule '" + kind + "'");
  }
  return lr;
}

TauSchedule parse_tau(const nlohmann::json& j) {
  reject_unknown(j, {"kind", "tau", "start", "end", "epochs"}, "train.tau_schedule");
  const auto kind = take<std::string>(j, "kind");
  if (kind == "constant") return TauSchedule::constant(take<double>(j, "tau"));
  if (kind == "anneal") {
    return TauSchedule::anneal(take_or<double>(j, "start", 30.0), take_or<double>(j, "end", 1.0),
                               take_or<int>(j, "epochs", 10));
  }
  throw ConfigError("unknown tau schedule '" + kind + "'");
}

TrainConfig parse_train(const nlohmann::json& j, std::uint64_t seed) {
  reject_unknown(j, {"epochs", "batch_size", "lr0", "lr_schedule", "momentum", "weight_decay", "tau_schedule",
                     "eval_batch_size", "dtype"},
                 "train");
  TrainConfig t;
  t.epochs = take_or<int>(j, "epochs", t.epochs);
  t.batch_size = take_or<std::size_t>(j, "batch_size", t.batch_size);
  t.eval_batch_size = take_or<std::size_t>(j, "eval_batch_size", t.eval_batch_size);
  t.lr = parse_lr(j);
  t.momentum = take_or<double>(j, "momentum", t.momentum);
  t.weight_decay = take_or<double>(j, "weight_decay", t.weight_decay);
  if (j.contains("tau_schedule")) t.tau = parse_tau(j.at("tau_schedule"));
  t.seed = seed;
  t.validate();
  return t;
}

CostConfig parse_cost(const nlohmann::json& j) {
  reject_unknown(j, {"network", "width", "K"}, "cost");
  CostConfig c;
  c.network = take_or<std::string>(j, "network", c.network);
  c.width = take_or<double>(j, "width", c.width);
  c.kernel_count = take_or<std::size_t>(j, "K", c.kernel_count);
  return c;
}

Dataset limited(Dataset ds, std::size_t limit) { return limit ? ds.head(limit) : ds; }

}  // namespace

RunConfig parse_run_config(const nlohmann::json& j, const std::filesystem::path& base_dir) {
  reject_unknown(j, {"spec_version", "seed", "output_dir", "model", "dataset", "train", "cost"}, "config");
  if (!j.contains("spec_version")) throw ConfigError("config is missing 'spec_version'");
  const int version = take<int>(j, "spec_version");
  if (version != kConfigSpecVersion) throw ConfigError("unsupported spec_version " + std::to_string(version));

  RunConfig rc;
  rc.seed = take_or<std::uint64_t>(j, "seed", rc.seed);
  if (j.contains("output_dir")) rc.output_dir = take<std::string>(j, "output_dir");
  if (!j.contains("model")) throw ConfigError("config is missing 'model'");
  rc.model = j.at("model");
  if (!j.contains("dataset")) throw ConfigError("config is missing 'dataset'");
  rc.dataset = parse_dataset(j.at("dataset"), base_dir);
  const nlohmann::json train = j.contains("train") ? j.at("train") : nlohmann::json::object();
  rc.train = parse_train(train, rc.seed);
  if (train.contains("dtype")) {
    if (!rc.model.is_object()) throw ConfigError("model must be a JSON object");
    rc.model["dtype"] = take<std::string>(train, "dtype");
  }
  if (j.contains("cost")) rc.cost = parse_cost(j.at("cost"));
  make_model(rc.model, rc.seed);  // validates the model section eagerly
  return rc;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return parse_run_config(j, path.parent_path());
}

DatasetPair load_datasets(const DatasetConfig& config, std::uint64_t seed) {
  DatasetPair out;
  if (config.id == "mnist") {
    if (config.path.empty()) throw ConfigError("mnist dataset needs a 'path'");
    out.train = limited(load_mnist_dir(config.path, true), config.train_limit);
    out.test = limited(load_mnist_dir(config.path, false), config.test_limit);
    if (config.normalize) {
      out.train.normalize(kMnistMean, kMnistStd);
      out.test.normalize(kMnistMean, kMnistStd);
    }
  } else if (config.id == "blobs") {
    out.train = make_blobs(config.per_class, config.classes, config.side, config.noise, seed);
    out.test = make_blobs(config.test_per_class, config.classes, config.side, config.noise, seed + 1);
    out.test.split = "test";
  } else if (config.id == "xor") {
    out.train = make_xor();
    out.test = make_xor();
    out.test.split = "test";
  } else {
    throw ConfigError("unknown dataset id '" + config.id + "'");
  }
  return out;
}

}  // namespace dyconv
