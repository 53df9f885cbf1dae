// SPDX-License-Identifier: Apache-2.0
#include "cli.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>

#include "dyconv/checkpoint.hpp"
#include "dyconv/config.hpp"
#include "dyconv/cost.hpp"
#include "dyconv/error.hpp"
#include "dyconv/gradcheck.hpp"
#include "dyconv/inspect.hpp"
#include "dyconv/trainer.hpp"

namespace dyconv::cli {

namespace fs = std::filesystem;

namespace {

struct TrainArgs {
  std::string config;
  std::string out;
  bool quiet = false;
};

struct CostArgs {
  std::string network = "mobilenet_v2";
  double width = 1.0;
  std::size_t k = 4;
  std::size_t resolution = 224;
  std::string format = "table";
};

struct InspectArgs {
  std::string checkpoint;
  std::string dataset;
  std::string what = "modes";
  std::string split = "test";
  std::string format = "table";
  std::size_t limit = 0;
  std::uint64_t seed = 0;
};

struct XorArgs {
  std::uint64_t seed = 0;
  int steps = 2000;
};

struct GradcheckArgs {
  std::uint64_t seed = 0;
  std::string corrupt;
};

int cmd_train(const TrainArgs& a, std::ostream& out) {
  const RunConfig rc = load_run_config(a.config);
  fs::path dir;
  if (!a.out.empty()) {
    dir = a.out;
  } else if (rc.output_dir) {
    dir = *rc.output_dir;
  } else {
    throw ConfigError("no output directory: pass --out or set output_dir");
  }
  auto data = load_datasets(rc.dataset, rc.seed);
  auto model = make_model(rc.model, rc.seed);

  fs::create_directories(dir);
  std::ofstream metrics(dir / "metrics.jsonl", std::ios::trunc);
  if (!metrics) throw DataError("cannot write " + (dir / "metrics.jsonl").string());
  const auto history = train(*model, data.train, data.test, rc.train, [&](const EpochMetrics& m) {
    metrics << to_jsonl(m) << '\n' << std::flush;
    if (!a.quiet) {
      out << "epoch " << m.epoch << "  loss " << std::fixed << std::setprecision(4) << m.loss << "  top1 "
          << std::setprecision(4) << m.top1 << "  tau " << std::setprecision(2) << m.tau << "  lr "
          << std::setprecision(5) << m.lr << '\n';
    }
  });

  nlohmann::json extra;
  extra["seed"] = rc.seed;
  extra["epochs"] = rc.train.epochs;
  extra["final_top1"] = history.back().top1;
  extra["dataset"] = {{"id", rc.dataset.id}, {"norm_mean", data.train.norm_mean}, {"norm_std", data.train.norm_std}};
  save_checkpoint(dir / "checkpoint.dyck", make_checkpoint(*model, extra));
  out << "wrote " << (dir / "metrics.jsonl").string() << " and " << (dir / "checkpoint.dyck").string() << '\n';
  return kOk;
}

NetworkSpec load_network(const CostArgs& a) {
  if (a.network == "mobilenet_v2") return mobilenet_v2_spec(a.width, a.resolution);
  if (a.network.rfind("file:", 0) == 0) {
    const fs::path path = a.network.substr(5);
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open network file " + path.string());
    try {
      return network_from_json(nlohmann::json::parse(in));
    } catch (const nlohmann::json::parse_error& e) {
      throw ConfigError("network file " + path.string() + " is not valid JSON: " + e.what());
    }
  }
  throw ConfigError("unknown network '" + a.network + "' (expected mobilenet_v2 or file:PATH)");
}

int cmd_cost(const CostArgs& a, std::ostream& out) {
  if (a.k == 0) throw ConfigError("--k must be at least 1");
  const NetworkSpec net = load_network(a);
  const CostReport static_report = network_madds(net, false, 1);
  const CostReport dynamic_report = network_madds(net, true, a.k);
  if (a.format == "json") {
    nlohmann::json j;
    j["static"] = report_to_json(static_report);
    j["dynamic"] = report_to_json(dynamic_report);
    j["delta_madds"] = dynamic_report.total() - static_report.total();
    out << j.dump(2) << '\n';
  } else {
    out << report_to_table(dynamic_report) << '\n';
    out << std::fixed << std::setprecision(1) << "static  " << static_report.total() / 1e6 << "M\n"
        << "dynamic " << dynamic_report.total() / 1e6 << "M (K=" << a.k << ", +"
        << (dynamic_report.total() - static_report.total()) / 1e6 << "M)\n";
  }
  return kOk;
}

Dataset load_inspect_dataset(const InspectArgs& a, const Checkpoint& ck) {
  Dataset ds;
  if (a.dataset == "xor") {
    ds = make_xor();
  } else {
    ds = load_mnist_dir(a.dataset, a.split == "train");
    const auto meta = ck.metadata.value("dataset", nlohmann::json::object());
    const double m = meta.value("norm_mean", 0.0);
    const double s = meta.value("norm_std", 1.0);
    if (m != 0.0 || s != 1.0) ds.normalize(m, s);
  }
  return a.limit ? ds.head(a.limit) : ds;
}

int cmd_inspect(const InspectArgs& a, std::ostream& out) {
  const Checkpoint ck = load_checkpoint(a.checkpoint);
  auto model = restore_model(ck);
  const Dataset data = load_inspect_dataset(a, ck);
  if (data.sample_shape != model->input_shape()) {
    throw ShapeError("checkpoint expects samples of shape " + shape_string(model->input_shape()) +
                     ", dataset has " + shape_string(data.sample_shape));
  }
  const bool json = a.format == "json";
  if (a.what == "modes") {
    const auto rows = ablate_modes(*model, data, a.seed);
    out << (json ? modes_to_json(rows).dump(2) + "\n" : modes_to_table(rows));
  } else if (a.what == "stages") {
    const auto rows = ablate_stage_table(*model, data);
    const auto stages = model->stages();
    out << (json ? stages_to_json(stages, rows).dump(2) + "\n" : stages_to_table(stages, rows));
  } else {
    const auto stats = attention_stats(*model, data);
    out << (json ? stats_to_json(stats).dump(2) + "\n" : stats_to_table(stats));
  }
  return kOk;
}

int cmd_xor(const XorArgs& a, std::ostream& out) {
  const Dataset data = make_xor();
  bool exact = true;
  out << "hand-constructed dynamic perceptron (one layer, K=2)\n"
      << "  x1 x2   pi1  pi2   y\n";
  for (std::size_t i = 0; i < data.size(); ++i) {
    const std::span<const double> x(data.values.data() + 2 * i, 2);
    const auto pi = xor_dynamic_attention(x);
    const double y = dynamic_perceptron_xor(x);
    exact = exact && y == data.labels[i];
    out << "  " << x[0] << "  " << x[1] << "    " << pi[0] << "    " << pi[1] << "    " << y << '\n';
  }
  out << "static two-layer perceptron\n  x1 x2   y\n";
  for (std::size_t i = 0; i < data.size(); ++i) {
    const std::span<const double> x(data.values.data() + 2 * i, 2);
    const double y = static_perceptron_xor(x);
    exact = exact && y == data.labels[i];
    out << "  " << x[0] << "  " << x[1] << "    " << y << '\n';
  }
  const XorRun run = train_xor(a.seed, a.steps);
  out << "trained K=2 dynamic perceptron (seed " << a.seed << "): "
      << (run.solved ? "solved 4/4 after " + std::to_string(run.steps) + " steps"
                     : "not solved within " + std::to_string(run.steps) + " steps")
      << '\n';
  return exact && run.solved ? kOk : kCheckFailed;
}

int cmd_gradcheck(const GradcheckArgs& a, std::ostream& out) {
  GradcheckOptions opts;
  opts.seed = a.seed;
  opts.corrupt = a.corrupt;
  const auto entries = run_gradcheck_suite(opts);
  std::vector<std::string> failed;
  out << std::left << std::setw(24) << "op" << std::right << std::setw(14) << "max rel err" << std::setw(8)
      << "probes" << '\n';
  for (const auto& e : entries) {
    out << std::left << std::setw(24) << e.name << std::right << std::setw(14) << std::scientific
        << std::setprecision(2) << e.max_rel_error << std::setw(8) << e.probes << (e.passed ? "" : "  FAIL")
        << '\n';
    if (!e.passed) failed.push_back(e.name);
  }
  if (failed.empty()) {
    out << "all " << entries.size() << " checks below " << opts.tolerance << '\n';
    return kOk;
  }
  out << "failed:";
  for (const auto& f : failed) out << ' ' << f;
  out << '\n';
  return kCheckFailed;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Dynamic convolution engine: training, cost analysis and inspection", "dyconv"};
  app.require_subcommand(1);

  TrainArgs train_args;
  auto* train_cmd = app.add_subcommand("train", "train a model from a run config");
  train_cmd->add_option("--config", train_args.config, "run config JSON")->required();
  train_cmd->add_option("--out", train_args.out, "output directory (defaults to output_dir in the config)");
  train_cmd->add_flag("--quiet", train_args.quiet, "no per-epoch progress");

  CostArgs cost_args;
  auto* cost_cmd = app.add_subcommand("cost", "analytic Mult-Adds of a static vs dynamic network");
  cost_cmd->add_option("--network", cost_args.network, "mobilenet_v2 or file:PATH");
  cost_cmd->add_option("--width", cost_args.width, "width multiplier")->check(CLI::PositiveNumber);
  cost_cmd->add_option("--k", cost_args.k, "kernels per dynamic layer");
  cost_cmd->add_option("--resolution", cost_args.resolution, "input resolution")->check(CLI::PositiveNumber);
  cost_cmd->add_option("--format", cost_args.format, "output format")->check(CLI::IsMember({"json", "table"}));

  InspectArgs inspect_args;
  auto* inspect_cmd = app.add_subcommand("inspect", "aggregation, stage and attention analyses");
  inspect_cmd->add_option("--checkpoint", inspect_args.checkpoint, "checkpoint written by train")->required();
  inspect_cmd->add_option("--dataset", inspect_args.dataset, "MNIST IDX directory, or 'xor'")->required();
  inspect_cmd->add_option("--what", inspect_args.what, "analysis to run")->check(CLI::IsMember({"modes", "stages", "stats"}));
  inspect_cmd->add_option("--split", inspect_args.split, "MNIST split")->check(CLI::IsMember({"train", "test"}));
  inspect_cmd->add_option("--format", inspect_args.format, "output format")->check(CLI::IsMember({"json", "table"}));
  inspect_cmd->add_option("--limit", inspect_args.limit, "use only the first N samples");
  inspect_cmd->add_option("--seed", inspect_args.seed, "seed for the shuffled modes");

  XorArgs xor_args;
  auto* xor_cmd = app.add_subcommand("xor", "XOR with one dynamic perceptron layer");
  xor_cmd->add_option("--seed", xor_args.seed, "initialization seed for the trained perceptron");
  xor_cmd->add_option("--steps", xor_args.steps, "step budget for training")->check(CLI::PositiveNumber);

  GradcheckArgs grad_args;
  auto* grad_cmd = app.add_subcommand("gradcheck", "finite-difference check of every differentiable op");
  grad_cmd->add_option("--seed", grad_args.seed, "seed for the probe inputs");
  grad_cmd->add_option("--corrupt", grad_args.corrupt, "perturb the analytic gradient of one op (negative control)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kUsage;
  }

  try {
    if (*train_cmd) return cmd_train(train_args, out);
    if (*cost_cmd) return cmd_cost(cost_args, out);
    if (*inspect_cmd) return cmd_inspect(inspect_args, out);
    if (*xor_cmd) return cmd_xor(xor_args, out);
    if (*grad_cmd) return cmd_gradcheck(grad_args, out);
  } catch (const DivergenceError& e) {
    err << "diverged: " << e.what() << '\n';
    return kDiverged;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kUsage;
  } catch (const ShapeError& e) {
    err << "shape error: " << e.what() << '\n';
    return kUsage;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << '\n';
    return kUsage;
  } catch (const FormatError& e) {
    err << "format error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kCheckFailed;
  }
  return kUsage;
}

}  // namespace dyconv::cli
