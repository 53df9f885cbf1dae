// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "cli.hpp"

namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result run(std::vector<std::string> args) {
  args.insert(args.begin(), "dyconv");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = dyconv::cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

const fs::path kMnist = fs::path(DYCONV_SOURCE_DIR) / "data" / "mnist5k";

class TempDir {
 public:
  explicit TempDir(const std::string& name) : path_(fs::temp_directory_path() / ("dyconv_cli_" + name)) {
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& s) const { return path_ / s; }

 private:
  fs::path path_;
};

fs::path write_json(const fs::path& p, const nlohmann::json& j) {
  std::ofstream(p) << j.dump(2);
  return p;
}

nlohmann::json blobs_config(int epochs, double lr0) {
  return {{"spec_version", 1},
          {"seed", 1},
          {"model", {{"kind", "dycnn"}, {"in_h", 12}, {"in_w", 12}, {"num_classes", 4}, {"K", 3},
                     {"stem_channels", 4}, {"blocks", {{{"channels", 8}, {"stride", 2}}, {{"channels", 8}, {"stride", 1}}}}}},
          {"dataset", {{"id", "blobs"}, {"per_class", 8}, {"test_per_class", 4}, {"classes", 4}, {"side", 12}}},
          {"train", {{"epochs", epochs}, {"batch_size", 8}, {"lr0", lr0}}}};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::size_t count_lines(const std::string& s) {
  std::size_t n = 0;
  for (char c : s) n += c == '\n';
  return n;
}

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("usage errors exit 2") {
  CHECK(run({}).code == 2);
  CHECK(run({"frobnicate"}).code == 2);
  CHECK(run({"cost", "--width", "-1"}).code == 2);
  CHECK(run({"cost", "--format", "yaml"}).code == 2);
  CHECK(run({"cost", "--network", "resnet"}).code == 2);
  CHECK(run({"cost", "--network", "file:/no/such/file.json"}).code == 2);
  CHECK(run({"train"}).code == 2);
  CHECK(run({"train", "--config", "/no/such/config.json", "--out", "/tmp/x"}).code == 2);
  CHECK(run({"--help"}).code == 0);
}

TEST_CASE("config errors exit 2") {
  TempDir dir("config");
  auto missing_version = blobs_config(1, 0.1);
  missing_version.erase("spec_version");
  CHECK(run({"train", "--config", write_json(dir / "a.json", missing_version).string(), "--out",
             (dir / "a").string(), "--quiet"})
            .code == 2);
  auto unknown = blobs_config(1, 0.1);
  unknown["train"]["warmup"] = 3;
  CHECK(run({"train", "--config", write_json(dir / "b.json", unknown).string(), "--out", (dir / "b").string(),
             "--quiet"})
            .code == 2);
  auto no_path = blobs_config(1, 0.1);
  no_path["dataset"] = {{"id", "mnist"}};
  CHECK(run({"train", "--config", write_json(dir / "c.json", no_path).string(), "--out", (dir / "c").string(),
             "--quiet"})
            .code == 2);
}

TEST_CASE("cost reports") {
  const auto r = run({"cost", "--network", "mobilenet_v2", "--width", "0.5", "--k", "4", "--format", "json"});
  REQUIRE(r.code == 0);
  const auto j = nlohmann::json::parse(r.out);
  const std::uint64_t s = j.at("static").at("totals").at("total_madds");
  const std::uint64_t d = j.at("dynamic").at("totals").at("total_madds");
  CHECK(j.at("delta_madds") == d - s);
  CHECK(std::abs(static_cast<double>(d) / 1e6 - 101.4) / 101.4 <= 0.03);
  const auto table = run({"cost", "--format", "table"});
  CHECK(table.code == 0);
  CHECK(table.out.find("total MAdds") != std::string::npos);

  TempDir dir("cost");
  const auto net = run({"cost", "--network", "mobilenet_v2", "--width", "0.35", "--format", "json"});
  const auto spec_file = write_json(dir / "net.json", nlohmann::json::parse(net.out).at("static"));
  // a report is not a network description
  CHECK(run({"cost", "--network", "file:" + spec_file.string()}).code == 2);
}

TEST_CASE("train is deterministic and inspect reads its checkpoint") {
  TempDir dir("train");
  const auto cfg = write_json(dir / "run.json", blobs_config(2, 0.05));
  const auto a = run({"train", "--config", cfg.string(), "--out", (dir / "a").string(), "--quiet"});
  const auto b = run({"train", "--config", cfg.string(), "--out", (dir / "b").string(), "--quiet"});
  REQUIRE(a.code == 0);
  REQUIRE(b.code == 0);
  const auto metrics = slurp(dir / "a" / "metrics.jsonl");
  CHECK(count_lines(metrics) == 2);
  CHECK(metrics == slurp(dir / "b" / "metrics.jsonl"));
  CHECK(slurp(dir / "a" / "checkpoint.dyck") == slurp(dir / "b" / "checkpoint.dyck"));
  const auto first = nlohmann::json::parse(metrics.substr(0, metrics.find('\n')));
  CHECK(first.at("epoch") == 0);

  // the blobs model expects 12x12 inputs; MNIST samples are 28x28
  const auto ck = (dir / "a" / "checkpoint.dyck").string();
  CHECK(run({"inspect", "--checkpoint", ck, "--dataset", kMnist.string()}).code == 2);
  CHECK(run({"inspect", "--checkpoint", (dir / "missing.dyck").string(), "--dataset", "xor"}).code == 2);
}

TEST_CASE("inspect on an MNIST model") {
  TempDir dir("inspect");
  nlohmann::json cfg = {
      {"spec_version", 1},
      {"seed", 0},
      {"model", {{"kind", "dycnn"}, {"K", 3}, {"stem_channels", 4},
                 {"blocks", {{{"channels", 8}, {"stride", 2}}, {{"channels", 8}, {"stride", 2}}}}}},
      {"dataset", {{"id", "mnist"}, {"path", kMnist.string()}, {"train_limit", 200}, {"test_limit", 50}}},
      {"train", {{"epochs", 1}, {"batch_size", 20}, {"lr0", 0.05}}}};
  const auto path = write_json(dir / "run.json", cfg);
  REQUIRE(run({"train", "--config", path.string(), "--out", (dir / "out").string(), "--quiet"}).code == 0);
  const auto ck = (dir / "out" / "checkpoint.dyck").string();
  const std::vector<std::string> base{"inspect", "--checkpoint", ck, "--dataset", kMnist.string(), "--limit", "60",
                                      "--format", "json"};

  auto with = [&](std::vector<std::string> extra) {
    auto args = base;
    args.insert(args.end(), extra.begin(), extra.end());
    return run(args);
  };
  const auto modes = with({"--what", "modes"});
  REQUIRE(modes.code == 0);
  const auto mj = nlohmann::json::parse(modes.out);
  REQUIRE(mj.size() == 5);
  CHECK(mj[0].at("mode") == "attention");

  const auto stats = with({"--what", "stats"});
  REQUIRE(stats.code == 0);
  CHECK(nlohmann::json::parse(stats.out).at("layers").size() == 2);

  const auto stages = with({"--what", "stages"});
  REQUIRE(stages.code == 0);
  const auto sj = nlohmann::json::parse(stages.out);
  CHECK(sj.at("rows").size() == 2 * sj.at("stages").size());

  CHECK(with({"--what", "bogus"}).code == 2);
  CHECK(run({"inspect", "--checkpoint", ck, "--dataset", "xor"}).code == 2);
}

TEST_CASE("divergence exits 3") {
  TempDir dir("diverge");
  auto cfg = blobs_config(20, 1e6);
  cfg["train"]["lr_schedule"] = {{"kind", "step"}, {"milestones", nlohmann::json::array()}, {"factor", 0.1}};
  const auto path = write_json(dir / "run.json", cfg);
  const auto r = run({"train", "--config", path.string(), "--out", (dir / "out").string(), "--quiet"});
  CHECK(r.code == 3);
  CHECK(r.err.find("epoch") != std::string::npos);
}

TEST_CASE("xor and gradcheck") {
  const auto x = run({"xor"});
  CHECK(x.code == 0);
  CHECK(x.out.find("solved") != std::string::npos);
  CHECK(run({"gradcheck"}).code == 0);
  const auto bad = run({"gradcheck", "--corrupt", "conv2d"});
  CHECK(bad.code == 1);
  CHECK((bad.out + bad.err).find("conv2d") != std::string::npos);
  CHECK(run({"gradcheck", "--corrupt", "no_such_op"}).code == 2);
}

}  // TEST_SUITE
