// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "dyconv/error.hpp"
#include "dyconv/inspect.hpp"
#include "dyconv/trainer.hpp"
#include "support.hpp"

using namespace dyconv;
using dyconv::testing::max_abs_diff;

namespace {

DyCnnConfig small_cnn(std::size_t k) {
  DyCnnConfig c;
  c.in_h = c.in_w = 12;
  c.num_classes = 4;
  c.stem_channels = 4;
  c.blocks = {{8, 2}, {8, 1}, {12, 2}};
  c.kernel_count = k;
  c.dtype = DType::F64;
  return c;
}

Dataset blobs() { return make_blobs(10, 4, 12, 0.7, 3); }

void warm_up(Model& m) {
  TrainConfig t;
  t.epochs = 2;
  t.batch_size = 8;
  t.lr.lr0 = 0.05;
  const auto data = blobs();
  train(m, data, data, t);
}

void make_kernels_identical(DyCnn& net) {
  for (auto& layer : net.dynamic_layers()) {
    const std::size_t k = layer.kernels.dim(0);
    auto w = layer.kernels.mutable_data();
    auto b = layer.biases.mutable_data();
    const std::size_t per = w.size() / k;
    const std::size_t bias_per = b.size() / k;
    for (std::size_t i = 1; i < k; ++i) {
      std::copy_n(w.begin(), per, w.begin() + static_cast<std::ptrdiff_t>(i * per));
      std::copy_n(b.begin(), bias_per, b.begin() + static_cast<std::ptrdiff_t>(i * bias_per));
    }
  }
}

}  // namespace

TEST_SUITE("inspect") {

TEST_CASE("mode ablation lists every mode with attention first") {
  DyCnn net(small_cnn(3), 1);
  warm_up(net);
  const auto before = state_checksum(net);
  const auto rows = ablate_modes(net, blobs(), 0);
  REQUIRE(rows.size() == 5);
  CHECK(rows[0].mode == AggregationMode::Attention);
  CHECK(rows[0].top1 == evaluate(net, blobs()));
  for (const auto& r : rows) CHECK((r.top1 >= 0.0 && r.top1 <= 1.0));
  CHECK(state_checksum(net) == before);
  const auto again = ablate_modes(net, blobs(), 0);
  for (std::size_t i = 0; i < rows.size(); ++i) CHECK(again[i].top1 == rows[i].top1);
}

TEST_CASE("identical kernels make every mode agree") {
  DyCnn net(small_cnn(3), 2);
  warm_up(net);
  make_kernels_identical(net);
  const auto data = blobs();
  Rng rng(0);
  const Tensor x = data.batch(std::vector<std::size_t>{0, 1, 2, 3, 4, 5}, DType::F64);
  NoGradGuard guard;
  ForwardContext base;
  const Tensor reference = net.forward(x, base);
  for (auto mode : {AggregationMode::Average, AggregationMode::MaxAttention, AggregationMode::ShufflePerSample,
                    AggregationMode::ShuffleAcrossSamples}) {
    ForwardContext ctx;
    ctx.mode = mode;
    ctx.rng = &rng;
    CHECK(max_abs_diff(net.forward(x, ctx), reference) < 1e-6);
  }
  const auto rows = ablate_modes(net, data, 0);
  for (const auto& r : rows) CHECK(r.top1 == rows[0].top1);
}

TEST_CASE("mode ablation needs several kernels and batches of two") {
  DyCnn single(small_cnn(1), 1);
  CHECK_THROWS_AS(ablate_modes(single, blobs(), 0), ConfigError);
  auto static_cfg = small_cnn(3);
  static_cfg.dynamic = false;
  DyCnn fixed(static_cfg, 1);
  CHECK_THROWS_AS(ablate_modes(fixed, blobs(), 0), ConfigError);

  DyCnn net(small_cnn(2), 1);
  auto one = blobs();
  one.values.resize(one.sample_size());
  one.labels.resize(1);
  CHECK_THROWS_AS(ablate_modes(net, one, 0), ConfigError);
}

TEST_CASE("stage ablation endpoints") {
  DyCnn net(small_cnn(3), 4);
  warm_up(net);
  const auto data = blobs();
  const std::size_t s = net.stages().size();
  CHECK(ablate_stages(net, data, std::vector<bool>(s, true)) == evaluate(net, data));
  EvalOptions avg;
  avg.mode = AggregationMode::Average;
  CHECK(ablate_stages(net, data, std::vector<bool>(s, false)) == evaluate(net, data, avg));
  CHECK_THROWS_AS(ablate_stages(net, data, std::vector<bool>(s + 1, true)), ConfigError);
  CHECK_THROWS_AS(ablate_stages(net, data, {}), ConfigError);
}

TEST_CASE("nested stage masks") {
  const auto m = nested_stage_masks(5);
  REQUIRE(m.size() == 10);
  using V = std::vector<bool>;
  CHECK(m[0] == V{false, false, false, false, true});
  CHECK(m[4] == V{true, true, true, true, true});
  CHECK(m[5] == V{true, true, true, true, false});
  CHECK(m[9] == V{false, false, false, false, false});
  CHECK(nested_stage_masks(1) == std::vector<V>{{true}, {false}});
  CHECK(nested_stage_masks(0).empty());
}

TEST_CASE("stage table rendering") {
  DyCnn net(small_cnn(2), 4);
  const auto rows = ablate_stage_table(net, blobs());
  CHECK(rows.size() == 2 * net.stages().size());
  const auto table = stages_to_table(net.stages(), rows);
  CHECK(table.find("12x12") != std::string::npos);
  CHECK(table.find("on") != std::string::npos);
  const auto j = stages_to_json(net.stages(), rows);
  CHECK(j.at("rows").size() == rows.size());
}

TEST_CASE("untrained attention is uniform") {
  DyCnn net(small_cnn(4), 7);
  const auto stats = attention_stats(net, blobs());
  CHECK(stats.kernel_count == 4);
  REQUIRE(stats.layers.size() == net.dynamic_layer_count());
  for (const auto& l : stats.layers) {
    CHECK(l.mean_entropy == doctest::Approx(std::log(4.0)).epsilon(1e-12));
    for (double a : l.mean_attention) CHECK(a == doctest::Approx(0.25).epsilon(1e-12));
    std::size_t count = 0;
    for (auto c : l.max_share_histogram) count += c;
    CHECK(count == blobs().size());
    CHECK(l.max_share_histogram[2] == blobs().size());  // max share 0.25 lies in [0.2, 0.3)
  }
}

TEST_CASE("attention statistics after training") {
  DyCnn net(small_cnn(4), 8);
  warm_up(net);
  const auto before = state_checksum(net);
  const auto stats = attention_stats(net, blobs());
  for (const auto& l : stats.layers) {
    double sum = 0.0;
    for (double a : l.mean_attention) sum += a;
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(l.mean_entropy >= 0.0);
    CHECK(l.mean_entropy <= std::log(4.0) + 1e-12);
  }
  net.set_temperature(1e6);
  for (const auto& l : attention_stats(net, blobs()).layers) {
    CHECK(std::abs(l.mean_entropy - std::log(4.0)) < 1e-3);
  }
  net.set_temperature(1.0);
  CHECK(state_checksum(net) == before);
  const auto j = stats_to_json(stats);
  CHECK(j.at("layers").size() == stats.layers.size());
  CHECK(stats_to_table(stats).find("entropy") != std::string::npos);

  Dataset empty;
  empty.sample_shape = {1, 12, 12};
  empty.num_classes = 4;
  CHECK_THROWS_AS(attention_stats(net, empty), DataError);
}

TEST_CASE("mode rendering") {
  const std::vector<ModeRow> rows{{AggregationMode::Attention, 0.9}, {AggregationMode::Average, 0.5}};
  const auto j = modes_to_json(rows);
  CHECK(j.size() == 2);
  CHECK(j[0].at("mode") == "attention");
  CHECK(modes_to_table(rows).find("average") != std::string::npos);
}

}  // TEST_SUITE
