// SPDX-License-Identifier: Apache-2.0
#include "dyconv/inspect.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "dyconv/error.hpp"
#include "dyconv/ops.hpp"
#include "dyconv/trainer.hpp"

namespace dyconv {

namespace {

constexpr std::size_t kHistogramBins = 10;

std::string stage_label(const StageInfo& s) { return std::to_string(s.in_h) + "x" + std::to_string(s.in_w); }

std::string mask_string(const std::vector<bool>& mask) {
  std::string out;
  for (bool b : mask) out += b ? '1' : '0';
  return out;
}

}  // namespace

std::vector<ModeRow> ablate_modes(Model& model, const Dataset& data, std::uint64_t seed, std::size_t batch_size) {
  if (model.kernel_count() < 2 || model.dynamic_layer_count() == 0) {
    throw ConfigError("aggregation ablation needs a dynamic model with K >= 2");
  }
  std::vector<ModeRow> rows;
  for (auto mode : kAllAggregationModes) {
    EvalOptions opts;
    opts.mode = mode;
    opts.seed = seed;
    opts.batch_size = batch_size;
    rows.push_back({mode, evaluate(model, data, opts)});
  }
  return rows;
}

double ablate_stages(Model& model, const Dataset& data, const std::vector<bool>& mask, std::size_t batch_size) {
  const std::size_t stages = model.stages().size();
  if (mask.size() != stages) {
    throw ConfigError("stage mask has " + std::to_string(mask.size()) + " entries, model has " +
                      std::to_string(stages) + " stages");
  }
  EvalOptions opts;
  opts.stage_mask = mask;
  opts.batch_size = batch_size;
  return evaluate(model, data, opts);
}

std::vector<std::vector<bool>> nested_stage_masks(std::size_t stages) {
  std::vector<std::vector<bool>> out;
  for (std::size_t on = 1; on <= stages; ++on) {
    std::vector<bool> m(stages, false);
    std::fill(m.end() - static_cast<std::ptrdiff_t>(on), m.end(), true);
    out.push_back(std::move(m));
  }
  for (std::size_t on = stages; on-- > 0;) {
    std::vector<bool> m(stages, false);
    std::fill(m.begin(), m.begin() + static_cast<std::ptrdiff_t>(on), true);
    out.push_back(std::move(m));
  }
  return out;
}

std::vector<StageRow> ablate_stage_table(Model& model, const Dataset& data, std::size_t batch_size) {
  std::vector<StageRow> rows;
  for (auto& mask : nested_stage_masks(model.stages().size())) {
    const double top1 = ablate_stages(model, data, mask, batch_size);
    rows.push_back({std::move(mask), top1});
  }
  return rows;
}

AttentionStats attention_stats(Model& model, const Dataset& data, std::size_t batch_size) {
  if (data.size() == 0) throw DataError("cannot collect attention statistics on an empty dataset");
  if (batch_size == 0) throw ConfigError("batch size must be positive");
  const std::size_t layers = model.dynamic_layer_count();
  const std::size_t k = model.kernel_count();
  AttentionStats stats;
  stats.kernel_count = k;
  stats.layers.resize(layers);
  for (std::size_t l = 0; l < layers; ++l) {
    stats.layers[l].layer = l;
    stats.layers[l].mean_attention.assign(k, 0.0);
    stats.layers[l].max_share_histogram.assign(kHistogramBins, 0);
  }
  const auto stage_list = model.stages();
  for (std::size_t s = 0; s < stage_list.size(); ++s)
    for (auto l : stage_list[s].dynamic_layers) stats.layers[l].stage = s;

  const DType dtype = model_dtype(model);
  NoGradGuard no_grad;
  std::vector<std::vector<double>> sinks;
  std::vector<std::size_t> idx;
  for (std::size_t begin = 0; begin < data.size(); begin += batch_size) {
    const std::size_t end = std::min(data.size(), begin + batch_size);
    idx.resize(end - begin);
    std::iota(idx.begin(), idx.end(), begin);
    ForwardContext ctx;
    ctx.attention_sinks = &sinks;
    model.forward(data.batch(idx, dtype), ctx);
    for (std::size_t l = 0; l < layers; ++l) {
      auto& out = stats.layers[l];
      const auto& rows = sinks[l];
      for (std::size_t r = 0; r < idx.size(); ++r) {
        std::span<const double> pi(rows.data() + r * k, k);
        for (std::size_t j = 0; j < k; ++j) out.mean_attention[j] += pi[j];
        out.mean_entropy += entropy(pi);
        const double top = *std::max_element(pi.begin(), pi.end());
        out.max_share_histogram[std::min(kHistogramBins - 1, static_cast<std::size_t>(top * kHistogramBins))]++;
      }
    }
  }
  const double n = static_cast<double>(data.size());
  for (auto& l : stats.layers) {
    for (auto& v : l.mean_attention) v /= n;
    l.mean_entropy /= n;
  }
  return stats;
}

nlohmann::json modes_to_json(const std::vector<ModeRow>& rows) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& r : rows) out.push_back({{"mode", to_string(r.mode)}, {"top1", r.top1}});
  return out;
}

std::string modes_to_table(const std::vector<ModeRow>& rows) {
  std::ostringstream os;
  os << std::left << std::setw(26) << "aggregation" << std::right << std::setw(8) << "top1" << '\n';
  for (const auto& r : rows) {
    os << std::left << std::setw(26) << to_string(r.mode) << std::right << std::setw(8) << std::fixed
       << std::setprecision(2) << 100.0 * r.top1 << '\n';
  }
  return os.str();
}

nlohmann::json stages_to_json(const std::vector<StageInfo>& stages, const std::vector<StageRow>& rows) {
  nlohmann::json st = nlohmann::json::array();
  for (const auto& s : stages) {
    st.push_back({{"resolution", stage_label(s)}, {"layers", s.layers}, {"dynamic_layers", s.dynamic_layers}});
  }
  nlohmann::json rs = nlohmann::json::array();
  for (const auto& r : rows) rs.push_back({{"mask", mask_string(r.mask)}, {"top1", r.top1}});
  return {{"stages", st}, {"rows", rs}};
}

std::string stages_to_table(const std::vector<StageInfo>& stages, const std::vector<StageRow>& rows) {
  std::ostringstream os;
  for (const auto& s : stages) os << std::setw(8) << stage_label(s);
  os << std::setw(8) << "top1" << '\n';
  for (const auto& r : rows) {
    for (bool b : r.mask) os << std::setw(8) << (b ? "on" : "-");
    os << std::setw(8) << std::fixed << std::setprecision(2) << 100.0 * r.top1 << '\n';
  }
  return os.str();
}

nlohmann::json stats_to_json(const AttentionStats& stats) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : stats.layers) {
    layers.push_back({{"layer", l.layer},
                      {"stage", l.stage},
                      {"mean_attention", l.mean_attention},
                      {"mean_entropy", l.mean_entropy},
                      {"max_share_histogram", l.max_share_histogram}});
  }
  return {{"K", stats.kernel_count}, {"max_entropy", std::log(static_cast<double>(stats.kernel_count))},
          {"layers", layers}};
}

std::string stats_to_table(const AttentionStats& stats) {
  std::ostringstream os;
  os << std::left << std::setw(8) << "layer" << std::setw(8) << "stage" << std::right << std::setw(10) << "entropy"
     << "  mean attention (ln K = " << std::fixed << std::setprecision(4)
     << std::log(static_cast<double>(stats.kernel_count)) << ")\n";
  for (const auto& l : stats.layers) {
    os << std::left << std::setw(8) << l.layer << std::setw(8) << l.stage << std::right << std::setw(10)
       << std::setprecision(4) << l.mean_entropy << "  ";
    for (double v : l.mean_attention) os << std::setprecision(3) << v << ' ';
    os << '\n';
  }
  return os.str();
}

}  // namespace dyconv
