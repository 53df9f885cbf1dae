// SPDX-License-Identifier: Apache-2.0
//
// "Is it dynamic?" analyses on a trained model: kernel-aggregation ablations,
// per-stage attention masking and attention statistics. All of them are
// read-only with respect to the model.
#pragma once

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dyconv/dataset.hpp"
#include "dyconv/model.hpp"

namespace dyconv {

struct ModeRow {
  AggregationMode mode;
  double top1 = 0.0;
};

/// One row per aggregation mode, Attention first, all sharing `seed`.
/// ConfigError when the model has a single kernel per layer.
std::vector<ModeRow> ablate_modes(Model& model, const Dataset& data, std::uint64_t seed,
                                  std::size_t batch_size = 250);

/// Accuracy with attention enabled only in the stages flagged true.
double ablate_stages(Model& model, const Dataset& data, const std::vector<bool>& mask,
                     std::size_t batch_size = 250);

/// Nested masks: suffixes enabling the last 1..S stages, then prefixes
/// enabling the first S-1..0 stages (2S rows).
std::vector<std::vector<bool>> nested_stage_masks(std::size_t stages);

struct StageRow {
  std::vector<bool> mask;
  double top1 = 0.0;
};
std::vector<StageRow> ablate_stage_table(Model& model, const Dataset& data, std::size_t batch_size = 250);

struct LayerAttentionStats {
  std::size_t layer = 0;
  std::size_t stage = 0;
  std::vector<double> mean_attention;           // sums to 1
  double mean_entropy = 0.0;                    // in [0, ln K]
  std::vector<std::size_t> max_share_histogram;  // 10 equal bins of max_k pi_k over [0, 1]
};

struct AttentionStats {
  std::size_t kernel_count = 0;
  std::vector<LayerAttentionStats> layers;
};

/// DataError on an empty dataset.
AttentionStats attention_stats(Model& model, const Dataset& data, std::size_t batch_size = 250);

nlohmann::json modes_to_json(const std::vector<ModeRow>& rows);
std::string modes_to_table(const std::vector<ModeRow>& rows);
nlohmann::json stages_to_json(const std::vector<StageInfo>& stages, const std::vector<StageRow>& rows);
std::string stages_to_table(const std::vector<StageInfo>& stages, const std::vector<StageRow>& rows);
nlohmann::json stats_to_json(const AttentionStats& stats);
std::string stats_to_table(const AttentionStats& stats);

}  // namespace dyconv
