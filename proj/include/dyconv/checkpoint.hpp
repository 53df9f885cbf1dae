// SPDX-License-Identifier: Apache-2.0
//
// Checkpoint container, all integers little-endian:
//
//   "DYCKPT\0\0"                 8-byte magic
//   u32 version                  currently 1
//   u64 n, n bytes               JSON metadata ({"model": {...}, ...})
//   u32 tensor count, then per tensor:
//     u32 n, n bytes             name
//     u8 dtype                   0 = f32, 1 = f64
//     u32 rank, rank x u64       dims
//     numel x f64                values (IEEE-754 bit patterns)
//
// Values are stored at full storage precision, so save/load is bit-exact.
#pragma once

#include <filesystem>
#include <memory>

#include <nlohmann/json.hpp>

#include "dyconv/model.hpp"

namespace dyconv {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  nlohmann::json metadata;  // must contain "model"
  NamedTensors tensors;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
/// FormatError on bad magic, unknown version or truncation; DataError if unreadable.
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Snapshot of a model: metadata {"model": config, "temperature": tau} plus `extra`.
Checkpoint make_checkpoint(const Model& model, const nlohmann::json& extra = nlohmann::json::object());
/// Rebuilds the model described by the metadata and loads its state.
std::unique_ptr<Model> restore_model(const Checkpoint& checkpoint);

}  // namespace dyconv
