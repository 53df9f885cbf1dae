// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <set>
#include <string>

#include <nlohmann/json.hpp>

#include "dyconv/error.hpp"
#include "dyconv/tensor.hpp"

namespace dyconv::json_util {

template <typename T>
T take(const nlohmann::json& obj, const char* key) {
  if (!obj.contains(key)) throw ConfigError(std::string("missing field '") + key + "'");
  try {
    return obj.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("field '") + key + "': " + e.what());
  }
}

template <typename T>
T take_or(const nlohmann::json& obj, const char* key, T fallback) {
  return obj.contains(key) ? take<T>(obj, key) : fallback;
}

inline void reject_unknown(const nlohmann::json& obj, const std::set<std::string>& allowed, const char* where) {
  if (!obj.is_object()) throw ConfigError(std::string(where) + " must be a JSON object");
  for (const auto& [key, value] : obj.items()) {
    if (!allowed.count(key)) throw ConfigError(std::string("unknown key '") + key + "' in " + where);
  }
}

inline DType parse_dtype(const std::string& name) {
  if (name == "f32") return DType::F32;
  if (name == "f64") return DType::F64;
  throw ConfigError("unknown dtype '" + name + "'");
}

}  // namespace dyconv::json_util
