// SPDX-License-Identifier: Apache-2.0
//
// Thread-local multiply-accumulate instrumentation. Primitive ops report the
// MACs they perform; a counter installed on the thread tallies them per
// category so an executed forward pass can be compared against the analytic
// cost model.
#pragma once

#include <array>
#include <cstdint>

namespace dyconv {

enum class MacCategory : std::uint8_t { Conv = 0, FullyConnected, Pool, Attention, Aggregation };
inline constexpr std::size_t kMacCategoryCount = 5;

class MacCounter {
 public:
  MacCounter();
  ~MacCounter();
  MacCounter(const MacCounter&) = delete;
  MacCounter& operator=(const MacCounter&) = delete;

  std::uint64_t get(MacCategory c) const { return counts_[static_cast<std::size_t>(c)]; }
  /// Conv + FC + attention + aggregation; free ops (pooling outside attention) excluded.
  std::uint64_t counted_total() const;

  static void add(MacCategory natural, std::uint64_t macs);

 private:
  std::array<std::uint64_t, kMacCategoryCount> counts_{};
  MacCounter* previous_;
};

/// Routes every MAC reported inside its scope to `category`.
class MacScope {
 public:
  explicit MacScope(MacCategory category);
  ~MacScope();
  MacScope(const MacScope&) = delete;
  MacScope& operator=(const MacScope&) = delete;

 private:
  int previous_;
};

}  // namespace dyconv
