// SPDX-License-Identifier: Apache-2.0
#include "dyconv/mac_counter.hpp"

namespace dyconv {

namespace {
thread_local MacCounter* active_counter = nullptr;
thread_local int scope_override = -1;
}  // namespace

MacCounter::MacCounter() : previous_(active_counter) { active_counter = this; }
MacCounter::~MacCounter() { active_counter = previous_; }

std::uint64_t MacCounter::counted_total() const {
  return get(MacCategory::Conv) + get(MacCategory::FullyConnected) +
         get(MacCategory::Attention) + get(MacCategory::Aggregation);
}

void MacCounter::add(MacCategory natural, std::uint64_t macs) {
  if (active_counter == nullptr) return;
  auto idx = scope_override >= 0 ? static_cast<std::size_t>(scope_override)
                                 : static_cast<std::size_t>(natural);
  active_counter->counts_[idx] += macs;
}

MacScope::MacScope(MacCategory category) : previous_(scope_override) {
  scope_override = static_cast<int>(category);
}
MacScope::~MacScope() { scope_override = previous_; }

}  // namespace dyconv
