// SPDX-License-Identifier: Apache-2.0
#include "dyconv/schedule.hpp"

#include <cmath>
#include <numbers>

#include "dyconv/error.hpp"

namespace dyconv {

void TauSchedule::validate() const {
  if (kind == Kind::Constant) {
    if (!(tau > 0.0)) throw ConfigError("constant temperature must be positive");
    return;
  }
  if (!(start > 0.0) || !(end > 0.0)) throw ConfigError("annealed temperatures must be positive");
  if (end > start) throw ConfigError("temperature annealing must not increase tau");
  if (epochs < 0) throw ConfigError("annealing epochs must be non-negative");
}

double tau_at(const TauSchedule& schedule, int epoch) {
  if (epoch < 0) throw ConfigError("epoch must be non-negative");
  if (schedule.kind == TauSchedule::Kind::Constant) return schedule.tau;
  if (epoch >= schedule.epochs) return schedule.end;
  return schedule.start - (schedule.start - schedule.end) * static_cast<double>(epoch) /
                              static_cast<double>(schedule.epochs);
}

void LrSchedule::validate() const {
  if (!(lr0 >= 0.0)) throw ConfigError("learning rate must be non-negative");
  if (kind == Kind::Step) {
    if (!(factor > 0.0)) throw ConfigError("step factor must be positive");
    for (std::size_t i = 1; i < milestones.size(); ++i) {
      if (milestones[i] <= milestones[i - 1]) throw ConfigError("milestones must be strictly increasing");
    }
  }
}

double lr_at(const LrSchedule& schedule, int epoch, int total_epochs) {
  if (schedule.kind == LrSchedule::Kind::Cosine) {
    if (total_epochs <= 0) throw ConfigError("cosine schedule needs a positive epoch count");
    return schedule.lr0 * 0.5 *
           (1.0 + std::cos(std::numbers::pi * static_cast<double>(epoch) / static_cast<double>(total_epochs)));
  }
  double lr = schedule.lr0;
  for (int m : schedule.milestones)
    if (epoch >= m) lr *= schedule.factor;
  return lr;
}

}  // namespace dyconv
