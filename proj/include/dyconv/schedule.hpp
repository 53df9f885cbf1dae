// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

namespace dyconv {

/// Softmax temperature per epoch. Anneal interpolates linearly from `start`
/// at epoch 0 to `end` at epoch `epochs` and holds `end` afterwards.
struct TauSchedule {
  enum class Kind { Constant, Anneal };
  Kind kind = Kind::Constant;
  double tau = 1.0;  // constant value
  double start = 30.0;
  double end = 1.0;
  int epochs = 10;

  static TauSchedule constant(double tau) { return {Kind::Constant, tau, tau, tau, 0}; }
  static TauSchedule anneal(double start, double end, int epochs) {
    return {Kind::Anneal, end, start, end, epochs};
  }
  void validate() const;
};

double tau_at(const TauSchedule& schedule, int epoch);

struct LrSchedule {
  enum class Kind { Cosine, Step };
  Kind kind = Kind::Cosine;
  double lr0 = 0.1;
  std::vector<int> milestones;  // step: strictly increasing epochs
  double factor = 0.1;

  void validate() const;
};

/// cosine: lr0 * (1 + cos(pi * e / E)) / 2. step: lr0 * factor^(milestones passed).
double lr_at(const LrSchedule& schedule, int epoch, int total_epochs);

}  // namespace dyconv
