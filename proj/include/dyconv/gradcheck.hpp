// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "dyconv/tensor.hpp"

namespace dyconv {

struct GradcheckOptions {
  std::uint64_t seed = 0;
  double step = 1e-5;
  double tolerance = 1e-3;
  /// Max coordinates probed per input tensor (spread evenly); 0 = all.
  std::size_t max_probes = 48;
  /// Test hook: the analytic gradient of this entry is perturbed before comparison.
  std::string corrupt;
};

struct GradcheckEntry {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t probes = 0;
  bool passed = false;
};

/// Scalar-valued function of its inputs, built from differentiable ops.
using GradFn = std::function<Tensor(const std::vector<Tensor>&)>;

/// Central differences against reverse mode for every input. Relative error
/// per coordinate is |a - n| / max(|a|, |n|, 1e-6).
GradcheckEntry check_gradient(const std::string& name, const GradFn& fn, std::vector<Tensor> inputs,
                              const GradcheckOptions& options);

/// Every primitive op plus the full dynamic conv layer, in f64.
std::vector<GradcheckEntry> run_gradcheck_suite(const GradcheckOptions& options);

}  // namespace dyconv
