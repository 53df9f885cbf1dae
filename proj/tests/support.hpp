// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <vector>

#include "dyconv/tensor.hpp"

namespace dyconv::testing {

inline Tensor random_tensor(Shape shape, std::mt19937_64& rng, DType dtype = DType::F64, bool requires_grad = false,
                            double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> v(numel(shape));
  for (auto& x : v) x = dist(rng);
  return Tensor::from(std::move(shape), std::move(v), dtype, requires_grad);
}

inline double rel_diff(double a, double b, double floor = 1e-12) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

inline double max_rel_diff(std::span<const double> a, std::span<const double> b, double floor = 1e-12) {
  if (a.size() != b.size()) return std::numeric_limits<double>::infinity();
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, rel_diff(a[i], b[i], floor));
  return worst;
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) return std::numeric_limits<double>::infinity();
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return std::numeric_limits<double>::infinity();
  return max_abs_diff(a.data(), b.data());
}

// Direct six-loop convolution, independent of the im2col path.
inline std::vector<double> naive_conv2d(const Tensor& x, const Tensor& w, const std::vector<double>& bias,
                                        std::size_t stride, std::size_t pad, std::size_t groups) {
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const std::size_t co = w.dim(0), cg = w.dim(1), k = w.dim(2);
  const std::size_t ho = (h + 2 * pad - k) / stride + 1, wo = (wd + 2 * pad - k) / stride + 1;
  const std::size_t co_g = co / groups;
  std::vector<double> out(n * co * ho * wo, 0.0);
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t o = 0; o < co; ++o)
      for (std::size_t i = 0; i < ho; ++i)
        for (std::size_t j = 0; j < wo; ++j) {
          double acc = bias.empty() ? 0.0 : bias[o];
          const std::size_t g = o / co_g;
          for (std::size_t ci = 0; ci < cg; ++ci)
            for (std::size_t ki = 0; ki < k; ++ki)
              for (std::size_t kj = 0; kj < k; ++kj) {
                const auto y = static_cast<std::ptrdiff_t>(i * stride + ki) - static_cast<std::ptrdiff_t>(pad);
                const auto z = static_cast<std::ptrdiff_t>(j * stride + kj) - static_cast<std::ptrdiff_t>(pad);
                if (y < 0 || z < 0 || y >= static_cast<std::ptrdiff_t>(h) || z >= static_cast<std::ptrdiff_t>(wd))
                  continue;
                const std::size_t cin = g * cg + ci;
                acc += x[((b * c + cin) * h + static_cast<std::size_t>(y)) * wd + static_cast<std::size_t>(z)] *
                       w[((o * cg + ci) * k + ki) * k + kj];
              }
          out[((b * co + o) * ho + i) * wo + j] = acc;
        }
  return out;
}

}  // namespace dyconv::testing
