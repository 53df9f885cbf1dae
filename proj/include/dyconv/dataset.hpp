// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "dyconv/tensor.hpp"

namespace dyconv {

struct Dataset {
  Shape sample_shape;           // e.g. {1, 28, 28} or {2}
  std::vector<double> values;   // size() * numel(sample_shape), row-major
  std::vector<int> labels;
  std::size_t num_classes = 0;
  std::string split = "train";
  double norm_mean = 0.0;       // applied as (v - mean) / std
  double norm_std = 1.0;

  std::size_t size() const { return labels.size(); }
  std::size_t sample_size() const { return numel(sample_shape); }

  /// Stacks the selected samples into [B, sample_shape...].
  Tensor batch(std::span<const std::size_t> indices, DType dtype = DType::F32) const;
  std::vector<int> batch_labels(std::span<const std::size_t> indices) const;
  Tensor all(DType dtype = DType::F32) const;

  /// First `n` samples (or all, when n == 0 or n >= size()).
  Dataset head(std::size_t n) const;
  /// In-place (v - mean) / std over every value; records the parameters.
  void normalize(double mean, double std);
  /// Throws DataError on labels outside [0, num_classes) or inconsistent sizes.
  void validate() const;
};

/// Reads an IDX image file (magic 0x00000803) and label file (0x00000801).
/// Pixels are scaled to [0, 1]. FormatError on bad magic/truncation,
/// DataError on count mismatch or IO failure.
Dataset load_mnist_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path);

/// Loads `train-*` or `t10k-*` IDX files from a directory.
Dataset load_mnist_dir(const std::filesystem::path& dir, bool train);

/// MNIST normalization constants.
inline constexpr double kMnistMean = 0.1307;
inline constexpr double kMnistStd = 0.3081;

/// The four XOR points with labels x1 xor x2.
Dataset make_xor();

/// `classes` noisy image templates of shape {1, side, side}; one fixed
/// template per class, Gaussian pixel noise with stddev `noise`.
Dataset make_blobs(std::size_t per_class, std::size_t classes, std::size_t side, double noise,
                   std::uint64_t seed, std::uint64_t template_seed = 7);

}  // namespace dyconv
