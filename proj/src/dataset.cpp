// SPDX-License-Identifier: Apache-2.0
#include "dyconv/dataset.hpp"

#include <algorithm>
#include <fstream>
#include <iterator>

#include "dyconv/error.hpp"

namespace dyconv {

namespace {

constexpr std::uint32_t kImageMagic = 0x00000803;
constexpr std::uint32_t kLabelMagic = 0x00000801;

std::vector<unsigned char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t read_be32(const std::vector<unsigned char>& bytes, std::size_t offset,
                        const std::filesystem::path& path) {
  if (bytes.size() < offset + 4) throw FormatError("truncated IDX header in " + path.string());
  return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
         (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

}  // namespace

Tensor Dataset::batch(std::span<const std::size_t> indices, DType dtype) const {
  const std::size_t stride = sample_size();
  std::vector<double> out;
  out.reserve(indices.size() * stride);
  for (auto i : indices) {
    if (i >= size()) throw DataError("sample index out of range");
    auto first = values.begin() + static_cast<std::ptrdiff_t>(i * stride);
    out.insert(out.end(), first, first + static_cast<std::ptrdiff_t>(stride));
  }
  Shape shape{indices.size()};
  shape.insert(shape.end(), sample_shape.begin(), sample_shape.end());
  return Tensor::from(std::move(shape), std::move(out), dtype);
}

std::vector<int> Dataset::batch_labels(std::span<const std::size_t> indices) const {
  std::vector<int> out;
  out.reserve(indices.size());
  for (auto i : indices) out.push_back(labels.at(i));
  return out;
}

Tensor Dataset::all(DType dtype) const {
  std::vector<std::size_t> idx(size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  return batch(idx, dtype);
}

Dataset Dataset::head(std::size_t n) const {
  if (n == 0 || n >= size()) return *this;
  Dataset out = *this;
  out.labels.resize(n);
  out.values.resize(n * sample_size());
  return out;
}

void Dataset::normalize(double mean, double std) {
  if (!(std > 0.0)) throw ConfigError("normalization std must be positive");
  for (auto& v : values) v = (v - mean) / std;
  norm_mean = mean;
  norm_std = std;
}

void Dataset::validate() const {
  if (values.size() != labels.size() * sample_size()) throw DataError("dataset values/labels size mismatch");
  for (int l : labels) {
    if (l < 0 || static_cast<std::size_t>(l) >= num_classes) {
      throw DataError("label " + std::to_string(l) + " outside [0, " + std::to_string(num_classes) + ")");
    }
  }
}

Dataset load_mnist_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path) {
  const auto images = read_file(images_path);
  const auto labels = read_file(labels_path);
  if (read_be32(images, 0, images_path) != kImageMagic) {
    throw FormatError("bad IDX image magic in " + images_path.string());
  }
  if (read_be32(labels, 0, labels_path) != kLabelMagic) {
    throw FormatError("bad IDX label magic in " + labels_path.string());
  }
  const std::size_t count = read_be32(images, 4, images_path);
  const std::size_t rows = read_be32(images, 8, images_path);
  const std::size_t cols = read_be32(images, 12, images_path);
  const std::size_t label_count = read_be32(labels, 4, labels_path);
  if (rows == 0 || cols == 0) throw FormatError("IDX images with zero extent");
  if (images.size() != 16 + count * rows * cols) {
    throw FormatError("IDX image payload of " + images_path.string() + " is truncated or oversized");
  }
  if (labels.size() != 8 + label_count) {
    throw FormatError("IDX label payload of " + labels_path.string() + " is truncated or oversized");
  }
  if (count != label_count) {
    throw DataError(std::to_string(count) + " images but " + std::to_string(label_count) + " labels");
  }

  Dataset ds;
  ds.sample_shape = {1, rows, cols};
  ds.num_classes = 10;
  ds.values.resize(count * rows * cols);
  for (std::size_t i = 0; i < ds.values.size(); ++i) ds.values[i] = images[16 + i] / 255.0;
  ds.labels.resize(count);
  for (std::size_t i = 0; i < count; ++i) ds.labels[i] = labels[8 + i];
  ds.validate();
  return ds;
}

Dataset load_mnist_dir(const std::filesystem::path& dir, bool train) {
  const std::string prefix = train ? "train" : "t10k";
  Dataset ds = load_mnist_idx(dir / (prefix + "-images-idx3-ubyte"), dir / (prefix + "-labels-idx1-ubyte"));
  ds.split = train ? "train" : "test";
  return ds;
}

Dataset make_xor() {
  Dataset ds;
  ds.sample_shape = {2};
  ds.values = {0, 0, 0, 1, 1, 0, 1, 1};
  ds.labels = {0, 1, 1, 0};
  ds.num_classes = 2;
  return ds;
}

Dataset make_blobs(std::size_t per_class, std::size_t classes, std::size_t side, double noise,
                   std::uint64_t seed, std::uint64_t template_seed) {
  if (per_class == 0 || classes == 0 || side == 0) throw ConfigError("blobs need positive sizes");
  std::mt19937_64 template_rng(template_seed);
  std::normal_distribution<double> unit(0.0, 1.0);
  const std::size_t pixels = side * side;
  std::vector<double> templates(classes * pixels);
  for (auto& v : templates) v = unit(template_rng);

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> jitter(0.0, noise);
  Dataset ds;
  ds.sample_shape = {1, side, side};
  ds.num_classes = classes;
  for (std::size_t i = 0; i < per_class; ++i) {
    for (std::size_t c = 0; c < classes; ++c) {
      for (std::size_t p = 0; p < pixels; ++p) ds.values.push_back(templates[c * pixels + p] + jitter(rng));
      ds.labels.push_back(static_cast<int>(c));
    }
  }
  return ds;
}

}  // namespace dyconv
