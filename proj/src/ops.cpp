// SPDX-License-Identifier: Apache-2.0
#include "dyconv/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <string>

#include "dyconv/error.hpp"
#include "dyconv/mac_counter.hpp"

namespace dyconv {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMatrix>;
using MutMap = Eigen::Map<RowMatrix>;

struct ConvDims {
  std::size_t n, c_in, h, w;
  std::size_t c_out, kernel;
  std::size_t h_out, w_out;
  std::size_t groups, in_per_group, out_per_group;
  std::size_t stride, padding;

  std::size_t patch() const { return in_per_group * kernel * kernel; }
  std::size_t plane_out() const { return h_out * w_out; }
};

ConvDims conv_dims(const Tensor& input, const Shape& kernel_shape, ConvGeometry g) {
  // kernel_shape is [C_out, C_in/groups, Dk, Dk]
  if (input.rank() != 4) throw ShapeError("conv2d input must be NCHW, got " + shape_string(input.shape()));
  if (kernel_shape.size() != 4 || kernel_shape[2] != kernel_shape[3]) {
    throw ShapeError("conv2d weight must be [C_out, C_in/groups, Dk, Dk], got " +
                     shape_string(kernel_shape));
  }
  if (g.stride == 0) throw ConfigError("conv2d stride must be positive");
  if (g.groups == 0) throw ConfigError("conv2d groups must be positive");
  ConvDims d{};
  d.n = input.dim(0);
  d.c_in = input.dim(1);
  d.h = input.dim(2);
  d.w = input.dim(3);
  d.c_out = kernel_shape[0];
  d.kernel = kernel_shape[2];
  d.groups = g.groups;
  d.stride = g.stride;
  d.padding = g.padding;
  if (d.c_in % g.groups != 0 || d.c_out % g.groups != 0) {
    throw ConfigError("channels (" + std::to_string(d.c_in) + ", " + std::to_string(d.c_out) +
                      ") not divisible by groups " + std::to_string(g.groups));
  }
  d.in_per_group = d.c_in / g.groups;
  d.out_per_group = d.c_out / g.groups;
  if (kernel_shape[1] != d.in_per_group) {
    throw ShapeError("conv2d weight expects " + std::to_string(kernel_shape[1] * g.groups) +
                     " input channels, input has " + std::to_string(d.c_in));
  }
  if (d.h + 2 * d.padding < d.kernel || d.w + 2 * d.padding < d.kernel) {
    throw ShapeError("conv2d kernel larger than padded input");
  }
  d.h_out = conv_output_extent(d.h, d.kernel, d.stride, d.padding);
  d.w_out = conv_output_extent(d.w, d.kernel, d.stride, d.padding);
  return d;
}

// cols[(ci*Dk + kh)*Dk + kw][oh*W' + ow] for one (sample, group).
void im2col(const double* x, const ConvDims& d, std::size_t group, RowMatrix& cols) {
  cols.resize(static_cast<Eigen::Index>(d.patch()), static_cast<Eigen::Index>(d.plane_out()));
  const auto pad = static_cast<std::ptrdiff_t>(d.padding);
  for (std::size_t ci = 0; ci < d.in_per_group; ++ci) {
    const double* plane = x + (group * d.in_per_group + ci) * d.h * d.w;
    for (std::size_t kh = 0; kh < d.kernel; ++kh) {
      for (std::size_t kw = 0; kw < d.kernel; ++kw) {
        double* row = cols.data() + ((ci * d.kernel + kh) * d.kernel + kw) * d.plane_out();
        for (std::size_t oh = 0; oh < d.h_out; ++oh) {
          auto ih = static_cast<std::ptrdiff_t>(oh * d.stride + kh) - pad;
          for (std::size_t ow = 0; ow < d.w_out; ++ow) {
            auto iw = static_cast<std::ptrdiff_t>(ow * d.stride + kw) - pad;
            bool inside = ih >= 0 && iw >= 0 && ih < static_cast<std::ptrdiff_t>(d.h) &&
                          iw < static_cast<std::ptrdiff_t>(d.w);
            row[oh * d.w_out + ow] = inside ? plane[ih * static_cast<std::ptrdiff_t>(d.w) + iw] : 0.0;
          }
        }
      }
    }
  }
}

void col2im_add(const RowMatrix& cols, const ConvDims& d, std::size_t group, double* dx) {
  const auto pad = static_cast<std::ptrdiff_t>(d.padding);
  for (std::size_t ci = 0; ci < d.in_per_group; ++ci) {
    double* plane = dx + (group * d.in_per_group + ci) * d.h * d.w;
    for (std::size_t kh = 0; kh < d.kernel; ++kh) {
      for (std::size_t kw = 0; kw < d.kernel; ++kw) {
        const double* row = cols.data() + ((ci * d.kernel + kh) * d.kernel + kw) * d.plane_out();
        for (std::size_t oh = 0; oh < d.h_out; ++oh) {
          auto ih = static_cast<std::ptrdiff_t>(oh * d.stride + kh) - pad;
          if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(d.h)) continue;
          for (std::size_t ow = 0; ow < d.w_out; ++ow) {
            auto iw = static_cast<std::ptrdiff_t>(ow * d.stride + kw) - pad;
            if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(d.w)) continue;
            plane[ih * static_cast<std::ptrdiff_t>(d.w) + iw] += row[oh * d.w_out + ow];
          }
        }
      }
    }
  }
}

// Shared forward/backward for the shared-weight and per-sample cases.
Tensor conv_impl(const Tensor& input, const Tensor& weight, const std::optional<Tensor>& bias,
                 ConvGeometry geometry, bool per_sample) {
  Shape kernel_shape = weight.shape();
  if (per_sample) {
    if (weight.rank() != 5 || weight.dim(0) != input.dim(0)) {
      throw ShapeError("per-sample conv weight must be [N, C_out, C_in/g, Dk, Dk], got " +
                       shape_string(weight.shape()));
    }
    kernel_shape.erase(kernel_shape.begin());
  }
  const ConvDims d = conv_dims(input, kernel_shape, geometry);
  if (bias) {
    Shape expected = per_sample ? Shape{d.n, d.c_out} : Shape{d.c_out};
    if (bias->shape() != expected) {
      throw ShapeError("conv2d bias must be " + shape_string(expected) + ", got " +
                       shape_string(bias->shape()));
    }
  }

  const std::size_t weight_stride = per_sample ? d.c_out * d.patch() : 0;
  const std::size_t bias_stride = per_sample ? d.c_out : 0;
  std::vector<double> out(d.n * d.c_out * d.plane_out(), 0.0);
  RowMatrix cols;
  for (std::size_t n = 0; n < d.n; ++n) {
    const double* x = input.data().data() + n * d.c_in * d.h * d.w;
    for (std::size_t g = 0; g < d.groups; ++g) {
      im2col(x, d, g, cols);
      ConstMap w(weight.data().data() + n * weight_stride + g * d.out_per_group * d.patch(),
                 static_cast<Eigen::Index>(d.out_per_group), static_cast<Eigen::Index>(d.patch()));
      MutMap y(out.data() + (n * d.c_out + g * d.out_per_group) * d.plane_out(),
               static_cast<Eigen::Index>(d.out_per_group), static_cast<Eigen::Index>(d.plane_out()));
      y.noalias() = w * cols;
    }
    if (bias) {
      for (std::size_t co = 0; co < d.c_out; ++co) {
        double b = (*bias)[n * bias_stride + co];
        double* plane = out.data() + (n * d.c_out + co) * d.plane_out();
        for (std::size_t i = 0; i < d.plane_out(); ++i) plane[i] += b;
      }
    }
  }
  MacCounter::add(MacCategory::Conv, d.n * d.plane_out() * d.patch() * d.c_out);

  DType dtype = promote(input.dtype(), weight.dtype());
  Tensor result = detail::make_result({d.n, d.c_out, d.h_out, d.w_out}, std::move(out), dtype);
  const Tensor* bias_ptr = bias ? &*bias : nullptr;
  if (!detail::should_record({&input, &weight, bias_ptr})) return result;

  std::vector<Tensor> inputs{input, weight};
  if (bias) inputs.push_back(*bias);
  detail::record(result, inputs, [input, weight, bias, d, weight_stride, bias_stride](const TensorImpl& o) {
    const bool want_x = input.requires_grad();
    const bool want_w = weight.requires_grad();
    std::vector<double> dx(want_x ? input.size() : 0, 0.0);
    std::vector<double> dw(want_w ? weight.size() : 0, 0.0);
    RowMatrix cols;
    RowMatrix dcols;
    for (std::size_t n = 0; n < d.n; ++n) {
      const double* x = input.data().data() + n * d.c_in * d.h * d.w;
      for (std::size_t g = 0; g < d.groups; ++g) {
        ConstMap gy(o.grad.data() + (n * d.c_out + g * d.out_per_group) * d.plane_out(),
                    static_cast<Eigen::Index>(d.out_per_group),
                    static_cast<Eigen::Index>(d.plane_out()));
        const std::size_t w_off = n * weight_stride + g * d.out_per_group * d.patch();
        if (want_w) {
          im2col(x, d, g, cols);
          MutMap gw(dw.data() + w_off, static_cast<Eigen::Index>(d.out_per_group),
                    static_cast<Eigen::Index>(d.patch()));
          gw.noalias() += gy * cols.transpose();
        }
        if (want_x) {
          ConstMap w(weight.data().data() + w_off, static_cast<Eigen::Index>(d.out_per_group),
                     static_cast<Eigen::Index>(d.patch()));
          dcols.noalias() = w.transpose() * gy;
          col2im_add(dcols, d, g, dx.data() + n * d.c_in * d.h * d.w);
        }
      }
    }
    if (want_x) detail::accumulate_grad(*input.impl(), dx);
    if (want_w) detail::accumulate_grad(*weight.impl(), dw);
    if (bias && bias->requires_grad()) {
      std::vector<double> db(bias->size(), 0.0);
      for (std::size_t n = 0; n < d.n; ++n) {
        for (std::size_t co = 0; co < d.c_out; ++co) {
          const double* plane = o.grad.data() + (n * d.c_out + co) * d.plane_out();
          double s = 0.0;
          for (std::size_t i = 0; i < d.plane_out(); ++i) s += plane[i];
          db[n * bias_stride + co] += s;
        }
      }
      detail::accumulate_grad(*bias->impl(), db);
    }
  });
  return result;
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shapes " + shape_string(a.shape()) + " and " +
                     shape_string(b.shape()) + " differ");
  }
}

// Elementwise unary op with derivative expressed through the input value.
template <typename F, typename DF>
Tensor unary(const Tensor& input, F f, DF df) {
  std::vector<double> out(input.size());
  auto x = input.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(x[i]);
  Tensor result = detail::make_result(input.shape(), std::move(out), input.dtype());
  if (!detail::should_record({&input})) return result;
  detail::record(result, {input}, [input, df](const TensorImpl& o) {
    std::vector<double> g(input.size());
    auto x = input.data();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = o.grad[i] * df(x[i]);
    detail::accumulate_grad(*input.impl(), g);
  });
  return result;
}

}  // namespace

std::size_t conv_output_extent(std::size_t in, std::size_t kernel, std::size_t stride,
                               std::size_t padding) {
  return (in + 2 * padding - kernel) / stride + 1;
}

Tensor conv2d(const Tensor& input, const Tensor& weight, const std::optional<Tensor>& bias,
              ConvGeometry geometry) {
  return conv_impl(input, weight, bias, geometry, false);
}

Tensor conv2d_per_sample(const Tensor& input, const Tensor& weight,
                         const std::optional<Tensor>& bias, ConvGeometry geometry) {
  return conv_impl(input, weight, bias, geometry, true);
}

Tensor fully_connected(const Tensor& input, const Tensor& weight,
                       const std::optional<Tensor>& bias) {
  if (input.rank() != 2 || weight.rank() != 2 || input.dim(1) != weight.dim(1)) {
    throw ShapeError("fully_connected: input " + shape_string(input.shape()) + " vs weight " +
                     shape_string(weight.shape()));
  }
  const std::size_t n = input.dim(0), c_in = input.dim(1), c_out = weight.dim(0);
  if (bias && bias->shape() != Shape{c_out}) {
    throw ShapeError("fully_connected bias must be [" + std::to_string(c_out) + "]");
  }
  const auto rows = static_cast<Eigen::Index>(n);
  const auto in_cols = static_cast<Eigen::Index>(c_in);
  const auto out_cols = static_cast<Eigen::Index>(c_out);
  std::vector<double> out(n * c_out);
  ConstMap x(input.data().data(), rows, in_cols);
  ConstMap w(weight.data().data(), out_cols, in_cols);
  MutMap y(out.data(), rows, out_cols);
  y.noalias() = x * w.transpose();
  if (bias) {
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < c_out; ++j) out[i * c_out + j] += (*bias)[j];
  }
  MacCounter::add(MacCategory::FullyConnected, n * c_in * c_out);

  Tensor result = detail::make_result({n, c_out}, std::move(out), promote(input.dtype(), weight.dtype()));
  const Tensor* bias_ptr = bias ? &*bias : nullptr;
  if (!detail::should_record({&input, &weight, bias_ptr})) return result;
  std::vector<Tensor> inputs{input, weight};
  if (bias) inputs.push_back(*bias);
  detail::record(result, inputs, [input, weight, bias, rows, in_cols, out_cols](const TensorImpl& o) {
    ConstMap gy(o.grad.data(), rows, out_cols);
    if (input.requires_grad()) {
      std::vector<double> dx(input.size());
      MutMap(dx.data(), rows, in_cols).noalias() = gy * ConstMap(weight.data().data(), out_cols, in_cols);
      detail::accumulate_grad(*input.impl(), dx);
    }
    if (weight.requires_grad()) {
      std::vector<double> dw(weight.size());
      MutMap(dw.data(), out_cols, in_cols).noalias() =
          gy.transpose() * ConstMap(input.data().data(), rows, in_cols);
      detail::accumulate_grad(*weight.impl(), dw);
    }
    if (bias && bias->requires_grad()) {
      std::vector<double> db(static_cast<std::size_t>(out_cols), 0.0);
      for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = 0; j < out_cols; ++j) db[static_cast<std::size_t>(j)] += gy(i, j);
      detail::accumulate_grad(*bias->impl(), db);
    }
  });
  return result;
}

Tensor global_avg_pool(const Tensor& input) {
  if (input.rank() != 4) throw ShapeError("global_avg_pool expects NCHW, got " + shape_string(input.shape()));
  const std::size_t n = input.dim(0), c = input.dim(1), plane = input.dim(2) * input.dim(3);
  std::vector<double> out(n * c);
  for (std::size_t i = 0; i < n * c; ++i) {
    const double* p = input.data().data() + i * plane;
    double s = 0.0;
    for (std::size_t j = 0; j < plane; ++j) s += p[j];
    out[i] = s / static_cast<double>(plane);
  }
  MacCounter::add(MacCategory::Pool, n * c * plane);
  Tensor result = detail::make_result({n, c}, std::move(out), input.dtype());
  if (!detail::should_record({&input})) return result;
  detail::record(result, {input}, [input, plane](const TensorImpl& o) {
    std::vector<double> g(input.size());
    const double inv = 1.0 / static_cast<double>(plane);
    for (std::size_t i = 0; i < o.grad.size(); ++i)
      std::fill_n(g.begin() + static_cast<std::ptrdiff_t>(i * plane), plane, o.grad[i] * inv);
    detail::accumulate_grad(*input.impl(), g);
  });
  return result;
}

Tensor relu(const Tensor& input) {
  return unary(
      input, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor relu6(const Tensor& input) {
  return unary(
      input, [](double v) { return std::clamp(v, 0.0, 6.0); },
      [](double v) { return (v > 0.0 && v < 6.0) ? 1.0 : 0.0; });
}

BatchNormState BatchNormState::with_defaults(std::size_t channels) {
  BatchNormState s;
  s.running_mean.assign(channels, 0.0);
  s.running_var.assign(channels, 1.0);
  return s;
}

Tensor batch_norm(const Tensor& input, const Tensor& gamma, const Tensor& beta,
                  BatchNormState& state, BnMode mode) {
  if (input.rank() < 2) throw ShapeError("batch_norm expects [N, C, ...]");
  const std::size_t n = input.dim(0), c = input.dim(1);
  const std::size_t inner = input.size() / (n * c);
  if (gamma.shape() != Shape{c} || beta.shape() != Shape{c}) {
    throw ShapeError("batch_norm gamma/beta must have " + std::to_string(c) + " entries");
  }
  const std::size_t count = n * inner;
  std::vector<double> mu(c, 0.0), var(c, 0.0);
  if (mode == BnMode::Train) {
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t ch = 0; ch < c; ++ch) {
        const double* p = input.data().data() + (i * c + ch) * inner;
        for (std::size_t j = 0; j < inner; ++j) mu[ch] += p[j];
      }
    for (auto& m : mu) m /= static_cast<double>(count);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t ch = 0; ch < c; ++ch) {
        const double* p = input.data().data() + (i * c + ch) * inner;
        for (std::size_t j = 0; j < inner; ++j) var[ch] += (p[j] - mu[ch]) * (p[j] - mu[ch]);
      }
    for (auto& v : var) v /= static_cast<double>(count);
    if (!state.initialized()) state = BatchNormState::with_defaults(c);
    if (state.running_mean.size() != c) throw ShapeError("batch_norm running stats size mismatch");
    const double unbias = count > 1 ? static_cast<double>(count) / static_cast<double>(count - 1) : 1.0;
    for (std::size_t ch = 0; ch < c; ++ch) {
      state.running_mean[ch] = (1.0 - state.momentum) * state.running_mean[ch] + state.momentum * mu[ch];
      state.running_var[ch] =
          (1.0 - state.momentum) * state.running_var[ch] + state.momentum * var[ch] * unbias;
    }
  } else {
    if (!state.initialized()) throw StateError("batch_norm eval mode without running statistics");
    if (state.running_mean.size() != c) throw ShapeError("batch_norm running stats size mismatch");
    mu = state.running_mean;
    var = state.running_var;
  }

  std::vector<double> inv_std(c);
  for (std::size_t ch = 0; ch < c; ++ch) inv_std[ch] = 1.0 / std::sqrt(var[ch] + state.eps);
  std::vector<double> xhat(input.size()), out(input.size());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t ch = 0; ch < c; ++ch) {
      const std::size_t off = (i * c + ch) * inner;
      for (std::size_t j = 0; j < inner; ++j) {
        xhat[off + j] = (input[off + j] - mu[ch]) * inv_std[ch];
        out[off + j] = gamma[ch] * xhat[off + j] + beta[ch];
      }
    }

  DType dtype = promote(input.dtype(), gamma.dtype());
  Tensor result = detail::make_result(input.shape(), std::move(out), dtype);
  if (!detail::should_record({&input, &gamma, &beta})) return result;
  const bool batch_stats = mode == BnMode::Train;
  detail::record(result, {input, gamma, beta},
                 [input, gamma, beta, xhat = std::move(xhat), inv_std, n, c, inner, count,
                  batch_stats](const TensorImpl& o) {
                   std::vector<double> sum_dy(c, 0.0), sum_dy_xhat(c, 0.0);
                   for (std::size_t i = 0; i < n; ++i)
                     for (std::size_t ch = 0; ch < c; ++ch) {
                       const std::size_t off = (i * c + ch) * inner;
                       for (std::size_t j = 0; j < inner; ++j) {
                         sum_dy[ch] += o.grad[off + j];
                         sum_dy_xhat[ch] += o.grad[off + j] * xhat[off + j];
                       }
                     }
                   if (gamma.requires_grad()) detail::accumulate_grad(*gamma.impl(), sum_dy_xhat);
                   if (beta.requires_grad()) detail::accumulate_grad(*beta.impl(), sum_dy);
                   if (!input.requires_grad()) return;
                   std::vector<double> dx(input.size());
                   const double m = static_cast<double>(count);
                   for (std::size_t i = 0; i < n; ++i)
                     for (std::size_t ch = 0; ch < c; ++ch) {
                       const std::size_t off = (i * c + ch) * inner;
                       const double k = gamma[ch] * inv_std[ch];
                       for (std::size_t j = 0; j < inner; ++j) {
                         const double dy = o.grad[off + j];
                         dx[off + j] = batch_stats
                                           ? k * (dy - sum_dy[ch] / m - xhat[off + j] * sum_dy_xhat[ch] / m)
                                           : k * dy;
                       }
                     }
                   detail::accumulate_grad(*input.impl(), dx);
                 });
  return result;
}

Tensor softmax_with_temperature(const Tensor& logits, double temperature) {
  if (!(temperature > 0.0) || !std::isfinite(temperature)) {
    throw ConfigError("softmax temperature must be positive and finite");
  }
  if (logits.rank() != 2) throw ShapeError("softmax expects [N, K], got " + shape_string(logits.shape()));
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  std::vector<double> out(n * k);
  for (std::size_t i = 0; i < n; ++i) {
    const double* z = logits.data().data() + i * k;
    const double zmax = *std::max_element(z, z + k);
    double denom = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      out[i * k + j] = std::exp((z[j] - zmax) / temperature);
      denom += out[i * k + j];
    }
    for (std::size_t j = 0; j < k; ++j) out[i * k + j] /= denom;
  }
  Tensor result = detail::make_result({n, k}, std::move(out), logits.dtype());
  if (!detail::should_record({&logits})) return result;
  detail::record(result, {logits}, [logits, n, k, temperature](const TensorImpl& o) {
    std::vector<double> dz(n * k);
    for (std::size_t i = 0; i < n; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < k; ++j) dot += o.grad[i * k + j] * o.data[i * k + j];
      for (std::size_t j = 0; j < k; ++j)
        dz[i * k + j] = o.data[i * k + j] * (o.grad[i * k + j] - dot) / temperature;
    }
    detail::accumulate_grad(*logits.impl(), dz);
  });
  return result;
}

Tensor cross_entropy_loss(const Tensor& logits, std::span<const int> labels) {
  if (logits.rank() != 2) throw ShapeError("cross_entropy_loss expects [N, C] logits");
  const std::size_t n = logits.dim(0), c = logits.dim(1);
  if (labels.size() != n) {
    throw ShapeError("cross_entropy_loss: " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(n) + " rows");
  }
  for (int label : labels) {
    if (label < 0 || static_cast<std::size_t>(label) >= c) {
      throw DataError("label " + std::to_string(label) + " outside [0, " + std::to_string(c) + ")");
    }
  }
  std::vector<double> probs(n * c);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double* z = logits.data().data() + i * c;
    const double zmax = *std::max_element(z, z + c);
    double denom = 0.0;
    for (std::size_t j = 0; j < c; ++j) denom += std::exp(z[j] - zmax);
    const double lse = zmax + std::log(denom);
    total += lse - z[labels[i]];
    for (std::size_t j = 0; j < c; ++j) probs[i * c + j] = std::exp(z[j] - lse);
  }
  Tensor result = detail::make_result({1}, {total / static_cast<double>(n)}, logits.dtype());
  if (!detail::should_record({&logits})) return result;
  std::vector<int> owned(labels.begin(), labels.end());
  detail::record(result, {logits}, [logits, probs = std::move(probs), owned, n, c](const TensorImpl& o) {
    std::vector<double> dz(probs);
    const double g = o.grad[0] / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) dz[i * c + static_cast<std::size_t>(owned[i])] -= 1.0;
    for (auto& v : dz) v *= g;
    detail::accumulate_grad(*logits.impl(), dz);
  });
  return result;
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  Tensor result = detail::make_result(a.shape(), std::move(out), promote(a.dtype(), b.dtype()));
  if (!detail::should_record({&a, &b})) return result;
  detail::record(result, {a, b}, [a, b](const TensorImpl& o) {
    detail::accumulate_grad(*a.impl(), o.grad);
    detail::accumulate_grad(*b.impl(), o.grad);
  });
  return result;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  Tensor result = detail::make_result(a.shape(), std::move(out), promote(a.dtype(), b.dtype()));
  if (!detail::should_record({&a, &b})) return result;
  detail::record(result, {a, b}, [a, b](const TensorImpl& o) {
    std::vector<double> ga(a.size()), gb(b.size());
    for (std::size_t i = 0; i < ga.size(); ++i) {
      ga[i] = o.grad[i] * b[i];
      gb[i] = o.grad[i] * a[i];
    }
    detail::accumulate_grad(*a.impl(), ga);
    detail::accumulate_grad(*b.impl(), gb);
  });
  return result;
}

Tensor scale(const Tensor& a, double factor) {
  return unary(
      a, [factor](double v) { return v * factor; }, [factor](double) { return factor; });
}

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  Tensor result = detail::make_result({1}, {s}, a.dtype());
  if (!detail::should_record({&a})) return result;
  detail::record(result, {a}, [a](const TensorImpl& o) {
    std::vector<double> g(a.size(), o.grad[0]);
    detail::accumulate_grad(*a.impl(), g);
  });
  return result;
}

Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.size())); }

Tensor reshape(const Tensor& a, Shape shape) {
  if (numel(shape) != a.size()) {
    throw ShapeError("cannot reshape " + shape_string(a.shape()) + " to " + shape_string(shape));
  }
  Tensor result = detail::make_result(std::move(shape), std::vector<double>(a.data().begin(), a.data().end()),
                                      a.dtype());
  if (!detail::should_record({&a})) return result;
  detail::record(result, {a}, [a](const TensorImpl& o) { detail::accumulate_grad(*a.impl(), o.grad); });
  return result;
}

double entropy(std::span<const double> probabilities) {
  double h = 0.0;
  for (double p : probabilities)
    if (p > 0.0) h -= p * std::log(p);
  return h;
}

}  // namespace dyconv
