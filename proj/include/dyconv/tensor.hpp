// SPDX-License-Identifier: Apache-2.0
//
// Dense row-major tensor with a reverse-mode autodiff tape.
//
// Storage is always double precision. A tensor tagged DType::F32 has every
// value (data and gradient) rounded through float after each operation, so
// f32 results match single-precision arithmetic at operation granularity
// while f64 tensors keep the full precision gradient checks need.
#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace dyconv {

enum class DType : std::uint8_t { F32 = 0, F64 = 1 };

const char* to_string(DType dtype);
DType promote(DType a, DType b);

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_string(const Shape& shape);

namespace detail {
struct TapeState;
}

struct TensorImpl {
  Shape shape;
  DType dtype = DType::F32;
  std::vector<double> data;
  std::vector<double> grad;  // empty until a gradient is accumulated
  bool requires_grad = false;
  std::weak_ptr<detail::TapeState> tape;
  std::ptrdiff_t node = -1;  // index on `tape`, -1 for leaves
};

/// Shared handle to a tensor. Copies alias the same storage.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}

  static Tensor zeros(Shape shape, DType dtype = DType::F32, bool requires_grad = false);
  static Tensor full(Shape shape, double value, DType dtype = DType::F32,
                     bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, DType dtype = DType::F32,
                     bool requires_grad = false);
  static Tensor scalar(double value, DType dtype = DType::F32);

  bool defined() const noexcept { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::size_t dim(std::size_t i) const { return impl_->shape.at(i); }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t size() const { return impl_->data.size(); }
  DType dtype() const { return impl_->dtype; }

  std::span<const double> data() const { return impl_->data; }
  /// Direct write access; only optimizers and initializers should use it.
  std::span<double> mutable_data() { return impl_->data; }
  double operator[](std::size_t i) const { return impl_->data[i]; }
  double item() const;

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool value) { impl_->requires_grad = value; }
  bool has_grad() const { return !impl_->grad.empty(); }
  std::span<const double> grad() const { return impl_->grad; }
  std::span<double> mutable_grad();
  void zero_grad() { impl_->grad.clear(); }

  /// Deep copy without tape history.
  Tensor clone() const;
  /// Same values, new dtype; rounds when narrowing to f32.
  Tensor to(DType dtype) const;

  TensorImpl* impl() const { return impl_.get(); }
  const std::shared_ptr<TensorImpl>& impl_ptr() const { return impl_; }

 private:
  std::shared_ptr<TensorImpl> impl_;
};

/// Records differentiable operations while alive. Tapes nest; the innermost
/// live tape on the current thread receives new nodes.
class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  std::size_t size() const;

 private:
  std::shared_ptr<detail::TapeState> state_;
  Tape* previous_;
};

/// Suspends recording on this thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Populates `grad` of every requires_grad tensor reachable from `loss`.
/// Leaf gradients accumulate across calls.
void backward(const Tensor& loss);

namespace detail {

using BackwardFn = std::function<void(const TensorImpl& out)>;

/// True when an active tape exists and any input requires grad.
bool should_record(std::initializer_list<const Tensor*> inputs);

/// Appends a node producing `out` and marks `out` as requiring grad.
void record(Tensor& out, std::vector<Tensor> inputs, BackwardFn fn);

/// Adds `values` into the gradient buffer of `t` (allocating it if needed).
void accumulate_grad(TensorImpl& t, std::span<const double> values);
std::span<double> grad_buffer(TensorImpl& t);

/// Rounds `values` through float when `dtype` is F32.
void round_to(DType dtype, std::span<double> values);

/// Creates an output tensor whose data is rounded to `dtype`.
Tensor make_result(Shape shape, std::vector<double> values, DType dtype);

}  // namespace detail

}  // namespace dyconv
