// SPDX-License-Identifier: Apache-2.0
#include "dyconv/tensor.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>

#include "dyconv/error.hpp"

namespace dyconv {

namespace detail {

struct Node {
  std::vector<Tensor> inputs;
  std::shared_ptr<TensorImpl> output;
  BackwardFn fn;
};

struct TapeState {
  std::vector<Node> nodes;
};

namespace {
thread_local Tape* active_tape = nullptr;
thread_local bool grad_enabled = true;
thread_local std::shared_ptr<TapeState> active_state;
}  // namespace

}  // namespace detail

const char* to_string(DType dtype) { return dtype == DType::F32 ? "f32" : "f64"; }

DType promote(DType a, DType b) {
  return (a == DType::F64 || b == DType::F64) ? DType::F64 : DType::F32;
}

std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

namespace {

void check_shape(const Shape& shape) {
  for (auto extent : shape) {
    if (extent == 0) throw ShapeError("tensor extents must be positive, got " + shape_string(shape));
  }
}

}  // namespace

Tensor Tensor::zeros(Shape shape, DType dtype, bool requires_grad) {
  return full(std::move(shape), 0.0, dtype, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, DType dtype, bool requires_grad) {
  check_shape(shape);
  auto n = numel(shape);
  return from(std::move(shape), std::vector<double>(n, value), dtype, requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<double> values, DType dtype, bool requires_grad) {
  check_shape(shape);
  if (numel(shape) != values.size()) {
    throw ShapeError("shape " + shape_string(shape) + " does not match " +
                     std::to_string(values.size()) + " values");
  }
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->dtype = dtype;
  impl->data = std::move(values);
  impl->requires_grad = requires_grad;
  detail::round_to(dtype, impl->data);
  return Tensor(std::move(impl));
}

Tensor Tensor::scalar(double value, DType dtype) { return from({1}, {value}, dtype); }

double Tensor::item() const {
  if (size() != 1) throw ShapeError("item() on tensor of shape " + shape_string(shape()));
  return impl_->data[0];
}

std::span<double> Tensor::mutable_grad() { return detail::grad_buffer(*impl_); }

Tensor Tensor::clone() const {
  return from(impl_->shape, impl_->data, impl_->dtype, impl_->requires_grad);
}

Tensor Tensor::to(DType dtype) const { return from(impl_->shape, impl_->data, dtype); }

Tape::Tape() : state_(std::make_shared<detail::TapeState>()), previous_(detail::active_tape) {
  detail::active_tape = this;
  detail::active_state = state_;
}

Tape::~Tape() {
  detail::active_tape = previous_;
  detail::active_state = previous_ ? previous_->state_ : nullptr;
}

std::size_t Tape::size() const { return state_->nodes.size(); }

NoGradGuard::NoGradGuard() : previous_(detail::grad_enabled) { detail::grad_enabled = false; }
NoGradGuard::~NoGradGuard() { detail::grad_enabled = previous_; }

void backward(const Tensor& loss) {
  if (!loss.defined()) throw StateError("backward on undefined tensor");
  if (loss.size() != 1) {
    throw ShapeError("backward needs a scalar root, got " + shape_string(loss.shape()));
  }
  auto* root = loss.impl();
  auto state = root->tape.lock();
  if (root->node < 0 || !state) throw StateError("backward root is not on a live tape");

  auto last = static_cast<std::size_t>(root->node);
  for (std::size_t i = 0; i <= last; ++i) state->nodes[i].output->grad.clear();
  root->grad.assign(1, 1.0);

  for (std::size_t i = last + 1; i-- > 0;) {
    auto& node = state->nodes[i];
    if (node.output->grad.empty()) continue;
    node.fn(*node.output);
  }
}

namespace detail {

bool should_record(std::initializer_list<const Tensor*> inputs) {
  if (!grad_enabled || active_tape == nullptr) return false;
  return std::any_of(inputs.begin(), inputs.end(),
                     [](const Tensor* t) { return t && t->defined() && t->requires_grad(); });
}

void record(Tensor& out, std::vector<Tensor> inputs, BackwardFn fn) {
  auto& nodes = active_state->nodes;
  out.impl()->requires_grad = true;
  out.impl()->tape = active_state;
  out.impl()->node = static_cast<std::ptrdiff_t>(nodes.size());
  nodes.push_back(Node{std::move(inputs), out.impl_ptr(), std::move(fn)});
}

std::span<double> grad_buffer(TensorImpl& t) {
  if (t.grad.empty()) t.grad.assign(t.data.size(), 0.0);
  return t.grad;
}

void accumulate_grad(TensorImpl& t, std::span<const double> values) {
  if (!t.requires_grad) return;
  if (values.size() != t.data.size()) throw ShapeError("gradient size mismatch");
  auto buf = grad_buffer(t);
  for (std::size_t i = 0; i < values.size(); ++i) buf[i] += values[i];
  round_to(t.dtype, buf);
}

void round_to(DType dtype, std::span<double> values) {
  if (dtype != DType::F32) return;
  for (auto& v : values) v = static_cast<double>(static_cast<float>(v));
}

Tensor make_result(Shape shape, std::vector<double> values, DType dtype) {
  return Tensor::from(std::move(shape), std::move(values), dtype);
}

}  // namespace detail

}  // namespace dyconv
