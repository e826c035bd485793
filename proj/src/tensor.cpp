// SPDX-License-Identifier: Apache-2.0

#include "mvssm/tensor.hpp"

#include <atomic>
#include <cmath>
#include <sstream>

namespace mvssm {

namespace {

std::atomic<std::uint64_t> next_node_id{1};
thread_local GradTape* current_tape = nullptr;

std::shared_ptr<TensorNode> make_node(Shape shape, std::vector<double> values, bool requires_grad) {
  for (auto extent : shape) {
    if (extent == 0) throw ShapeError("tensor extents must be positive: " + shape_str(shape));
  }
  if (numel_of(shape) != values.size()) {
    throw ShapeError("element count " + std::to_string(values.size()) + " does not match shape " +
                     shape_str(shape));
  }
  for (double v : values) {
    if (!std::isfinite(v)) throw NumericError("non-finite value in tensor construction");
  }
  auto node = std::make_shared<TensorNode>();
  node->shape = std::move(shape);
  node->data = std::move(values);
  node->requires_grad = requires_grad;
  node->id = next_node_id.fetch_add(1, std::memory_order_relaxed);
  return node;
}

}  // namespace

std::size_t numel_of(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::vector<double>& TensorNode::grad_buffer() {
  if (grad.empty()) grad.assign(data.size(), 0.0);
  return grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  auto n = numel_of(shape);
  return Tensor(make_node(std::move(shape), std::vector<double>(n, 0.0), requires_grad));
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  auto n = numel_of(shape);
  return Tensor(make_node(std::move(shape), std::vector<double>(n, value), requires_grad));
}

Tensor Tensor::from_vector(Shape shape, std::vector<double> values, bool requires_grad) {
  return Tensor(make_node(std::move(shape), std::move(values), requires_grad));
}

Tensor Tensor::scalar(double value) { return from_vector({1}, {value}); }

std::size_t Tensor::size(std::size_t axis) const {
  if (axis >= dim()) throw ShapeError("axis out of range for shape " + shape_str(shape()));
  return node_->shape[axis];
}

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on non-scalar tensor " + shape_str(shape()));
  return node_->data[0];
}

std::vector<double> Tensor::grad() const {
  if (node_->grad.empty()) return std::vector<double>(numel(), 0.0);
  return node_->grad;
}

std::span<double> Tensor::mutable_values() {
  if (!node_->is_leaf) throw TapeError("only leaf tensors may be mutated in place");
  return node_->data;
}

Tensor Tensor::detach() const { return Tensor(make_node(shape(), node_->data, false)); }

void GradTape::record(std::shared_ptr<TensorNode> output, BackwardFn fn) {
  if (consumed_) throw TapeError("cannot record onto a consumed tape");
  output->is_leaf = false;
  output->requires_grad = true;
  entries_.push_back({std::move(output), std::move(fn)});
}

void GradTape::backward(const Tensor& loss) {
  if (consumed_) throw TapeError("tape already consumed");
  if (!loss.defined() || loss.numel() != 1) {
    throw TapeError("backward requires a scalar loss");
  }
  consumed_ = true;
  if (!loss.requires_grad()) {
    entries_.clear();
    return;
  }
  loss.node()->grad_buffer()[0] += 1.0;
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    if (it->output->grad.empty()) continue;
    it->fn(*it->output);
  }
  entries_.clear();
}

GradTape* active_tape() { return current_tape; }

TapeScope::TapeScope(GradTape& tape) : previous_(current_tape) { current_tape = &tape; }
TapeScope::~TapeScope() { current_tape = previous_; }

NoGradScope::NoGradScope() : previous_(current_tape) { current_tape = nullptr; }
NoGradScope::~NoGradScope() { current_tape = previous_; }

namespace detail {

bool should_track(std::initializer_list<const Tensor*> inputs) {
  if (current_tape == nullptr) return false;
  for (const Tensor* t : inputs) {
    if (t != nullptr && t->defined() && t->requires_grad()) return true;
  }
  return false;
}

Tensor emit(const char* op, Shape shape, std::vector<double> values, bool track,
            GradTape::BackwardFn fn) {
  for (double v : values) {
    if (!std::isfinite(v)) throw NumericError(std::string("non-finite result in ") + op);
  }
  auto node = std::make_shared<TensorNode>();
  node->shape = std::move(shape);
  node->data = std::move(values);
  node->id = next_node_id.fetch_add(1, std::memory_order_relaxed);
  if (track) current_tape->record(node, std::move(fn));
  return Tensor(std::move(node));
}

}  // namespace detail

}  // namespace mvssm
