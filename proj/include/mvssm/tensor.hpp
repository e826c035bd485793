// SPDX-License-Identifier: Apache-2.0
//
// Dense double-precision tensors with define-by-run reverse-mode differentiation.
//
// A Tensor is a cheap handle onto a shared TensorNode. Primitive ops (see ops.hpp)
// produce new nodes and, when a GradTape is active on the calling thread and any
// input requires a gradient, append a backward rule to that tape. Shapes are
// immutable; reshape produces a new node.

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace mvssm {

using Shape = std::vector<std::size_t>;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class TapeError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

std::size_t numel_of(const Shape& shape);
std::string shape_str(const Shape& shape);

struct TensorNode {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until a gradient reaches this node
  bool requires_grad = false;
  bool is_leaf = true;
  std::uint64_t id = 0;

  std::vector<double>& grad_buffer();
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<TensorNode> node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from_vector(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t dim() const { return node_->shape.size(); }
  std::size_t size(std::size_t axis) const;
  std::size_t numel() const { return node_->data.size(); }

  std::span<const double> values() const { return node_->data; }
  double operator[](std::size_t flat) const { return node_->data[flat]; }
  double item() const;

  bool requires_grad() const { return node_->requires_grad; }
  bool is_leaf() const { return node_->is_leaf; }
  std::uint64_t node_id() const { return node_->id; }

  // Gradient accumulated into this node by the last backward pass(es); all zeros if none.
  std::vector<double> grad() const;
  bool has_grad() const { return !node_->grad.empty(); }
  void zero_grad() { node_->grad.clear(); }

  // Writable storage; only leaves may be mutated (used by optimizers and loaders).
  std::span<double> mutable_values();

  Tensor detach() const;

  const std::shared_ptr<TensorNode>& node() const { return node_; }

 private:
  std::shared_ptr<TensorNode> node_;
};

// Ordered record of executed primitives. Each entry owns its output node, its input
// nodes and a rule that pushes the output gradient into the inputs.
class GradTape {
 public:
  using BackwardFn = std::function<void(const TensorNode& out)>;

  void record(std::shared_ptr<TensorNode> output, BackwardFn fn);
  void backward(const Tensor& loss);

  std::size_t size() const { return entries_.size(); }
  bool consumed() const { return consumed_; }

 private:
  struct Entry {
    std::shared_ptr<TensorNode> output;
    BackwardFn fn;
  };
  std::vector<Entry> entries_;
  bool consumed_ = false;
};

// The tape primitives record onto for the calling thread, or nullptr.
GradTape* active_tape();

// Installs a tape as the calling thread's active tape for the scope's lifetime.
class TapeScope {
 public:
  explicit TapeScope(GradTape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  GradTape* previous_;
};

// Suspends recording; ops evaluated inside produce constants.
class NoGradScope {
 public:
  NoGradScope();
  ~NoGradScope();
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  GradTape* previous_;
};

namespace detail {

// True when a tape is active and any input requires a gradient.
bool should_track(std::initializer_list<const Tensor*> inputs);

// Creates the result node of primitive `op`: rejects non-finite values and, when
// `track` is set, records `fn` on the active tape.
Tensor emit(const char* op, Shape shape, std::vector<double> values, bool track,
            GradTape::BackwardFn fn);

}  // namespace detail

}  // namespace mvssm
