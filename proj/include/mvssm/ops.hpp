// SPDX-License-Identifier: Apache-2.0
//
// Differentiable primitives. Every op validates shapes, rejects non-finite results
// with NumericError, and records a backward rule on the active tape when any input
// requires a gradient.
//
// Binary elementwise ops broadcast numpy-style: shapes are right-aligned and each
// pair of extents must be equal or one of them 1.

#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "mvssm/tensor.hpp"

namespace mvssm {

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

Tensor scale(const Tensor& x, double factor);
Tensor add_scalar(const Tensor& x, double value);

// x[..., K] @ w[K, N] -> [..., N]. The right operand must be 2-D.
Tensor matmul(const Tensor& x, const Tensor& w);

Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor softplus(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor gelu(const Tensor& x);  // tanh approximation
Tensor abs(const Tensor& x);
Tensor pow(const Tensor& x, double exponent);
Tensor clip(const Tensor& x, double lo, double hi);

Tensor sum(const Tensor& x);  // -> [1]
Tensor sum(const Tensor& x, std::size_t axis, bool keepdim = false);
Tensor mean(const Tensor& x);
Tensor mean(const Tensor& x, std::size_t axis, bool keepdim = false);

Tensor softmax(const Tensor& x, std::size_t axis);
Tensor log_softmax(const Tensor& x, std::size_t axis);

// Normalizes over the last axis (no affine part).
Tensor layer_norm(const Tensor& x, double eps = 1e-5);

Tensor reshape(const Tensor& x, Shape shape);
Tensor permute(const Tensor& x, const std::vector<std::size_t>& axes);
Tensor transpose(const Tensor& x, std::size_t axis0, std::size_t axis1);

// out[..., j, ...] = x[..., index[j], ...] along `axis`.
Tensor gather(const Tensor& x, std::size_t axis, const std::vector<std::size_t>& index);
// out has extent `extent` along `axis`; out[..., index[j], ...] += x[..., j, ...].
Tensor scatter_add(const Tensor& x, std::size_t axis, const std::vector<std::size_t>& index,
                   std::size_t extent);

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end);

// Forward value is `hard`; the gradient is passed to `soft` unchanged.
Tensor straight_through(const Tensor& soft, const Tensor& hard);

// ZOH input gain g(delta, a) = (exp(delta * a) - 1) / a, broadcast over both inputs.
// Uses the series delta * (1 + delta*a/2 + (delta*a)^2/6) when |delta * a| < 1e-4.
Tensor zoh_gain(const Tensor& delta, const Tensor& a);

enum class ScanMode { kSequential, kParallel };

// Diagonal linear recurrence h_k = decay_k * h_{k-1} + input_k over axis 0.
// decay, input: [L, lanes...]; initial (optional, undefined tensor = zeros): [lanes...].
// Returns every hidden state, [L, lanes...].
Tensor linear_recurrence(const Tensor& decay, const Tensor& input, const Tensor& initial,
                         ScanMode mode);

}  // namespace mvssm
