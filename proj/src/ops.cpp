// SPDX-License-Identifier: Apache-2.0

#include "mvssm/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

#include "mvssm/scan_kernels.hpp"

namespace mvssm {

namespace {

using NodePtr = std::shared_ptr<TensorNode>;
using detail::emit;
using detail::should_track;

#if defined(__x86_64__) && defined(__GNUC__) && !defined(__clang__)
#define MVSSM_VECTOR_CLONES [[gnu::target_clones("avx2", "default")]]
#else
#define MVSSM_VECTOR_CLONES
#endif

// out[i, :] += sum_t a[i, t] * b[t, :]; a [m, k], b [k, n], out [m, n], all row-major.
MVSSM_VECTOR_CLONES void accumulate_product(std::size_t m, std::size_t k, std::size_t n, const double* a,
                                            const double* b, double* out) {
  for (std::size_t i = 0; i < m; ++i) {
    double* row = out + i * n;
    for (std::size_t t = 0; t < k; ++t) {
      const double s = a[i * k + t];
      if (s == 0.0) continue;
      const double* bt = b + t * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += s * bt[j];
    }
  }
}

// out[t, :] += sum_i a[i, t] * b[i, :]; a [m, k], b [m, n], out [k, n].
MVSSM_VECTOR_CLONES void accumulate_transposed_product(std::size_t m, std::size_t k, std::size_t n, const double* a,
                                                       const double* b, double* out) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* bi = b + i * n;
    for (std::size_t t = 0; t < k; ++t) {
      const double s = a[i * k + t];
      if (s == 0.0) continue;
      double* row = out + t * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += s * bi[j];
    }
  }
}

// Null when the node does not take gradients.
std::vector<double>* grad_sink(const NodePtr& node) {
  return node->requires_grad ? &node->grad_buffer() : nullptr;
}

Shape broadcast_shape(const Shape& a, const Shape& b) {
  const std::size_t rank = std::max(a.size(), b.size());
  Shape out(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    const std::size_t ea = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
    const std::size_t eb = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
    if (ea != eb && ea != 1 && eb != 1) {
      throw ShapeError("cannot broadcast " + shape_str(a) + " with " + shape_str(b));
    }
    out[i] = std::max(ea, eb);
  }
  return out;
}

// Flat input offset for every output element; empty when `in` equals `out`.
std::vector<std::uint32_t> broadcast_index(const Shape& in, const Shape& out) {
  if (in == out) return {};
  const std::size_t rank = out.size();
  const std::size_t pad = rank - in.size();
  std::vector<std::size_t> stride(rank, 0);
  std::size_t s = 1;
  for (std::size_t i = rank; i-- > pad;) {
    const std::size_t e = in[i - pad];
    stride[i] = e == 1 ? 0 : s;
    s *= e;
  }
  const std::size_t n = numel_of(out);
  std::vector<std::uint32_t> index(n);
  std::vector<std::size_t> counter(rank, 0);
  std::size_t offset = 0;
  for (std::size_t flat = 0; flat < n; ++flat) {
    index[flat] = static_cast<std::uint32_t>(offset);
    for (std::size_t d = rank; d-- > 0;) {
      if (++counter[d] < out[d]) {
        offset += stride[d];
        break;
      }
      offset -= stride[d] * (out[d] - 1);
      counter[d] = 0;
    }
  }
  return index;
}

inline std::size_t at(const std::vector<std::uint32_t>& map, std::size_t i) {
  return map.empty() ? i : map[i];
}

// out = f(a, b); partials da(x, y), db(x, y).
template <class F, class DA, class DB>
Tensor binary(const char* name, const Tensor& a, const Tensor& b, F f, DA da, DB db) {
  Shape out_shape = broadcast_shape(a.shape(), b.shape());
  auto ia = broadcast_index(a.shape(), out_shape);
  auto ib = broadcast_index(b.shape(), out_shape);
  const std::size_t n = numel_of(out_shape);
  const double* av = a.values().data();
  const double* bv = b.values().data();
  std::vector<double> out(n);
  if (ia.empty() && ib.empty()) {
    for (std::size_t i = 0; i < n; ++i) out[i] = f(av[i], bv[i]);
  } else {
    for (std::size_t i = 0; i < n; ++i) out[i] = f(av[at(ia, i)], bv[at(ib, i)]);
  }
  const bool track = should_track({&a, &b});
  NodePtr an = a.node(), bn = b.node();
  return emit(name, std::move(out_shape), std::move(out), track,
              [an, bn, ia = std::move(ia), ib = std::move(ib), da, db](const TensorNode& o) {
                const auto& g = o.grad;
                const double* av = an->data.data();
                const double* bv = bn->data.data();
                if (auto* ga = grad_sink(an)) {
                  for (std::size_t i = 0; i < g.size(); ++i) {
                    const std::size_t p = at(ia, i), q = at(ib, i);
                    (*ga)[p] += g[i] * da(av[p], bv[q]);
                  }
                }
                if (auto* gb = grad_sink(bn)) {
                  for (std::size_t i = 0; i < g.size(); ++i) {
                    const std::size_t p = at(ia, i), q = at(ib, i);
                    (*gb)[q] += g[i] * db(av[p], bv[q]);
                  }
                }
              });
}

// out = f(x); derivative df(x, y) with y = f(x).
template <class F, class DF>
Tensor unary(const char* name, const Tensor& x, F f, DF df) {
  const auto xv = x.values();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = f(xv[i]);
  NodePtr xn = x.node();
  return emit(name, x.shape(), std::move(out), should_track({&x}), [xn, df](const TensorNode& o) {
    auto* gx = grad_sink(xn);
    if (!gx) return;
    for (std::size_t i = 0; i < o.grad.size(); ++i) {
      (*gx)[i] += o.grad[i] * df(xn->data[i], o.data[i]);
    }
  });
}

struct AxisSplit {
  std::size_t outer, extent, inner;
};

AxisSplit split_axis(const Shape& shape, std::size_t axis) {
  if (axis >= shape.size()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_str(shape));
  }
  AxisSplit s{1, shape[axis], 1};
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

constexpr double kZohSeriesThreshold = 1e-4;

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(
      "add", a, b, [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(
      "subtract", a, b, [](double x, double y) { return x - y; },
      [](double, double) { return 1.0; }, [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(
      "multiply", a, b, [](double x, double y) { return x * y; },
      [](double, double y) { return y; }, [](double x, double) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary(
      "divide", a, b, [](double x, double y) { return x / y; },
      [](double, double y) { return 1.0 / y; }, [](double x, double y) { return -x / (y * y); });
}

Tensor scale(const Tensor& x, double factor) {
  return unary(
      "scale", x, [factor](double v) { return v * factor; },
      [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& x, double value) {
  return unary(
      "add-scalar", x, [value](double v) { return v + value; }, [](double, double) { return 1.0; });
}

Tensor matmul(const Tensor& x, const Tensor& w) {
  if (w.dim() != 2 || x.dim() < 1 || x.shape().back() != w.size(0)) {
    throw ShapeError("matmul shape mismatch: " + shape_str(x.shape()) + " @ " + shape_str(w.shape()));
  }
  const std::size_t k_dim = w.size(0), n_dim = w.size(1);
  const std::size_t m_dim = x.numel() / k_dim;
  Shape out_shape = x.shape();
  out_shape.back() = n_dim;
  std::vector<double> out(m_dim * n_dim, 0.0);
  accumulate_product(m_dim, k_dim, n_dim, x.values().data(), w.values().data(), out.data());
  NodePtr xn = x.node(), wn = w.node();
  return emit("matrix-multiply", std::move(out_shape), std::move(out), should_track({&x, &w}),
              [xn, wn, m_dim, k_dim, n_dim](const TensorNode& o) {
                const double* g = o.grad.data();
                if (auto* gx = grad_sink(xn)) {
                  // gx = g @ w^T, via a transposed copy so the inner loop is an axpy.
                  std::vector<double> wt(n_dim * k_dim);
                  for (std::size_t k = 0; k < k_dim; ++k)
                    for (std::size_t j = 0; j < n_dim; ++j) wt[j * k_dim + k] = wn->data[k * n_dim + j];
                  accumulate_product(m_dim, n_dim, k_dim, g, wt.data(), gx->data());
                }
                if (auto* gw = grad_sink(wn))
                  accumulate_transposed_product(m_dim, k_dim, n_dim, xn->data.data(), g, gw->data());
              });
}

Tensor exp(const Tensor& x) {
  return unary(
      "exponential", x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& x) {
  return unary(
      "natural-log", x, [](double v) { return std::log(v); },
      [](double v, double) { return 1.0 / v; });
}

Tensor softplus(const Tensor& x) {
  return unary(
      "softplus", x,
      [](double v) { return v > 0 ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v)); },
      [](double v, double) { return stable_sigmoid(v); });
}

Tensor sigmoid(const Tensor& x) {
  return unary(
      "sigmoid", x, [](double v) { return stable_sigmoid(v); },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor tanh(const Tensor& x) {
  return unary(
      "tanh", x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

Tensor gelu(const Tensor& x) {
  constexpr double kS = 0.7978845608028654;  // sqrt(2 / pi)
  constexpr double kC = 0.044715;
  return unary(
      "gelu", x,
      [](double v) { return 0.5 * v * (1.0 + std::tanh(kS * (v + kC * v * v * v))); },
      [](double v, double) {
        const double t = std::tanh(kS * (v + kC * v * v * v));
        return 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * kS * (1.0 + 3.0 * kC * v * v);
      });
}

Tensor abs(const Tensor& x) {
  return unary(
      "abs", x, [](double v) { return std::fabs(v); },
      [](double v, double) { return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0); });
}

Tensor pow(const Tensor& x, double exponent) {
  return unary(
      "power", x, [exponent](double v) { return std::pow(v, exponent); },
      [exponent](double v, double) { return exponent * std::pow(v, exponent - 1.0); });
}

Tensor clip(const Tensor& x, double lo, double hi) {
  if (!(lo <= hi)) throw std::invalid_argument("clip bounds must satisfy lo <= hi");
  return unary(
      "clip", x, [lo, hi](double v) { return std::clamp(v, lo, hi); },
      [lo, hi](double v, double) { return (v > lo && v < hi) ? 1.0 : 0.0; });
}

Tensor sum(const Tensor& x) {
  double total = 0.0;
  for (double v : x.values()) total += v;
  NodePtr xn = x.node();
  return emit("reduce-sum", {1}, {total}, should_track({&x}), [xn](const TensorNode& o) {
    if (auto* gx = grad_sink(xn))
      for (double& g : *gx) g += o.grad[0];
  });
}

Tensor sum(const Tensor& x, std::size_t axis, bool keepdim) {
  const auto s = split_axis(x.shape(), axis);
  Shape out_shape = x.shape();
  if (keepdim) {
    out_shape[axis] = 1;
  } else {
    out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
    if (out_shape.empty()) out_shape = {1};
  }
  std::vector<double> out(s.outer * s.inner, 0.0);
  const double* xv = x.values().data();
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t j = 0; j < s.extent; ++j)
      for (std::size_t i = 0; i < s.inner; ++i)
        out[o * s.inner + i] += xv[(o * s.extent + j) * s.inner + i];
  NodePtr xn = x.node();
  return emit("reduce-sum", std::move(out_shape), std::move(out), should_track({&x}),
              [xn, s](const TensorNode& o_node) {
                auto* gx = grad_sink(xn);
                if (!gx) return;
                for (std::size_t o = 0; o < s.outer; ++o)
                  for (std::size_t j = 0; j < s.extent; ++j)
                    for (std::size_t i = 0; i < s.inner; ++i)
                      (*gx)[(o * s.extent + j) * s.inner + i] += o_node.grad[o * s.inner + i];
              });
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

Tensor mean(const Tensor& x, std::size_t axis, bool keepdim) {
  const auto extent = static_cast<double>(split_axis(x.shape(), axis).extent);
  return scale(sum(x, axis, keepdim), 1.0 / extent);
}

namespace {

Tensor softmax_impl(const Tensor& x, std::size_t axis, bool log_space) {
  const auto s = split_axis(x.shape(), axis);
  const double* xv = x.values().data();
  std::vector<double> out(x.numel());
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      const std::size_t base = o * s.extent * s.inner + i;
      double m = xv[base];
      for (std::size_t j = 1; j < s.extent; ++j) m = std::max(m, xv[base + j * s.inner]);
      double z = 0.0;
      for (std::size_t j = 0; j < s.extent; ++j) z += std::exp(xv[base + j * s.inner] - m);
      const double log_z = std::log(z);
      for (std::size_t j = 0; j < s.extent; ++j) {
        const double shifted = xv[base + j * s.inner] - m;
        out[base + j * s.inner] = log_space ? shifted - log_z : std::exp(shifted) / z;
      }
    }
  }
  NodePtr xn = x.node();
  return emit(log_space ? "log-softmax" : "softmax", x.shape(), std::move(out), should_track({&x}),
              [xn, s, log_space](const TensorNode& o_node) {
                auto* gx = grad_sink(xn);
                if (!gx) return;
                const auto& g = o_node.grad;
                const auto& y = o_node.data;
                for (std::size_t o = 0; o < s.outer; ++o) {
                  for (std::size_t i = 0; i < s.inner; ++i) {
                    const std::size_t base = o * s.extent * s.inner + i;
                    double acc = 0.0;
                    for (std::size_t j = 0; j < s.extent; ++j) {
                      const std::size_t p = base + j * s.inner;
                      acc += log_space ? g[p] : g[p] * y[p];
                    }
                    for (std::size_t j = 0; j < s.extent; ++j) {
                      const std::size_t p = base + j * s.inner;
                      (*gx)[p] += log_space ? g[p] - std::exp(y[p]) * acc : y[p] * (g[p] - acc);
                    }
                  }
                }
              });
}

}  // namespace

Tensor softmax(const Tensor& x, std::size_t axis) { return softmax_impl(x, axis, false); }
Tensor log_softmax(const Tensor& x, std::size_t axis) { return softmax_impl(x, axis, true); }

Tensor layer_norm(const Tensor& x, double eps) {
  const std::size_t width = x.shape().back();
  const std::size_t rows = x.numel() / width;
  const double* xv = x.values().data();
  std::vector<double> out(x.numel());
  std::vector<double> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = xv + r * width;
    double mu = 0.0;
    for (std::size_t j = 0; j < width; ++j) mu += row[j];
    mu /= static_cast<double>(width);
    double var = 0.0;
    for (std::size_t j = 0; j < width; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(width);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < width; ++j) out[r * width + j] = (row[j] - mu) * inv_std[r];
  }
  NodePtr xn = x.node();
  return emit("layer-normalization", x.shape(), std::move(out), should_track({&x}),
              [xn, width, rows, inv_std = std::move(inv_std)](const TensorNode& o) {
                auto* gx = grad_sink(xn);
                if (!gx) return;
                const double n = static_cast<double>(width);
                for (std::size_t r = 0; r < rows; ++r) {
                  const double* g = o.grad.data() + r * width;
                  const double* y = o.data.data() + r * width;
                  double g_mean = 0.0, gy_mean = 0.0;
                  for (std::size_t j = 0; j < width; ++j) {
                    g_mean += g[j];
                    gy_mean += g[j] * y[j];
                  }
                  g_mean /= n;
                  gy_mean /= n;
                  for (std::size_t j = 0; j < width; ++j) {
                    (*gx)[r * width + j] += inv_std[r] * (g[j] - g_mean - y[j] * gy_mean);
                  }
                }
              });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (numel_of(shape) != x.numel()) {
    throw ShapeError("cannot reshape " + shape_str(x.shape()) + " to " + shape_str(shape));
  }
  NodePtr xn = x.node();
  std::vector<double> values(x.values().begin(), x.values().end());
  return emit("reshape", std::move(shape), std::move(values), should_track({&x}),
              [xn](const TensorNode& o) {
                if (auto* gx = grad_sink(xn))
                  for (std::size_t i = 0; i < o.grad.size(); ++i) (*gx)[i] += o.grad[i];
              });
}

Tensor permute(const Tensor& x, const std::vector<std::size_t>& axes) {
  const std::size_t rank = x.dim();
  if (axes.size() != rank) throw ShapeError("permute needs one axis per dimension");
  std::vector<bool> seen(rank, false);
  for (auto a : axes) {
    if (a >= rank || seen[a]) throw ShapeError("permute axes must be a permutation");
    seen[a] = true;
  }
  const Shape& in = x.shape();
  std::vector<std::size_t> in_stride(rank);
  std::size_t s = 1;
  for (std::size_t i = rank; i-- > 0;) {
    in_stride[i] = s;
    s *= in[i];
  }
  Shape out_shape(rank);
  std::vector<std::size_t> stride(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    out_shape[i] = in[axes[i]];
    stride[i] = in_stride[axes[i]];
  }
  const std::size_t n = x.numel();
  std::vector<std::uint32_t> source(n);
  std::vector<std::size_t> counter(rank, 0);
  std::size_t offset = 0;
  for (std::size_t flat = 0; flat < n; ++flat) {
    source[flat] = static_cast<std::uint32_t>(offset);
    for (std::size_t d = rank; d-- > 0;) {
      if (++counter[d] < out_shape[d]) {
        offset += stride[d];
        break;
      }
      offset -= stride[d] * (out_shape[d] - 1);
      counter[d] = 0;
    }
  }
  std::vector<double> out(n);
  const double* xv = x.values().data();
  for (std::size_t i = 0; i < n; ++i) out[i] = xv[source[i]];
  NodePtr xn = x.node();
  return emit("permute-axes", std::move(out_shape), std::move(out), should_track({&x}),
              [xn, source = std::move(source)](const TensorNode& o) {
                if (auto* gx = grad_sink(xn))
                  for (std::size_t i = 0; i < o.grad.size(); ++i) (*gx)[source[i]] += o.grad[i];
              });
}

Tensor transpose(const Tensor& x, std::size_t axis0, std::size_t axis1) {
  std::vector<std::size_t> axes(x.dim());
  for (std::size_t i = 0; i < axes.size(); ++i) axes[i] = i;
  if (axis0 >= axes.size() || axis1 >= axes.size()) throw ShapeError("transpose axis out of range");
  std::swap(axes[axis0], axes[axis1]);
  return permute(x, axes);
}

Tensor gather(const Tensor& x, std::size_t axis, const std::vector<std::size_t>& index) {
  const auto s = split_axis(x.shape(), axis);
  if (index.empty()) throw ShapeError("gather needs at least one index");
  for (auto i : index) {
    if (i >= s.extent) {
      throw std::out_of_range("gather index " + std::to_string(i) + " out of range for extent " +
                              std::to_string(s.extent));
    }
  }
  Shape out_shape = x.shape();
  out_shape[axis] = index.size();
  const std::size_t m = index.size();
  std::vector<double> out(s.outer * m * s.inner);
  const double* xv = x.values().data();
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t j = 0; j < m; ++j)
      std::copy_n(xv + (o * s.extent + index[j]) * s.inner, s.inner, out.data() + (o * m + j) * s.inner);
  NodePtr xn = x.node();
  return emit("gather-by-index", std::move(out_shape), std::move(out), should_track({&x}),
              [xn, s, index](const TensorNode& o_node) {
                auto* gx = grad_sink(xn);
                if (!gx) return;
                const std::size_t m = index.size();
                for (std::size_t o = 0; o < s.outer; ++o)
                  for (std::size_t j = 0; j < m; ++j) {
                    double* dst = gx->data() + (o * s.extent + index[j]) * s.inner;
                    const double* src = o_node.grad.data() + (o * m + j) * s.inner;
                    for (std::size_t i = 0; i < s.inner; ++i) dst[i] += src[i];
                  }
              });
}

Tensor scatter_add(const Tensor& x, std::size_t axis, const std::vector<std::size_t>& index,
                   std::size_t extent) {
  const auto s = split_axis(x.shape(), axis);
  if (index.size() != s.extent) throw ShapeError("scatter-add needs one index per source slice");
  for (auto i : index) {
    if (i >= extent) throw std::out_of_range("scatter-add index out of range");
  }
  Shape out_shape = x.shape();
  out_shape[axis] = extent;
  std::vector<double> out(s.outer * extent * s.inner, 0.0);
  const double* xv = x.values().data();
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t j = 0; j < s.extent; ++j) {
      double* dst = out.data() + (o * extent + index[j]) * s.inner;
      const double* src = xv + (o * s.extent + j) * s.inner;
      for (std::size_t i = 0; i < s.inner; ++i) dst[i] += src[i];
    }
  NodePtr xn = x.node();
  return emit("scatter-add-by-index", std::move(out_shape), std::move(out), should_track({&x}),
              [xn, s, index, extent](const TensorNode& o_node) {
                auto* gx = grad_sink(xn);
                if (!gx) return;
                for (std::size_t o = 0; o < s.outer; ++o)
                  for (std::size_t j = 0; j < s.extent; ++j) {
                    const double* src = o_node.grad.data() + (o * extent + index[j]) * s.inner;
                    double* dst = gx->data() + (o * s.extent + j) * s.inner;
                    for (std::size_t i = 0; i < s.inner; ++i) dst[i] += src[i];
                  }
              });
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat of zero tensors");
  const Shape& ref = parts.front().shape();
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.dim() != ref.size()) throw ShapeError("concat rank mismatch");
    for (std::size_t d = 0; d < ref.size(); ++d) {
      if (d != axis && p.shape()[d] != ref[d]) {
        throw ShapeError("concat extent mismatch: " + shape_str(p.shape()) + " vs " + shape_str(ref));
      }
    }
    total += split_axis(p.shape(), axis).extent;
  }
  const auto s0 = split_axis(ref, axis);
  Shape out_shape = ref;
  out_shape[axis] = total;
  std::vector<double> out(s0.outer * total * s0.inner);
  std::vector<std::size_t> starts;
  std::size_t start = 0;
  for (const auto& p : parts) {
    const std::size_t e = p.shape()[axis];
    starts.push_back(start);
    const double* pv = p.values().data();
    for (std::size_t o = 0; o < s0.outer; ++o)
      std::copy_n(pv + o * e * s0.inner, e * s0.inner, out.data() + (o * total + start) * s0.inner);
    start += e;
  }
  bool track = false;
  for (const auto& p : parts) track = track || should_track({&p});
  std::vector<NodePtr> nodes;
  for (const auto& p : parts) nodes.push_back(p.node());
  return emit("concatenate", std::move(out_shape), std::move(out), track,
              [nodes, starts, s0, total, axis](const TensorNode& o_node) {
                for (std::size_t k = 0; k < nodes.size(); ++k) {
                  auto* g = grad_sink(nodes[k]);
                  if (!g) continue;
                  const std::size_t e = nodes[k]->shape[axis];
                  for (std::size_t o = 0; o < s0.outer; ++o) {
                    const double* src = o_node.grad.data() + (o * total + starts[k]) * s0.inner;
                    double* dst = g->data() + o * e * s0.inner;
                    for (std::size_t i = 0; i < e * s0.inner; ++i) dst[i] += src[i];
                  }
                }
              });
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end) {
  const auto s = split_axis(x.shape(), axis);
  if (begin >= end || end > s.extent) {
    throw ShapeError("invalid slice [" + std::to_string(begin) + "," + std::to_string(end) +
                     ") of extent " + std::to_string(s.extent));
  }
  const std::size_t m = end - begin;
  Shape out_shape = x.shape();
  out_shape[axis] = m;
  std::vector<double> out(s.outer * m * s.inner);
  const double* xv = x.values().data();
  for (std::size_t o = 0; o < s.outer; ++o)
    std::copy_n(xv + (o * s.extent + begin) * s.inner, m * s.inner, out.data() + o * m * s.inner);
  NodePtr xn = x.node();
  return emit("slice", std::move(out_shape), std::move(out), should_track({&x}),
              [xn, s, begin, m](const TensorNode& o_node) {
                auto* gx = grad_sink(xn);
                if (!gx) return;
                for (std::size_t o = 0; o < s.outer; ++o) {
                  const double* src = o_node.grad.data() + o * m * s.inner;
                  double* dst = gx->data() + (o * s.extent + begin) * s.inner;
                  for (std::size_t i = 0; i < m * s.inner; ++i) dst[i] += src[i];
                }
              });
}

Tensor straight_through(const Tensor& soft, const Tensor& hard) {
  if (soft.shape() != hard.shape()) throw ShapeError("straight-through operands differ in shape");
  NodePtr sn = soft.node();
  std::vector<double> values(hard.values().begin(), hard.values().end());
  return emit("straight-through", soft.shape(), std::move(values), should_track({&soft}),
              [sn](const TensorNode& o) {
                if (auto* gs = grad_sink(sn))
                  for (std::size_t i = 0; i < o.grad.size(); ++i) (*gs)[i] += o.grad[i];
              });
}

Tensor zoh_gain(const Tensor& delta, const Tensor& a) {
  return binary(
      "zoh-gain", delta, a,
      [](double d, double av) {
        const double x = d * av;
        if (std::fabs(x) < kZohSeriesThreshold) return d * (1.0 + x / 2.0 + x * x / 6.0);
        return std::expm1(x) / av;
      },
      [](double d, double av) {
        const double x = d * av;
        if (std::fabs(x) < kZohSeriesThreshold) return 1.0 + x + x * x / 2.0;
        return std::exp(x);
      },
      [](double d, double av) {
        const double x = d * av;
        if (std::fabs(x) < kZohSeriesThreshold) return d * d * (0.5 + x / 3.0);
        return (x * std::exp(x) - std::expm1(x)) / (av * av);
      });
}

Tensor linear_recurrence(const Tensor& decay, const Tensor& input, const Tensor& initial,
                         ScanMode mode) {
  if (decay.shape() != input.shape() || decay.dim() < 2) {
    throw ShapeError("linear recurrence needs matching [L, lanes...] operands, got " +
                     shape_str(decay.shape()) + " and " + shape_str(input.shape()));
  }
  const std::size_t length = decay.size(0);
  const std::size_t lanes = decay.numel() / length;
  if (initial.defined()) {
    const Shape lane_shape(decay.shape().begin() + 1, decay.shape().end());
    if (initial.shape() != lane_shape) {
      throw ShapeError("initial state shape " + shape_str(initial.shape()) + " does not match " +
                       shape_str(lane_shape));
    }
  }
  const std::span<const double> h0 = initial.defined() ? initial.values() : std::span<const double>{};
  std::vector<double> out(decay.numel());
  auto run = [mode](std::span<const double> a, std::span<const double> b, std::span<const double> init,
                    std::span<double> dst, std::size_t len, std::size_t width) {
    if (mode == ScanMode::kSequential)
      kernels::sequential_recurrence<double>(a, b, init, dst, len, width);
    else
      kernels::parallel_recurrence<double>(a, b, init, dst, len, width);
  };
  run(decay.values(), input.values(), h0, out, length, lanes);

  const bool track = should_track({&decay, &input, initial.defined() ? &initial : nullptr});
  NodePtr an = decay.node(), un = input.node();
  NodePtr hn = initial.defined() ? initial.node() : nullptr;
  return emit("linear-recurrence", decay.shape(), std::move(out), track,
              [an, un, hn, length, lanes, run](const TensorNode& o) {
                // Adjoint recurrence G_k = gH_k + a_{k+1} G_{k+1}, evaluated as a forward
                // recurrence over the reversed sequence.
                std::vector<double> ra(length * lanes, 0.0), rb(length * lanes), rg(length * lanes);
                for (std::size_t j = 0; j < length; ++j) {
                  const std::size_t k = length - 1 - j;
                  std::copy_n(o.grad.data() + k * lanes, lanes, rb.data() + j * lanes);
                  if (j > 0) std::copy_n(an->data.data() + (k + 1) * lanes, lanes, ra.data() + j * lanes);
                }
                run(ra, rb, {}, rg, length, lanes);
                auto adj = [&](std::size_t k, std::size_t l) { return rg[(length - 1 - k) * lanes + l]; };
                if (auto* gu = grad_sink(un))
                  for (std::size_t k = 0; k < length; ++k)
                    for (std::size_t l = 0; l < lanes; ++l) (*gu)[k * lanes + l] += adj(k, l);
                if (auto* ga = grad_sink(an)) {
                  for (std::size_t k = 0; k < length; ++k) {
                    for (std::size_t l = 0; l < lanes; ++l) {
                      const double prev = k > 0 ? o.data[(k - 1) * lanes + l] : (hn ? hn->data[l] : 0.0);
                      (*ga)[k * lanes + l] += adj(k, l) * prev;
                    }
                  }
                }
                if (hn) {
                  if (auto* gh = grad_sink(hn))
                    for (std::size_t l = 0; l < lanes; ++l) (*gh)[l] += an->data[l] * adj(0, l);
                }
              });
}

}  // namespace mvssm
