// SPDX-License-Identifier: Apache-2.0
//
// Raw kernels for the diagonal linear recurrence
//
//   h_k = a_k * h_{k-1} + b_k,   k = 1..L,   h_0 given,
//
// evaluated independently on every lane. Arrays are [L, lanes] row-major so the lane
// loop is innermost and contiguous. Templated on the scalar type so the benchmark can
// run in single precision; the differentiable path uses double.

#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <thread>
#include <vector>

namespace mvssm::kernels {

// Left-to-right evaluation. `initial` is empty (zeros) or holds `lanes` values.
template <typename T>
void sequential_recurrence(std::span<const T> a, std::span<const T> b, std::span<const T> initial,
                           std::span<T> out, std::size_t length, std::size_t lanes) {
  std::vector<T> h(lanes, T(0));
  if (!initial.empty()) std::copy(initial.begin(), initial.end(), h.begin());
  for (std::size_t k = 0; k < length; ++k) {
    const T* ak = a.data() + k * lanes;
    const T* bk = b.data() + k * lanes;
    T* ok = out.data() + k * lanes;
    for (std::size_t j = 0; j < lanes; ++j) {
      h[j] = ak[j] * h[j] + bk[j];
      ok[j] = h[j];
    }
  }
}

// Pair (A, b) stands for the affine map h -> A h + b. Composition "later after
// earlier" is (A2, b2) o (A1, b1) = (A2 A1, A2 b1 + b2); (1, 0) is the identity.
template <typename T>
struct AffinePair {
  T decay;
  T offset;
};

template <typename T>
constexpr AffinePair<T> compose(AffinePair<T> later, AffinePair<T> earlier) {
  return {later.decay * earlier.decay, later.decay * earlier.offset + later.offset};
}

namespace detail {

// Blelloch up-sweep/down-sweep over lanes [lane_begin, lane_end).
template <typename T>
void blelloch_lanes(std::span<const T> a, std::span<const T> b, std::span<const T> initial,
                    std::span<T> out, std::size_t length, std::size_t lanes, std::size_t lane_begin,
                    std::size_t lane_end) {
  const std::size_t width = lane_end - lane_begin;
  std::size_t padded = 1;
  while (padded < length) padded <<= 1;

  std::vector<T> wa(padded * width, T(1));
  std::vector<T> wb(padded * width, T(0));
  for (std::size_t k = 0; k < length; ++k) {
    std::copy_n(a.data() + k * lanes + lane_begin, width, wa.data() + k * width);
    std::copy_n(b.data() + k * lanes + lane_begin, width, wb.data() + k * width);
  }

  // Up-sweep: node i accumulates the composition of its subtree.
  for (std::size_t stride = 1; stride < padded; stride <<= 1) {
    for (std::size_t i = 2 * stride - 1; i < padded; i += 2 * stride) {
      T* ai = wa.data() + i * width;
      T* bi = wb.data() + i * width;
      const T* aj = wa.data() + (i - stride) * width;
      const T* bj = wb.data() + (i - stride) * width;
      for (std::size_t l = 0; l < width; ++l) {
        bi[l] = ai[l] * bj[l] + bi[l];
        ai[l] = ai[l] * aj[l];
      }
    }
  }

  // Down-sweep: turn subtree totals into exclusive prefixes.
  std::fill_n(wa.data() + (padded - 1) * width, width, T(1));
  std::fill_n(wb.data() + (padded - 1) * width, width, T(0));
  for (std::size_t stride = padded >> 1; stride >= 1; stride >>= 1) {
    for (std::size_t i = 2 * stride - 1; i < padded; i += 2 * stride) {
      T* ai = wa.data() + i * width;
      T* bi = wb.data() + i * width;
      T* aj = wa.data() + (i - stride) * width;
      T* bj = wb.data() + (i - stride) * width;
      for (std::size_t l = 0; l < width; ++l) {
        const T ta = aj[l];
        const T tb = bj[l];
        aj[l] = ai[l];
        bj[l] = bi[l];
        bi[l] = ta * bi[l] + tb;
        ai[l] = ta * ai[l];
      }
    }
    if (stride == 1) break;
  }

  // h_k = e_k(E_k(h_0)) with E_k the exclusive prefix.
  for (std::size_t k = 0; k < length; ++k) {
    const T* ex_a = wa.data() + k * width;
    const T* ex_b = wb.data() + k * width;
    const T* ak = a.data() + k * lanes + lane_begin;
    const T* bk = b.data() + k * lanes + lane_begin;
    T* ok = out.data() + k * lanes + lane_begin;
    for (std::size_t l = 0; l < width; ++l) {
      const T h0 = initial.empty() ? T(0) : initial[lane_begin + l];
      const T prev = ex_a[l] * h0 + ex_b[l];
      ok[l] = ak[l] * prev + bk[l];
    }
  }
}

}  // namespace detail

// Work-efficient prefix scan over the associative composition above. Lanes are
// split across `threads` workers; within one lane the tree defines the dependency
// structure.
template <typename T>
void parallel_recurrence(std::span<const T> a, std::span<const T> b, std::span<const T> initial,
                         std::span<T> out, std::size_t length, std::size_t lanes,
                         std::size_t threads = 1) {
  if (length == 0 || lanes == 0) return;
  threads = std::clamp<std::size_t>(threads, 1, lanes);
  if (threads == 1) {
    detail::blelloch_lanes(a, b, initial, out, length, lanes, 0, lanes);
    return;
  }
  std::vector<std::jthread> workers;
  const std::size_t chunk = (lanes + threads - 1) / threads;
  for (std::size_t begin = 0; begin < lanes; begin += chunk) {
    const std::size_t end = std::min(lanes, begin + chunk);
    workers.emplace_back([=] { detail::blelloch_lanes(a, b, initial, out, length, lanes, begin, end); });
  }
}

}  // namespace mvssm::kernels
