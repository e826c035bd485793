// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <string>

#include "mvssm/ops.hpp"
#include "mvssm/parameter.hpp"
#include "mvssm/tensor.hpp"

namespace mvssm {

// Per-token discretized diagonal system for a sequence of L tokens, C channels and
// N state dimensions: decay = exp(delta * a), input_gain = (exp(delta * a) - 1) / a * b.
struct DiscreteSsm {
  Tensor decay;       // [L, C, N]
  Tensor input_gain;  // [L, C, N]

  std::size_t length() const { return decay.size(0); }
};

// a: [C, N] (negative), b: [L, N] or [L, C, N], delta: [L, C] (positive).
// Zero step sizes are rejected unless `allow_zero_step` is set (used to probe the limit).
DiscreteSsm discretize_zoh(const Tensor& a, const Tensor& b, const Tensor& delta,
                           bool allow_zero_step = false);

struct ScanResult {
  Tensor y;       // [L, C]
  Tensor states;  // [L, C, N]
  Tensor h_last;  // [C, N]
};

// h_k = decay_k * h_{k-1} + input_gain_k * x_k,  y_k = sum_n c_k[n] h_k[., n] + d * x_k.
// x: [L, C], c: [L, N] or [L, C, N], d: [C], initial: undefined (zeros) or [C, N].
ScanResult scan(const DiscreteSsm& ssm, const Tensor& x, const Tensor& c, const Tensor& d,
                const Tensor& initial, ScanMode mode);
inline ScanResult scan_sequential(const DiscreteSsm& ssm, const Tensor& x, const Tensor& c,
                                  const Tensor& d, const Tensor& initial = {}) {
  return scan(ssm, x, c, d, initial, ScanMode::kSequential);
}
inline ScanResult scan_parallel(const DiscreteSsm& ssm, const Tensor& x, const Tensor& c,
                                const Tensor& d, const Tensor& initial = {}) {
  return scan(ssm, x, c, d, initial, ScanMode::kParallel);
}

// Per-sequence modulation. Undefined members are neutral.
struct ScanModulation {
  Tensor gate_b;      // [N]; multiplies the b projection
  Tensor gate_c;      // [N]; multiplies the c projection
  Tensor gate_delta;  // [C]; multiplies the pre-softplus step
  Tensor c_offset;    // [L, N] or [L, C, N]; added to c after gating
};

struct SsmConfig {
  std::size_t channels = 64;
  std::size_t state_dim = 16;
  double initial_step = 0.1;
};

// Input-dependent diagonal scan over a token sequence: b, c and the step size are
// per-token linear maps of the tokens.
class SelectiveScan {
 public:
  static SelectiveScan create(ParameterStore& store, const std::string& name, const SsmConfig& config,
                              SeededRng& rng);

  // tokens: [L, C] drive b, c and delta. values: [L, C] is the scanned signal and the
  // skip input; undefined means tokens.
  ScanResult operator()(const Tensor& tokens, const Tensor& values, const ScanModulation& modulation,
                        const Tensor& initial, ScanMode mode = ScanMode::kSequential) const;

  Tensor state_decay() const;  // a = -exp(a_log), [C, N]
  std::size_t channels() const { return config_.channels; }
  std::size_t state_dim() const { return config_.state_dim; }

  Parameter* a_log = nullptr;  // [C, N]
  Parameter* skip = nullptr;   // d, [C]
  Linear b_proj;               // C -> N
  Linear c_proj;               // C -> N
  Linear delta_proj;           // C -> C, bias holds the step offset

 private:
  SsmConfig config_;
};

}  // namespace mvssm
