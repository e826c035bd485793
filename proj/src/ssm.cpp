// SPDX-License-Identifier: Apache-2.0

#include "mvssm/ssm.hpp"

#include <cmath>

namespace mvssm {

namespace {

// Lifts a per-token [L, N] tensor to [L, 1, N] so it broadcasts over channels.
Tensor per_token_state(const Tensor& t, std::size_t length, std::size_t state_dim, const char* what) {
  if (t.dim() == 2 && t.size(0) == length && t.size(1) == state_dim) return reshape(t, {length, 1, state_dim});
  if (t.dim() == 3 && t.size(0) == length && t.size(2) == state_dim) return t;
  throw ShapeError(std::string(what) + " must be [L, N] or [L, C, N], got " + shape_str(t.shape()) +
                   " for L=" + std::to_string(length) + ", N=" + std::to_string(state_dim));
}

void expect_shape(const Tensor& t, const Shape& shape, const char* what) {
  if (t.shape() != shape)
    throw ShapeError(std::string(what) + " expected " + shape_str(shape) + ", got " + shape_str(t.shape()));
}

}  // namespace

DiscreteSsm discretize_zoh(const Tensor& a, const Tensor& b, const Tensor& delta, bool allow_zero_step) {
  if (a.dim() != 2) throw ShapeError("state values must be [C, N], got " + shape_str(a.shape()));
  const std::size_t channels = a.size(0), state_dim = a.size(1);
  if (delta.dim() != 2 || delta.size(1) != channels)
    throw ShapeError("step sizes must be [L, C], got " + shape_str(delta.shape()));
  const std::size_t length = delta.size(0);
  for (double v : delta.values()) {
    if (!(v > 0.0) && !(allow_zero_step && v == 0.0))
      throw std::invalid_argument("step sizes must be positive, got " + std::to_string(v));
  }
  for (double v : a.values())
    if (!std::isfinite(v)) throw std::invalid_argument("state values must be finite");
  const Tensor b3 = per_token_state(b, length, state_dim, "input map");
  if (b3.size(1) != 1 && b3.size(1) != channels) throw ShapeError("input map channel extent mismatch");

  const Tensor step = reshape(delta, {length, channels, 1});
  DiscreteSsm out;
  out.decay = exp(mul(step, a));
  out.input_gain = mul(zoh_gain(step, a), b3);
  return out;
}

ScanResult scan(const DiscreteSsm& ssm, const Tensor& x, const Tensor& c, const Tensor& d,
                const Tensor& initial, ScanMode mode) {
  const Shape& s = ssm.decay.shape();
  if (s.size() != 3 || ssm.input_gain.shape() != s)
    throw ShapeError("discrete system tensors must share a [L, C, N] shape");
  const std::size_t length = s[0], channels = s[1], state_dim = s[2];
  if (x.dim() != 2 || x.size(0) != length || x.size(1) != channels)
    throw ShapeError("scan input expected [" + std::to_string(length) + ", " + std::to_string(channels) +
                     "], got " + shape_str(x.shape()));
  const Tensor c3 = per_token_state(c, length, state_dim, "output map");
  expect_shape(d, {channels}, "skip term");
  if (initial.defined()) expect_shape(initial, {channels, state_dim}, "initial state");

  const Tensor drive = mul(ssm.input_gain, reshape(x, {length, channels, 1}));
  ScanResult out;
  out.states = linear_recurrence(ssm.decay, drive, initial, mode);
  out.y = add(sum(mul(out.states, c3), 2), mul(x, d));
  out.h_last = reshape(slice(out.states, 0, length - 1, length), {channels, state_dim});
  return out;
}

SelectiveScan SelectiveScan::create(ParameterStore& store, const std::string& name, const SsmConfig& config,
                                    SeededRng& rng) {
  if (config.channels == 0 || config.state_dim == 0) throw std::invalid_argument("empty scan configuration");
  if (!(config.initial_step > 0.0)) throw std::invalid_argument("initial step must be positive");
  SelectiveScan s;
  s.config_ = config;
  const std::size_t c = config.channels, n = config.state_dim;

  std::vector<double> a_log(c * n);
  for (std::size_t i = 0; i < c; ++i)
    for (std::size_t j = 0; j < n; ++j) a_log[i * n + j] = std::log(static_cast<double>(j + 1));
  s.a_log = &store.add(name + ".a_log", {c, n}, std::move(a_log));
  s.skip = &store.add(name + ".d", {c}, std::vector<double>(c, 1.0));
  s.b_proj = Linear::create(store, name + ".b_proj", c, n, rng, false);
  s.c_proj = Linear::create(store, name + ".c_proj", c, n, rng, false);
  s.delta_proj = Linear::create(store, name + ".delta_proj", c, c, rng, true);
  // softplus(bias) equals the initial step
  const double bias = std::log(std::expm1(config.initial_step));
  for (double& v : s.delta_proj.bias->value.mutable_values()) v = bias;
  return s;
}

Tensor SelectiveScan::state_decay() const { return scale(exp(a_log->value), -1.0); }

ScanResult SelectiveScan::operator()(const Tensor& tokens, const Tensor& values, const ScanModulation& modulation,
                                     const Tensor& initial, ScanMode mode) const {
  const std::size_t c = config_.channels, n = config_.state_dim;
  if (tokens.dim() != 2 || tokens.size(1) != c)
    throw ShapeError("scan tokens expected [L, " + std::to_string(c) + "], got " + shape_str(tokens.shape()));
  const std::size_t length = tokens.size(0);
  const Tensor& x = values.defined() ? values : tokens;
  expect_shape(x, tokens.shape(), "scan values");

  Tensor b = b_proj(tokens);
  Tensor cm = c_proj(tokens);
  Tensor step_pre = delta_proj(tokens);
  if (modulation.gate_b.defined()) {
    expect_shape(modulation.gate_b, {n}, "b gate");
    b = mul(b, modulation.gate_b);
  }
  if (modulation.gate_c.defined()) {
    expect_shape(modulation.gate_c, {n}, "c gate");
    cm = mul(cm, modulation.gate_c);
  }
  if (modulation.gate_delta.defined()) {
    expect_shape(modulation.gate_delta, {c}, "step gate");
    step_pre = mul(step_pre, modulation.gate_delta);
  }
  if (modulation.c_offset.defined()) {
    const Tensor off = modulation.c_offset;
    if (off.dim() == 2) {
      expect_shape(off, {length, n}, "c offset");
      cm = add(cm, off);
    } else {
      expect_shape(off, {length, c, n}, "c offset");
      cm = add(reshape(cm, {length, 1, n}), off);
    }
  }
  const DiscreteSsm ssm = discretize_zoh(state_decay(), b, softplus(step_pre));
  return scan(ssm, x, cm, skip->value, initial, mode);
}

}  // namespace mvssm
