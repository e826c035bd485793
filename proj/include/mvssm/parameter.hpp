// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "mvssm/rng.hpp"
#include "mvssm/tensor.hpp"

namespace mvssm {

class FrozenParameterError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// A named trainable leaf. The gradient accumulator is the leaf's own gradient buffer:
// backward passes add into it and only an optimizer step clears it.
struct Parameter {
  std::string name;
  Tensor value;
  std::vector<double> first_moment;
  std::vector<double> second_moment;
  std::uint64_t step = 0;
  bool frozen = false;

  Parameter(std::string name, Shape shape, std::vector<double> init);

  const Shape& shape() const { return value.shape(); }
  std::vector<double> grad() const { return value.grad(); }
  void zero_grad() { value.zero_grad(); }
  void freeze();
};

enum class Init { kZeros, kOnes, kUniformFanIn, kNormal };

// Owns a model's parameters in registration order. Addresses are stable for the
// store's lifetime, including across moves of the store.
class ParameterStore {
 public:
  Parameter& add(const std::string& name, Shape shape, std::vector<double> init);
  Parameter& add(const std::string& name, Shape shape, Init init, SeededRng& rng, double scale = 0.02);

  Parameter& find(const std::string& name);
  const Parameter& find(const std::string& name) const;
  bool contains(const std::string& name) const;

  std::vector<Parameter*> all();
  std::vector<const Parameter*> all() const;
  std::size_t size() const { return params_.size(); }
  std::size_t scalar_count() const;

  void freeze_all();
  void zero_grad();

 private:
  std::vector<std::unique_ptr<Parameter>> params_;
};

// y = x @ W + b, W: [in, out].
struct Linear {
  Parameter* weight = nullptr;
  Parameter* bias = nullptr;

  static Linear create(ParameterStore& store, const std::string& name, std::size_t in,
                       std::size_t out, SeededRng& rng, bool with_bias = true,
                       Init weight_init = Init::kUniformFanIn);
  Tensor operator()(const Tensor& x) const;
  std::size_t in_features() const { return weight->shape()[0]; }
  std::size_t out_features() const { return weight->shape()[1]; }
};

// Two linear maps with a GELU between them.
struct Mlp {
  Linear first;
  Linear second;

  static Mlp create(ParameterStore& store, const std::string& name, std::size_t in,
                    std::size_t hidden, std::size_t out, SeededRng& rng,
                    Init output_init = Init::kUniformFanIn);
  Tensor operator()(const Tensor& x) const;
};

}  // namespace mvssm
