// SPDX-License-Identifier: Apache-2.0

#include "mvssm/parameter.hpp"

#include <cmath>

#include "mvssm/ops.hpp"

namespace mvssm {

Parameter::Parameter(std::string n, Shape shape, std::vector<double> init)
    : name(std::move(n)), value(Tensor::from_vector(std::move(shape), std::move(init), true)) {
  first_moment.assign(value.numel(), 0.0);
  second_moment.assign(value.numel(), 0.0);
}

void Parameter::freeze() {
  frozen = true;
  value.node()->requires_grad = false;
  value.zero_grad();
}

Parameter& ParameterStore::add(const std::string& name, Shape shape, std::vector<double> init) {
  if (contains(name)) throw std::invalid_argument("duplicate parameter name: " + name);
  params_.push_back(std::make_unique<Parameter>(name, std::move(shape), std::move(init)));
  return *params_.back();
}

Parameter& ParameterStore::add(const std::string& name, Shape shape, Init init, SeededRng& rng,
                               double scale) {
  const std::size_t n = numel_of(shape);
  std::vector<double> values(n, 0.0);
  switch (init) {
    case Init::kZeros:
      break;
    case Init::kOnes:
      values.assign(n, 1.0);
      break;
    case Init::kUniformFanIn: {
      const double bound = 1.0 / std::sqrt(static_cast<double>(shape.front()));
      for (auto& v : values) v = rng.uniform(-bound, bound);
      break;
    }
    case Init::kNormal:
      for (auto& v : values) v = scale * rng.normal();
      break;
  }
  return add(name, std::move(shape), std::move(values));
}

Parameter& ParameterStore::find(const std::string& name) {
  for (auto& p : params_)
    if (p->name == name) return *p;
  throw std::out_of_range("no parameter named " + name);
}

const Parameter& ParameterStore::find(const std::string& name) const {
  for (const auto& p : params_)
    if (p->name == name) return *p;
  throw std::out_of_range("no parameter named " + name);
}

bool ParameterStore::contains(const std::string& name) const {
  for (const auto& p : params_)
    if (p->name == name) return true;
  return false;
}

std::vector<Parameter*> ParameterStore::all() {
  std::vector<Parameter*> out;
  for (auto& p : params_) out.push_back(p.get());
  return out;
}

std::vector<const Parameter*> ParameterStore::all() const {
  std::vector<const Parameter*> out;
  for (const auto& p : params_) out.push_back(p.get());
  return out;
}

std::size_t ParameterStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p->value.numel();
  return n;
}

void ParameterStore::freeze_all() {
  for (auto& p : params_) p->freeze();
}

void ParameterStore::zero_grad() {
  for (auto& p : params_) p->zero_grad();
}

Linear Linear::create(ParameterStore& store, const std::string& name, std::size_t in,
                      std::size_t out, SeededRng& rng, bool with_bias, Init weight_init) {
  Linear layer;
  layer.weight = &store.add(name + ".weight", {in, out}, weight_init, rng);
  if (with_bias) layer.bias = &store.add(name + ".bias", {out}, Init::kZeros, rng);
  return layer;
}

Tensor Linear::operator()(const Tensor& x) const {
  Tensor y = matmul(x, weight->value);
  return bias ? add(y, bias->value) : y;
}

Mlp Mlp::create(ParameterStore& store, const std::string& name, std::size_t in, std::size_t hidden,
                std::size_t out, SeededRng& rng, Init output_init) {
  return {Linear::create(store, name + ".fc1", in, hidden, rng),
          Linear::create(store, name + ".fc2", hidden, out, rng, true, output_init)};
}

Tensor Mlp::operator()(const Tensor& x) const { return second(gelu(first(x))); }

}  // namespace mvssm
