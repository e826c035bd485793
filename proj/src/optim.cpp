// SPDX-License-Identifier: Apache-2.0

#include "mvssm/optim.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace mvssm {

void adam_update(std::span<double> value, std::span<const double> grad, std::span<double> first_moment,
                 std::span<double> second_moment, std::uint64_t step, double lr, const AdamConfig& config) {
  const std::size_t n = value.size();
  if (grad.size() != n || first_moment.size() != n || second_moment.size() != n)
    throw ShapeError("Adam operands differ in size: value " + std::to_string(n) + ", gradient " +
                     std::to_string(grad.size()));
  if (step == 0) throw std::invalid_argument("Adam step counter starts at 1");
  const double correction1 = 1.0 - std::pow(config.beta1, static_cast<double>(step));
  const double correction2 = 1.0 - std::pow(config.beta2, static_cast<double>(step));
  for (std::size_t i = 0; i < n; ++i) {
    first_moment[i] = config.beta1 * first_moment[i] + (1.0 - config.beta1) * grad[i];
    second_moment[i] = config.beta2 * second_moment[i] + (1.0 - config.beta2) * grad[i] * grad[i];
    const double m_hat = first_moment[i] / correction1;
    const double v_hat = second_moment[i] / correction2;
    value[i] -= lr * m_hat / (std::sqrt(v_hat) + config.epsilon);
  }
}

void adam_step(const std::vector<Parameter*>& params, double lr, const AdamConfig& config) {
  for (const Parameter* p : params)
    if (p->frozen) throw FrozenParameterError("optimizer update on frozen parameter " + p->name);
  for (Parameter* p : params) {
    const std::size_t n = p->value.numel();
    if (p->first_moment.empty()) {
      p->first_moment.assign(n, 0.0);
      p->second_moment.assign(n, 0.0);
    }
    const std::vector<double> grad = p->grad();
    ++p->step;
    adam_update(p->value.mutable_values(), grad, p->first_moment, p->second_moment, p->step, lr, config);
    p->zero_grad();
  }
}

double scheduled_learning_rate(double base, std::uint64_t epoch, std::uint64_t period) {
  if (period == 0) throw std::invalid_argument("learning-rate period must be positive");
  return std::ldexp(base, -static_cast<int>(std::min<std::uint64_t>(epoch / period, 2000)));
}

}  // namespace mvssm
