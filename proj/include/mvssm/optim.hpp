// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "mvssm/parameter.hpp"

namespace mvssm {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// One bias-corrected Adam update in place. `step` is the 1-based count of updates
// applied to this tensor including this one.
void adam_update(std::span<double> value, std::span<const double> grad, std::span<double> first_moment,
                 std::span<double> second_moment, std::uint64_t step, double lr, const AdamConfig& config = {});

// Applies adam_update to every parameter, using its accumulated gradient (zeros if
// none), then clears the gradients. Throws FrozenParameterError if any parameter is
// frozen; nothing is modified in that case.
void adam_step(const std::vector<Parameter*>& params, double lr, const AdamConfig& config = {});

// base * 0.5^floor(epoch / period).
double scheduled_learning_rate(double base, std::uint64_t epoch, std::uint64_t period);

}  // namespace mvssm
