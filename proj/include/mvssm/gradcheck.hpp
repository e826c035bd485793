// SPDX-License-Identifier: Apache-2.0
//
// Central-difference gradient checks with the fourth-order five-point stencil
// (-f(x+2h) + 8f(x+h) - 8f(x-h) + f(x-2h)) / 12h. The error reported for each element is
// |analytic - numeric| / max(|analytic|, |numeric|, 1e-8); the maximum is returned.

#pragma once

#include <functional>
#include <vector>

#include "mvssm/tensor.hpp"

namespace mvssm {

inline constexpr double kGradCheckFloor = 1e-8;

double relative_gradient_error(double analytic, double numeric);

// f maps a tensor to a scalar; the check runs at `point`.
double finite_difference_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& point,
                               double step = 1e-3);

// `loss` reads the given requires-grad leaves, which are perturbed in place
// (and restored) to form the central differences.
double finite_difference_check(const std::function<Tensor()>& loss, std::vector<Tensor> leaves,
                               double step = 1e-3);

struct GradCheckReport {
  double worst = 0.0;
  std::size_t leaf = 0;
  std::size_t element = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t checked = 0;
};

GradCheckReport finite_difference_report(const std::function<Tensor()>& loss, std::vector<Tensor> leaves,
                                         double step = 1e-3);

}  // namespace mvssm
