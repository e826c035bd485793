// SPDX-License-Identifier: Apache-2.0

#include "mvssm/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace mvssm {

double relative_gradient_error(double analytic, double numeric) {
  const double denom = std::max({std::fabs(analytic), std::fabs(numeric), kGradCheckFloor});
  return std::fabs(analytic - numeric) / denom;
}

double finite_difference_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& point,
                               double step) {
  if (!(step > 0)) throw std::invalid_argument("finite-difference step must be positive");
  Tensor leaf = Tensor::from_vector(point.shape(), std::vector<double>(point.values().begin(),
                                                                       point.values().end()),
                                    true);
  return finite_difference_check([&] { return f(leaf); }, {leaf}, step);
}

double finite_difference_check(const std::function<Tensor()>& loss, std::vector<Tensor> leaves,
                               double step) {
  return finite_difference_report(loss, std::move(leaves), step).worst;
}

GradCheckReport finite_difference_report(const std::function<Tensor()>& loss, std::vector<Tensor> leaves,
                                         double step) {
  if (!(step > 0)) throw std::invalid_argument("finite-difference step must be positive");
  for (auto& leaf : leaves) leaf.zero_grad();
  {
    GradTape tape;
    TapeScope scope(tape);
    Tensor value = loss();
    tape.backward(value);
  }
  GradCheckReport report;
  for (std::size_t l = 0; l < leaves.size(); ++l) {
    Tensor& leaf = leaves[l];
    const std::vector<double> analytic = leaf.grad();
    auto values = leaf.mutable_values();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      double f[4];
      {
        NoGradScope no_grad;
        const double offsets[4] = {2.0, 1.0, -1.0, -2.0};
        for (int k = 0; k < 4; ++k) {
          values[i] = saved + offsets[k] * step;
          f[k] = loss().item();
        }
      }
      values[i] = saved;
      const double numeric = (8.0 * (f[1] - f[2]) - (f[0] - f[3])) / (12.0 * step);
      if (!std::isfinite(numeric)) throw NumericError("non-finite finite-difference evaluation");
      const double err = relative_gradient_error(analytic[i], numeric);
      ++report.checked;
      if (err > report.worst) report = {err, l, i, analytic[i], numeric, report.checked};
    }
    leaf.zero_grad();
  }
  return report;
}

}  // namespace mvssm
