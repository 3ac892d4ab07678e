// SPDX-License-Identifier: Apache-2.0
#include "moelab/grad_check.hpp"

#include <algorithm>
#include <cmath>

#include "moelab/errors.hpp"

namespace moelab {

double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double step) {
  if (!x.requires_grad()) throw std::invalid_argument("grad_check: x must require gradients");
  Tensor loss = f(x);
  if (loss.size() != 1) throw ShapeError("grad_check: f must be scalar-valued");
  x.zero_grad();
  backward(loss);
  if (!x.has_grad())
    throw NumericError("grad_check: x received no gradient (f does not depend on x?)");
  const Arr analytic = x.grad();

  Arr& buf = x.leaf_array();
  double worst = 0.0;
  for (Index i = 0; i < buf.size(); ++i) {
    const double orig = buf[i];
    buf[i] = orig + step;
    const double hi = f(x).value();
    buf[i] = orig - step;
    const double lo = f(x).value();
    buf[i] = orig;
    const double fd = (hi - lo) / (2.0 * step);
    const double rel = std::abs(analytic[i] - fd) / (std::abs(analytic[i]) + std::abs(fd) + 1e-8);
    worst = std::max(worst, rel);
  }
  x.zero_grad();
  return worst;
}

}  // namespace moelab
