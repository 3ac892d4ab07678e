// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>

#include "moelab/tensor.hpp"

namespace moelab {

/// Compares the analytic gradient of a scalar-valued function against a
/// central finite difference at `x` and returns the worst coordinate's
/// relative error |analytic - fd| / (|analytic| + |fd| + 1e-8).
///
/// `x` must be a requires_grad leaf; `f` is re-evaluated with `x` perturbed
/// in place, so it must read `x` by reference (capture the Tensor handle,
/// not a copy of its values).
double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                  double step = 1e-5);

}  // namespace moelab
