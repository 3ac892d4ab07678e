// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "moelab/model.hpp"

namespace moelab {

/// Linear warmup from 0 to peak_lr over warmup_steps, then linear decay
/// to 0 at total_steps. Requires 0 <= step <= total_steps and
/// warmup_steps < total_steps.
double lr_at(Index step, double peak_lr, Index warmup_steps, Index total_steps);

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

/// First/second moment buffers, parallel to a fixed parameter list.
struct AdamState {
  Index step = 0;  // completed updates
  std::vector<Arr> m;
  std::vector<Arr> v;

  void init(const std::vector<ParamRef>& params);
  bool initialized() const { return !m.empty(); }
};

/// One Adam update with bias correction and decoupled weight decay.
/// Parameters without an accumulated gradient are treated as
/// zero-gradient; decay applies only to ParamRefs marked decay (weight
/// matrices, not biases or layer-norm parameters). Non-finite gradients
/// raise NumericError naming the parameter.
void adam_step(const std::vector<ParamRef>& params, AdamState& state, double lr,
               const AdamConfig& cfg);

}  // namespace moelab
