// SPDX-License-Identifier: Apache-2.0
#include "moelab/optim.hpp"

#include <cmath>

#include "moelab/errors.hpp"

namespace moelab {

double lr_at(Index step, double peak_lr, Index warmup_steps, Index total_steps) {
  if (step < 0 || step > total_steps || warmup_steps >= total_steps || warmup_steps < 0)
    throw ConfigError("lr_at: require 0 <= step <= total and warmup < total");
  if (step <= warmup_steps) {
    if (warmup_steps == 0) return peak_lr;
    return peak_lr * static_cast<double>(step) / static_cast<double>(warmup_steps);
  }
  return peak_lr * static_cast<double>(total_steps - step) /
         static_cast<double>(total_steps - warmup_steps);
}

void AdamState::init(const std::vector<ParamRef>& params) {
  step = 0;
  m.clear();
  v.clear();
  for (const auto& p : params) {
    m.push_back(Arr::Zero(p.tensor.size()));
    v.push_back(Arr::Zero(p.tensor.size()));
  }
}

void adam_step(const std::vector<ParamRef>& params, AdamState& state, double lr,
               const AdamConfig& cfg) {
  if (state.m.size() != params.size() || state.v.size() != params.size())
    throw ShapeError("adam_step: state does not match the parameter list");
  const Index t = ++state.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& p = params[i];
    Arr& value = p.tensor.leaf_array();
    Arr& m = state.m[i];
    Arr& v = state.v[i];
    if (m.size() != value.size())
      throw ShapeError("adam_step: moment buffer shape mismatch for " + p.name);
    if (p.tensor.has_grad()) {
      const Arr& g = p.tensor.grad();
      if (!g.isFinite().all())
        throw NumericError("adam_step: non-finite gradient for " + p.name);
      m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
      v = cfg.beta2 * v + (1.0 - cfg.beta2) * g.square();
    } else {
      m *= cfg.beta1;
      v *= cfg.beta2;
    }
    value -= lr * (m / bc1) / ((v / bc2).sqrt() + cfg.eps);
    if (p.decay && cfg.weight_decay != 0.0) value -= lr * cfg.weight_decay * value;
  }
}

}  // namespace moelab
