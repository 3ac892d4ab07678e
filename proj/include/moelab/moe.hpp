// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "moelab/model.hpp"

namespace moelab {

struct RouterParams {
  Tensor w;  // [E x H]
  Tensor b;  // [E]
};

struct MoEConfig {
  Index num_experts = 64;
  Index top_k = 1;  // the only supported value
  double lambda_b = 1000.0;
  void validate() const;
};

/// Router plus expert bank replacing the dense feed-forward block of one
/// layer. Layer norm stays with the sublayer, not with the experts.
struct MoeLayerParams {
  RouterParams router;
  std::vector<FfnCore> experts;
};

MoeLayerParams init_moe(const ModelConfig& cfg, const MoEConfig& moe, Rng& rng);

/// Per-token expert distribution: softmax(x W_r^T + b_r), [M x E].
Tensor route(const Tensor& x, const RouterParams& router);

/// Top-1 expert per token; ties resolve to the lowest index. The selection
/// is discrete and carries no gradient.
std::vector<Index> select_expert(const Tensor& probs);

/// Routed forward pass: each token goes through its top-1 expert and the
/// result is scaled by that expert's routing probability, which keeps the
/// router on the gradient path. Tokens are grouped per expert for batched
/// evaluation; results are bit-identical to a per-token loop. When
/// `probs_out` is given it receives the full routing distribution.
Tensor moe_forward(const Tensor& x, const MoeLayerParams& moe, Tensor* probs_out = nullptr);

/// KL(uniform || batch-average routing distribution): zero exactly when
/// experts are used evenly on average.
Tensor load_balance_loss(const Tensor& probs);

void append_moe_params(std::vector<ParamRef>& out, const std::string& prefix,
                       const MoeLayerParams& m);

}  // namespace moelab
