// SPDX-License-Identifier: Apache-2.0
#include "moelab/moe.hpp"

namespace moelab {

void MoEConfig::validate() const {
  if (num_experts < 1) throw ConfigError("moe config: num_experts must be >= 1");
  if (top_k != 1) throw ConfigError("moe config: only top_k = 1 is supported");
  if (lambda_b < 0) throw ConfigError("moe config: lambda_b must be >= 0");
}

MoeLayerParams init_moe(const ModelConfig& cfg, const MoEConfig& moe, Rng& rng) {
  moe.validate();
  MoeLayerParams p;
  p.router.w = Tensor::randn({moe.num_experts, cfg.hidden_dim}, rng, 0.02, true);
  p.router.b = Tensor::zeros({moe.num_experts}, true);
  p.experts.reserve(static_cast<std::size_t>(moe.num_experts));
  for (Index e = 0; e < moe.num_experts; ++e) p.experts.push_back(init_ffn(cfg, rng));
  return p;
}

Tensor route(const Tensor& x, const RouterParams& router) {
  return softmax(add_rowvec(matmul(x, transpose(router.w)), router.b));
}

std::vector<Index> select_expert(const Tensor& probs) { return argmax_rows(probs); }

Tensor moe_forward(const Tensor& x, const MoeLayerParams& moe, Tensor* probs_out) {
  const Index num_experts = static_cast<Index>(moe.experts.size());
  Tensor probs = route(x, moe.router);
  if (probs.cols() != num_experts)
    throw ShapeError("moe_forward: router width does not match expert count");
  if (probs_out) *probs_out = probs;
  std::vector<Index> chosen = select_expert(probs);
  Tensor p_sel = take_per_row(probs, chosen);  // [M x 1]

  // Group token rows by expert, ascending expert index.
  std::vector<std::vector<Index>> groups(static_cast<std::size_t>(num_experts));
  for (Index i = 0; i < x.rows(); ++i)
    groups[static_cast<std::size_t>(chosen[static_cast<std::size_t>(i)])].push_back(i);

  std::vector<Tensor> parts;
  std::vector<Index> order;
  order.reserve(static_cast<std::size_t>(x.rows()));
  for (Index e = 0; e < num_experts; ++e) {
    const auto& rows = groups[static_cast<std::size_t>(e)];
    if (rows.empty()) continue;
    order.insert(order.end(), rows.begin(), rows.end());
    parts.push_back(ffn_core_forward(moe.experts[static_cast<std::size_t>(e)],
                                     gather_rows(x, rows)));
  }
  Tensor combined = parts.size() == 1 ? parts[0] : concat_rows(parts);
  Tensor scaled = scale_rows(combined, gather_rows(p_sel, order));
  // `order` is a permutation of all token rows, so a single scatter puts
  // every expert output back at its token without any accumulation.
  return scatter_rows(scaled, order, x.rows());
}

Tensor load_balance_loss(const Tensor& probs) {
  if (probs.rows() < 1) throw ShapeError("load_balance_loss: empty batch");
  const Index e = probs.cols();
  Tensor uniform = Tensor::full({e}, 1.0 / static_cast<double>(e));
  return kl_div(uniform, mean_rows(probs));
}

void append_moe_params(std::vector<ParamRef>& out, const std::string& prefix,
                       const MoeLayerParams& m) {
  out.push_back({prefix + ".router.w", m.router.w, true});
  out.push_back({prefix + ".router.b", m.router.b, false});
  for (std::size_t e = 0; e < m.experts.size(); ++e)
    append_ffn_params(out, prefix + ".expert" + std::to_string(e), m.experts[e]);
}

}  // namespace moelab
