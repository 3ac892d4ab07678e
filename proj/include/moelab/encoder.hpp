// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <variant>
#include <vector>

#include "moelab/model.hpp"
#include "moelab/moe.hpp"

namespace moelab {

struct EncoderLayer {
  MhaParams mha;
  LnParams mha_ln;
  std::variant<FfnCore, MoeLayerParams> ffn;
  LnParams ffn_ln;
  // Present only during adapter fine-tuning.
  std::optional<AdapterParams> mha_adapter;
  std::optional<AdapterParams> ffn_adapter;

  bool is_moe() const { return std::holds_alternative<MoeLayerParams>(ffn); }
};

/// Post-LN BERT-style encoder. Layers alternate an attention sublayer and
/// a feed-forward sublayer; the feed-forward block is either dense or a
/// routed expert bank, fixed at construction.
struct EncoderModel {
  ModelConfig cfg;
  MoEConfig moe_cfg;  // meaningful only when moe layers exist
  Embeddings emb;
  std::vector<EncoderLayer> layers;

  bool is_moe() const { return !layers.empty() && layers.front().is_moe(); }
};

/// Builds a dense (teacher-style) encoder, weights ~N(0, 0.02), biases
/// zero, layer-norm gains one.
EncoderModel init_dense_encoder(const ModelConfig& cfg, Rng& rng);

/// Builds an encoder whose feed-forward blocks are expert banks.
EncoderModel init_moe_encoder(const ModelConfig& cfg, const MoEConfig& moe, Rng& rng);

/// Full forward pass over a flat id batch. Returns the final hidden states
/// [tokens x H]; fills `taps` (one entry per layer) when non-null. `drop`
/// enables dropout for training mode; evaluation passes nullptr.
Tensor encoder_forward(const EncoderModel& model, const std::vector<int>& ids,
                       const BatchLayout& layout, TapSet* taps = nullptr, Rng* drop = nullptr);

/// Deep copy: fresh trainable leaves with identical values. Mutating the
/// clone (training, adapters) leaves the original untouched.
EncoderModel clone_model(const EncoderModel& model);

/// All trainable tensors in canonical (checkpoint) order. Adapters are
/// excluded; enumerate them separately when fine-tuning.
std::vector<ParamRef> parameters(const EncoderModel& model);

std::vector<ParamRef> adapter_parameters(const EncoderModel& model);

void set_trainable(const std::vector<ParamRef>& params, bool trainable);
void zero_grads(const std::vector<ParamRef>& params);

/// Total scalar count across a parameter list.
Index parameter_count(const std::vector<ParamRef>& params);

}  // namespace moelab
