// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "moelab/ops.hpp"
#include "moelab/tensor.hpp"

namespace moelab {

struct ModelConfig {
  Index hidden_dim = 128;
  Index num_layers = 12;
  Index num_heads = 2;
  Index ffn_dim = 0;  // 0 means 4 * hidden_dim, resolved by finalize()
  Index vocab_size = 30522;
  Index max_seq_len = 128;
  double ln_eps = 1e-12;
  double dropout = 0.0;

  Index head_dim() const { return hidden_dim / num_heads; }
  void finalize();        // fills derived defaults, then validates
  void validate() const;  // positive dims, hidden divisible by heads
  bool same_geometry(const ModelConfig& o) const;
};

/// Shapes and padding structure of one token batch. Token tensors are flat
/// [batch_size * seq_len x ...]; position t of sequence s lives at row
/// s * seq_len + t. Positions at or beyond lengths[s] are padding.
struct BatchLayout {
  Index batch_size = 0;
  Index seq_len = 0;
  std::vector<Index> lengths;

  Index tokens() const { return batch_size * seq_len; }
  Index valid_tokens() const;
  /// Flat row indices of all non-padding tokens, in (sequence, position)
  /// order.
  std::vector<Index> valid_rows() const;
  /// Prefix offsets of each sequence inside the valid-row space;
  /// size batch_size + 1.
  std::vector<Index> valid_offsets() const;
  static BatchLayout full(Index batch_size, Index seq_len);
  void validate() const;
};

struct LnParams {
  Tensor gamma;  // [H]
  Tensor beta;   // [H]
};

/// Two-projection feed-forward block (no layer norm): GELU(x W1 + b1) W2 + b2.
/// Also the parameter set of a single expert.
struct FfnCore {
  Tensor w1;  // [H x F]
  Tensor b1;  // [F]
  Tensor w2;  // [F x H]
  Tensor b2;  // [H]
};

struct MhaParams {
  Tensor wq, bq;  // [H x H], [H]
  Tensor wk, bk;
  Tensor wv, bv;
  Tensor wo, bo;
};

/// Bottleneck module added to a sublayer output during adapter fine-tuning:
/// z + GELU(z Wd + bd) Wu + bu. With Wu and bu zero it is exactly the
/// identity.
struct AdapterParams {
  Tensor down;    // [H x a]
  Tensor b_down;  // [a]
  Tensor up;      // [a x H]
  Tensor b_up;    // [H]
};

/// Activations captured at the distillation sites during a forward pass.
/// All row counts refer to non-padding tokens only, in valid-row order.
struct SublayerTaps {
  Tensor inner;  // sublayer output before the residual addition  [N x H]
  Tensor trunk;  // post-layer-norm hidden state                  [N x H]
};

struct LayerTaps {
  SublayerTaps mha;
  SublayerTaps ffn;
  std::vector<Tensor> q;  // per head [N x head_dim]
  std::vector<Tensor> k;  // per head [N x head_dim]
  Tensor moe_probs;       // [N x E]; undefined for dense layers
};

struct TapSet {
  std::vector<LayerTaps> layers;
};

struct Embeddings {
  Tensor tok;  // [V x H]
  Tensor pos;  // [max_seq_len x H]
};

LnParams init_ln(Index dim);
FfnCore init_ffn(const ModelConfig& cfg, Rng& rng);
MhaParams init_mha(const ModelConfig& cfg, Rng& rng);
Embeddings init_embeddings(const ModelConfig& cfg, Rng& rng);
AdapterParams init_adapter(Index hidden_dim, Index adapter_dim, Rng& rng);

Tensor apply_ln(const LnParams& ln, const Tensor& x, double eps);
Tensor apply_adapter(const AdapterParams& a, const Tensor& z);

/// Token embedding + learned position embedding for a flat id batch.
/// Ids must be < vocab_size and seq_len <= max_seq_len.
Tensor embed(const Embeddings& emb, const std::vector<int>& ids, const BatchLayout& layout,
             const ModelConfig& cfg);

Tensor ffn_core_forward(const FfnCore& ffn, const Tensor& x);

/// Gathers the non-padding rows of a [tokens x D] tensor.
Tensor gather_valid(const Tensor& m, const BatchLayout& layout);

/// out = LN(h + MHA(h)). Scaled dot-product attention with softmax over the
/// keys of the same sequence only; padding keys are excluded. When `taps`
/// is given, records the pre-residual output, the post-LN output, and the
/// per-head q/k projections of all non-padding tokens. `adapter` (optional)
/// transforms the sublayer output inside the residual path; `drop`
/// activates dropout when the config rate is positive.
Tensor mha_sublayer(const MhaParams& p, const LnParams& ln, const Tensor& h,
                    const ModelConfig& cfg, const BatchLayout& layout, LayerTaps* taps,
                    const AdapterParams* adapter = nullptr, Rng* drop = nullptr);

/// out = LN(h + FFN(h)) for the dense feed-forward sublayer, with the same
/// tap and adapter conventions as mha_sublayer.
Tensor ffn_sublayer(const FfnCore& ffn, const LnParams& ln, const Tensor& h,
                    const ModelConfig& cfg, const BatchLayout& layout, LayerTaps* taps,
                    const AdapterParams* adapter = nullptr, Rng* drop = nullptr);

/// Vocabulary logits with the output projection tied to the token
/// embedding table: hidden [M x H] -> [M x V].
Tensor mlm_logits(const Tensor& hidden, const Embeddings& emb);

/// Masked-LM training loss: tied-projection logits + masked cross entropy.
Tensor mlm_loss(const Tensor& hidden, const Embeddings& emb, const std::vector<int>& targets,
                const std::vector<std::uint8_t>& mask);

/// One named trainable tensor. `decay` marks parameters subject to weight
/// decay (weight matrices; biases and layer-norm parameters are exempt).
struct ParamRef {
  std::string name;
  Tensor tensor;
  bool decay = false;
};

void append_ln_params(std::vector<ParamRef>& out, const std::string& prefix, const LnParams& ln);
void append_ffn_params(std::vector<ParamRef>& out, const std::string& prefix, const FfnCore& f);
void append_mha_params(std::vector<ParamRef>& out, const std::string& prefix, const MhaParams& m);
void append_adapter_params(std::vector<ParamRef>& out, const std::string& prefix,
                           const AdapterParams& a);

}  // namespace moelab
