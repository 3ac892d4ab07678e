// SPDX-License-Identifier: Apache-2.0
#include "moelab/model.hpp"

#include <numeric>

namespace moelab {

namespace {
constexpr double kInitStd = 0.02;
constexpr double kAttnMask = -1e30;
}  // namespace

void ModelConfig::finalize() {
  if (ffn_dim == 0) ffn_dim = 4 * hidden_dim;
  validate();
}

void ModelConfig::validate() const {
  if (hidden_dim <= 0 || num_layers < 0 || num_heads <= 0 || ffn_dim <= 0 || vocab_size <= 0 ||
      max_seq_len <= 0)
    throw ConfigError("model config: dimensions must be positive");
  if (hidden_dim % num_heads != 0)
    throw ConfigError("model config: hidden_dim " + std::to_string(hidden_dim) +
                      " not divisible by num_heads " + std::to_string(num_heads));
  if (ln_eps < 0 || dropout < 0 || dropout >= 1)
    throw ConfigError("model config: ln_eps must be >= 0 and dropout in [0, 1)");
}

bool ModelConfig::same_geometry(const ModelConfig& o) const {
  return hidden_dim == o.hidden_dim && num_layers == o.num_layers && num_heads == o.num_heads &&
         ffn_dim == o.ffn_dim && vocab_size == o.vocab_size && max_seq_len == o.max_seq_len;
}

Index BatchLayout::valid_tokens() const {
  return std::accumulate(lengths.begin(), lengths.end(), Index{0});
}

std::vector<Index> BatchLayout::valid_rows() const {
  std::vector<Index> rows;
  rows.reserve(static_cast<std::size_t>(valid_tokens()));
  for (Index s = 0; s < batch_size; ++s)
    for (Index t = 0; t < lengths[static_cast<std::size_t>(s)]; ++t)
      rows.push_back(s * seq_len + t);
  return rows;
}

std::vector<Index> BatchLayout::valid_offsets() const {
  std::vector<Index> off(static_cast<std::size_t>(batch_size) + 1, 0);
  for (Index s = 0; s < batch_size; ++s)
    off[static_cast<std::size_t>(s + 1)] =
        off[static_cast<std::size_t>(s)] + lengths[static_cast<std::size_t>(s)];
  return off;
}

BatchLayout BatchLayout::full(Index batch_size, Index seq_len) {
  BatchLayout l;
  l.batch_size = batch_size;
  l.seq_len = seq_len;
  l.lengths.assign(static_cast<std::size_t>(batch_size), seq_len);
  return l;
}

void BatchLayout::validate() const {
  if (batch_size <= 0 || seq_len <= 0)
    throw ShapeError("batch layout: batch_size and seq_len must be positive");
  if (static_cast<Index>(lengths.size()) != batch_size)
    throw ShapeError("batch layout: lengths size does not match batch_size");
  for (Index l : lengths)
    if (l < 0 || l > seq_len) throw ShapeError("batch layout: sequence length out of range");
  if (valid_tokens() == 0) throw ShapeError("batch layout: batch has no non-padding tokens");
}

LnParams init_ln(Index dim) {
  return {Tensor::full({dim}, 1.0, true), Tensor::zeros({dim}, true)};
}

FfnCore init_ffn(const ModelConfig& cfg, Rng& rng) {
  FfnCore f;
  f.w1 = Tensor::randn({cfg.hidden_dim, cfg.ffn_dim}, rng, kInitStd, true);
  f.b1 = Tensor::zeros({cfg.ffn_dim}, true);
  f.w2 = Tensor::randn({cfg.ffn_dim, cfg.hidden_dim}, rng, kInitStd, true);
  f.b2 = Tensor::zeros({cfg.hidden_dim}, true);
  return f;
}

MhaParams init_mha(const ModelConfig& cfg, Rng& rng) {
  MhaParams m;
  const Index h = cfg.hidden_dim;
  m.wq = Tensor::randn({h, h}, rng, kInitStd, true);
  m.bq = Tensor::zeros({h}, true);
  m.wk = Tensor::randn({h, h}, rng, kInitStd, true);
  m.bk = Tensor::zeros({h}, true);
  m.wv = Tensor::randn({h, h}, rng, kInitStd, true);
  m.bv = Tensor::zeros({h}, true);
  m.wo = Tensor::randn({h, h}, rng, kInitStd, true);
  m.bo = Tensor::zeros({h}, true);
  return m;
}

Embeddings init_embeddings(const ModelConfig& cfg, Rng& rng) {
  Embeddings e;
  e.tok = Tensor::randn({cfg.vocab_size, cfg.hidden_dim}, rng, kInitStd, true);
  e.pos = Tensor::randn({cfg.max_seq_len, cfg.hidden_dim}, rng, kInitStd, true);
  return e;
}

AdapterParams init_adapter(Index hidden_dim, Index adapter_dim, Rng& rng) {
  AdapterParams a;
  a.down = Tensor::randn({hidden_dim, adapter_dim}, rng, kInitStd, true);
  a.b_down = Tensor::zeros({adapter_dim}, true);
  // Zero up-projection: the adapter starts as an exact identity.
  a.up = Tensor::zeros({adapter_dim, hidden_dim}, true);
  a.b_up = Tensor::zeros({hidden_dim}, true);
  return a;
}

Tensor apply_ln(const LnParams& ln, const Tensor& x, double eps) {
  return layer_norm(x, ln.gamma, ln.beta, eps);
}

Tensor apply_adapter(const AdapterParams& a, const Tensor& z) {
  Tensor bottleneck = gelu(add_rowvec(matmul(z, a.down), a.b_down));
  return add(z, add_rowvec(matmul(bottleneck, a.up), a.b_up));
}

Tensor embed(const Embeddings& emb, const std::vector<int>& ids, const BatchLayout& layout,
             const ModelConfig& cfg) {
  layout.validate();
  if (static_cast<Index>(ids.size()) != layout.tokens())
    throw ShapeError("embed: id count does not match layout");
  if (layout.seq_len > cfg.max_seq_len)
    throw ShapeError("embed: seq_len exceeds max_seq_len");
  std::vector<Index> tok_rows(ids.size());
  std::vector<Index> pos_rows(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= cfg.vocab_size)
      throw VocabError("embed: token id " + std::to_string(ids[i]) +
                       " outside vocabulary of size " + std::to_string(cfg.vocab_size));
    tok_rows[i] = ids[i];
    pos_rows[i] = static_cast<Index>(i) % layout.seq_len;
  }
  return add(gather_rows(emb.tok, std::move(tok_rows)), gather_rows(emb.pos, std::move(pos_rows)));
}

Tensor ffn_core_forward(const FfnCore& ffn, const Tensor& x) {
  Tensor hidden = gelu(add_rowvec(matmul(x, ffn.w1), ffn.b1));
  return add_rowvec(matmul(hidden, ffn.w2), ffn.b2);
}

Tensor gather_valid(const Tensor& m, const BatchLayout& layout) {
  return gather_rows(m, layout.valid_rows());
}

namespace {

/// Residual tail shared by both sublayer kinds: record taps, apply the
/// optional adapter and dropout, add the residual, normalize.
Tensor finish_sublayer(const Tensor& h, const Tensor& inner, const LnParams& ln,
                       const ModelConfig& cfg, const BatchLayout& layout, SublayerTaps* taps,
                       const AdapterParams* adapter, Rng* drop) {
  Tensor z = inner;
  if (adapter) z = apply_adapter(*adapter, z);
  if (drop && cfg.dropout > 0.0) z = dropout(z, cfg.dropout, *drop);
  Tensor trunk = apply_ln(ln, add(h, z), cfg.ln_eps);
  if (taps) {
    taps->inner = gather_valid(inner, layout);
    taps->trunk = gather_valid(trunk, layout);
  }
  return trunk;
}

}  // namespace

Tensor mha_sublayer(const MhaParams& p, const LnParams& ln, const Tensor& h,
                    const ModelConfig& cfg, const BatchLayout& layout, LayerTaps* taps,
                    const AdapterParams* adapter, Rng* drop) {
  const Index dh = cfg.head_dim();
  const Index t = layout.seq_len;
  const double scl = 1.0 / std::sqrt(static_cast<double>(dh));

  Tensor q = add_rowvec(matmul(h, p.wq), p.bq);
  Tensor k = add_rowvec(matmul(h, p.wk), p.bk);
  Tensor v = add_rowvec(matmul(h, p.wv), p.bv);

  if (taps) {
    taps->q.clear();
    taps->k.clear();
  }

  // Per sequence, per head: scores restricted to the sequence's own keys,
  // with padding keys pushed to -inf before the softmax.
  std::vector<Tensor> seq_ctx;
  seq_ctx.reserve(static_cast<std::size_t>(layout.batch_size));
  std::vector<Tensor> head_q(static_cast<std::size_t>(cfg.num_heads));
  std::vector<Tensor> head_k(static_cast<std::size_t>(cfg.num_heads));
  for (Index head = 0; head < cfg.num_heads; ++head) {
    head_q[static_cast<std::size_t>(head)] = slice_cols(q, head * dh, dh);
    head_k[static_cast<std::size_t>(head)] = slice_cols(k, head * dh, dh);
  }
  for (Index s = 0; s < layout.batch_size; ++s) {
    const Index len = layout.lengths[static_cast<std::size_t>(s)];
    std::vector<Tensor> head_out;
    head_out.reserve(static_cast<std::size_t>(cfg.num_heads));
    for (Index head = 0; head < cfg.num_heads; ++head) {
      Tensor qs = slice_rows(head_q[static_cast<std::size_t>(head)], s * t, t);
      Tensor ks = slice_rows(head_k[static_cast<std::size_t>(head)], s * t, t);
      Tensor vs = slice_rows(slice_cols(v, head * dh, dh), s * t, t);
      Tensor scores = scale(matmul(qs, transpose(ks)), scl);
      if (len < t) {
        Arr bias = Arr::Zero(t);
        for (Index j = len; j < t; ++j) bias[j] = kAttnMask;
        scores = add_rowvec(scores, Tensor::from_array({t}, std::move(bias)));
      }
      Tensor attn = softmax(scores);
      if (drop && cfg.dropout > 0.0) attn = dropout(attn, cfg.dropout, *drop);
      head_out.push_back(matmul(attn, vs));
    }
    seq_ctx.push_back(concat_cols(head_out));
  }
  Tensor ctx = seq_ctx.size() == 1 ? seq_ctx[0] : concat_rows(seq_ctx);
  Tensor inner = add_rowvec(matmul(ctx, p.wo), p.bo);

  if (taps) {
    const auto rows = layout.valid_rows();
    for (Index head = 0; head < cfg.num_heads; ++head) {
      taps->q.push_back(gather_rows(head_q[static_cast<std::size_t>(head)], rows));
      taps->k.push_back(gather_rows(head_k[static_cast<std::size_t>(head)], rows));
    }
  }
  return finish_sublayer(h, inner, ln, cfg, layout, taps ? &taps->mha : nullptr, adapter, drop);
}

Tensor ffn_sublayer(const FfnCore& ffn, const LnParams& ln, const Tensor& h,
                    const ModelConfig& cfg, const BatchLayout& layout, LayerTaps* taps,
                    const AdapterParams* adapter, Rng* drop) {
  Tensor inner = ffn_core_forward(ffn, h);
  return finish_sublayer(h, inner, ln, cfg, layout, taps ? &taps->ffn : nullptr, adapter, drop);
}

Tensor mlm_logits(const Tensor& hidden, const Embeddings& emb) {
  return matmul(hidden, transpose(emb.tok));
}

Tensor mlm_loss(const Tensor& hidden, const Embeddings& emb, const std::vector<int>& targets,
                const std::vector<std::uint8_t>& mask) {
  return cross_entropy_masked(mlm_logits(hidden, emb), targets, mask);
}

void append_ln_params(std::vector<ParamRef>& out, const std::string& prefix, const LnParams& ln) {
  out.push_back({prefix + ".gamma", ln.gamma, false});
  out.push_back({prefix + ".beta", ln.beta, false});
}

void append_ffn_params(std::vector<ParamRef>& out, const std::string& prefix, const FfnCore& f) {
  out.push_back({prefix + ".w1", f.w1, true});
  out.push_back({prefix + ".b1", f.b1, false});
  out.push_back({prefix + ".w2", f.w2, true});
  out.push_back({prefix + ".b2", f.b2, false});
}

void append_mha_params(std::vector<ParamRef>& out, const std::string& prefix, const MhaParams& m) {
  out.push_back({prefix + ".wq", m.wq, true});
  out.push_back({prefix + ".bq", m.bq, false});
  out.push_back({prefix + ".wk", m.wk, true});
  out.push_back({prefix + ".bk", m.bk, false});
  out.push_back({prefix + ".wv", m.wv, true});
  out.push_back({prefix + ".bv", m.bv, false});
  out.push_back({prefix + ".wo", m.wo, true});
  out.push_back({prefix + ".bo", m.bo, false});
}

void append_adapter_params(std::vector<ParamRef>& out, const std::string& prefix,
                           const AdapterParams& a) {
  out.push_back({prefix + ".down", a.down, true});
  out.push_back({prefix + ".b_down", a.b_down, false});
  out.push_back({prefix + ".up", a.up, true});
  out.push_back({prefix + ".b_up", a.b_up, false});
}

}  // namespace moelab
