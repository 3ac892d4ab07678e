// SPDX-License-Identifier: Apache-2.0
#include "moelab/encoder.hpp"

namespace moelab {

namespace {

EncoderModel init_common(const ModelConfig& cfg, Rng& rng) {
  EncoderModel m;
  m.cfg = cfg;
  m.cfg.finalize();
  m.emb = init_embeddings(m.cfg, rng);
  return m;
}

}  // namespace

EncoderModel init_dense_encoder(const ModelConfig& cfg, Rng& rng) {
  EncoderModel m = init_common(cfg, rng);
  for (Index l = 0; l < m.cfg.num_layers; ++l) {
    EncoderLayer layer;
    layer.mha = init_mha(m.cfg, rng);
    layer.mha_ln = init_ln(m.cfg.hidden_dim);
    layer.ffn = init_ffn(m.cfg, rng);
    layer.ffn_ln = init_ln(m.cfg.hidden_dim);
    m.layers.push_back(std::move(layer));
  }
  return m;
}

EncoderModel init_moe_encoder(const ModelConfig& cfg, const MoEConfig& moe, Rng& rng) {
  EncoderModel m = init_common(cfg, rng);
  moe.validate();
  m.moe_cfg = moe;
  for (Index l = 0; l < m.cfg.num_layers; ++l) {
    EncoderLayer layer;
    layer.mha = init_mha(m.cfg, rng);
    layer.mha_ln = init_ln(m.cfg.hidden_dim);
    layer.ffn = init_moe(m.cfg, moe, rng);
    layer.ffn_ln = init_ln(m.cfg.hidden_dim);
    m.layers.push_back(std::move(layer));
  }
  return m;
}

Tensor encoder_forward(const EncoderModel& model, const std::vector<int>& ids,
                       const BatchLayout& layout, TapSet* taps, Rng* drop) {
  Tensor h = embed(model.emb, ids, layout, model.cfg);
  if (taps) {
    taps->layers.clear();
    taps->layers.resize(model.layers.size());
  }
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    const EncoderLayer& layer = model.layers[l];
    LayerTaps* lt = taps ? &taps->layers[l] : nullptr;
    h = mha_sublayer(layer.mha, layer.mha_ln, h, model.cfg, layout, lt,
                     layer.mha_adapter ? &*layer.mha_adapter : nullptr, drop);
    const AdapterParams* ffn_ad = layer.ffn_adapter ? &*layer.ffn_adapter : nullptr;
    if (layer.is_moe()) {
      const auto& moe = std::get<MoeLayerParams>(layer.ffn);
      Tensor probs;
      Tensor inner = moe_forward(h, moe, &probs);
      Tensor z = inner;
      if (ffn_ad) z = apply_adapter(*ffn_ad, z);
      if (drop && model.cfg.dropout > 0.0) z = dropout(z, model.cfg.dropout, *drop);
      Tensor trunk = apply_ln(layer.ffn_ln, add(h, z), model.cfg.ln_eps);
      if (lt) {
        lt->ffn.inner = gather_valid(inner, layout);
        lt->ffn.trunk = gather_valid(trunk, layout);
        lt->moe_probs = gather_valid(probs, layout);
      }
      h = trunk;
    } else {
      h = ffn_sublayer(std::get<FfnCore>(layer.ffn), layer.ffn_ln, h, model.cfg, layout, lt,
                       ffn_ad, drop);
    }
  }
  return h;
}

namespace {

Tensor clone_leaf(const Tensor& t) { return Tensor::from_array(t.shape(), t.array(), true); }

LnParams clone_ln(const LnParams& ln) { return {clone_leaf(ln.gamma), clone_leaf(ln.beta)}; }

FfnCore clone_ffn(const FfnCore& f) {
  return {clone_leaf(f.w1), clone_leaf(f.b1), clone_leaf(f.w2), clone_leaf(f.b2)};
}

AdapterParams clone_adapter(const AdapterParams& a) {
  return {clone_leaf(a.down), clone_leaf(a.b_down), clone_leaf(a.up), clone_leaf(a.b_up)};
}

}  // namespace

EncoderModel clone_model(const EncoderModel& model) {
  EncoderModel out;
  out.cfg = model.cfg;
  out.moe_cfg = model.moe_cfg;
  out.emb = {clone_leaf(model.emb.tok), clone_leaf(model.emb.pos)};
  for (const EncoderLayer& layer : model.layers) {
    EncoderLayer c;
    c.mha = {clone_leaf(layer.mha.wq), clone_leaf(layer.mha.bq), clone_leaf(layer.mha.wk),
             clone_leaf(layer.mha.bk), clone_leaf(layer.mha.wv), clone_leaf(layer.mha.bv),
             clone_leaf(layer.mha.wo), clone_leaf(layer.mha.bo)};
    c.mha_ln = clone_ln(layer.mha_ln);
    if (layer.is_moe()) {
      const auto& moe = std::get<MoeLayerParams>(layer.ffn);
      MoeLayerParams m;
      m.router = {clone_leaf(moe.router.w), clone_leaf(moe.router.b)};
      for (const auto& e : moe.experts) m.experts.push_back(clone_ffn(e));
      c.ffn = std::move(m);
    } else {
      c.ffn = clone_ffn(std::get<FfnCore>(layer.ffn));
    }
    c.ffn_ln = clone_ln(layer.ffn_ln);
    if (layer.mha_adapter) c.mha_adapter = clone_adapter(*layer.mha_adapter);
    if (layer.ffn_adapter) c.ffn_adapter = clone_adapter(*layer.ffn_adapter);
    out.layers.push_back(std::move(c));
  }
  return out;
}

std::vector<ParamRef> parameters(const EncoderModel& model) {
  std::vector<ParamRef> out;
  out.push_back({"emb.tok", model.emb.tok, true});
  out.push_back({"emb.pos", model.emb.pos, true});
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    const std::string prefix = "layer" + std::to_string(l);
    const EncoderLayer& layer = model.layers[l];
    append_mha_params(out, prefix + ".mha", layer.mha);
    append_ln_params(out, prefix + ".mha_ln", layer.mha_ln);
    if (layer.is_moe())
      append_moe_params(out, prefix + ".moe", std::get<MoeLayerParams>(layer.ffn));
    else
      append_ffn_params(out, prefix + ".ffn", std::get<FfnCore>(layer.ffn));
    append_ln_params(out, prefix + ".ffn_ln", layer.ffn_ln);
  }
  return out;
}

std::vector<ParamRef> adapter_parameters(const EncoderModel& model) {
  std::vector<ParamRef> out;
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    const std::string prefix = "layer" + std::to_string(l);
    const EncoderLayer& layer = model.layers[l];
    if (layer.mha_adapter) append_adapter_params(out, prefix + ".mha_adapter", *layer.mha_adapter);
    if (layer.ffn_adapter) append_adapter_params(out, prefix + ".ffn_adapter", *layer.ffn_adapter);
  }
  return out;
}

void set_trainable(const std::vector<ParamRef>& params, bool trainable) {
  for (const auto& p : params) p.tensor.set_requires_grad(trainable);
}

void zero_grads(const std::vector<ParamRef>& params) {
  for (const auto& p : params) p.tensor.zero_grad();
}

Index parameter_count(const std::vector<ParamRef>& params) {
  Index n = 0;
  for (const auto& p : params) n += p.tensor.size();
  return n;
}

}  // namespace moelab
