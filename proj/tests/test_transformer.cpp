// SPDX-License-Identifier: Apache-2.0
//
// Encoder tests: embedding lookup, sublayer residual identities, attention
// locality, tap bookkeeping, parameter enumeration, and masked-LM loss
// gradients on a small model.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <vector>

#include "moelab/encoder.hpp"
#include "moelab/grad_check.hpp"

using namespace moelab;

namespace {

ModelConfig toy_config(Index h = 8, Index layers = 2, Index heads = 2) {
  ModelConfig cfg;
  cfg.hidden_dim = h;
  cfg.num_layers = layers;
  cfg.num_heads = heads;
  cfg.ffn_dim = 2 * h;
  cfg.vocab_size = 23;
  cfg.max_seq_len = 16;
  cfg.finalize();
  return cfg;
}

std::vector<int> random_ids(Index n, Index vocab, Rng& rng) {
  std::vector<int> ids(static_cast<std::size_t>(n));
  for (auto& id : ids) id = static_cast<int>(rng.below(static_cast<std::uint64_t>(vocab)));
  return ids;
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
  return a.size() == b.size() &&
         std::memcmp(a.array().data(), b.array().data(),
                     static_cast<std::size_t>(a.size()) * sizeof(double)) == 0;
}

}  // namespace

TEST_CASE("config validation") {
  ModelConfig cfg = toy_config();
  CHECK(cfg.ffn_dim == 16);
  cfg.num_heads = 3;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = toy_config();
  cfg.hidden_dim = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  ModelConfig def;
  def.finalize();
  CHECK(def.ffn_dim == 4 * def.hidden_dim);
}

TEST_CASE("embed combines token and position tables") {
  ModelConfig cfg = toy_config();
  Rng rng(1);
  Embeddings emb;
  emb.tok = Tensor::zeros({cfg.vocab_size, cfg.hidden_dim});
  emb.pos = Tensor::zeros({cfg.max_seq_len, cfg.hidden_dim});
  BatchLayout layout = BatchLayout::full(1, 4);
  Tensor out = embed(emb, {1, 2, 3, 4}, layout, cfg);
  CHECK(out.array().abs().maxCoeff() == 0.0);

  emb = init_embeddings(cfg, rng);
  // Same token at two positions: rows differ exactly by the position rows.
  Tensor rep = embed(emb, {7, 7, 7, 7}, layout, cfg);
  bool all_same = true;
  for (Index j = 0; j < cfg.hidden_dim; ++j) all_same &= rep.at(0, j) == rep.at(1, j);
  CHECK(!all_same);
  for (Index j = 0; j < cfg.hidden_dim; ++j)
    CHECK(rep.at(0, j) - rep.at(1, j) ==
          doctest::Approx(emb.pos.at(0 * cfg.hidden_dim + j) - emb.pos.at(1 * cfg.hidden_dim + j)));

  CHECK_THROWS_AS(embed(emb, {1, 2, 3, 23}, layout, cfg), VocabError);
  CHECK_THROWS_AS(embed(emb, {1, 2, 3}, layout, cfg), ShapeError);
}

TEST_CASE("tied projection recovers tokens from an orthogonal table") {
  ModelConfig cfg = toy_config();
  cfg.vocab_size = 8;
  cfg.hidden_dim = 8;
  cfg.finalize();
  Embeddings emb;
  emb.tok = Tensor::from_matrix(RowMat::Identity(8, 8) * 3.0);
  emb.pos = Tensor::zeros({cfg.max_seq_len, 8});
  BatchLayout layout = BatchLayout::full(1, 5);
  std::vector<int> ids{3, 1, 4, 1, 5};
  Tensor h = embed(emb, ids, layout, cfg);
  auto decoded = argmax_rows(mlm_logits(h, emb));
  for (std::size_t i = 0; i < ids.size(); ++i) CHECK(decoded[i] == ids[i]);
}

TEST_CASE("zeroed output projections reduce a sublayer to LN of its input") {
  ModelConfig cfg = toy_config(8, 1, 2);
  Rng rng(5);
  BatchLayout layout = BatchLayout::full(2, 3);
  Tensor h = Tensor::randn({layout.tokens(), cfg.hidden_dim}, rng);

  MhaParams mha = init_mha(cfg, rng);
  mha.wo = Tensor::zeros({cfg.hidden_dim, cfg.hidden_dim}, true);
  LnParams ln = init_ln(cfg.hidden_dim);
  LayerTaps taps;
  Tensor out = mha_sublayer(mha, ln, h, cfg, layout, &taps);
  Tensor want = apply_ln(ln, h, cfg.ln_eps);
  CHECK(bitwise_equal(out, want));
  CHECK(taps.mha.inner.array().abs().maxCoeff() == 0.0);

  FfnCore ffn = init_ffn(cfg, rng);
  ffn.w2 = Tensor::zeros({cfg.ffn_dim, cfg.hidden_dim}, true);
  Tensor out2 = ffn_sublayer(ffn, ln, h, cfg, layout, &taps);
  CHECK(bitwise_equal(out2, want));
  CHECK(taps.ffn.inner.array().abs().maxCoeff() == 0.0);
}

TEST_CASE("two-token attention matches hand-computed weights") {
  // One head, H=2, T=2. With W_q = W_k = W_v = I and W_o = I the sublayer's
  // pre-residual output is softmax(h h^T / sqrt(2)) h.
  ModelConfig cfg;
  cfg.hidden_dim = 2;
  cfg.num_layers = 1;
  cfg.num_heads = 1;
  cfg.vocab_size = 4;
  cfg.max_seq_len = 4;
  cfg.finalize();
  MhaParams p;
  p.wq = Tensor::from_matrix(RowMat::Identity(2, 2));
  p.wk = Tensor::from_matrix(RowMat::Identity(2, 2));
  p.wv = Tensor::from_matrix(RowMat::Identity(2, 2));
  p.wo = Tensor::from_matrix(RowMat::Identity(2, 2));
  p.bq = Tensor::zeros({2});
  p.bk = Tensor::zeros({2});
  p.bv = Tensor::zeros({2});
  p.bo = Tensor::zeros({2});
  LnParams ln = init_ln(2);
  BatchLayout layout = BatchLayout::full(1, 2);
  Tensor h = Tensor::from_vector({2, 2}, {1.0, 0.0, 0.5, -0.5});
  LayerTaps taps;
  mha_sublayer(p, ln, h, cfg, layout, &taps);

  const double s = 1.0 / std::sqrt(2.0);
  // Row 0 scores: (h0.h0, h0.h1) * s; softmax; context mixes rows of h.
  const double e00 = std::exp(1.0 * s), e01 = std::exp(0.5 * s);
  const double a00 = e00 / (e00 + e01), a01 = e01 / (e00 + e01);
  CHECK(taps.mha.inner.at(0, 0) == doctest::Approx(a00 * 1.0 + a01 * 0.5).epsilon(1e-12));
  CHECK(taps.mha.inner.at(0, 1) == doctest::Approx(a00 * 0.0 + a01 * -0.5).epsilon(1e-12));

  // Single-token sequence: the only attention weight is exactly 1, so the
  // pre-residual output is that token's value row.
  BatchLayout single = BatchLayout::full(1, 1);
  Tensor h1 = Tensor::from_vector({1, 2}, {0.3, -0.7});
  LayerTaps taps1;
  mha_sublayer(p, ln, h1, cfg, single, &taps1);
  CHECK(taps1.mha.inner.at(0, 0) == 0.3);
  CHECK(taps1.mha.inner.at(0, 1) == -0.7);
}

TEST_CASE("attention never crosses sequence boundaries") {
  ModelConfig cfg = toy_config(8, 2, 2);
  Rng rng(9);
  EncoderModel model = init_dense_encoder(cfg, rng);
  BatchLayout layout = BatchLayout::full(2, 4);
  Rng ids_rng(3);
  std::vector<int> ids = random_ids(8, cfg.vocab_size, ids_rng);
  std::vector<int> ids2 = ids;
  for (int t = 4; t < 8; ++t) ids2[static_cast<std::size_t>(t)] = (ids[static_cast<std::size_t>(t)] + 5) % 23;

  Tensor out1 = encoder_forward(model, ids, layout);
  Tensor out2 = encoder_forward(model, ids2, layout);
  // Sequence 0 rows are bit-identical; sequence 1 rows changed.
  for (Index r = 0; r < 4; ++r)
    for (Index c = 0; c < cfg.hidden_dim; ++c) {
      const double a = out1.at(r, c), b = out2.at(r, c);
      CHECK(std::memcmp(&a, &b, sizeof(double)) == 0);
    }
  bool seq1_changed = false;
  for (Index r = 4; r < 8; ++r)
    for (Index c = 0; c < cfg.hidden_dim; ++c) seq1_changed |= out1.at(r, c) != out2.at(r, c);
  CHECK(seq1_changed);
}

TEST_CASE("padding tokens do not influence valid outputs or taps") {
  ModelConfig cfg = toy_config(8, 2, 2);
  Rng rng(13);
  EncoderModel model = init_dense_encoder(cfg, rng);
  BatchLayout layout;
  layout.batch_size = 2;
  layout.seq_len = 4;
  layout.lengths = {4, 2};

  Rng ids_rng(4);
  std::vector<int> ids = random_ids(8, cfg.vocab_size, ids_rng);
  std::vector<int> ids2 = ids;
  ids2[6] = (ids[6] + 1) % 23;  // padding slots of sequence 1
  ids2[7] = (ids[7] + 2) % 23;

  TapSet taps1, taps2;
  encoder_forward(model, ids, layout, &taps1);
  encoder_forward(model, ids2, layout, &taps2);
  CHECK(layout.valid_tokens() == 6);
  for (const auto* ts : {&taps1, &taps2}) {
    for (const auto& lt : ts->layers) {
      CHECK(lt.mha.trunk.rows() == 6);
      CHECK(lt.ffn.inner.rows() == 6);
      for (const auto& qh : lt.q) CHECK(qh.rows() == 6);
    }
  }
  for (std::size_t l = 0; l < taps1.layers.size(); ++l) {
    CHECK(bitwise_equal(taps1.layers[l].mha.trunk, taps2.layers[l].mha.trunk));
    CHECK(bitwise_equal(taps1.layers[l].ffn.trunk, taps2.layers[l].ffn.trunk));
    CHECK(bitwise_equal(taps1.layers[l].ffn.inner, taps2.layers[l].ffn.inner));
    for (std::size_t head = 0; head < taps1.layers[l].q.size(); ++head) {
      CHECK(bitwise_equal(taps1.layers[l].q[head], taps2.layers[l].q[head]));
      CHECK(bitwise_equal(taps1.layers[l].k[head], taps2.layers[l].k[head]));
    }
  }
}

TEST_CASE("tap bookkeeping and empty composition") {
  ModelConfig cfg = toy_config(8, 2, 2);
  Rng rng(21);
  EncoderModel model = init_dense_encoder(cfg, rng);
  BatchLayout layout = BatchLayout::full(2, 3);
  Rng ids_rng(6);
  std::vector<int> ids = random_ids(6, cfg.vocab_size, ids_rng);
  TapSet taps;
  encoder_forward(model, ids, layout, &taps);
  REQUIRE(taps.layers.size() == 2);
  int trunks = 0, inners = 0, qk_sets = 0;
  for (const auto& lt : taps.layers) {
    trunks += lt.mha.trunk.defined() + lt.ffn.trunk.defined();
    inners += lt.mha.inner.defined() + lt.ffn.inner.defined();
    qk_sets += !lt.q.empty();
    CHECK(lt.q.size() == 2);
    CHECK(lt.k.size() == 2);
    for (const auto& qh : lt.q) CHECK(qh.cols() == cfg.head_dim());
    CHECK(!lt.moe_probs.defined());
  }
  CHECK(trunks == 4);
  CHECK(inners == 4);
  CHECK(qk_sets == 2);

  ModelConfig empty_cfg = toy_config(8, 0, 2);
  EncoderModel empty = init_dense_encoder(empty_cfg, rng);
  TapSet no_taps;
  Tensor out = encoder_forward(empty, ids, layout, &no_taps);
  CHECK(no_taps.layers.empty());
  Tensor want = embed(empty.emb, ids, layout, empty_cfg);
  CHECK(bitwise_equal(out, want));
}

TEST_CASE("same seed and input give bit-identical forward passes") {
  ModelConfig cfg = toy_config(8, 2, 2);
  Rng ids_rng(14);
  std::vector<int> ids = random_ids(6, cfg.vocab_size, ids_rng);
  BatchLayout layout = BatchLayout::full(2, 3);
  Rng r1(99), r2(99);
  EncoderModel m1 = init_dense_encoder(cfg, r1);
  EncoderModel m2 = init_dense_encoder(cfg, r2);
  CHECK(bitwise_equal(encoder_forward(m1, ids, layout), encoder_forward(m2, ids, layout)));
}

TEST_CASE("parameter enumeration matches the closed-form count") {
  ModelConfig cfg = toy_config(8, 3, 2);
  Rng rng(31);
  EncoderModel model = init_dense_encoder(cfg, rng);
  const Index h = cfg.hidden_dim, f = cfg.ffn_dim, l = cfg.num_layers;
  const Index per_layer = 4 * h * h + 4 * h  // attention projections + biases
                          + 2 * f * h + f + h  // feed-forward
                          + 2 * (2 * h);       // two layer norms
  const Index want = cfg.vocab_size * h + cfg.max_seq_len * h + l * per_layer;
  CHECK(parameter_count(parameters(model)) == want);

  // Unique names, stable order.
  auto params = parameters(model);
  for (std::size_t i = 1; i < params.size(); ++i)
    for (std::size_t j = 0; j < i; ++j) CHECK(params[i].name != params[j].name);
  CHECK(params[0].name == "emb.tok");
  CHECK(params[0].decay);
}

TEST_CASE("mlm loss oracles carry over from masked cross entropy") {
  ModelConfig cfg = toy_config(8, 1, 2);
  Rng rng(41);
  Embeddings emb = init_embeddings(cfg, rng);
  // Zero hidden states give uniform logits, so the loss is ln V.
  Tensor hidden = Tensor::zeros({4, cfg.hidden_dim});
  std::vector<int> targets{1, 2, 3, 4};
  std::vector<std::uint8_t> mask{1, 1, 0, 0};
  CHECK(mlm_loss(hidden, emb, targets, mask).value() ==
        doctest::Approx(std::log(static_cast<double>(cfg.vocab_size))));
  CHECK_THROWS(mlm_loss(hidden, emb, targets, {0, 0, 0, 0}));
}

TEST_CASE("masked-LM gradient check through the full encoder") {
  ModelConfig cfg = toy_config(8, 1, 2);
  Rng rng(51);
  EncoderModel model = init_dense_encoder(cfg, rng);
  // Re-draw the weights at unit-ish scale: at the training init scale the
  // attention scores are nearly constant and their gradients sit below
  // finite-difference resolution.
  for (const auto& p : parameters(model)) {
    Arr& buf = p.tensor.leaf_array();
    for (Index i = 0; i < buf.size(); ++i) buf[i] = rng.normal(0.0, 0.4);
  }
  BatchLayout layout = BatchLayout::full(1, 4);
  Rng ids_rng(8);
  std::vector<int> ids = random_ids(4, cfg.vocab_size, ids_rng);
  std::vector<int> targets = random_ids(4, cfg.vocab_size, ids_rng);
  std::vector<std::uint8_t> mask{1, 0, 1, 1};

  auto loss_fn = [&](const Tensor&) {
    Tensor h = encoder_forward(model, ids, layout);
    return mlm_loss(h, model.emb, targets, mask);
  };
  for (const auto& p : parameters(model)) {
    INFO("parameter ", p.name);
    CHECK(grad_check(loss_fn, p.tensor) < 1e-4);
  }
}
