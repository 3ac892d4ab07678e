// SPDX-License-Identifier: Apache-2.0
#include "moelab/pretrain.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>

#include <json.hpp>

#include "moelab/corpus.hpp"
#include "moelab/distill.hpp"
#include "moelab/errors.hpp"
#include "moelab/eval.hpp"
#include "moelab/masking.hpp"

namespace moelab {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string read_text_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ConfigError("pretrain: cannot read corpus '" + path + "'");
  std::ostringstream os;
  os << f.rdbuf();
  return os.str();
}

/// Mean load-balance loss across the MoE layers of one forward pass.
Tensor balance_loss_from_taps(const TapSet& taps) {
  Tensor acc;
  Index n = 0;
  for (const auto& lt : taps.layers) {
    if (!lt.moe_probs.defined()) continue;
    Tensor l = load_balance_loss(lt.moe_probs);
    acc = acc.defined() ? add(acc, l) : l;
    ++n;
  }
  if (!acc.defined()) throw ConfigError("pretrain: no expert layers found in the forward taps");
  return n > 1 ? scale(acc, 1.0 / static_cast<double>(n)) : acc;
}

std::string zero_pad(Index v, int width) {
  std::string s = std::to_string(v);
  while (static_cast<int>(s.size()) < width) s.insert(s.begin(), '0');
  return s;
}

json metric_or_null(const std::optional<double>& v) {
  return v ? json(*v) : json(nullptr);
}

struct StepRecord {
  Index step = 0;
  Index epoch = 0;
  double lr = 0.0;
  double l_mlm = 0.0;
  std::optional<double> l_b, l_t, l_i, l_a;
  double total = 0.0;
};

void write_metrics_line(std::ostream& os, const StepRecord& r,
                        const std::optional<double>& val_ll) {
  json line;
  line["step"] = r.step;
  line["epoch"] = r.epoch;
  line["lr"] = r.lr;
  line["l_mlm"] = r.l_mlm;
  line["l_b"] = metric_or_null(r.l_b);
  line["l_t"] = metric_or_null(r.l_t);
  line["l_i"] = metric_or_null(r.l_i);
  line["l_a"] = metric_or_null(r.l_a);
  line["total"] = r.total;
  line["val_log_likelihood"] = metric_or_null(val_ll);
  os << line.dump() << "\n";
  os.flush();
}

}  // namespace

PretrainMode pretrain_mode_from_string(const std::string& s) {
  if (s == "teacher") return PretrainMode::kTeacher;
  if (s == "moe-baseline") return PretrainMode::kMoeBaseline;
  if (s == "moe-tcd") return PretrainMode::kMoeTcd;
  throw ConfigError("unknown mode '" + s + "' (expected teacher|moe-baseline|moe-tcd)");
}

std::string to_string(PretrainMode m) {
  switch (m) {
    case PretrainMode::kTeacher: return "teacher";
    case PretrainMode::kMoeBaseline: return "moe-baseline";
    case PretrainMode::kMoeTcd: return "moe-tcd";
  }
  throw ConfigError("to_string: invalid mode");
}

PretrainResult pretrain(const RunConfig& cfg_in, PretrainMode mode, const std::string& out_dir,
                        const std::string& teacher_ckpt, const std::string& resume_from) {
  if (mode == PretrainMode::kMoeTcd && teacher_ckpt.empty())
    throw ConfigError("pretrain: moe-tcd requires a teacher checkpoint");
  if (mode != PretrainMode::kMoeTcd && !teacher_ckpt.empty())
    throw ConfigError("pretrain: --teacher-ckpt is only valid with mode moe-tcd");

  RunConfig cfg = cfg_in;
  cfg.finalize();
  const std::uint64_t seed = cfg.train.seed;

  const std::string text = read_text_file(cfg.train.corpus);
  Vocab vocab = Vocab::build(text, cfg.model.vocab_size);
  cfg.model.vocab_size = vocab.size();
  const Index seq_len = cfg.model.max_seq_len;
  const std::vector<std::vector<int>> seqs = pack_corpus(text, vocab, seq_len);
  const SplitIndices split = split_sequences(static_cast<Index>(seqs.size()), cfg.train.val_every);
  if (split.train.empty() || split.val.empty())
    throw ConfigError("pretrain: corpus too small for a train/validation split");
  std::vector<std::vector<int>> val_seqs;
  for (Index i : split.val) val_seqs.push_back(seqs[static_cast<std::size_t>(i)]);

  std::optional<Checkpoint> teacher;
  if (mode == PretrainMode::kMoeTcd) {
    teacher = load_checkpoint(teacher_ckpt);
    if (teacher->mode != "teacher")
      throw CompatibilityError("pretrain: '" + teacher_ckpt + "' is not a teacher checkpoint");
    if (!teacher->cfg.model.same_geometry(cfg.model) ||
        teacher->cfg.model.max_seq_len != cfg.model.max_seq_len)
      throw CompatibilityError("pretrain: teacher geometry does not match the student");
    if (!(teacher->vocab == vocab))
      throw CompatibilityError("pretrain: teacher vocabulary does not match the corpus");
    set_trainable(parameters(teacher->model), false);
  }

  Rng init_rng(mix_seed(seed, hash_str("init")));
  EncoderModel model = mode == PretrainMode::kTeacher
                           ? init_dense_encoder(cfg.model, init_rng)
                           : init_moe_encoder(cfg.model, cfg.moe, init_rng);
  std::vector<ParamRef> params = parameters(model);
  TrainState state;
  state.adam.init(params);
  state.rng = Rng(mix_seed(seed, hash_str("sample")));

  if (!resume_from.empty()) {
    Checkpoint ck = load_checkpoint(resume_from);
    if (config_hash(ck.cfg) != config_hash(cfg))
      throw CompatibilityError("pretrain: resume checkpoint was written by a different config");
    if (ck.mode != to_string(mode))
      throw CompatibilityError("pretrain: resume checkpoint mode mismatch");
    if (!ck.has_state)
      throw CompatibilityError("pretrain: checkpoint lacks optimizer state, cannot resume");
    model = std::move(ck.model);
    params = parameters(model);
    state = std::move(ck.state);
  }

  const Index batch = cfg.train.batch_size;
  const Index spe = static_cast<Index>(split.train.size()) / batch;
  if (spe == 0) throw ConfigError("pretrain: batch_size exceeds the training split");
  const Index total_steps =
      cfg.train.total_steps > 0 ? cfg.train.total_steps : cfg.train.epochs * spe;
  if (cfg.train.warmup_steps >= total_steps)
    throw ConfigError("pretrain: warmup_steps must be below the total step count");

  fs::create_directories(out_dir);
  std::ofstream metrics(fs::path(out_dir) / "metrics.jsonl",
                        resume_from.empty() ? std::ios::trunc : std::ios::app);
  if (!metrics) throw ConfigError("pretrain: cannot write metrics under " + out_dir);
  {
    std::ofstream val_file(fs::path(out_dir) / "val.txt", std::ios::trunc);
    for (const auto& vs : val_seqs) {
      for (std::size_t t = 1; t + 1 < vs.size(); ++t) {
        if (t > 1) val_file << ' ';
        val_file << vocab.decode(vs[t]);
      }
      val_file << '\n';
    }
  }

  const AdamConfig adam_cfg{cfg.train.beta1, cfg.train.beta2, cfg.train.adam_eps,
                            cfg.train.weight_decay};
  const std::string mode_name = to_string(mode);
  double final_val = 0.0;
  bool ran_val = false;

  for (Index epoch = state.epoch; epoch < cfg.train.epochs; ++epoch) {
    std::vector<Index> order = split.train;
    Rng(mix_seed(seed, hash_str("order"), static_cast<std::uint64_t>(epoch))).shuffle(order);

    std::optional<StepRecord> last;
    for (Index b = 0; b < spe; ++b) {
      const Index gstep = epoch * spe + b;
      if (gstep < state.step) continue;  // already done before resume
      if (state.step >= total_steps) break;

      std::vector<std::vector<int>> batch_seqs;
      std::vector<std::uint64_t> streams;
      for (Index i = 0; i < batch; ++i) {
        const Index ds = order[static_cast<std::size_t>(b * batch + i)];
        batch_seqs.push_back(seqs[static_cast<std::size_t>(ds)]);
        streams.push_back(static_cast<std::uint64_t>(ds));
      }
      MLMBatch mb = make_mlm_batch(batch_seqs, streams, seq_len, vocab, seed,
                                   static_cast<std::uint64_t>(epoch));

      zero_grads(params);
      std::optional<Rng> drop;
      if (cfg.model.dropout > 0.0)
        drop.emplace(mix_seed(seed, hash_str("dropout"), static_cast<std::uint64_t>(gstep)));
      TapSet taps;
      const bool need_taps = mode != PretrainMode::kTeacher;
      Tensor hidden = encoder_forward(model, mb.input_ids, mb.layout,
                                      need_taps ? &taps : nullptr, drop ? &*drop : nullptr);
      Tensor l_mlm = mlm_loss(hidden, model.emb, mb.target_ids, mb.is_masked);

      Tensor l_b, l_t, l_i, l_a, total;
      if (mode == PretrainMode::kTeacher) {
        total = l_mlm;
      } else {
        l_b = balance_loss_from_taps(taps);
        if (mode == PretrainMode::kMoeTcd) {
          TapSet teacher_taps;
          encoder_forward(teacher->model, mb.input_ids, mb.layout, &teacher_taps);
          RelationSample sample = sample_tokens(mb.layout, cfg.distill, state.rng);
          if (cfg.distill.lambda_t != 0.0)
            l_t = trunk_loss(taps, teacher_taps, sample, cfg.distill.aggregate);
          if (cfg.distill.lambda_i != 0.0)
            l_i = inner_loss(taps, teacher_taps, sample, cfg.distill.aggregate);
          if (cfg.distill.lambda_a != 0.0)
            l_a = attention_loss(taps, teacher_taps, mb.layout, cfg.distill.aggregate);
          total = total_student_loss(l_mlm, l_b, l_t, l_i, l_a, cfg.distill, cfg.moe.lambda_b);
        } else {
          DistillConfig off = cfg.distill;
          off.lambda_t = off.lambda_i = off.lambda_a = 0.0;
          total = total_student_loss(l_mlm, l_b, {}, {}, {}, off, cfg.moe.lambda_b);
        }
      }
      backward(total);
      const double lr = lr_at(std::min(state.step + 1, total_steps), cfg.train.peak_lr,
                              cfg.train.warmup_steps, total_steps);
      adam_step(params, state.adam, lr, adam_cfg);
      ++state.step;

      StepRecord rec;
      rec.step = state.step;
      rec.epoch = epoch;
      rec.lr = lr;
      rec.l_mlm = l_mlm.value();
      if (l_b.defined()) rec.l_b = l_b.value();
      if (l_t.defined()) rec.l_t = l_t.value();
      if (l_i.defined()) rec.l_i = l_i.value();
      if (l_a.defined()) rec.l_a = l_a.value();
      rec.total = total.value();
      last = rec;
      const bool last_batch = b == spe - 1 || state.step >= total_steps;
      if (!last_batch && state.step % cfg.train.log_every == 0)
        write_metrics_line(metrics, rec, std::nullopt);

      if (cfg.train.checkpoint_every > 0 && state.step % cfg.train.checkpoint_every == 0 &&
          !last_batch) {
        save_checkpoint((fs::path(out_dir) / ("step-" + zero_pad(state.step, 6))).string(), cfg,
                        mode_name, model, vocab, &state);
      }
    }

    state.epoch = epoch + 1;
    const double val_ll = mlm_log_likelihood(model, vocab, val_seqs, seq_len);
    final_val = val_ll;
    ran_val = true;
    if (last) write_metrics_line(metrics, *last, val_ll);
    save_checkpoint((fs::path(out_dir) / ("epoch-" + zero_pad(epoch + 1, 3))).string(), cfg,
                    mode_name, model, vocab, &state);
    if (state.step >= total_steps) break;
  }

  if (!ran_val) final_val = mlm_log_likelihood(model, vocab, val_seqs, seq_len);
  const std::string final_dir = (fs::path(out_dir) / "final").string();
  save_checkpoint(final_dir, cfg, mode_name, model, vocab, &state);

  PretrainResult result;
  result.final_checkpoint = final_dir;
  result.final_val_log_likelihood = final_val;
  result.steps = state.step;
  return result;
}

}  // namespace moelab
