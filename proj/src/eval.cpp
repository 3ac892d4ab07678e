// SPDX-License-Identifier: Apache-2.0
#include "moelab/eval.hpp"

#include <algorithm>
#include <sstream>

#include "moelab/errors.hpp"
#include "moelab/masking.hpp"
#include "moelab/ops.hpp"

namespace moelab {

namespace {

constexpr Index kEvalBatch = 32;

}  // namespace

double mlm_log_likelihood(const EncoderModel& model, const Vocab& vocab,
                          const std::vector<std::vector<int>>& seqs, Index seq_len) {
  if (seqs.empty()) throw ConfigError("mlm_log_likelihood: no sequences to score");
  double sum_log_prob = 0.0;
  Index n_masked = 0;
  for (std::size_t begin = 0; begin < seqs.size(); begin += kEvalBatch) {
    const std::size_t end = std::min(begin + kEvalBatch, seqs.size());
    std::vector<std::vector<int>> batch(seqs.begin() + begin, seqs.begin() + end);
    std::vector<std::uint64_t> streams;
    for (std::size_t k = begin; k < end; ++k) streams.push_back(k);
    MLMBatch mb = make_mlm_batch(batch, streams, seq_len, vocab, eval_mask_seed(), 0);
    Index batch_masked = 0;
    for (std::uint8_t m : mb.is_masked) batch_masked += m;
    if (batch_masked == 0) continue;
    Tensor hidden = encoder_forward(model, mb.input_ids, mb.layout);
    Tensor nll = mlm_loss(hidden, model.emb, mb.target_ids, mb.is_masked);
    sum_log_prob -= nll.value() * static_cast<double>(batch_masked);
    n_masked += batch_masked;
  }
  if (n_masked == 0) throw ConfigError("mlm_log_likelihood: nothing maskable in the input");
  return sum_log_prob / static_cast<double>(n_masked);
}

double ood_mlm_eval(const EncoderModel& model, const Vocab& vocab,
                    const std::string& corpus_text) {
  const Index seq_len = model.cfg.max_seq_len;
  std::vector<std::vector<int>> seqs;
  std::istringstream is(corpus_text);
  std::string line;
  while (std::getline(is, line)) {
    std::vector<int> ids = vocab.encode_all(line);
    if (ids.empty()) continue;
    if (static_cast<Index>(ids.size()) > seq_len - 2) ids.resize(static_cast<std::size_t>(seq_len - 2));
    std::vector<int> seq;
    seq.reserve(ids.size() + 2);
    seq.push_back(Vocab::kCls);
    seq.insert(seq.end(), ids.begin(), ids.end());
    seq.push_back(Vocab::kSep);
    seqs.push_back(std::move(seq));
  }
  if (seqs.empty()) throw ConfigError("ood_mlm_eval: empty corpus");
  return mlm_log_likelihood(model, vocab, seqs, seq_len);
}

}  // namespace moelab
