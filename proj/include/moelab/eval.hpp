// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "moelab/encoder.hpp"
#include "moelab/vocab.hpp"

namespace moelab {

/// Mean log-probability of the true tokens at masked positions (higher is
/// better), with the standard 15% / 80-10-10 corruption drawn from the
/// fixed evaluation stream: sequence k is masked by
/// mix_seed(eval_mask_seed(), 0, k). Deterministic in (model, seqs).
double mlm_log_likelihood(const EncoderModel& model, const Vocab& vocab,
                          const std::vector<std::vector<int>>& seqs, Index seq_len);

/// Packs one line of `corpus_text` per sequence ([CLS] tokens [SEP],
/// clipped to the model's max length) and scores it with
/// mlm_log_likelihood. A corpus with no tokens raises ConfigError. The
/// model is never mutated.
double ood_mlm_eval(const EncoderModel& model, const Vocab& vocab,
                    const std::string& corpus_text);

}  // namespace moelab
