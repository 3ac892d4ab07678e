// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

#include "moelab/model.hpp"
#include "moelab/vocab.hpp"

namespace moelab {

/// Fixed stream id for evaluation-time masking. Validation scoring inside
/// the training loop and the standalone masked-LM harness both key their
/// per-sequence streams off this constant, so the same sequence list
/// always receives identical masks.
std::uint64_t eval_mask_seed();

/// One masked-LM batch over flat [batch * seq_len] id buffers. Targets
/// hold the original token exactly where is_masked is set and -1
/// elsewhere; inputs at masked positions follow the 80/10/10 rule.
struct MLMBatch {
  std::vector<int> input_ids;
  std::vector<int> target_ids;
  std::vector<std::uint8_t> is_masked;
  BatchLayout layout;
};

/// Applies 15% selection with 80% [MASK] / 10% random token / 10%
/// unchanged corruption to each sequence. Sequence k draws from its own
/// stream seeded with mix_seed(seed, epoch, stream_ids[k]), so masking is
/// deterministic per (seed, epoch, sequence) and independent of batch
/// composition. [PAD], [CLS] and [SEP] are never selected; a sequence
/// whose draw selects nothing gets one forced pick. Sequences shorter
/// than seq_len are padded with [PAD].
MLMBatch make_mlm_batch(const std::vector<std::vector<int>>& seqs,
                        const std::vector<std::uint64_t>& stream_ids, Index seq_len,
                        const Vocab& vocab, std::uint64_t seed, std::uint64_t epoch);

}  // namespace moelab
