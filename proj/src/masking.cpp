// SPDX-License-Identifier: Apache-2.0
#include "moelab/masking.hpp"

#include "moelab/errors.hpp"
#include "moelab/rng.hpp"

namespace moelab {

namespace {

constexpr double kSelectRate = 0.15;
constexpr double kMaskShare = 0.80;
constexpr double kRandomShare = 0.10;

bool selectable(int id) {
  return id != Vocab::kPad && id != Vocab::kCls && id != Vocab::kSep && id != Vocab::kMask;
}

/// Corrupts one selected position in place and records the target.
void corrupt(MLMBatch& b, Index flat, int original, Rng& rng, Index vocab_size) {
  b.is_masked[static_cast<std::size_t>(flat)] = 1;
  b.target_ids[static_cast<std::size_t>(flat)] = original;
  const double c = rng.uniform();
  if (c < kMaskShare) {
    b.input_ids[static_cast<std::size_t>(flat)] = Vocab::kMask;
  } else if (c < kMaskShare + kRandomShare) {
    const Index n_content = vocab_size - Vocab::kNumReserved;
    if (n_content > 0) {
      b.input_ids[static_cast<std::size_t>(flat)] =
          static_cast<int>(rng.below(static_cast<std::uint64_t>(n_content))) +
          Vocab::kNumReserved;
    }
  }
  // Final 10%: left unchanged.
}

}  // namespace

std::uint64_t eval_mask_seed() { return hash_str("eval-mask"); }

MLMBatch make_mlm_batch(const std::vector<std::vector<int>>& seqs,
                        const std::vector<std::uint64_t>& stream_ids, Index seq_len,
                        const Vocab& vocab, std::uint64_t seed, std::uint64_t epoch) {
  if (seqs.size() != stream_ids.size())
    throw ShapeError("make_mlm_batch: one stream id per sequence required");
  if (seqs.empty()) throw ShapeError("make_mlm_batch: empty batch");

  MLMBatch b;
  b.layout.batch_size = static_cast<Index>(seqs.size());
  b.layout.seq_len = seq_len;
  b.input_ids.assign(static_cast<std::size_t>(b.layout.batch_size * seq_len), Vocab::kPad);
  b.target_ids.assign(b.input_ids.size(), -1);
  b.is_masked.assign(b.input_ids.size(), 0);

  for (std::size_t s = 0; s < seqs.size(); ++s) {
    const auto& seq = seqs[s];
    const Index len = static_cast<Index>(seq.size());
    if (len > seq_len)
      throw ShapeError("make_mlm_batch: sequence longer than seq_len");
    b.layout.lengths.push_back(len);
    const Index base = static_cast<Index>(s) * seq_len;
    for (Index t = 0; t < len; ++t)
      b.input_ids[static_cast<std::size_t>(base + t)] = seq[static_cast<std::size_t>(t)];

    Rng rng(mix_seed(seed, epoch, stream_ids[s]));
    std::vector<Index> eligible;
    bool any = false;
    for (Index t = 0; t < len; ++t) {
      const int id = seq[static_cast<std::size_t>(t)];
      if (!selectable(id)) continue;
      eligible.push_back(t);
      if (rng.uniform() < kSelectRate) {
        corrupt(b, base + t, id, rng, vocab.size());
        any = true;
      }
    }
    if (!any && !eligible.empty()) {
      const Index t = eligible[rng.below(eligible.size())];
      corrupt(b, base + t, seq[static_cast<std::size_t>(t)], rng, vocab.size());
    }
  }
  b.layout.validate();
  return b;
}

}  // namespace moelab
