// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "moelab/rng.hpp"
#include "moelab/vocab.hpp"

namespace moelab {

/// Distribution shifts for out-of-distribution evaluation corpora:
///   kNone  in-distribution grammar,
///   kOod1  same grammar, strongly re-weighted word frequencies,
///   kOod2  same words, inverted number-agreement rules.
enum class Shift { kNone, kOod1, kOod2 };

Shift shift_from_string(const std::string& s);  // ConfigError on unknown name
std::string shift_to_string(Shift s);

/// One sentence from the seeded grammar: determiner [adjective] noun with
/// determiner-noun and subject-verb number agreement, optional adverb or
/// object phrase, terminated by a period. Returns space-separated tokens.
std::string generate_sentence(Rng& rng, Shift shift);

/// Sentences (one per line) until at least target_tokens word/punctuation
/// tokens have been emitted. Deterministic in (seed, target_tokens, shift).
std::string generate_corpus(std::uint64_t seed, Index target_tokens, Shift shift);

/// Two-sample chi-squared statistic over the unigram token distributions
/// of the two texts (union alphabet, expected counts from the pooled
/// sample). Zero for identical texts; grows with distributional distance.
double unigram_chi_squared(const std::string& a, const std::string& b);

/// Cuts the encoded token stream into sequences of exactly seq_len ids,
/// each framed [CLS] ... [SEP] around seq_len - 2 corpus tokens; the
/// remainder that cannot fill a sequence is dropped.
std::vector<std::vector<int>> pack_corpus(const std::string& text, const Vocab& vocab,
                                          Index seq_len);

struct SplitIndices {
  std::vector<Index> train;
  std::vector<Index> val;
};

/// Deterministic held-out split over sequence indices: i goes to
/// validation when i % val_every == 0. The split depends only on the
/// corpus order, so different training modes see identical splits.
SplitIndices split_sequences(Index n, Index val_every);

}  // namespace moelab
