// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <iosfwd>
#include <string>
#include <unordered_map>
#include <vector>

#include "moelab/tensor.hpp"

namespace moelab {

/// Splits text into word-level tokens: whitespace separates, punctuation
/// characters become single-character tokens, and the reserved bracket
/// spellings ([PAD], [MASK], ...) survive as whole tokens so decoded text
/// round-trips.
std::vector<std::string> tokenize(const std::string& text);

/// Word-level vocabulary. Ids are dense from 0; the first five are
/// reserved: [PAD]=0, [MASK]=1, [UNK]=2, [CLS]=3, [SEP]=4.
class Vocab {
 public:
  static constexpr int kPad = 0;
  static constexpr int kMask = 1;
  static constexpr int kUnk = 2;
  static constexpr int kCls = 3;
  static constexpr int kSep = 4;
  static constexpr int kNumReserved = 5;

  Vocab();  // reserved tokens only

  /// Builds a frequency-ranked vocabulary over `text`: reserved tokens
  /// first, then corpus tokens by descending count (ties lexicographic),
  /// truncated to max_size entries in total.
  static Vocab build(const std::string& text, Index max_size);

  /// Unknown words map to [UNK].
  int encode(const std::string& token) const;
  std::vector<int> encode_all(const std::string& text) const;
  const std::string& decode(int id) const;

  Index size() const { return static_cast<Index>(id_to_token_.size()); }
  bool is_reserved(int id) const { return id >= 0 && id < kNumReserved; }

  /// One token per line, in id order.
  void save(std::ostream& os) const;
  static Vocab load(std::istream& is);

  bool operator==(const Vocab& o) const { return id_to_token_ == o.id_to_token_; }

 private:
  void add(const std::string& token);

  std::vector<std::string> id_to_token_;
  std::unordered_map<std::string, int> token_to_id_;
};

}  // namespace moelab
