// SPDX-License-Identifier: Apache-2.0
#include "moelab/vocab.hpp"

#include <algorithm>
#include <cctype>
#include <istream>
#include <map>
#include <ostream>

#include "moelab/errors.hpp"

namespace moelab {

namespace {

const char* const kReserved[Vocab::kNumReserved] = {"[PAD]", "[MASK]", "[UNK]", "[CLS]", "[SEP]"};

bool is_reserved_spelling(const std::string& s) {
  for (const char* r : kReserved)
    if (s == r) return true;
  return false;
}

bool is_word_char(unsigned char c) { return std::isalnum(c) != 0 || c == '\'' || c == '-'; }

}  // namespace

std::vector<std::string> tokenize(const std::string& text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  const std::size_t n = text.size();
  while (i < n) {
    const unsigned char c = static_cast<unsigned char>(text[i]);
    if (std::isspace(c)) {
      ++i;
      continue;
    }
    if (c == '[') {
      // Possible reserved spelling; consume through the matching bracket.
      std::size_t j = text.find(']', i);
      if (j != std::string::npos) {
        std::string candidate = text.substr(i, j - i + 1);
        if (is_reserved_spelling(candidate)) {
          out.push_back(std::move(candidate));
          i = j + 1;
          continue;
        }
      }
      out.push_back("[");
      ++i;
      continue;
    }
    if (is_word_char(c)) {
      std::size_t j = i;
      while (j < n && is_word_char(static_cast<unsigned char>(text[j]))) ++j;
      out.push_back(text.substr(i, j - i));
      i = j;
      continue;
    }
    out.push_back(std::string(1, static_cast<char>(c)));
    ++i;
  }
  return out;
}

Vocab::Vocab() {
  for (const char* r : kReserved) add(r);
}

void Vocab::add(const std::string& token) {
  token_to_id_.emplace(token, static_cast<int>(id_to_token_.size()));
  id_to_token_.push_back(token);
}

Vocab Vocab::build(const std::string& text, Index max_size) {
  if (max_size < kNumReserved)
    throw ConfigError("Vocab::build: max_size must cover the reserved tokens");
  std::vector<std::string> tokens = tokenize(text);
  if (tokens.empty()) throw VocabError("Vocab::build: empty corpus");
  std::map<std::string, Index> counts;
  for (const auto& t : tokens)
    if (!is_reserved_spelling(t)) ++counts[t];
  std::vector<std::pair<std::string, Index>> ranked(counts.begin(), counts.end());
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  Vocab v;
  for (const auto& [token, count] : ranked) {
    if (v.size() >= max_size) break;
    v.add(token);
  }
  return v;
}

int Vocab::encode(const std::string& token) const {
  auto it = token_to_id_.find(token);
  return it == token_to_id_.end() ? kUnk : it->second;
}

std::vector<int> Vocab::encode_all(const std::string& text) const {
  std::vector<int> ids;
  for (const auto& t : tokenize(text)) ids.push_back(encode(t));
  return ids;
}

const std::string& Vocab::decode(int id) const {
  if (id < 0 || id >= static_cast<int>(id_to_token_.size()))
    throw VocabError("Vocab::decode: id " + std::to_string(id) + " out of range");
  return id_to_token_[static_cast<std::size_t>(id)];
}

void Vocab::save(std::ostream& os) const {
  for (const auto& t : id_to_token_) os << t << '\n';
}

Vocab Vocab::load(std::istream& is) {
  Vocab v;
  std::string line;
  Index idx = 0;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    if (idx < kNumReserved) {
      if (line != kReserved[idx])
        throw CorruptionError("Vocab::load: reserved token mismatch at id " + std::to_string(idx));
    } else {
      if (v.token_to_id_.count(line)) throw CorruptionError("Vocab::load: duplicate token " + line);
      v.add(line);
    }
    ++idx;
  }
  if (idx < kNumReserved) throw CorruptionError("Vocab::load: truncated vocabulary file");
  return v;
}

}  // namespace moelab
