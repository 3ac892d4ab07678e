// SPDX-License-Identifier: Apache-2.0
#include "moelab/corpus.hpp"

#include <map>
#include <sstream>

#include "moelab/errors.hpp"

namespace moelab {

namespace {

// Word inventory. Nouns and verbs are stems with regular "+s" inflection:
// nouns pluralize with +s, verbs take +s in the singular.
const std::vector<std::string> kNouns = {"cat",  "dog",  "bird", "frog", "horse", "snake", "eagle",
                                         "tiger", "lion", "bear", "whale", "crow", "owl",  "seal",
                                         "hawk", "mole", "crab", "toad", "swan",  "wasp"};
const std::vector<std::string> kVerbs = {"run",   "jump", "sing", "sleep", "walk", "climb",
                                         "swim",  "hunt", "drift", "glide", "roam", "dig",
                                         "wait",  "turn", "float", "stare"};
const std::vector<std::string> kAdjectives = {"red",   "blue",  "green", "small", "big",  "old",
                                              "young", "quick", "slow",  "bright", "dark", "quiet",
                                              "loud",  "tall",  "round", "pale"};
const std::vector<std::string> kAdverbs = {"quickly", "slowly", "quietly", "loudly",
                                           "gently",  "boldly", "calmly",  "daily"};
const std::vector<std::string> kDetSingular = {"a", "the", "this", "one"};
const std::vector<std::string> kDetPlural = {"the", "these", "some", "many"};

/// Zipf-style weights over a list; kOod1 reverses the ranking, which moves
/// most of the probability mass to otherwise-rare words.
std::size_t pick_ranked(Rng& rng, std::size_t n, Shift shift) {
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    total += 1.0 / static_cast<double>((shift == Shift::kOod1 ? n - i : i + 1));
  double u = rng.uniform() * total;
  for (std::size_t i = 0; i < n; ++i) {
    u -= 1.0 / static_cast<double>((shift == Shift::kOod1 ? n - i : i + 1));
    if (u < 0.0) return i;
  }
  return n - 1;
}

std::size_t pick_uniform(Rng& rng, std::size_t n) {
  return static_cast<std::size_t>(rng.below(n));
}

void append_noun_phrase(std::string& out, Rng& rng, Shift shift, bool plural) {
  // kOod2 inverts determiner-noun agreement.
  const bool det_plural = (shift == Shift::kOod2) ? !plural : plural;
  const auto& dets = det_plural ? kDetPlural : kDetSingular;
  out += dets[pick_uniform(rng, dets.size())];
  if (rng.uniform() < 0.4) {
    out += ' ';
    out += kAdjectives[pick_ranked(rng, kAdjectives.size(), shift)];
  }
  out += ' ';
  out += kNouns[pick_ranked(rng, kNouns.size(), shift)];
  if (plural) out += 's';
}

}  // namespace

Shift shift_from_string(const std::string& s) {
  if (s == "none") return Shift::kNone;
  if (s == "ood1") return Shift::kOod1;
  if (s == "ood2") return Shift::kOod2;
  throw ConfigError("unknown shift '" + s + "' (expected none|ood1|ood2)");
}

std::string shift_to_string(Shift s) {
  switch (s) {
    case Shift::kNone: return "none";
    case Shift::kOod1: return "ood1";
    case Shift::kOod2: return "ood2";
  }
  throw ConfigError("shift_to_string: invalid value");
}

std::string generate_sentence(Rng& rng, Shift shift) {
  std::string out;
  const bool plural = rng.uniform() < 0.5;
  append_noun_phrase(out, rng, shift, plural);
  out += ' ';
  // kOod2 inverts subject-verb agreement.
  const bool verb_singular = (shift == Shift::kOod2) ? plural : !plural;
  out += kVerbs[pick_ranked(rng, kVerbs.size(), shift)];
  if (verb_singular) out += 's';
  const double branch = rng.uniform();
  if (branch < 0.3) {
    out += ' ';
    out += kAdverbs[pick_uniform(rng, kAdverbs.size())];
  } else if (branch < 0.65) {
    out += ' ';
    append_noun_phrase(out, rng, shift, rng.uniform() < 0.5);
  }
  out += " .";
  return out;
}

std::string generate_corpus(std::uint64_t seed, Index target_tokens, Shift shift) {
  if (target_tokens <= 0) throw ConfigError("generate_corpus: target_tokens must be positive");
  Rng rng(mix_seed(seed, hash_str("corpus")));
  std::string out;
  Index tokens = 0;
  while (tokens < target_tokens) {
    std::string sentence = generate_sentence(rng, shift);
    tokens += static_cast<Index>(tokenize(sentence).size());
    out += sentence;
    out += '\n';
  }
  return out;
}

double unigram_chi_squared(const std::string& a, const std::string& b) {
  std::map<std::string, double> ca, cb;
  double na = 0, nb = 0;
  for (const auto& t : tokenize(a)) ++ca[t], ++na;
  for (const auto& t : tokenize(b)) ++cb[t], ++nb;
  if (na == 0 || nb == 0) throw ConfigError("unigram_chi_squared: empty text");
  std::map<std::string, std::pair<double, double>> joint;
  for (const auto& [t, c] : ca) joint[t].first = c;
  for (const auto& [t, c] : cb) joint[t].second = c;
  double chi2 = 0.0;
  for (const auto& [t, c] : joint) {
    const double p = (c.first + c.second) / (na + nb);
    const double ea = na * p, eb = nb * p;
    chi2 += (c.first - ea) * (c.first - ea) / ea + (c.second - eb) * (c.second - eb) / eb;
  }
  return chi2;
}

std::vector<std::vector<int>> pack_corpus(const std::string& text, const Vocab& vocab,
                                          Index seq_len) {
  if (seq_len < 3) throw ConfigError("pack_corpus: seq_len must be at least 3");
  const std::vector<int> ids = vocab.encode_all(text);
  const Index body = seq_len - 2;
  const Index n_seq = static_cast<Index>(ids.size()) / body;
  std::vector<std::vector<int>> out;
  out.reserve(static_cast<std::size_t>(n_seq));
  for (Index s = 0; s < n_seq; ++s) {
    std::vector<int> seq;
    seq.reserve(static_cast<std::size_t>(seq_len));
    seq.push_back(Vocab::kCls);
    for (Index i = 0; i < body; ++i) seq.push_back(ids[static_cast<std::size_t>(s * body + i)]);
    seq.push_back(Vocab::kSep);
    out.push_back(std::move(seq));
  }
  return out;
}

SplitIndices split_sequences(Index n, Index val_every) {
  if (val_every < 2) throw ConfigError("split_sequences: val_every must be at least 2");
  SplitIndices out;
  for (Index i = 0; i < n; ++i) {
    (i % val_every == 0 ? out.val : out.train).push_back(i);
  }
  return out;
}

}  // namespace moelab
