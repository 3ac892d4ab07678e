// SPDX-License-Identifier: Apache-2.0
#include "moelab/tasks.hpp"

#include <ostream>

#include "moelab/corpus.hpp"
#include "moelab/errors.hpp"
#include "moelab/run_config.hpp"

namespace moelab {

namespace {

enum class TaskKind { kPresence, kParity, kCount };

/// Marker word planted into the examples; falls back to the most frequent
/// content word when the pre-training vocabulary does not cover it.
int marker_id(const Vocab& vocab) {
  const int id = vocab.encode("owl");
  if (id != Vocab::kUnk) return id;
  if (vocab.size() <= Vocab::kNumReserved)
    throw ConfigError("make_task: vocabulary has no content words");
  return Vocab::kNumReserved;
}

int scrub_id(const Vocab& vocab, int marker) {
  const int id = vocab.encode("cat");
  if (id != Vocab::kUnk && id != marker) return id;
  for (int c = Vocab::kNumReserved; c < vocab.size(); ++c)
    if (c != marker) return c;
  throw ConfigError("make_task: vocabulary too small to scrub markers");
}

TaskExample make_example(TaskKind kind, const Vocab& vocab, Index seq_len, Rng& rng, int marker,
                         int scrub) {
  const Index body = seq_len - 2;
  std::vector<int> ids;
  while (static_cast<Index>(ids.size()) < body) {
    for (const auto& tok : tokenize(generate_sentence(rng, Shift::kNone)))
      ids.push_back(vocab.encode(tok));
  }
  ids.resize(static_cast<std::size_t>(body));
  for (auto& id : ids)
    if (id == marker) id = scrub;

  Index k = 0;
  switch (kind) {
    case TaskKind::kPresence: k = rng.uniform() < 0.5 ? 1 + static_cast<Index>(rng.below(2)) : 0; break;
    case TaskKind::kParity: k = static_cast<Index>(rng.below(4)); break;
    case TaskKind::kCount: k = static_cast<Index>(rng.below(5)); break;
  }
  for (std::size_t pos : rng.sample_without_replacement(static_cast<std::size_t>(body),
                                                        static_cast<std::size_t>(k)))
    ids[pos] = marker;

  TaskExample ex;
  ex.ids.reserve(static_cast<std::size_t>(seq_len));
  ex.ids.push_back(Vocab::kCls);
  ex.ids.insert(ex.ids.end(), ids.begin(), ids.end());
  ex.ids.push_back(Vocab::kSep);
  switch (kind) {
    case TaskKind::kPresence: ex.label = k > 0 ? 1.0 : 0.0; break;
    case TaskKind::kParity: ex.label = static_cast<double>(k % 2); break;
    case TaskKind::kCount: ex.label = static_cast<double>(k); break;
  }
  return ex;
}

}  // namespace

Task make_task(const std::string& name, const Vocab& vocab, Index seq_len, std::uint64_t seed,
               Index n_train, Index n_dev) {
  TaskKind kind;
  Task task;
  task.name = name;
  if (name == "presence") {
    kind = TaskKind::kPresence;
  } else if (name == "parity") {
    kind = TaskKind::kParity;
  } else if (name == "count") {
    kind = TaskKind::kCount;
    task.regression = true;
    task.num_classes = 1;
  } else {
    throw ConfigError("make_task: unknown task '" + name + "' (expected presence|parity|count)");
  }
  if (seq_len < 4) throw ConfigError("make_task: seq_len too small for a sentence");
  if (n_train < 1 || n_dev < 1) throw ConfigError("make_task: both splits must be nonempty");

  const int marker = marker_id(vocab);
  const int scrub = scrub_id(vocab, marker);
  for (Index i = 0; i < n_train; ++i) {
    Rng rng(mix_seed(seed, hash_str(name + "/train"), static_cast<std::uint64_t>(i)));
    task.train.push_back(make_example(kind, vocab, seq_len, rng, marker, scrub));
  }
  for (Index i = 0; i < n_dev; ++i) {
    Rng rng(mix_seed(seed, hash_str(name + "/dev"), static_cast<std::uint64_t>(i)));
    task.dev.push_back(make_example(kind, vocab, seq_len, rng, marker, scrub));
  }
  return task;
}

void save_task_split(std::ostream& os, const std::vector<TaskExample>& split,
                     const Vocab& vocab) {
  for (const auto& ex : split) {
    for (std::size_t t = 1; t + 1 < ex.ids.size(); ++t) {
      if (t > 1) os << ' ';
      os << vocab.decode(ex.ids[t]);
    }
    os << '\t' << format_double(ex.label) << '\n';
  }
}

}  // namespace moelab
