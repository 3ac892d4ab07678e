// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "moelab/vocab.hpp"

namespace moelab {

struct TaskExample {
  std::vector<int> ids;  // [CLS] tokens [SEP], exactly seq_len long
  double label;          // class index for classification, value for regression
};

struct Task {
  std::string name;
  bool regression = false;
  Index num_classes = 2;
  std::vector<TaskExample> train;
  std::vector<TaskExample> dev;
};

/// Seeded synthetic downstream tasks over grammar sentences, labelled by
/// occurrences of a marker word:
///   presence  binary: does the marker occur (1-2 planted) or not at all
///   parity    binary: is the number of planted markers (0-3) odd
///   count     regression: number of planted markers (0-4)
/// Natural occurrences of the marker are scrubbed before planting, so the
/// label is exact. Unknown names raise ConfigError; dev is never empty.
Task make_task(const std::string& name, const Vocab& vocab, Index seq_len, std::uint64_t seed,
               Index n_train, Index n_dev);

/// Line-delimited "text<TAB>label" records.
void save_task_split(std::ostream& os, const std::vector<TaskExample>& split, const Vocab& vocab);

}  // namespace moelab
