// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "moelab/encoder.hpp"
#include "moelab/tasks.hpp"

namespace moelab {

/// Inserts a freshly initialized bottleneck adapter (width `adapter_dim`)
/// after both sublayer outputs of every layer and freezes all backbone
/// parameters. The up-projection starts at zero, so the model's outputs
/// are unchanged until the adapters train.
void attach_adapters(EncoderModel& model, Index adapter_dim, Rng& rng);

struct FinetuneHyper {
  double lr = 1e-3;
  Index epochs = 10;
  Index batch_size = 32;
  double warmup_ratio = 0.06;
  double weight_decay = 0.01;
  Index adapter_dim = 0;  // 0 trains the full backbone
  std::uint64_t seed = 0;
};

struct FinetuneResult {
  std::string task;
  std::string mode;  // "full" | "adapter"
  double lr = 0.0;
  Index adapter_dim = 0;
  std::uint64_t seed = 0;
  std::vector<double> dev_metric;  // one value per epoch
  double best_metric = 0.0;
  Index best_epoch = 0;  // 1-based epoch of best_metric
  Index trainable_params = 0;
};

/// Trains a copy of `pretrained` on the task with a linear head over the
/// first-position representation: Adam with linear warmup/decay, weight
/// decay on weight matrices, dev evaluated after every epoch. The input
/// model is never mutated. Metric: accuracy for classification, Pearson
/// correlation for regression. Throws CompatibilityError when the task's
/// token ids or sequence length do not fit the model.
FinetuneResult finetune(const EncoderModel& pretrained, const Task& task,
                        const FinetuneHyper& hyper);

/// The stronger of the two fine-tuning modes by best dev metric.
struct ModeChoice {
  FinetuneResult best;
  bool tie = false;              // equal metrics; `best` holds the full run
  bool adapter_missing = false;  // adapter run absent, full passed through
};

ModeChoice best_of_modes(const std::optional<FinetuneResult>& full,
                         const std::optional<FinetuneResult>& adapter);

}  // namespace moelab
