// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>

#include "moelab/distill.hpp"
#include "moelab/moe.hpp"
#include "moelab/model.hpp"

namespace moelab {

struct TrainConfig {
  double peak_lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double weight_decay = 0.01;
  Index warmup_steps = 10000;
  Index total_steps = 0;  // 0: epochs * batches-per-epoch
  Index batch_size = 512;
  Index epochs = 1;
  Index log_every = 1;
  Index checkpoint_every = 0;  // extra step-cadence checkpoints; 0 = epoch ends only
  Index val_every = 10;        // sequence i is held out when i % val_every == 0
  std::uint64_t seed = 0;
  std::string corpus;  // path to the pre-training text

  void validate() const;
};

/// Full run configuration: sections [model], [moe], [distill], [train] of
/// the key-value config file. Values left out of the file keep defaults.
struct RunConfig {
  ModelConfig model;
  MoEConfig moe;
  DistillConfig distill;
  TrainConfig train;

  void finalize();  // resolves derived model defaults and validates
};

/// Parses the key-value format: [section] headers, "key = value" lines,
/// '#' or ';' full-line comments. Unknown sections or keys raise
/// ConfigError.
RunConfig parse_run_config(std::istream& is);
RunConfig load_run_config(const std::string& path);  // ConfigError when unreadable

/// Canonical serialization: every key in fixed order, shortest
/// round-trip number formatting. parse(write(cfg)) == cfg.
std::string write_run_config(const RunConfig& cfg);

/// FNV-1a hash of the canonical serialization; checkpoint resume uses it
/// to reject configuration drift.
std::uint64_t config_hash(const RunConfig& cfg);

/// Shortest round-trip decimal form of a double (used by every artifact
/// writer so that identical state always produces identical bytes).
std::string format_double(double v);

}  // namespace moelab
