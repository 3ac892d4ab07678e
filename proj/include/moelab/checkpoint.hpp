// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>

#include "moelab/encoder.hpp"
#include "moelab/optim.hpp"
#include "moelab/run_config.hpp"
#include "moelab/vocab.hpp"

namespace moelab {

/// Mutable training-loop state carried across steps and checkpoints.
struct TrainState {
  Index step = 0;   // optimizer steps completed
  Index epoch = 0;  // epochs completed
  AdamState adam;
  Rng rng;  // representation-sampling stream (student distillation)
};

struct Checkpoint {
  RunConfig cfg;
  std::string mode;  // "teacher" | "moe-baseline" | "moe-tcd"
  EncoderModel model;
  Vocab vocab;
  TrainState state;
  bool has_state = false;
};

/// Writes a checkpoint directory:
///   manifest.json  parameter records (name, shape, offset), config hash,
///                  mode, training counters
///   params.bin     all parameters, canonical order, little-endian f64
///   optim.bin      Adam moments (m then v per parameter), same order
///   rng.txt        sampling-stream state
///   vocab.txt      one token per line, id order
///   config.ini     canonical run configuration
/// Identical model/state always produces byte-identical files. `state`
/// may be null for weight-only exports.
void save_checkpoint(const std::string& dir, const RunConfig& cfg, const std::string& mode,
                     const EncoderModel& model, const Vocab& vocab, const TrainState* state);

/// Rebuilds model and state from a checkpoint directory. Manifest records
/// inconsistent with the stored config raise CompatibilityError; blob
/// size mismatches or unreadable members raise CorruptionError before
/// anything is returned.
Checkpoint load_checkpoint(const std::string& dir);

}  // namespace moelab
