// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>

#include "moelab/checkpoint.hpp"

namespace moelab {

enum class PretrainMode { kTeacher, kMoeBaseline, kMoeTcd };

PretrainMode pretrain_mode_from_string(const std::string& s);  // ConfigError
std::string to_string(PretrainMode m);

struct PretrainResult {
  std::string final_checkpoint;
  double final_val_log_likelihood = 0.0;
  Index steps = 0;
};

/// Runs masked-LM pre-training.
///   kTeacher      dense encoder, MLM loss only
///   kMoeBaseline  expert encoder, MLM + load-balance loss
///   kMoeTcd       expert encoder, MLM + load-balance + the three
///                 relation-alignment losses against the frozen teacher
/// teacher_ckpt is required for kMoeTcd and rejected otherwise
/// (ConfigError); a teacher with different geometry or vocabulary raises
/// CompatibilityError. resume_from restores a checkpoint of the identical
/// configuration (hash-checked) and continues where it stopped,
/// reproducing the uninterrupted run bit for bit.
///
/// Artifacts under out_dir: metrics.jsonl (one record per logged step),
/// val.txt (held-out split, one sequence per line), epoch-NNN/ and
/// optional step-NNNNNN/ checkpoints, final/.
PretrainResult pretrain(const RunConfig& cfg, PretrainMode mode, const std::string& out_dir,
                        const std::string& teacher_ckpt = "",
                        const std::string& resume_from = "");

}  // namespace moelab
