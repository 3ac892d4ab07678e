// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

#include "moelab/model.hpp"

namespace moelab {

enum class Aggregate { kMean, kSum };

struct DistillConfig {
  double lambda_t = 1.0;
  double lambda_i = 1.0;
  double lambda_a = 0.0;
  Index sample_total = 4096;
  Index num_groups = 32;
  Index group_size = 128;
  Aggregate aggregate = Aggregate::kMean;
  void validate() const;
};

/// Indices of the sampled representations, grouped. Indices address rows
/// of the valid-token tap space and are shared verbatim between teacher
/// and student.
struct RelationSample {
  std::vector<std::vector<Index>> groups;
};

/// Draws num_groups groups of group_size token indices from the batch's
/// non-padding tokens. When the batch holds at least sample_total tokens
/// the groups partition a without-replacement draw (every index distinct);
/// with at least group_size tokens each group is internally distinct;
/// below that, indices repeat.
RelationSample sample_tokens(const BatchLayout& layout, const DistillConfig& cfg, Rng& rng);

/// Pairwise cosine matrix of the rows of reps: row-normalize, then X X^T.
Tensor relation_matrix(const Tensor& reps);

/// Mean squared difference between the two relation matrices of one
/// representation group (the full G x G grid, diagonal included).
Tensor relation_alignment_loss(const Tensor& student_reps, const Tensor& teacher_reps);

/// Relation alignment at the post-LN trunk states of every sublayer,
/// aggregated over (layer, sublayer, group).
Tensor trunk_loss(const TapSet& student, const TapSet& teacher, const RelationSample& sample,
                  Aggregate aggregate = Aggregate::kMean);

/// Same computation on the pre-residual sublayer outputs.
Tensor inner_loss(const TapSet& student, const TapSet& teacher, const RelationSample& sample,
                  Aggregate aggregate = Aggregate::kMean);

/// Query-key cosine alignment: for every head and sequence, all pairs of
/// that sequence's queries against its keys; aggregated over (layer, head,
/// sequence).
Tensor attention_loss(const TapSet& student, const TapSet& teacher, const BatchLayout& layout,
                      Aggregate aggregate = Aggregate::kMean);

/// Weighted training objective: mlm + lambda_b * balance + lambda_t *
/// trunk + lambda_i * inner + lambda_a * attention. Undefined tensors are
/// treated as absent and require a zero weight. A non-finite component
/// raises NumericError naming the component.
Tensor total_student_loss(const Tensor& l_mlm, const Tensor& l_b, const Tensor& l_t,
                          const Tensor& l_i, const Tensor& l_a, const DistillConfig& cfg,
                          double lambda_b);

}  // namespace moelab
