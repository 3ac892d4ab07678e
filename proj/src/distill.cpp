// SPDX-License-Identifier: Apache-2.0
#include "moelab/distill.hpp"

#include <array>
#include <cmath>
#include <stdexcept>
#include <utility>

namespace moelab {

void DistillConfig::validate() const {
  if (lambda_t < 0 || lambda_i < 0 || lambda_a < 0)
    throw ConfigError("distill config: loss weights must be >= 0");
  if (sample_total <= 0 || num_groups <= 0 || group_size <= 0)
    throw ConfigError("distill config: sampling sizes must be positive");
  if (num_groups * group_size != sample_total)
    throw ConfigError("distill config: num_groups * group_size must equal sample_total (" +
                      std::to_string(num_groups) + " * " + std::to_string(group_size) +
                      " != " + std::to_string(sample_total) + ")");
}

RelationSample sample_tokens(const BatchLayout& layout, const DistillConfig& cfg, Rng& rng) {
  cfg.validate();
  const Index n = layout.valid_tokens();
  if (n <= 0) throw std::invalid_argument("sample_tokens: batch has no non-padding tokens");
  RelationSample sample;
  sample.groups.assign(static_cast<std::size_t>(cfg.num_groups), {});
  if (n >= cfg.sample_total) {
    // One without-replacement draw partitioned into groups: all indices
    // distinct across the whole sample.
    auto draw = rng.sample_without_replacement(static_cast<std::size_t>(n),
                                               static_cast<std::size_t>(cfg.sample_total));
    for (Index g = 0; g < cfg.num_groups; ++g) {
      auto& grp = sample.groups[static_cast<std::size_t>(g)];
      grp.reserve(static_cast<std::size_t>(cfg.group_size));
      for (Index i = 0; i < cfg.group_size; ++i)
        grp.push_back(static_cast<Index>(draw[static_cast<std::size_t>(g * cfg.group_size + i)]));
    }
  } else if (n >= cfg.group_size) {
    for (auto& grp : sample.groups) {
      auto draw = rng.sample_without_replacement(static_cast<std::size_t>(n),
                                                 static_cast<std::size_t>(cfg.group_size));
      grp.assign(draw.begin(), draw.end());
    }
  } else {
    for (auto& grp : sample.groups) {
      grp.reserve(static_cast<std::size_t>(cfg.group_size));
      for (Index i = 0; i < cfg.group_size; ++i)
        grp.push_back(static_cast<Index>(rng.below(static_cast<std::uint64_t>(n))));
    }
  }
  return sample;
}

Tensor relation_matrix(const Tensor& reps) {
  if (reps.rank() != 2 || reps.rows() < 2)
    throw ShapeError("relation_matrix: need at least two representations, got " +
                     shape_str(reps.shape()));
  Tensor unit = row_normalize(reps);
  return matmul(unit, transpose(unit));
}

Tensor relation_alignment_loss(const Tensor& student_reps, const Tensor& teacher_reps) {
  if (student_reps.rows() != teacher_reps.rows())
    throw CompatibilityError("relation alignment: group sizes differ");
  Tensor d = sub(relation_matrix(student_reps), relation_matrix(teacher_reps));
  return mean(mul(d, d));
}

namespace {

void check_tap_geometry(const TapSet& student, const TapSet& teacher) {
  if (student.layers.size() != teacher.layers.size())
    throw CompatibilityError("distillation: student has " +
                             std::to_string(student.layers.size()) + " layers, teacher " +
                             std::to_string(teacher.layers.size()));
}

void check_width(const Tensor& s, const Tensor& t) {
  if (!s.defined() || !t.defined())
    throw CompatibilityError("distillation: missing tap entry");
  if (s.cols() != t.cols() || s.rows() != t.rows())
    throw CompatibilityError("distillation: tap shape mismatch " + shape_str(s.shape()) +
                             " vs " + shape_str(t.shape()));
}

Tensor aggregate_terms(std::vector<Tensor> terms, Aggregate aggregate) {
  if (terms.empty()) throw std::invalid_argument("distillation: no loss terms to aggregate");
  Tensor total = terms[0];
  for (std::size_t i = 1; i < terms.size(); ++i) total = add(total, terms[i]);
  if (aggregate == Aggregate::kMean && terms.size() > 1)
    total = scale(total, 1.0 / static_cast<double>(terms.size()));
  return total;
}

Tensor site_loss(const TapSet& student, const TapSet& teacher, const RelationSample& sample,
                 Aggregate aggregate, bool use_inner) {
  check_tap_geometry(student, teacher);
  std::vector<Tensor> terms;
  for (std::size_t l = 0; l < student.layers.size(); ++l) {
    const auto pick = [use_inner](const SublayerTaps& taps) {
      return use_inner ? taps.inner : taps.trunk;
    };
    const std::array<std::pair<Tensor, Tensor>, 2> pairs{
        std::pair{pick(student.layers[l].mha), pick(teacher.layers[l].mha)},
        std::pair{pick(student.layers[l].ffn), pick(teacher.layers[l].ffn)}};
    for (const auto& [s_tap, t_tap] : pairs) {
      check_width(s_tap, t_tap);
      for (const auto& group : sample.groups)
        terms.push_back(
            relation_alignment_loss(gather_rows(s_tap, group), gather_rows(t_tap, group)));
    }
  }
  return aggregate_terms(std::move(terms), aggregate);
}

}  // namespace

Tensor trunk_loss(const TapSet& student, const TapSet& teacher, const RelationSample& sample,
                  Aggregate aggregate) {
  return site_loss(student, teacher, sample, aggregate, /*use_inner=*/false);
}

Tensor inner_loss(const TapSet& student, const TapSet& teacher, const RelationSample& sample,
                  Aggregate aggregate) {
  return site_loss(student, teacher, sample, aggregate, /*use_inner=*/true);
}

Tensor attention_loss(const TapSet& student, const TapSet& teacher, const BatchLayout& layout,
                      Aggregate aggregate) {
  check_tap_geometry(student, teacher);
  const auto offsets = layout.valid_offsets();
  std::vector<Tensor> terms;
  for (std::size_t l = 0; l < student.layers.size(); ++l) {
    const auto& sl = student.layers[l];
    const auto& tl = teacher.layers[l];
    if (sl.q.size() != tl.q.size())
      throw CompatibilityError("attention distillation: head count mismatch at layer " +
                               std::to_string(l));
    for (std::size_t head = 0; head < sl.q.size(); ++head) {
      check_width(sl.q[head], tl.q[head]);
      check_width(sl.k[head], tl.k[head]);
      for (Index s = 0; s < layout.batch_size; ++s) {
        const Index begin = offsets[static_cast<std::size_t>(s)];
        const Index len = offsets[static_cast<std::size_t>(s + 1)] - begin;
        if (len == 0) continue;
        auto pair_matrix = [&](const Tensor& q, const Tensor& k) {
          return matmul(row_normalize(slice_rows(q, begin, len)),
                        transpose(row_normalize(slice_rows(k, begin, len))));
        };
        Tensor d = sub(pair_matrix(sl.q[head], sl.k[head]), pair_matrix(tl.q[head], tl.k[head]));
        terms.push_back(mean(mul(d, d)));
      }
    }
  }
  return aggregate_terms(std::move(terms), aggregate);
}

Tensor total_student_loss(const Tensor& l_mlm, const Tensor& l_b, const Tensor& l_t,
                          const Tensor& l_i, const Tensor& l_a, const DistillConfig& cfg,
                          double lambda_b) {
  cfg.validate();
  if (lambda_b < 0) throw ConfigError("total loss: lambda_b must be >= 0");
  auto check_finite = [](const Tensor& t, const char* name) {
    if (!std::isfinite(t.value()))
      throw NumericError(std::string("total loss: component ") + name + " is not finite");
  };
  if (!l_mlm.defined()) throw ConfigError("total loss: the masked-LM component is required");
  check_finite(l_mlm, "l_mlm");
  Tensor total = l_mlm;
  auto add_term = [&](const Tensor& t, double lambda, const char* name) {
    if (!t.defined()) {
      if (lambda != 0.0)
        throw ConfigError(std::string("total loss: ") + name +
                          " has nonzero weight but no value");
      return;
    }
    check_finite(t, name);
    if (lambda == 0.0) return;
    total = add(total, scale(t, lambda));
  };
  add_term(l_b, lambda_b, "l_b");
  add_term(l_t, cfg.lambda_t, "l_t");
  add_term(l_i, cfg.lambda_i, "l_i");
  add_term(l_a, cfg.lambda_a, "l_a");
  return total;
}

}  // namespace moelab
