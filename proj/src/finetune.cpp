// SPDX-License-Identifier: Apache-2.0
#include "moelab/finetune.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "moelab/errors.hpp"
#include "moelab/optim.hpp"

namespace moelab {

void attach_adapters(EncoderModel& model, Index adapter_dim, Rng& rng) {
  if (adapter_dim < 1) throw ConfigError("attach_adapters: adapter_dim must be >= 1");
  set_trainable(parameters(model), false);
  for (auto& layer : model.layers) {
    layer.mha_adapter = init_adapter(model.cfg.hidden_dim, adapter_dim, rng);
    layer.ffn_adapter = init_adapter(model.cfg.hidden_dim, adapter_dim, rng);
  }
}

namespace {

struct Head {
  Tensor w;  // [H x C]
  Tensor b;  // [C]
};

Head init_head(Index hidden_dim, Index out_dim, Rng& rng) {
  Head h;
  h.w = Tensor::randn({hidden_dim, out_dim}, rng, 0.02, true);
  h.b = Tensor::zeros({out_dim}, true);
  return h;
}

/// Stacked ids plus first-position row indices for a slice of examples.
struct TaskBatch {
  std::vector<int> ids;
  std::vector<Index> cls_rows;
  std::vector<const TaskExample*> examples;
  BatchLayout layout;
};

TaskBatch gather_batch(const std::vector<TaskExample>& split, const std::vector<Index>& order,
                       Index begin, Index count, Index seq_len) {
  TaskBatch b;
  b.layout = BatchLayout::full(count, seq_len);
  b.ids.reserve(static_cast<std::size_t>(count * seq_len));
  for (Index i = 0; i < count; ++i) {
    const TaskExample& ex = split[static_cast<std::size_t>(order[begin + i])];
    b.ids.insert(b.ids.end(), ex.ids.begin(), ex.ids.end());
    b.cls_rows.push_back(i * seq_len);
    b.examples.push_back(&ex);
  }
  return b;
}

Tensor head_logits(const EncoderModel& model, const Head& head, const TaskBatch& batch,
                   Rng* drop) {
  Tensor hidden = encoder_forward(model, batch.ids, batch.layout, nullptr, drop);
  Tensor cls = gather_rows(hidden, batch.cls_rows);
  return add_rowvec(matmul(cls, head.w), head.b);
}

Tensor task_loss(const Task& task, const Tensor& logits, const TaskBatch& batch) {
  const Index n = static_cast<Index>(batch.examples.size());
  if (task.regression) {
    Arr targets(n);
    for (Index i = 0; i < n; ++i) targets[i] = batch.examples[static_cast<std::size_t>(i)]->label;
    Tensor y = Tensor::from_array({n, 1}, targets, false);
    Tensor d = sub(logits, y);
    return mean(mul(d, d));
  }
  std::vector<int> targets(static_cast<std::size_t>(n));
  std::vector<std::uint8_t> mask(static_cast<std::size_t>(n), 1);
  for (Index i = 0; i < n; ++i) {
    const double label = batch.examples[static_cast<std::size_t>(i)]->label;
    targets[static_cast<std::size_t>(i)] = static_cast<int>(label);
  }
  return cross_entropy_masked(logits, targets, mask);
}

double pearson(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx <= 0.0 || syy <= 0.0) return 0.0;  // degenerate: no variance
  return sxy / std::sqrt(sxx * syy);
}

double dev_metric(const EncoderModel& model, const Head& head, const Task& task,
                  Index batch_size, Index seq_len) {
  std::vector<Index> order(task.dev.size());
  std::iota(order.begin(), order.end(), Index{0});
  std::vector<double> preds, labels;
  Index correct = 0;
  for (Index begin = 0; begin < static_cast<Index>(task.dev.size()); begin += batch_size) {
    const Index count = std::min(batch_size, static_cast<Index>(task.dev.size()) - begin);
    TaskBatch batch = gather_batch(task.dev, order, begin, count, seq_len);
    Tensor logits = head_logits(model, head, batch, nullptr);
    if (task.regression) {
      for (Index i = 0; i < count; ++i) {
        preds.push_back(logits.at(i, 0));
        labels.push_back(batch.examples[static_cast<std::size_t>(i)]->label);
      }
    } else {
      const std::vector<Index> pick = argmax_rows(logits);
      for (Index i = 0; i < count; ++i) {
        const int label = static_cast<int>(batch.examples[static_cast<std::size_t>(i)]->label);
        if (pick[static_cast<std::size_t>(i)] == static_cast<Index>(label)) ++correct;
      }
    }
  }
  if (task.regression) return pearson(preds, labels);
  return static_cast<double>(correct) / static_cast<double>(task.dev.size());
}

void check_task_fits(const EncoderModel& model, const Task& task) {
  const Index seq_len = task.train.empty()
                            ? static_cast<Index>(task.dev.front().ids.size())
                            : static_cast<Index>(task.train.front().ids.size());
  auto check_split = [&](const std::vector<TaskExample>& split) {
    for (const auto& ex : split) {
      if (static_cast<Index>(ex.ids.size()) != seq_len)
        throw CompatibilityError("finetune: task examples have uneven lengths");
      for (int id : ex.ids)
        if (id < 0 || id >= model.cfg.vocab_size)
          throw CompatibilityError("finetune: task token id outside the model vocabulary");
    }
  };
  check_split(task.train);
  check_split(task.dev);
  if (seq_len > model.cfg.max_seq_len)
    throw CompatibilityError("finetune: task sequences exceed the model's max_seq_len");
}

}  // namespace

FinetuneResult finetune(const EncoderModel& pretrained, const Task& task,
                        const FinetuneHyper& hyper) {
  if (task.train.empty() || task.dev.empty())
    throw ConfigError("finetune: task needs nonempty train and dev splits");
  if (hyper.epochs < 1 || hyper.batch_size < 1)
    throw ConfigError("finetune: epochs and batch_size must be >= 1");
  check_task_fits(pretrained, task);
  const Index seq_len = static_cast<Index>(task.train.front().ids.size());

  EncoderModel model = clone_model(pretrained);
  Rng init_rng(mix_seed(hyper.seed, hash_str("finetune-init")));

  FinetuneResult result;
  result.task = task.name;
  result.lr = hyper.lr;
  result.adapter_dim = hyper.adapter_dim;
  result.seed = hyper.seed;

  std::vector<ParamRef> trainable;
  if (hyper.adapter_dim > 0) {
    result.mode = "adapter";
    attach_adapters(model, hyper.adapter_dim, init_rng);
    trainable = adapter_parameters(model);
  } else {
    result.mode = "full";
    trainable = parameters(model);
  }
  Head head = init_head(model.cfg.hidden_dim, task.num_classes, init_rng);
  trainable.push_back({"head.w", head.w, true});
  trainable.push_back({"head.b", head.b, false});
  result.trainable_params = parameter_count(trainable);

  const Index n_train = static_cast<Index>(task.train.size());
  const Index steps_per_epoch = (n_train + hyper.batch_size - 1) / hyper.batch_size;
  const Index total_steps = hyper.epochs * steps_per_epoch;
  const Index warmup = static_cast<Index>(std::llround(hyper.warmup_ratio * total_steps));

  AdamConfig adam_cfg;
  adam_cfg.weight_decay = hyper.weight_decay;
  AdamState adam;
  adam.init(trainable);

  result.best_metric = -std::numeric_limits<double>::infinity();
  Index gstep = 0;
  for (Index epoch = 0; epoch < hyper.epochs; ++epoch) {
    std::vector<Index> order(task.train.size());
    std::iota(order.begin(), order.end(), Index{0});
    Rng order_rng(mix_seed(hyper.seed, hash_str("finetune-order"), static_cast<std::uint64_t>(epoch)));
    order_rng.shuffle(order);

    for (Index begin = 0; begin < n_train; begin += hyper.batch_size) {
      const Index count = std::min(hyper.batch_size, n_train - begin);
      TaskBatch batch = gather_batch(task.train, order, begin, count, seq_len);
      zero_grads(trainable);
      Rng drop_rng(mix_seed(hyper.seed, hash_str("finetune-dropout"), static_cast<std::uint64_t>(gstep)));
      Rng* drop = model.cfg.dropout > 0.0 ? &drop_rng : nullptr;
      Tensor logits = head_logits(model, head, batch, drop);
      Tensor loss = task_loss(task, logits, batch);
      backward(loss);
      const double lr = lr_at(std::min(gstep + 1, total_steps), hyper.lr, warmup, total_steps);
      adam_step(trainable, adam, lr, adam_cfg);
      ++gstep;
    }

    const double metric = dev_metric(model, head, task, hyper.batch_size, seq_len);
    result.dev_metric.push_back(metric);
    if (metric > result.best_metric) {
      result.best_metric = metric;
      result.best_epoch = epoch + 1;
    }
  }
  return result;
}

ModeChoice best_of_modes(const std::optional<FinetuneResult>& full,
                         const std::optional<FinetuneResult>& adapter) {
  if (!full && !adapter) throw ConfigError("best_of_modes: no results given");
  ModeChoice choice;
  if (!adapter) {
    choice.best = *full;
    choice.adapter_missing = true;
    return choice;
  }
  if (!full) {
    choice.best = *adapter;
    return choice;
  }
  if (full->best_metric == adapter->best_metric) {
    choice.best = *full;
    choice.tie = true;
    return choice;
  }
  choice.best = full->best_metric > adapter->best_metric ? *full : *adapter;
  return choice;
}

}  // namespace moelab
