#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "metawpf/meta_trainer.hpp"

namespace metawpf {

enum class BaselineKind { SingleTask, MTAO, MTAP };

std::string_view to_string(BaselineKind k);
/// "single", "mtao" or "mtap".
BaselineKind parse_baseline(std::string_view text);

struct PooledGradient {
  ParameterVector gradient;
  double loss = 0.0;
  std::size_t tasks_used = 0;
};

/// sum_n grad L_n(theta) over every task's drawn samples (support and target
/// together); no inner loop.
PooledGradient pooled_gradient(const ParameterVector& theta, std::span<const TaskSamples> tasks,
                               const TaskLossFn& loss);

struct BaselineEpoch {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double wall_ms = 0.0;
};

/// Same keys as the meta-training log, with `mode` set to `label`.
std::string to_json_line(const BaselineEpoch& r, std::string_view label);

struct BaselineResult {
  ParameterVector params;  // best validation epoch, or last epoch without validation data
  std::vector<BaselineEpoch> log;
  double val_loss = 0.0;
  StopReason reason = StopReason::MaxEpochs;
};

using BaselineCallback = std::function<void(const BaselineEpoch&)>;

/// Conventional mini-batch training on the summed per-task pinball loss, with
/// validation-plateau early stopping (cfg.patience). Uses cfg.outer_lr,
/// cfg.optimizer, cfg.batch_size, cfg.max_epochs and cfg.seed.
BaselineResult train_pooled(const ParameterVector& theta0,
                            std::span<const TaskDataset* const> train_sets,
                            std::span<const TaskDataset* const> val_sets, const TaskLossFn& loss,
                            const MetaConfig& cfg, const BaselineCallback& on_epoch = {});

/// Index of the smallest validation loss (first on ties). Throws on empty input.
std::size_t select_best(std::span<const double> val_losses);

struct SingleTaskResult {
  std::vector<BaselineResult> models;  // one per offline task
  std::size_t selected = 0;
  const ParameterVector& params() const { return models.at(selected).params; }
};

SingleTaskResult train_single_task(const ParameterVector& theta0,
                                   std::span<const TaskDataset* const> train_sets,
                                   std::span<const TaskDataset* const> val_sets,
                                   const TaskLossFn& loss, const MetaConfig& cfg,
                                   const BaselineCallback& on_epoch = {});

/// One model on pooled mini-batches of every task.
BaselineResult train_mtao(const ParameterVector& theta0,
                          std::span<const TaskDataset* const> train_sets,
                          std::span<const TaskDataset* const> val_sets, const TaskLossFn& loss,
                          const MetaConfig& cfg, const BaselineCallback& on_epoch = {});

struct MtapResult {
  ParameterVector params;  // elementwise mean of the individual models
  std::vector<ParameterVector> individual;
};

/// Trains one model per task from the same initialization, in task order,
/// and averages their parameters.
MtapResult train_mtap(const ParameterVector& theta0, std::span<const TaskDataset* const> train_sets,
                      std::span<const TaskDataset* const> val_sets, const TaskLossFn& loss,
                      const MetaConfig& cfg, const BaselineCallback& on_epoch = {});

}  // namespace metawpf
