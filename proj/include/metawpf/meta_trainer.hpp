#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "metawpf/autodiff.hpp"
#include "metawpf/forecast_model.hpp"
#include "metawpf/parameters.hpp"
#include "metawpf/task_engine.hpp"

namespace metawpf {

/// Differentiable loss of a model (given as bound parameter segments) on a sample subset.
using TaskLossFn =
    std::function<ad::Var(ad::Tape&, std::span<const ad::Var>, const SampleView&)>;

/// Mean pinball loss of the quantile network described by `config`.
TaskLossFn forecast_loss(const ModelConfig& config);

enum class OuterOptimizer { Adam, Plain };
enum class GradientMode { FirstOrder, SecondOrder };

std::string_view to_string(GradientMode m);

struct MetaConfig {
  std::size_t inner_steps = 4;  // M
  double inner_lr = 5e-3;
  double outer_lr = 1e-3;
  /// Epoch-average training meta-loss below which training switches to
  /// second-order gradients. Unset: half the first epoch's average. Negative:
  /// second-order from the first epoch. +inf: never.
  std::optional<double> switch_threshold;
  std::size_t max_epochs = 200;
  std::size_t patience = 20;
  std::uint64_t seed = 0;
  std::size_t batch_size = 64;
  double support_fraction = 0.5;
  /// Caps mini-batches per epoch; 0 keeps ceil(joint size / batch size).
  std::size_t max_batches_per_epoch = 0;
  /// Caps validation mini-batches; 0 keeps ceil(joint validation size / batch size).
  std::size_t max_validation_batches = 0;
  OuterOptimizer optimizer = OuterOptimizer::Adam;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;
  double divergence_factor = 1e3;

  /// Throws std::invalid_argument when M < 1 or a rate is not positive.
  void validate() const;
};

/// Thrown when no task in a mini-batch has both a support and a target set.
class NoUsableTasks : public std::runtime_error {
 public:
  NoUsableTasks() : std::runtime_error("mini-batch has no task with both support and target samples") {}
};

/// Thrown on NaN losses or gradients; carries a diagnostic.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// theta_0..theta_M of one task plus the losses seen along the way.
struct InnerTrajectory {
  std::vector<ParameterVector> params;
  std::vector<double> support_losses;  // at theta_0..theta_{M-1}
  std::vector<double> target_losses;   // at theta_1..theta_M (theta_0 when M = 0)
};

/// M plain gradient steps on the support loss. Target losses are recorded
/// when `target` is non-empty.
InnerTrajectory inner_adapt(const ParameterVector& theta, const TaskLossFn& loss,
                            const SampleView& support, const SampleView& target,
                            std::size_t steps, double inner_lr);

/// Same recursion on a tape, differentiable with respect to `theta`.
/// Returns theta_0..theta_M as segment lists.
std::vector<std::vector<ad::Var>> inner_adapt_on_tape(ad::Tape& tape,
                                                      std::span<const ad::Var> theta,
                                                      const TaskLossFn& loss,
                                                      const SampleView& support,
                                                      std::size_t steps, double inner_lr);

/// (step index, weight) pairs of the weighted meta-loss: m/M for m = 1..M,
/// or the single pair (0, 1) when M = 0.
std::vector<std::pair<std::size_t, double>> meta_loss_terms(std::size_t steps);

/// sum_n sum_m (m/M) L_T(theta_m^(n)) from recorded trajectories.
double weighted_meta_loss(std::span<const InnerTrajectory> trajectories, std::size_t steps);

/// The same sum on a tape, given per-task theta sequences and target sets.
/// Tasks with an empty target set are skipped; throws NoUsableTasks if all are.
ad::Var weighted_meta_loss(ad::Tape& tape,
                           std::span<const std::vector<std::vector<ad::Var>>> trajectories,
                           std::span<const SampleView> targets, const TaskLossFn& loss,
                           std::size_t steps);

/// Support/target views of one mini-batch, one pair per task.
struct TaskSamples {
  SampleView support;
  SampleView target;
};

std::vector<TaskSamples> materialize(std::span<const TaskDataset* const> datasets,
                                     const MiniBatchSplit& batch);

struct MetaGradient {
  ParameterVector gradient;
  double meta_loss = 0.0;
  std::size_t tasks_used = 0;
};

/// Meta-gradient of the weighted meta-loss. First-order treats adapted
/// parameters as constants; second-order pulls every target gradient back
/// through the inner updates with Hessian-vector products from the tape.
/// Tasks are processed in parallel and reduced in task order.
MetaGradient meta_gradient(const ParameterVector& theta, std::span<const TaskSamples> tasks,
                           const TaskLossFn& loss, const MetaConfig& cfg, GradientMode mode);

/// Second-order meta-gradient from one fully unrolled tape (independent route).
MetaGradient meta_gradient_unrolled(const ParameterVector& theta,
                                    std::span<const TaskSamples> tasks, const TaskLossFn& loss,
                                    const MetaConfig& cfg);

/// Weighted meta-loss value at theta (inner loops run numerically).
double meta_loss_value(const ParameterVector& theta, std::span<const TaskSamples> tasks,
                       const TaskLossFn& loss, const MetaConfig& cfg);

/// Outer-loop update rule: plain descent or Adam.
class OuterUpdater {
 public:
  OuterUpdater(const MetaConfig& cfg, const ParameterVector& like);
  void apply(ParameterVector& theta, const ParameterVector& gradient);
  std::size_t steps() const { return t_; }

 private:
  OuterOptimizer kind_;
  double lr_;
  double beta1_;
  double beta2_;
  double eps_;
  ParameterVector m_;
  ParameterVector v_;
  std::size_t t_ = 0;
};

struct MetaStepResult {
  double meta_loss = 0.0;
  double gradient_norm = 0.0;
  std::size_t tasks_used = 0;
};

/// theta <- theta - outer step(meta-gradient). Throws NumericalError on a NaN gradient.
MetaStepResult meta_step(ParameterVector& theta, OuterUpdater& updater,
                         std::span<const TaskSamples> tasks, const TaskLossFn& loss,
                         const MetaConfig& cfg, GradientMode mode);

struct EpochRecord {
  std::size_t epoch = 0;
  GradientMode mode = GradientMode::FirstOrder;
  double train_meta_loss = 0.0;
  double val_meta_loss = 0.0;
  double wall_ms = 0.0;
};

/// {"epoch", "mode", "train_meta_loss", "val_meta_loss", "wall_ms"} on one line.
std::string to_json_line(const EpochRecord& r);

enum class StopReason { MaxEpochs, EarlyStop, Diverged };
std::string_view to_string(StopReason r);

struct TrainResult {
  ParameterVector params;
  std::vector<EpochRecord> log;
  std::optional<std::size_t> switch_epoch;  // first epoch run second-order
  StopReason reason = StopReason::MaxEpochs;
  double threshold = 0.0;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Derives a per-(epoch, batch) seed from a base seed.
std::uint64_t mix_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b);

/// Fixed validation mini-batches drawn once per run.
std::vector<MiniBatchSplit> validation_batches(std::span<const TaskDataset* const> datasets,
                                               const MetaConfig& cfg);

/// Offline meta-training loop: mini-batch -> inner loops -> weighted meta-loss
/// -> outer update, first-order until the threshold is crossed, then
/// second-order. Stops after `patience` consecutive epochs whose training
/// meta-loss is below the validation meta-loss, at max_epochs, or on divergence.
TrainResult train(const ParameterVector& theta0, std::span<const TaskDataset* const> train_sets,
                  std::span<const TaskDataset* const> val_sets, const TaskLossFn& loss,
                  const MetaConfig& cfg, const EpochCallback& on_epoch = {});

}  // namespace metawpf
