#include "metawpf/meta_trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <exception>
#include <limits>

#include <json.hpp>

namespace metawpf {

TaskLossFn forecast_loss(const ModelConfig& config) {
  return [config](ad::Tape& tape, std::span<const ad::Var> params, const SampleView& s) {
    return batch_loss(tape, params, config, s.windows, s.targets);
  };
}

std::string_view to_string(GradientMode m) {
  return m == GradientMode::FirstOrder ? "first_order" : "second_order";
}

std::string_view to_string(StopReason r) {
  switch (r) {
    case StopReason::MaxEpochs: return "max_epochs";
    case StopReason::EarlyStop: return "early_stop";
    case StopReason::Diverged: return "diverged";
  }
  return "?";
}

void MetaConfig::validate() const {
  if (inner_steps < 1) throw std::invalid_argument("meta config: inner_steps must be >= 1");
  if (!(inner_lr > 0.0) || !(outer_lr > 0.0)) {
    throw std::invalid_argument("meta config: learning rates must be positive");
  }
  if (batch_size < 2) throw std::invalid_argument("meta config: batch_size must be >= 2");
  if (!(support_fraction > 0.0 && support_fraction < 1.0)) {
    throw std::invalid_argument("meta config: support_fraction must lie in (0, 1)");
  }
  if (max_epochs == 0 || patience == 0) {
    throw std::invalid_argument("meta config: max_epochs and patience must be positive");
  }
}

// ---------------------------------------------------------------------------
// Inner loop

namespace {

struct LossAndGrad {
  double loss;
  ParameterVector grad;
};

LossAndGrad loss_and_grad(const ParameterVector& theta, const TaskLossFn& loss,
                          const SampleView& samples) {
  ad::Tape tape;
  auto leaves = ad::bind(tape, theta, true);
  const ad::Var l = loss(tape, leaves, samples);
  return {l.value(), ad::gradient(l, leaves, theta)};
}

double loss_only(const ParameterVector& theta, const TaskLossFn& loss, const SampleView& samples) {
  ad::Tape tape;
  auto leaves = ad::bind(tape, theta, false);
  return loss(tape, leaves, samples).value();
}

// H(theta) v for the loss on `samples`, by differentiating the tape gradient.
ParameterVector hessian_vector(const ParameterVector& theta, const TaskLossFn& loss,
                               const SampleView& samples, const ParameterVector& v) {
  ad::Tape tape;
  auto leaves = ad::bind(tape, theta, true);
  const ad::Var l = loss(tape, leaves, samples);
  auto g = tape.grad(l, leaves, true).grads;
  ad::Var dot;
  for (std::size_t i = 0; i < g.size(); ++i) {
    auto seg = v.segment(i);
    const ad::Var term =
        ad::sum(g[i] * tape.constant({seg.begin(), seg.end()}, g[i].shape()));
    dot = dot.valid() ? dot + term : term;
  }
  return ad::gradient(dot, leaves, theta);
}

void check_finite(double v, const std::string& what) {
  if (!std::isfinite(v)) throw NumericalError(what + " is not finite");
}

}  // namespace

InnerTrajectory inner_adapt(const ParameterVector& theta, const TaskLossFn& loss,
                            const SampleView& support, const SampleView& target,
                            std::size_t steps, double inner_lr) {
  if (support.empty()) throw std::invalid_argument("inner_adapt: empty support set");
  InnerTrajectory tr;
  tr.params.reserve(steps + 1);
  tr.params.push_back(theta);
  for (std::size_t m = 0; m < steps; ++m) {
    auto [l, g] = loss_and_grad(tr.params.back(), loss, support);
    check_finite(l, "support loss at inner step " + std::to_string(m));
    if (!all_finite(g)) {
      throw NumericalError("support gradient at inner step " + std::to_string(m) +
                           " is not finite");
    }
    tr.support_losses.push_back(l);
    ParameterVector next = tr.params.back();
    axpy(-inner_lr, g, next);
    tr.params.push_back(std::move(next));
  }
  if (!target.empty()) {
    for (const auto& [m, w] : meta_loss_terms(steps)) {
      (void)w;
      const double l = loss_only(tr.params[m], loss, target);
      check_finite(l, "target loss at inner step " + std::to_string(m));
      tr.target_losses.push_back(l);
    }
  }
  return tr;
}

std::vector<std::vector<ad::Var>> inner_adapt_on_tape(ad::Tape& tape,
                                                      std::span<const ad::Var> theta,
                                                      const TaskLossFn& loss,
                                                      const SampleView& support,
                                                      std::size_t steps, double inner_lr) {
  if (support.empty()) throw std::invalid_argument("inner_adapt: empty support set");
  std::vector<std::vector<ad::Var>> seq;
  seq.emplace_back(theta.begin(), theta.end());
  for (std::size_t m = 0; m < steps; ++m) {
    const auto& cur = seq.back();
    const ad::Var l = loss(tape, cur, support);
    check_finite(l.value(), "support loss at inner step " + std::to_string(m));
    auto g = tape.grad(l, cur, true).grads;
    std::vector<ad::Var> next;
    next.reserve(cur.size());
    for (std::size_t i = 0; i < cur.size(); ++i) next.push_back(cur[i] - ad::scale(g[i], inner_lr));
    seq.push_back(std::move(next));
  }
  return seq;
}

// ---------------------------------------------------------------------------
// Weighted meta-loss

std::vector<std::pair<std::size_t, double>> meta_loss_terms(std::size_t steps) {
  if (steps == 0) return {{0, 1.0}};
  std::vector<std::pair<std::size_t, double>> t;
  for (std::size_t m = 1; m <= steps; ++m) {
    t.emplace_back(m, static_cast<double>(m) / static_cast<double>(steps));
  }
  return t;
}

double weighted_meta_loss(std::span<const InnerTrajectory> trajectories, std::size_t steps) {
  const auto terms = meta_loss_terms(steps);
  double total = 0.0;
  std::size_t used = 0;
  for (const auto& tr : trajectories) {
    if (tr.target_losses.empty()) continue;
    if (tr.target_losses.size() != terms.size()) {
      throw std::invalid_argument("weighted_meta_loss: trajectory length does not match M");
    }
    ++used;
    for (std::size_t k = 0; k < terms.size(); ++k) total += terms[k].second * tr.target_losses[k];
  }
  if (used == 0) throw NoUsableTasks();
  return total;
}

ad::Var weighted_meta_loss(ad::Tape& tape,
                           std::span<const std::vector<std::vector<ad::Var>>> trajectories,
                           std::span<const SampleView> targets, const TaskLossFn& loss,
                           std::size_t steps) {
  if (trajectories.size() != targets.size()) {
    throw std::invalid_argument("weighted_meta_loss: one target set per trajectory expected");
  }
  const auto terms = meta_loss_terms(steps);
  ad::Var total;
  for (std::size_t n = 0; n < trajectories.size(); ++n) {
    if (targets[n].empty()) continue;
    for (const auto& [m, w] : terms) {
      const ad::Var term = ad::scale(loss(tape, trajectories[n].at(m), targets[n]), w);
      total = total.valid() ? total + term : term;
    }
  }
  if (!total.valid()) throw NoUsableTasks();
  return total;
}

std::vector<TaskSamples> materialize(std::span<const TaskDataset* const> datasets,
                                     const MiniBatchSplit& batch) {
  if (batch.tasks.size() != datasets.size()) {
    throw std::invalid_argument("materialize: mini-batch and dataset counts differ");
  }
  std::vector<TaskSamples> out;
  out.reserve(datasets.size());
  for (std::size_t n = 0; n < datasets.size(); ++n) {
    out.push_back({view(*datasets[n], batch.tasks[n].support),
                   view(*datasets[n], batch.tasks[n].target)});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Meta-gradients

namespace {

struct TaskGradient {
  bool used = false;
  double loss = 0.0;
  ParameterVector grad;
};

TaskGradient task_meta_gradient(const ParameterVector& theta, const TaskSamples& task,
                                const TaskLossFn& loss, const MetaConfig& cfg,
                                GradientMode mode) {
  TaskGradient out;
  if (task.support.empty() || task.target.empty()) return out;
  const std::size_t steps = cfg.inner_steps;
  InnerTrajectory tr = inner_adapt(theta, loss, task.support, {}, steps, cfg.inner_lr);
  const auto terms = meta_loss_terms(steps);

  // Walk the terms from the last inner step backwards. Both modes add the
  // weighted target gradients in the same order; second-order additionally
  // pulls the accumulator back through each inner update,
  // a <- a - alpha * H_S(theta_{k-1}) a.
  ParameterVector acc = theta.like(0.0);
  out.loss = 0.0;
  for (std::size_t t = terms.size(); t-- > 0;) {
    const auto [m, w] = terms[t];
    auto [lt, gt] = loss_and_grad(tr.params[m], loss, task.target);
    check_finite(lt, "target loss at inner step " + std::to_string(m));
    out.loss += w * lt;
    {
      auto a = acc.values();
      auto g = gt.values();
      for (std::size_t i = 0; i < a.size(); ++i) a[i] = a[i] + w * g[i];
    }
    if (mode == GradientMode::SecondOrder && m > 0) {
      const std::size_t prev = t > 0 ? terms[t - 1].first : 0;
      for (std::size_t k = m; k > prev; --k) {
        const ParameterVector hv = hessian_vector(tr.params[k - 1], loss, task.support, acc);
        auto a = acc.values();
        auto h = hv.values();
        for (std::size_t i = 0; i < a.size(); ++i) a[i] = a[i] - cfg.inner_lr * h[i];
      }
    }
  }
  if (!all_finite(acc)) throw NumericalError("meta-gradient is not finite");
  out.used = true;
  out.grad = std::move(acc);
  return out;
}

}  // namespace

MetaGradient meta_gradient(const ParameterVector& theta, std::span<const TaskSamples> tasks,
                           const TaskLossFn& loss, const MetaConfig& cfg, GradientMode mode) {
  std::vector<TaskGradient> per_task(tasks.size());
  std::vector<std::exception_ptr> errors(tasks.size());
  const auto n = static_cast<std::int64_t>(tasks.size());
#pragma omp parallel for schedule(dynamic, 1)
  for (std::int64_t i = 0; i < n; ++i) {
    const auto k = static_cast<std::size_t>(i);
    try {
      per_task[k] = task_meta_gradient(theta, tasks[k], loss, cfg, mode);
    } catch (...) {
      errors[k] = std::current_exception();
    }
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  MetaGradient out;
  out.gradient = theta.like(0.0);
  for (const auto& t : per_task) {
    if (!t.used) continue;
    ++out.tasks_used;
    out.meta_loss += t.loss;
    axpy(1.0, t.grad, out.gradient);
  }
  if (out.tasks_used == 0) throw NoUsableTasks();
  return out;
}

MetaGradient meta_gradient_unrolled(const ParameterVector& theta,
                                    std::span<const TaskSamples> tasks, const TaskLossFn& loss,
                                    const MetaConfig& cfg) {
  ad::Tape tape;
  auto leaves = ad::bind(tape, theta, true);
  std::vector<std::vector<std::vector<ad::Var>>> trajectories;
  std::vector<SampleView> targets;
  MetaGradient out;
  for (const auto& task : tasks) {
    if (task.support.empty() || task.target.empty()) continue;
    trajectories.push_back(
        inner_adapt_on_tape(tape, leaves, loss, task.support, cfg.inner_steps, cfg.inner_lr));
    targets.push_back(task.target);
    ++out.tasks_used;
  }
  const ad::Var total = weighted_meta_loss(tape, trajectories, targets, loss, cfg.inner_steps);
  out.meta_loss = total.value();
  out.gradient = ad::gradient(total, leaves, theta);
  return out;
}

double meta_loss_value(const ParameterVector& theta, std::span<const TaskSamples> tasks,
                       const TaskLossFn& loss, const MetaConfig& cfg) {
  std::vector<InnerTrajectory> trs;
  for (const auto& task : tasks) {
    if (task.support.empty() || task.target.empty()) continue;
    trs.push_back(inner_adapt(theta, loss, task.support, task.target, cfg.inner_steps,
                              cfg.inner_lr));
  }
  return weighted_meta_loss(trs, cfg.inner_steps);
}

// ---------------------------------------------------------------------------
// Outer update

OuterUpdater::OuterUpdater(const MetaConfig& cfg, const ParameterVector& like)
    : kind_(cfg.optimizer),
      lr_(cfg.outer_lr),
      beta1_(cfg.adam_beta1),
      beta2_(cfg.adam_beta2),
      eps_(cfg.adam_epsilon),
      m_(like.like(0.0)),
      v_(like.like(0.0)) {}

void OuterUpdater::apply(ParameterVector& theta, const ParameterVector& gradient) {
  if (!theta.same_layout(gradient)) throw std::invalid_argument("outer update: layout mismatch");
  ++t_;
  if (kind_ == OuterOptimizer::Plain) {
    axpy(-lr_, gradient, theta);
    return;
  }
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const double g = gradient[i];
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * g;
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * g * g;
    theta[i] -= lr_ * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + eps_);
  }
}

MetaStepResult meta_step(ParameterVector& theta, OuterUpdater& updater,
                         std::span<const TaskSamples> tasks, const TaskLossFn& loss,
                         const MetaConfig& cfg, GradientMode mode) {
  MetaGradient g = meta_gradient(theta, tasks, loss, cfg, mode);
  MetaStepResult r{g.meta_loss, norm(g.gradient), g.tasks_used};
  if (!std::isfinite(r.gradient_norm)) throw NumericalError("meta-gradient contains NaN/Inf");
  updater.apply(theta, g.gradient);
  return r;
}

// ---------------------------------------------------------------------------
// Training loop

std::string to_json_line(const EpochRecord& r) {
  nlohmann::json j{{"epoch", r.epoch},
                   {"mode", std::string(to_string(r.mode))},
                   {"train_meta_loss", r.train_meta_loss},
                   {"val_meta_loss", r.val_meta_loss},
                   {"wall_ms", r.wall_ms}};
  return j.dump();
}

std::uint64_t mix_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b) {
  // splitmix64 over the three words
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ull;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  };
  return mix(mix(mix(base) ^ a) ^ b);
}

namespace {

std::size_t joint_size(std::span<const TaskDataset* const> sets) {
  std::size_t n = 0;
  for (const auto* d : sets) n += d->size();
  return n;
}

std::size_t batches_for(std::size_t total, std::size_t batch, std::size_t cap) {
  std::size_t n = (total + batch - 1) / batch;
  if (cap > 0) n = std::min(n, cap);
  return std::max<std::size_t>(n, 1);
}

constexpr std::uint64_t kValidationStream = 0x76616cull;

}  // namespace

std::vector<MiniBatchSplit> validation_batches(std::span<const TaskDataset* const> datasets,
                                               const MetaConfig& cfg) {
  const std::size_t total = joint_size(datasets);
  if (total == 0) return {};
  const std::size_t n = batches_for(total, cfg.batch_size, cfg.max_validation_batches);
  std::vector<MiniBatchSplit> out;
  for (std::size_t b = 0; b < n; ++b) {
    out.push_back(sample_minibatch(datasets, cfg.batch_size, cfg.support_fraction,
                                   mix_seed(cfg.seed, kValidationStream, b)));
  }
  return out;
}

TrainResult train(const ParameterVector& theta0, std::span<const TaskDataset* const> train_sets,
                  std::span<const TaskDataset* const> val_sets, const TaskLossFn& loss,
                  const MetaConfig& cfg, const EpochCallback& on_epoch) {
  cfg.validate();
  if (train_sets.empty()) throw std::invalid_argument("train: no training tasks");
  const std::size_t total = joint_size(train_sets);
  if (total == 0) throw std::invalid_argument("train: all training datasets are empty");

  TrainResult result;
  result.params = theta0;
  OuterUpdater updater(cfg, theta0);
  const auto val = validation_batches(val_sets, cfg);
  const std::size_t per_epoch = batches_for(total, cfg.batch_size, cfg.max_batches_per_epoch);

  bool second_order = false;
  std::optional<double> threshold = cfg.switch_threshold;
  if (threshold && *threshold < 0.0) {
    second_order = true;
    result.switch_epoch = 1;
  }
  double initial_loss = 0.0;
  std::size_t streak = 0;

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const GradientMode mode = second_order ? GradientMode::SecondOrder : GradientMode::FirstOrder;
    double sum = 0.0;
    std::size_t used = 0;
    for (std::size_t b = 0; b < per_epoch; ++b) {
      const auto batch = sample_minibatch(train_sets, cfg.batch_size, cfg.support_fraction,
                                          mix_seed(cfg.seed, epoch, b));
      const auto tasks = materialize(train_sets, batch);
      try {
        const auto r = meta_step(result.params, updater, tasks, loss, cfg, mode);
        sum += r.meta_loss;
        ++used;
      } catch (const NoUsableTasks&) {
        continue;
      }
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.mode = mode;
    rec.train_meta_loss = used ? sum / static_cast<double>(used)
                               : std::numeric_limits<double>::quiet_NaN();
    double vsum = 0.0;
    std::size_t vused = 0;
    for (const auto& vb : val) {
      try {
        vsum += meta_loss_value(result.params, materialize(val_sets, vb), loss, cfg);
        ++vused;
      } catch (const NoUsableTasks&) {
      }
    }
    rec.val_meta_loss = vused ? vsum / static_cast<double>(vused)
                              : std::numeric_limits<double>::quiet_NaN();
    rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
                      .count();
    result.log.push_back(rec);
    if (on_epoch) on_epoch(rec);

    if (epoch == 1) {
      initial_loss = rec.train_meta_loss;
      if (!threshold) threshold = 0.5 * initial_loss;
    }
    if (!std::isfinite(rec.train_meta_loss) ||
        rec.train_meta_loss > cfg.divergence_factor * initial_loss) {
      result.reason = StopReason::Diverged;
      break;
    }
    // +inf disables the switch rather than firing it immediately.
    if (!second_order && std::isfinite(*threshold) && rec.train_meta_loss < *threshold) {
      second_order = true;
      result.switch_epoch = epoch + 1;
    }
    streak = (vused && rec.train_meta_loss < rec.val_meta_loss) ? streak + 1 : 0;
    if (streak >= cfg.patience) {
      result.reason = StopReason::EarlyStop;
      break;
    }
  }
  result.threshold = threshold.value_or(0.0);
  if (result.switch_epoch && *result.switch_epoch > result.log.size()) {
    result.switch_epoch.reset();  // switch decided after the last epoch ran
  }
  return result;
}

}  // namespace metawpf
