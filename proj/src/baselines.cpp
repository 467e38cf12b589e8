#include "metawpf/baselines.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <stdexcept>

#include <json.hpp>

namespace metawpf {

std::string_view to_string(BaselineKind k) {
  switch (k) {
    case BaselineKind::SingleTask: return "single";
    case BaselineKind::MTAO: return "mtao";
    case BaselineKind::MTAP: return "mtap";
  }
  return "?";
}

BaselineKind parse_baseline(std::string_view text) {
  if (text == "single") return BaselineKind::SingleTask;
  if (text == "mtao") return BaselineKind::MTAO;
  if (text == "mtap") return BaselineKind::MTAP;
  throw std::invalid_argument("unknown baseline '" + std::string(text) +
                              "' (expected single, mtao or mtap)");
}

PooledGradient pooled_gradient(const ParameterVector& theta, std::span<const TaskSamples> tasks,
                               const TaskLossFn& loss) {
  PooledGradient out;
  out.gradient = theta.like(0.0);
  for (const auto& t : tasks) {
    SampleView all = t.support;
    all.windows.insert(all.windows.end(), t.target.windows.begin(), t.target.windows.end());
    all.targets.insert(all.targets.end(), t.target.targets.begin(), t.target.targets.end());
    if (all.empty()) continue;
    ad::Tape tape;
    auto leaves = ad::bind(tape, theta, true);
    const ad::Var l = loss(tape, leaves, all);
    out.loss += l.value();
    axpy(1.0, ad::gradient(l, leaves, theta), out.gradient);
    ++out.tasks_used;
  }
  return out;
}

std::string to_json_line(const BaselineEpoch& r, std::string_view label) {
  nlohmann::json j{{"epoch", r.epoch},
                   {"mode", std::string(label)},
                   {"train_meta_loss", r.train_loss},
                   {"val_meta_loss", r.val_loss},
                   {"wall_ms", r.wall_ms}};
  return j.dump();
}

namespace {

std::size_t joint_size(std::span<const TaskDataset* const> sets) {
  std::size_t n = 0;
  for (const auto* d : sets) n += d->size();
  return n;
}

}  // namespace

BaselineResult train_pooled(const ParameterVector& theta0,
                            std::span<const TaskDataset* const> train_sets,
                            std::span<const TaskDataset* const> val_sets, const TaskLossFn& loss,
                            const MetaConfig& cfg, const BaselineCallback& on_epoch) {
  if (train_sets.empty()) throw std::invalid_argument("baseline training: no tasks");
  const std::size_t total = joint_size(train_sets);
  if (total == 0) throw std::invalid_argument("baseline training: all datasets are empty");
  if (cfg.batch_size == 0 || cfg.max_epochs == 0 || !(cfg.outer_lr > 0.0)) {
    throw std::invalid_argument("baseline training: invalid batch size, epochs or learning rate");
  }

  // Validation batches reuse the meta-training draw; every sample counts.
  std::vector<std::vector<TaskSamples>> val;
  for (const auto& vb : validation_batches(val_sets, cfg)) val.push_back(materialize(val_sets, vb));

  std::size_t per_epoch = (total + cfg.batch_size - 1) / cfg.batch_size;
  if (cfg.max_batches_per_epoch > 0) per_epoch = std::min(per_epoch, cfg.max_batches_per_epoch);

  BaselineResult result;
  ParameterVector theta = theta0;
  result.params = theta0;
  result.val_loss = std::numeric_limits<double>::infinity();
  OuterUpdater updater(cfg, theta0);
  std::size_t since_best = 0;
  double initial = 0.0;

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    double sum = 0.0;
    std::size_t used = 0;
    for (std::size_t b = 0; b < per_epoch; ++b) {
      const auto batch = sample_minibatch(train_sets, cfg.batch_size, 1.0,
                                          mix_seed(cfg.seed, epoch, b));
      const auto tasks = materialize(train_sets, batch);
      PooledGradient g = pooled_gradient(theta, tasks, loss);
      if (g.tasks_used == 0) continue;
      if (!all_finite(g.gradient)) throw NumericalError("pooled gradient contains NaN/Inf");
      updater.apply(theta, g.gradient);
      sum += g.loss;
      ++used;
    }
    BaselineEpoch rec;
    rec.epoch = epoch;
    rec.train_loss = used ? sum / static_cast<double>(used) : 0.0;
    double vsum = 0.0;
    for (const auto& vb : val) {
      for (const auto& t : vb) {
        SampleView all = t.support;
        all.windows.insert(all.windows.end(), t.target.windows.begin(), t.target.windows.end());
        all.targets.insert(all.targets.end(), t.target.targets.begin(), t.target.targets.end());
        if (all.empty()) continue;
        ad::Tape tape;
        auto leaves = ad::bind(tape, theta, false);
        vsum += loss(tape, leaves, all).value();
      }
    }
    rec.val_loss = val.empty() ? rec.train_loss : vsum / static_cast<double>(val.size());
    rec.wall_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    result.log.push_back(rec);
    if (on_epoch) on_epoch(rec);

    if (epoch == 1) initial = rec.train_loss;
    if (!std::isfinite(rec.train_loss) || rec.train_loss > cfg.divergence_factor * initial) {
      result.reason = StopReason::Diverged;
      break;
    }
    if (val.empty()) {
      result.params = theta;
      result.val_loss = rec.val_loss;
      continue;
    }
    if (rec.val_loss < result.val_loss) {
      result.val_loss = rec.val_loss;
      result.params = theta;
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      result.reason = StopReason::EarlyStop;
      break;
    }
  }
  return result;
}

std::size_t select_best(std::span<const double> val_losses) {
  if (val_losses.empty()) throw std::invalid_argument("select_best: no candidates");
  return static_cast<std::size_t>(
      std::min_element(val_losses.begin(), val_losses.end()) - val_losses.begin());
}

SingleTaskResult train_single_task(const ParameterVector& theta0,
                                   std::span<const TaskDataset* const> train_sets,
                                   std::span<const TaskDataset* const> val_sets,
                                   const TaskLossFn& loss, const MetaConfig& cfg,
                                   const BaselineCallback& on_epoch) {
  if (train_sets.empty()) throw std::invalid_argument("single-task training: no tasks");
  if (!val_sets.empty() && val_sets.size() != train_sets.size()) {
    throw std::invalid_argument("single-task training: one validation set per task expected");
  }
  SingleTaskResult out;
  std::vector<double> losses;
  for (std::size_t n = 0; n < train_sets.size(); ++n) {
    const TaskDataset* tr[1] = {train_sets[n]};
    std::span<const TaskDataset* const> va;
    if (!val_sets.empty()) va = val_sets.subspan(n, 1);
    out.models.push_back(train_pooled(theta0, tr, va, loss, cfg, on_epoch));
    losses.push_back(out.models.back().val_loss);
  }
  out.selected = select_best(losses);
  return out;
}

BaselineResult train_mtao(const ParameterVector& theta0,
                          std::span<const TaskDataset* const> train_sets,
                          std::span<const TaskDataset* const> val_sets, const TaskLossFn& loss,
                          const MetaConfig& cfg, const BaselineCallback& on_epoch) {
  return train_pooled(theta0, train_sets, val_sets, loss, cfg, on_epoch);
}

MtapResult train_mtap(const ParameterVector& theta0, std::span<const TaskDataset* const> train_sets,
                      std::span<const TaskDataset* const> val_sets, const TaskLossFn& loss,
                      const MetaConfig& cfg, const BaselineCallback& on_epoch) {
  if (train_sets.empty()) throw std::invalid_argument("MTAP training: no tasks");
  if (!val_sets.empty() && val_sets.size() != train_sets.size()) {
    throw std::invalid_argument("MTAP training: one validation set per task expected");
  }
  MtapResult out;
  for (std::size_t n = 0; n < train_sets.size(); ++n) {
    const TaskDataset* tr[1] = {train_sets[n]};
    std::span<const TaskDataset* const> va;
    if (!val_sets.empty()) va = val_sets.subspan(n, 1);
    try {
      out.individual.push_back(train_pooled(theta0, tr, va, loss, cfg, on_epoch).params);
    } catch (const std::exception& e) {
      throw std::runtime_error("MTAP: training of task " + train_sets[n]->task.id() +
                               " failed: " + e.what());
    }
  }
  out.params = mean(out.individual);
  return out;
}

}  // namespace metawpf
