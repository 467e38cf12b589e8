#include "metawpf/online_adapter.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace metawpf {

void OnlineConfig::validate() const {
  if (window_size == 0) throw std::invalid_argument("online config: window_size must be >= 1");
  if (!(forgetting >= 0.0 && forgetting <= 1.0)) {
    throw std::invalid_argument("online config: forgetting factor must lie in [0, 1]");
  }
  if (repeats == 0) throw std::invalid_argument("online config: repeats must be >= 1");
  if (!(lr >= 0.0)) throw std::invalid_argument("online config: learning rate must be >= 0");
}

WeightedLossFn weighted_forecast_loss(const ModelConfig& config) {
  return [config](ad::Tape& tape, std::span<const ad::Var> params, const SampleView& s,
                  std::span<const double> weights) {
    return pinball_loss(forward(tape, params, config, s.windows), s.targets, config.quantiles,
                        weights);
  };
}

std::vector<double> forgetting_weights(const OnlineState& state, const OnlineConfig& cfg) {
  std::vector<double> w;
  w.reserve(state.buffer.size());
  const double n = static_cast<double>(cfg.window_size);
  for (const auto& p : state.buffer) {
    if (p.index > state.newest_index) throw std::logic_error("buffered pair newer than t - tau");
    const auto age = static_cast<int>(state.newest_index - p.index);
    w.push_back(std::pow(cfg.forgetting, age) / n);  // pow(0, 0) == 1
  }
  return w;
}

ad::Var online_loss(ad::Tape& tape, std::span<const ad::Var> params, const OnlineState& state,
                    const OnlineConfig& cfg, const WeightedLossFn& loss) {
  if (state.buffer.empty()) throw WarmUp();
  SampleView s;
  for (const auto& p : state.buffer) {
    s.windows.push_back(&p.window);
    s.targets.push_back(p.target);
  }
  const auto w = forgetting_weights(state, cfg);
  return loss(tape, params, s, w);
}

bool online_update(OnlineState& state, const OnlineConfig& cfg, const WeightedLossFn& loss) {
  ParameterVector theta = state.params;
  for (std::size_t r = 0; r < cfg.repeats; ++r) {
    ad::Tape tape;
    auto leaves = ad::bind(tape, theta, true);
    const ad::Var l = online_loss(tape, leaves, state, cfg, loss);
    if (!std::isfinite(l.value())) return false;
    const ParameterVector g = ad::gradient(l, leaves, theta);
    if (!all_finite(g)) return false;
    axpy(-cfg.lr, g, theta);
  }
  if (!all_finite(theta)) return false;
  state.params = std::move(theta);
  return true;
}

void refresh_buffer(OnlineState& state, const SeriesBundle& bundle, const Normalizer& norm,
                    const ForecastTask& task, std::size_t lag_steps, std::size_t t,
                    std::size_t window_size) {
  state.buffer.clear();
  const std::size_t tau = lead_steps(bundle, task);
  if (t < tau) {
    state.newest_index = 0;
    return;
  }
  state.newest_index = t - tau;
  const std::size_t first = state.newest_index + 1 >= window_size ? state.newest_index + 1 - window_size : 0;
  for (std::size_t i = first; i <= state.newest_index; ++i) {
    auto target = raw_target(bundle, task.location, i, tau, task.statistic);
    if (!target) continue;
    auto window = build_window(bundle, task.location, norm, i, lag_steps);
    if (!window) continue;
    state.buffer.push_back({std::move(*window), norm.normalize(0, *target), i,
                            bundle.timestamp(i + tau)});
  }
}

std::vector<Normalizer> fit_normalizers(const SeriesBundle& bundle, const SplitFractions& split) {
  std::vector<Normalizer> out;
  const std::size_t end = train_end(bundle.length(), split);
  for (std::size_t l = 0; l < bundle.locations.size(); ++l) {
    out.push_back(fit_normalizer(bundle, l, end));
  }
  return out;
}

std::string_view to_string(ReinitReason r) {
  return r == ReinitReason::Start ? "start" : "task_switch";
}

StreamRun run_stream(const ParameterVector& theta_meta, const TaskStream& stream,
                     const SeriesBundle& bundle, std::span<const Normalizer> normalizers,
                     const ModelConfig& model, const OnlineConfig& cfg) {
  cfg.validate();
  if (!theta_meta.same_layout(make_layout(model))) {
    throw std::invalid_argument("run_stream: parameters do not match the model config");
  }
  if (normalizers.size() != bundle.locations.size()) {
    throw std::invalid_argument("run_stream: one normalizer per location expected");
  }
  for (const auto& task : stream.tasks) {
    if (task.location >= bundle.locations.size()) {
      throw std::invalid_argument("run_stream: task " + task.id() + " names a missing location");
    }
    if (bundle.feature_count(task.location) != model.input_features) {
      throw std::invalid_argument("run_stream: location " + std::to_string(task.location) +
                                  " has " + std::to_string(bundle.feature_count(task.location)) +
                                  " features, model expects " +
                                  std::to_string(model.input_features));
    }
  }
  for (const auto& seg : stream.segments) {
    if (seg.end > bundle.length() || seg.task >= stream.tasks.size()) {
      throw std::invalid_argument("run_stream: stream segment does not fit the series");
    }
  }

  const WeightedLossFn loss = weighted_forecast_loss(model);
  StreamRun run;
  OnlineState state;
  for (const auto& seg : stream.segments) {
    const ForecastTask& task = stream.tasks[seg.task];
    const Normalizer& norm = normalizers[task.location];
    const std::size_t tau = lead_steps(bundle, task);
    for (std::size_t t = seg.begin; t < seg.end; ++t) {
      state.clock = bundle.timestamp(t);
      if (!state.task || *state.task != seg.task) {
        run.reinits.push_back({t, state.clock, seg.task,
                               state.task ? ReinitReason::TaskSwitch : ReinitReason::Start});
        state.params = theta_meta;
        state.task = seg.task;
      }

      refresh_buffer(state, bundle, norm, task, model.lag_steps, t, cfg.window_size);
      for (const auto& p : state.buffer) {
        if (p.target_time > state.clock || p.window.last_timestamp >= p.target_time) {
          ++run.leakage_violations;
        }
      }
      if (state.buffer.empty()) {
        ++run.warmup_skips;
      } else if (online_update(state, cfg, loss)) {
        ++run.updates;
      } else {
        ++run.nan_events;
      }

      // Forecast from X_{t+1} for t + 1 + tau.
      if (t + 1 >= bundle.length()) continue;
      auto window = build_window(bundle, task.location, norm, t + 1, model.lag_steps);
      if (!window) continue;
      StreamRecord rec;
      rec.spot = t;
      rec.task = seg.task;
      rec.task_id = task.id();
      rec.lead_time = task.lead_time;
      rec.forecast = predict(state.params, *window, model, true);
      rec.forecast.lead_time = task.lead_time;
      rec.forecast.issue_time = bundle.timestamp(t + 1);
      rec.target_time = bundle.timestamp(t + 1) + task.lead_time;
      if (window->last_timestamp > rec.forecast.issue_time ||
          rec.target_time <= rec.forecast.issue_time) {
        ++run.leakage_violations;
      }
      if (auto obs = raw_target(bundle, task.location, t + 1, tau, task.statistic)) {
        rec.observation = norm.normalize(0, *obs);
      }
      run.records.push_back(std::move(rec));
    }
  }
  return run;
}

std::vector<ScoredForecast> scored(const StreamRun& run) {
  std::vector<ScoredForecast> out;
  for (const auto& r : run.records) {
    if (r.observation) out.push_back({r.forecast, *r.observation});
  }
  return out;
}

void write_forecasts_jsonl(const std::filesystem::path& path, const StreamRun& run) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& r : run.records) {
    nlohmann::json j{{"timestamp", format_iso8601(r.forecast.issue_time)},
                     {"task_id", r.task_id},
                     {"lead_time", r.lead_time},
                     {"quantiles", r.forecast.values}};
    if (r.observation) j["observation"] = *r.observation;
    out << j.dump() << '\n';
  }
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

void write_events_jsonl(const std::filesystem::path& path, const StreamRun& run,
                        const TaskStream& stream) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& e : run.reinits) {
    nlohmann::json j{{"event", "reinit"},
                     {"timestamp", format_iso8601(e.timestamp)},
                     {"spot", e.spot},
                     {"task_id", stream.tasks.at(e.task).id()},
                     {"reason", std::string(to_string(e.reason))}};
    out << j.dump() << '\n';
  }
}

std::vector<ScoredForecast> read_forecasts_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<ScoredForecast> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      if (!j.contains("observation")) continue;
      ScoredForecast s;
      s.forecast.values = j.at("quantiles").get<std::vector<double>>();
      s.forecast.lead_time = j.at("lead_time").get<std::int64_t>();
      s.forecast.issue_time = parse_iso8601(j.at("timestamp").get<std::string>());
      s.observation = j.at("observation").get<double>();
      out.push_back(std::move(s));
    } catch (const std::exception& e) {
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace metawpf
