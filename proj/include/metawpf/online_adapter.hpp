#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "metawpf/autodiff.hpp"
#include "metawpf/forecast_model.hpp"
#include "metawpf/parameters.hpp"
#include "metawpf/task_engine.hpp"

namespace metawpf {

struct OnlineConfig {
  std::size_t window_size = 3;  // N_lambda
  double forgetting = 0.4;      // lambda
  std::size_t repeats = 4;      // N_inc
  double lr = 1e-3;             // alpha_on

  /// (3, 0.4, 4, 1e-3): lead-time adjustment setting.
  static OnlineConfig lead_time_default() { return {3, 0.4, 4, 1e-3}; }
  /// (3, 0.6, 4, 1e-3): new wind farm setting.
  static OnlineConfig new_farm_default() { return {3, 0.6, 4, 1e-3}; }

  void validate() const;
};

/// Sum over samples of weight_i * per-sample loss.
using WeightedLossFn = std::function<ad::Var(ad::Tape&, std::span<const ad::Var>,
                                             const SampleView&, std::span<const double>)>;

/// Weighted pinball loss of the quantile network.
WeightedLossFn weighted_forecast_loss(const ModelConfig& config);

/// (X_i, y_{i+tau}) whose target has been observed.
struct MaturedPair {
  InputWindow window;
  double target = 0.0;
  std::size_t index = 0;  // window end i
  std::int64_t target_time = 0;
};

struct OnlineState {
  ParameterVector params;
  std::optional<std::size_t> task;
  /// Oldest first. Every pair has index <= newest_index.
  std::vector<MaturedPair> buffer;
  /// t - tau: window end of the newest pair that may have matured.
  std::size_t newest_index = 0;
  std::int64_t clock = 0;  // timestamp of the current spot
};

/// Thrown by online_loss while the buffer is still empty.
class WarmUp : public std::runtime_error {
 public:
  WarmUp() : std::runtime_error("online buffer is empty (warm-up)") {}
};

/// lambda^(newest_index - i) / N_lambda for each buffered pair, oldest first.
std::vector<double> forgetting_weights(const OnlineState& state, const OnlineConfig& cfg);

/// (1/N_lambda) sum_i lambda^(t-tau-i) L(X_i, y_{i+tau}). Missing pairs during
/// warm-up simply drop out; the divisor stays N_lambda.
ad::Var online_loss(ad::Tape& tape, std::span<const ad::Var> params, const OnlineState& state,
                    const OnlineConfig& cfg, const WeightedLossFn& loss);

/// N_inc descent steps on the same window. Returns false (parameters
/// untouched) when a loss or gradient is not finite.
bool online_update(OnlineState& state, const OnlineConfig& cfg, const WeightedLossFn& loss);

/// Refills the buffer with the newest matured pairs for a task at spot t.
/// Pairs touching gaps are skipped.
void refresh_buffer(OnlineState& state, const SeriesBundle& bundle, const Normalizer& norm,
                    const ForecastTask& task, std::size_t lag_steps, std::size_t t,
                    std::size_t window_size);

std::vector<Normalizer> fit_normalizers(const SeriesBundle& bundle, const SplitFractions& split);

enum class ReinitReason { Start, TaskSwitch };
std::string_view to_string(ReinitReason r);

struct ReinitEvent {
  std::size_t spot = 0;
  std::int64_t timestamp = 0;
  std::size_t task = 0;
  ReinitReason reason = ReinitReason::Start;
};

struct StreamRecord {
  std::size_t spot = 0;  // grid index of the update that preceded the forecast
  std::size_t task = 0;
  std::string task_id;
  std::int64_t lead_time = 0;
  QuantileForecast forecast;  // finalized; issue_time = timestamp of t + 1
  std::optional<double> observation;
  std::int64_t target_time = 0;
};

struct StreamRun {
  std::vector<StreamRecord> records;
  std::vector<ReinitEvent> reinits;
  std::size_t updates = 0;
  std::size_t warmup_skips = 0;
  std::size_t nan_events = 0;
  /// Pairs or forecasts that would have used data from the future.
  std::size_t leakage_violations = 0;
};

/// Replays the stream: reinitialize from theta_meta at the start and at every
/// task switch, run the incremental update at spot t on pairs whose targets
/// are observed by t, then forecast from the window ending at t + 1.
StreamRun run_stream(const ParameterVector& theta_meta, const TaskStream& stream,
                     const SeriesBundle& bundle, std::span<const Normalizer> normalizers,
                     const ModelConfig& model, const OnlineConfig& cfg);

/// Forecast and observation pairs with an observation, for evaluation.
struct ScoredForecast {
  QuantileForecast forecast;
  double observation = 0.0;
};
std::vector<ScoredForecast> scored(const StreamRun& run);

/// One JSON object per forecast: {timestamp, task_id, lead_time, quantiles, observation?}.
void write_forecasts_jsonl(const std::filesystem::path& path, const StreamRun& run);
/// {event: "reinit", timestamp, spot, task_id, reason} per line.
void write_events_jsonl(const std::filesystem::path& path, const StreamRun& run,
                        const TaskStream& stream);
std::vector<ScoredForecast> read_forecasts_jsonl(const std::filesystem::path& path);

}  // namespace metawpf
