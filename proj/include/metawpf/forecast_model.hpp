#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "metawpf/autodiff.hpp"
#include "metawpf/parameters.hpp"

namespace metawpf {

/// 19 levels 0.05, 0.10, ..., 0.95.
std::vector<double> default_quantiles();

/// Shape of the quantile network: stacked LSTM layers with residual
/// connections feeding a fully connected quantile head.
struct ModelConfig {
  std::size_t num_layers = 2;
  std::size_t hidden_size = 32;
  std::size_t input_features = 3;
  std::size_t lag_steps = 12;
  std::vector<double> quantiles = default_quantiles();

  /// 16 layers of 64 units over an 8 h window of 5-minute data.
  static ModelConfig full_scale();

  /// Throws std::invalid_argument on zero sizes or a quantile set that is not
  /// strictly increasing inside (0, 1).
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

/// lag_steps x input_features matrix, row-major, oldest step first.
struct InputWindow {
  std::vector<double> values;
  std::size_t lag_steps = 0;
  std::size_t features = 0;
  std::int64_t last_timestamp = 0;

  double at(std::size_t step, std::size_t feature) const {
    return values[step * features + feature];
  }
};

struct QuantileForecast {
  std::vector<double> values;
  std::int64_t lead_time = 0;  // seconds
  std::int64_t issue_time = 0;

  /// Non-decreasing sort across levels.
  void finalize();
  bool is_monotone() const;
};

/// Empty parameter vector with the segment layout implied by `config`.
ParameterVector make_layout(const ModelConfig& config);

/// Weights uniform in [-1/sqrt(H), 1/sqrt(H)], biases zero; deterministic per seed.
ParameterVector init_params(const ModelConfig& config, std::uint64_t seed);

/// Network output on the tape: batch x |Q| raw quantile values.
ad::Var forward(ad::Tape& tape, std::span<const ad::Var> params, const ModelConfig& config,
                std::span<const InputWindow* const> batch);

/// sum_b weight_b * sum_q [q max(0, y_b - yhat) + (1 - q) max(0, yhat - y_b)].
ad::Var pinball_loss(ad::Var predictions, std::span<const double> targets,
                     std::span<const double> quantiles, std::span<const double> weights);

/// Mean pinball loss of the network over a batch.
ad::Var batch_loss(ad::Tape& tape, std::span<const ad::Var> params, const ModelConfig& config,
                   std::span<const InputWindow* const> batch, std::span<const double> targets);

QuantileForecast predict(const ParameterVector& params, const InputWindow& window,
                         const ModelConfig& config, bool finalize = true);

std::vector<QuantileForecast> predict_batch(const ParameterVector& params,
                                            std::span<const InputWindow* const> batch,
                                            const ModelConfig& config, bool finalize = true);

/// Plain pinball loss of one forecast against one observation.
double pinball_loss(const QuantileForecast& forecast, double observation,
                    std::span<const double> quantiles);

struct Checkpoint {
  ModelConfig config;
  ParameterVector params;
};

/// JSON container: {"format", "version", "model", "segments": [{name, rows, cols, values}]}.
void save_checkpoint(const std::filesystem::path& path, const ParameterVector& params,
                     const ModelConfig& config);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace metawpf
