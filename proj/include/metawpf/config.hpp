#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "metawpf/evaluation.hpp"
#include "metawpf/forecast_model.hpp"
#include "metawpf/meta_trainer.hpp"
#include "metawpf/online_adapter.hpp"
#include "metawpf/task_engine.hpp"

namespace metawpf {

/// Bad configuration or usage; the CLI maps it to exit code 2.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Everything a run needs. Serialized as `key = value` lines; see
/// `config_keys()` for the schema.
struct RunConfig {
  ModelConfig model;
  MetaConfig meta;
  OnlineConfig online = OnlineConfig::lead_time_default();
  SynthSpec synth;

  std::filesystem::path data_dir = "data";
  std::filesystem::path out_dir = "out";
  double capacity = 1.0;
  std::int64_t resolution = 300;
  SplitFractions split;

  std::vector<ForecastTask> offline_tasks;
  std::vector<ForecastTask> online_tasks;
  std::vector<std::int64_t> durations;  // t_T list, seconds

  std::uint64_t seed = 0;
  QuantileReadout readout = QuantileReadout::Linear;

  /// Leads 0.5/1/2/4 h offline and 0.75/1.5/3 h online, each with the
  /// instant, max, min and mean statistics; t_T in {0.5 h, 4 h, 8 h}.
  static RunConfig lead_time_defaults();
};

struct ConfigKey {
  std::string_view name;
  std::string_view help;
};

/// Every recognised key, in serialization order.
const std::vector<ConfigKey>& config_keys();

/// Sets one key from its text form. Throws ConfigError on unknown keys or bad values.
void set_value(RunConfig& cfg, std::string_view key, std::string_view value);
std::string get_value(const RunConfig& cfg, std::string_view key);

/// Applies "key=value".
void apply_override(RunConfig& cfg, std::string_view assignment);

/// Parses `key = value` lines; '#' starts a comment. Throws ConfigError with
/// the line number on malformed lines.
void apply_config_text(RunConfig& cfg, std::string_view text, std::string_view origin = "config");
void apply_config_file(RunConfig& cfg, const std::filesystem::path& path);

/// Complete key-value form; feeding it back reproduces the config.
std::string serialize(const RunConfig& cfg);

/// Cross-field checks (model, meta, online, non-empty task lists, split).
void validate(const RunConfig& cfg);

}  // namespace metawpf
