#include "metawpf/config.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <limits>
#include <sstream>

namespace metawpf {

RunConfig RunConfig::lead_time_defaults() {
  RunConfig cfg;
  cfg.offline_tasks = parse_task_list(
      "0:30m:instant,0:30m:max,0:30m:min,0:30m:mean,"
      "0:1h:instant,0:1h:max,0:1h:min,0:1h:mean,"
      "0:2h:instant,0:2h:max,0:2h:min,0:2h:mean,"
      "0:4h:instant,0:4h:max,0:4h:min,0:4h:mean");
  cfg.online_tasks = parse_task_list(
      "0:45m:instant,0:45m:max,0:45m:min,0:45m:mean,"
      "0:90m:instant,0:90m:max,0:90m:min,0:90m:mean,"
      "0:3h:instant,0:3h:max,0:3h:min,0:3h:mean");
  cfg.durations = {1800, 14400, 28800};
  return cfg;
}

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::string fmt_double(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double to_double(std::string_view key, std::string_view text) {
  const std::string s = trim(text);
  if (s == "inf") return std::numeric_limits<double>::infinity();
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size() || std::isnan(v)) {
    throw ConfigError(std::string(key) + ": expected a number, got '" + s + "'");
  }
  return v;
}

std::uint64_t to_u64(std::string_view key, std::string_view text) {
  const std::string s = trim(text);
  std::uint64_t v = 0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc() || p != s.data() + s.size()) {
    throw ConfigError(std::string(key) + ": expected a non-negative integer, got '" + s + "'");
  }
  return v;
}

std::size_t to_size(std::string_view key, std::string_view text) {
  return static_cast<std::size_t>(to_u64(key, text));
}

template <typename F>
auto wrap(std::string_view key, F&& f) {
  try {
    return f();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(std::string(key) + ": " + e.what());
  }
}

struct Entry {
  ConfigKey key;
  std::function<void(RunConfig&, std::string_view)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define SIZE_FIELD(name, help, field)                                                      \
  Entry {                                                                                   \
    {name, help}, [](RunConfig& c, std::string_view v) { c.field = to_size(name, v); },     \
        [](const RunConfig& c) { return std::to_string(c.field); }                          \
  }
#define DOUBLE_FIELD(name, help, field)                                                    \
  Entry {                                                                                   \
    {name, help}, [](RunConfig& c, std::string_view v) { c.field = to_double(name, v); },   \
        [](const RunConfig& c) { return fmt_double(c.field); }                              \
  }

std::string join_durations(const std::vector<std::int64_t>& d) {
  std::string out;
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (i) out += ',';
    out += format_duration(d[i]);
  }
  return out;
}

const std::vector<Entry>& entries() {
  static const std::vector<Entry> table = {
      {{"data.dir", "directory of per-location CSV files"},
       [](RunConfig& c, std::string_view v) { c.data_dir = trim(v); },
       [](const RunConfig& c) { return c.data_dir.string(); }},
      {{"out.dir", "output directory"},
       [](RunConfig& c, std::string_view v) { c.out_dir = trim(v); },
       [](const RunConfig& c) { return c.out_dir.string(); }},
      DOUBLE_FIELD("data.capacity", "installed capacity; power is divided by it", capacity),
      {{"data.resolution", "grid resolution (e.g. 5m)"},
       [](RunConfig& c, std::string_view v) {
         c.resolution = wrap("data.resolution", [&] { return parse_duration(trim(v)); });
       },
       [](const RunConfig& c) { return format_duration(c.resolution); }},
      DOUBLE_FIELD("split.train", "leading fraction used for training", split.train),
      DOUBLE_FIELD("split.validation", "following fraction used for validation",
                   split.validation),
      {{"seed", "base seed for initialization, sampling and synthesis"},
       [](RunConfig& c, std::string_view v) { c.seed = to_u64("seed", v); },
       [](const RunConfig& c) { return std::to_string(c.seed); }},

      {{"tasks.offline", "comma-separated location:lead:statistic list"},
       [](RunConfig& c, std::string_view v) {
         c.offline_tasks = wrap("tasks.offline", [&] { return parse_task_list(trim(v)); });
       },
       [](const RunConfig& c) { return format_task_list(c.offline_tasks); }},
      {{"tasks.online", "comma-separated location:lead:statistic list"},
       [](RunConfig& c, std::string_view v) {
         c.online_tasks = wrap("tasks.online", [&] { return parse_task_list(trim(v)); });
       },
       [](const RunConfig& c) { return format_task_list(c.online_tasks); }},
      {{"stream.durations", "comma-separated task durations t_T"},
       [](RunConfig& c, std::string_view v) {
         c.durations.clear();
         std::string s = trim(v);
         std::stringstream ss(s);
         std::string item;
         while (std::getline(ss, item, ',')) {
           c.durations.push_back(
               wrap("stream.durations", [&] { return parse_duration(trim(item)); }));
         }
       },
       [](const RunConfig& c) { return join_durations(c.durations); }},

      SIZE_FIELD("model.layers", "stacked LSTM layers", model.num_layers),
      SIZE_FIELD("model.hidden", "hidden units per layer", model.hidden_size),
      SIZE_FIELD("model.features", "input features per step (3 + extra CSV columns)",
                 model.input_features),
      SIZE_FIELD("model.lag_steps", "window length in grid steps", model.lag_steps),

      SIZE_FIELD("meta.inner_steps", "inner updates M", meta.inner_steps),
      DOUBLE_FIELD("meta.inner_lr", "inner learning rate", meta.inner_lr),
      DOUBLE_FIELD("meta.outer_lr", "outer (and baseline) learning rate", meta.outer_lr),
      {{"meta.switch_threshold", "auto | never | number (negative: second-order from start)"},
       [](RunConfig& c, std::string_view v) {
         const std::string s = trim(v);
         if (s == "auto") c.meta.switch_threshold.reset();
         else if (s == "never") c.meta.switch_threshold = std::numeric_limits<double>::infinity();
         else c.meta.switch_threshold = to_double("meta.switch_threshold", s);
       },
       [](const RunConfig& c) -> std::string {
         if (!c.meta.switch_threshold) return "auto";
         if (std::isinf(*c.meta.switch_threshold) && *c.meta.switch_threshold > 0) return "never";
         return fmt_double(*c.meta.switch_threshold);
       }},
      SIZE_FIELD("meta.max_epochs", "epoch limit", meta.max_epochs),
      SIZE_FIELD("meta.patience", "early-stopping patience in epochs", meta.patience),
      SIZE_FIELD("meta.batch_size", "mini-batch size", meta.batch_size),
      DOUBLE_FIELD("meta.support_fraction", "share of each task's draw used as support",
                   meta.support_fraction),
      SIZE_FIELD("meta.max_batches", "cap on mini-batches per epoch (0: none)",
                 meta.max_batches_per_epoch),
      SIZE_FIELD("meta.max_val_batches", "cap on validation mini-batches (0: none)",
                 meta.max_validation_batches),
      {{"meta.optimizer", "adam | plain"},
       [](RunConfig& c, std::string_view v) {
         const std::string s = trim(v);
         if (s == "adam") c.meta.optimizer = OuterOptimizer::Adam;
         else if (s == "plain") c.meta.optimizer = OuterOptimizer::Plain;
         else throw ConfigError("meta.optimizer: expected adam or plain, got '" + s + "'");
       },
       [](const RunConfig& c) -> std::string {
         return c.meta.optimizer == OuterOptimizer::Adam ? "adam" : "plain";
       }},

      SIZE_FIELD("online.window", "sliding-window size", online.window_size),
      DOUBLE_FIELD("online.forgetting", "forgetting factor", online.forgetting),
      SIZE_FIELD("online.repeats", "incremental iterations per spot", online.repeats),
      DOUBLE_FIELD("online.lr", "online learning rate", online.lr),

      {{"eval.readout", "linear | flat | nearest (off-grid sharpness levels)"},
       [](RunConfig& c, std::string_view v) {
         c.readout = wrap("eval.readout", [&] { return parse_readout(trim(v)); });
       },
       [](const RunConfig& c) { return std::string(to_string(c.readout)); }},

      SIZE_FIELD("synth.locations", "number of synthetic locations", synth.locations),
      SIZE_FIELD("synth.days", "days of synthetic data", synth.days),
      DOUBLE_FIELD("synth.base", "mean level", synth.base),
      DOUBLE_FIELD("synth.diurnal", "diurnal amplitude", synth.diurnal_amplitude),
      DOUBLE_FIELD("synth.seasonal", "seasonal amplitude", synth.seasonal_amplitude),
      DOUBLE_FIELD("synth.noise", "AR(1) innovation scale", synth.noise),
      DOUBLE_FIELD("synth.ar", "AR(1) coefficient", synth.ar),
      DOUBLE_FIELD("synth.phase_spread", "diurnal phase offset between locations (days)",
                   synth.phase_spread),
      {{"synth.start", "first timestamp (ISO 8601, UTC)"},
       [](RunConfig& c, std::string_view v) {
         c.synth.start = wrap("synth.start", [&] { return parse_iso8601(trim(v)); });
       },
       [](const RunConfig& c) { return format_iso8601(c.synth.start); }},
  };
  return table;
}

#undef SIZE_FIELD
#undef DOUBLE_FIELD

const Entry& lookup(std::string_view key) {
  for (const auto& e : entries()) {
    if (e.key.name == key) return e;
  }
  throw ConfigError("unknown config key '" + std::string(key) + "'");
}

}  // namespace

const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = [] {
    std::vector<ConfigKey> k;
    for (const auto& e : entries()) k.push_back(e.key);
    return k;
  }();
  return keys;
}

void set_value(RunConfig& cfg, std::string_view key, std::string_view value) {
  lookup(key).set(cfg, value);
}

std::string get_value(const RunConfig& cfg, std::string_view key) { return lookup(key).get(cfg); }

void apply_override(RunConfig& cfg, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos) {
    throw ConfigError("expected key=value, got '" + std::string(assignment) + "'");
  }
  set_value(cfg, trim(assignment.substr(0, eq)), assignment.substr(eq + 1));
}

void apply_config_text(RunConfig& cfg, std::string_view text, std::string_view origin) {
  std::size_t lineno = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto nl = text.find('\n', pos);
    std::string_view line = text.substr(pos, nl == std::string_view::npos ? text.npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    if (trim(line).empty()) continue;
    try {
      apply_override(cfg, line);
    } catch (const ConfigError& e) {
      throw ConfigError(std::string(origin) + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

void apply_config_file(RunConfig& cfg, const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  apply_config_text(cfg, ss.str(), path.string());
}

std::string serialize(const RunConfig& cfg) {
  std::string out;
  for (const auto& e : entries()) {
    out += e.key.name;
    out += " = ";
    out += e.get(cfg);
    out += '\n';
  }
  return out;
}

void validate(const RunConfig& cfg) {
  const auto check = [](auto&& f) {
    try {
      f();
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
  };
  check([&] { cfg.model.validate(); });
  check([&] { cfg.meta.validate(); });
  check([&] { cfg.online.validate(); });
  if (cfg.offline_tasks.empty()) throw ConfigError("tasks.offline is empty");
  if (cfg.online_tasks.empty()) throw ConfigError("tasks.online is empty");
  if (cfg.durations.empty()) throw ConfigError("stream.durations is empty");
  if (!(cfg.capacity > 0.0)) throw ConfigError("data.capacity must be positive");
  if (!(cfg.split.train > 0.0 && cfg.split.validation >= 0.0 &&
        cfg.split.train + cfg.split.validation < 1.0)) {
    throw ConfigError("split fractions must satisfy train > 0, validation >= 0, sum < 1");
  }
}

}  // namespace metawpf
