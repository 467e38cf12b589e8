#pragma once

#include <filesystem>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "metawpf/baselines.hpp"
#include "metawpf/config.hpp"
#include "metawpf/evaluation.hpp"

namespace metawpf {

/// Per-location CSVs (loc00.csv, ...) of a synthetic bundle in cfg.data_dir.
std::vector<std::filesystem::path> cmd_synth(const RunConfig& cfg);

/// Reads cfg.data_dir. Throws ConfigError naming the path when it is missing.
SeriesBundle load_data(const RunConfig& cfg);

/// Meta-trains from init_params(model, seed); writes meta.ckpt.json and
/// meta_train.log.jsonl into cfg.out_dir.
TrainResult cmd_meta_train(const RunConfig& cfg, std::ostream& log);

/// Writes <kind>.ckpt.json and <kind>_train.log.jsonl.
ParameterVector cmd_baseline_train(const RunConfig& cfg, BaselineKind kind, std::ostream& log);

/// Replays the online stream for every configured t_T from a checkpoint,
/// writing forecasts_<method>_<t_T>.jsonl, events_<method>_<t_T>.jsonl and
/// metrics_<method>.{json,csv}.
std::vector<ReportRow> cmd_stream(const RunConfig& cfg, const std::string& method,
                                  const std::filesystem::path& checkpoint, std::ostream& log);

/// Scores forecast JSONL files (labels from forecasts_<method>_<t_T>.jsonl
/// names); writes metrics.json and metrics.csv.
std::vector<ReportRow> cmd_eval(const RunConfig& cfg,
                                std::span<const std::filesystem::path> inputs, std::ostream& log);

/// Entry point without the program name. Exit codes: 0 ok, 1 runtime
/// failure, 2 usage or configuration error.
int run_cli(std::vector<std::string> args, std::ostream& out, std::ostream& err);
int run_cli(int argc, char** argv);

}  // namespace metawpf
