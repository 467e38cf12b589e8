#include "metawpf/cli.hpp"

#include <algorithm>
#include <fstream>
#include <iostream>
#include <tuple>

#include <CLI11.hpp>

namespace metawpf {

namespace fs = std::filesystem;

namespace {

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw std::runtime_error("cannot create directory " + dir.string() + ": " + ec.message());
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

void write_resolved(const RunConfig& cfg) {
  ensure_dir(cfg.out_dir);
  write_text(cfg.out_dir / "resolved_config.txt", serialize(cfg));
}

/// Copies cfg with the model's feature count taken from the data.
RunConfig bind_to_data(const RunConfig& cfg, const SeriesBundle& bundle) {
  RunConfig out = cfg;
  if (bundle.locations.empty()) throw ConfigError("no location series in " + cfg.data_dir.string());
  const std::size_t f = bundle.feature_count(0);
  for (std::size_t l = 1; l < bundle.locations.size(); ++l) {
    if (bundle.feature_count(l) != f) {
      throw ConfigError("locations disagree on the number of feature columns");
    }
  }
  out.model.input_features = f;
  for (const auto* list : {&cfg.offline_tasks, &cfg.online_tasks}) {
    for (const auto& t : *list) {
      if (t.location >= bundle.locations.size()) {
        throw ConfigError("task " + t.id() + " names location " + std::to_string(t.location) +
                          " but the data has " + std::to_string(bundle.locations.size()));
      }
      if (t.lead_time % bundle.resolution != 0) {
        throw ConfigError("task " + t.id() + ": lead time is not a multiple of the resolution");
      }
    }
  }
  validate(out);
  return out;
}

/// Offline datasets kept alive alongside the pointer lists the trainers take.
struct OfflineData {
  std::vector<DatasetSplits> splits;
  std::vector<const TaskDataset*> train;
  std::vector<const TaskDataset*> val;
};

OfflineData offline_data(const RunConfig& cfg, const SeriesBundle& bundle) {
  OfflineData d;
  d.splits.reserve(cfg.offline_tasks.size());
  for (const auto& t : cfg.offline_tasks) {
    d.splits.push_back(build_dataset(bundle, t, cfg.model.lag_steps, cfg.split));
  }
  for (const auto& s : d.splits) {
    d.train.push_back(&s.train);
    d.val.push_back(&s.validation);
  }
  return d;
}

std::string duration_label(std::int64_t seconds) { return format_duration(seconds); }

}  // namespace

std::vector<fs::path> cmd_synth(const RunConfig& cfg) {
  SynthSpec spec = cfg.synth;
  spec.resolution = cfg.resolution;
  const SeriesBundle bundle = synthesize(spec, cfg.seed);
  ensure_dir(cfg.data_dir);
  std::vector<fs::path> files;
  for (std::size_t l = 0; l < bundle.locations.size(); ++l) {
    char name[32];
    std::snprintf(name, sizeof name, "loc%02zu.csv", l);
    files.push_back(cfg.data_dir / name);
    write_location_csv(files.back(), bundle, l);
  }
  return files;
}

SeriesBundle load_data(const RunConfig& cfg) {
  if (!fs::is_directory(cfg.data_dir)) {
    throw ConfigError("data directory not found: " + cfg.data_dir.string());
  }
  return read_bundle(cfg.data_dir, cfg.capacity, cfg.resolution);
}

TrainResult cmd_meta_train(const RunConfig& base, std::ostream& log) {
  const SeriesBundle bundle = load_data(base);
  const RunConfig cfg = bind_to_data(base, bundle);
  write_resolved(cfg);
  const OfflineData data = offline_data(cfg, bundle);

  std::ofstream log_file(cfg.out_dir / "meta_train.log.jsonl");
  if (!log_file) throw std::runtime_error("cannot write training log in " + cfg.out_dir.string());
  MetaConfig meta = cfg.meta;
  meta.seed = cfg.seed;
  const auto theta0 = init_params(cfg.model, cfg.seed);
  TrainResult result =
      train(theta0, data.train, data.val, forecast_loss(cfg.model), meta, [&](const EpochRecord& r) {
        const std::string line = to_json_line(r);
        log_file << line << '\n' << std::flush;
        log << line << '\n';
      });
  save_checkpoint(cfg.out_dir / "meta.ckpt.json", result.params, cfg.model);
  log << "meta-train: " << result.log.size() << " epochs, stop=" << to_string(result.reason)
      << ", checkpoint " << (cfg.out_dir / "meta.ckpt.json").string() << '\n';
  return result;
}

ParameterVector cmd_baseline_train(const RunConfig& base, BaselineKind kind, std::ostream& log) {
  const SeriesBundle bundle = load_data(base);
  const RunConfig cfg = bind_to_data(base, bundle);
  write_resolved(cfg);
  const OfflineData data = offline_data(cfg, bundle);
  const std::string label(to_string(kind));

  std::ofstream log_file(cfg.out_dir / (label + "_train.log.jsonl"));
  if (!log_file) throw std::runtime_error("cannot write training log in " + cfg.out_dir.string());
  const auto on_epoch = [&](const BaselineEpoch& r) {
    const std::string line = to_json_line(r, label);
    log_file << line << '\n' << std::flush;
    log << line << '\n';
  };
  MetaConfig meta = cfg.meta;
  meta.seed = cfg.seed;
  const auto theta0 = init_params(cfg.model, cfg.seed);
  const auto loss = forecast_loss(cfg.model);

  ParameterVector params;
  switch (kind) {
    case BaselineKind::SingleTask: {
      auto r = train_single_task(theta0, data.train, data.val, loss, meta, on_epoch);
      log << "single: selected task " << cfg.offline_tasks[r.selected].id() << '\n';
      params = r.params();
      break;
    }
    case BaselineKind::MTAO:
      params = train_mtao(theta0, data.train, data.val, loss, meta, on_epoch).params;
      break;
    case BaselineKind::MTAP:
      params = train_mtap(theta0, data.train, data.val, loss, meta, on_epoch).params;
      break;
  }
  const fs::path ckpt = cfg.out_dir / (label + ".ckpt.json");
  save_checkpoint(ckpt, params, cfg.model);
  log << label << ": checkpoint " << ckpt.string() << '\n';
  return params;
}

std::vector<ReportRow> cmd_stream(const RunConfig& base, const std::string& method,
                                  const fs::path& checkpoint, std::ostream& log) {
  const SeriesBundle bundle = load_data(base);
  const RunConfig cfg = bind_to_data(base, bundle);
  write_resolved(cfg);

  ParameterVector theta;
  if (method == "random") {
    theta = init_params(cfg.model, cfg.seed);
  } else {
    if (!fs::exists(checkpoint)) throw ConfigError("checkpoint not found: " + checkpoint.string());
    Checkpoint ck = load_checkpoint(checkpoint);
    if (!(ck.config == cfg.model)) {
      throw ConfigError("checkpoint " + checkpoint.string() +
                        " was trained with a different model config");
    }
    theta = std::move(ck.params);
  }

  const auto norms = fit_normalizers(bundle, cfg.split);
  std::vector<ReportRow> rows;
  for (const std::int64_t d : cfg.durations) {
    TaskStream stream;
    try {
      stream = build_stream(cfg.online_tasks, d, bundle, cfg.split);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
    const StreamRun run = run_stream(theta, stream, bundle, norms, cfg.model, cfg.online);
    const std::string tag = method + "_" + duration_label(d);
    write_forecasts_jsonl(cfg.out_dir / ("forecasts_" + tag + ".jsonl"), run);
    write_events_jsonl(cfg.out_dir / ("events_" + tag + ".jsonl"), run, stream);
    const auto pairs = scored(run);
    if (pairs.empty()) throw std::runtime_error("stream " + tag + " produced no scored forecasts");
    rows.push_back({method, duration_label(d), evaluate(pairs, cfg.model.quantiles, cfg.readout)});
    log << "stream " << tag << ": " << run.records.size() << " forecasts, " << run.reinits.size()
        << " reinits, " << run.updates << " updates, " << run.nan_events << " NaN skips, "
        << run.leakage_violations << " leakage violations\n";
  }
  write_reports_json(cfg.out_dir / ("metrics_" + method + ".json"), rows);
  write_reports_csv(cfg.out_dir / ("metrics_" + method + ".csv"), rows);
  return rows;
}

std::vector<ReportRow> cmd_eval(const RunConfig& cfg, std::span<const fs::path> inputs,
                                std::ostream& log) {
  std::vector<fs::path> files(inputs.begin(), inputs.end());
  if (files.empty()) {
    if (!fs::is_directory(cfg.out_dir)) {
      throw ConfigError("output directory not found: " + cfg.out_dir.string());
    }
    for (const auto& e : fs::directory_iterator(cfg.out_dir)) {
      const std::string name = e.path().filename().string();
      if (name.starts_with("forecasts_") && e.path().extension() == ".jsonl") {
        files.push_back(e.path());
      }
    }
    // Method, then t_T in time order rather than text order.
    const auto key = [](const fs::path& p) {
      const std::string stem = p.stem().string().substr(10);
      const auto us = stem.rfind('_');
      std::int64_t secs = -1;
      if (us != std::string::npos) {
        try {
          secs = parse_duration(stem.substr(us + 1));
        } catch (const std::exception&) {
        }
      }
      return std::tuple{stem.substr(0, us), secs, stem};
    };
    std::sort(files.begin(), files.end(),
              [&](const fs::path& a, const fs::path& b) { return key(a) < key(b); });
    if (files.empty()) throw ConfigError("no forecasts_*.jsonl files in " + cfg.out_dir.string());
  }
  write_resolved(cfg);
  std::vector<ReportRow> rows;
  for (const auto& f : files) {
    if (!fs::exists(f)) throw ConfigError("forecast file not found: " + f.string());
    std::string stem = f.stem().string();
    if (stem.starts_with("forecasts_")) stem = stem.substr(10);
    const auto us = stem.rfind('_');
    ReportRow row;
    row.method = us == std::string::npos ? stem : stem.substr(0, us);
    row.duration = us == std::string::npos ? "" : stem.substr(us + 1);
    const auto pairs = read_forecasts_jsonl(f);
    if (pairs.empty()) throw std::runtime_error(f.string() + ": no forecasts with observations");
    row.report = evaluate(pairs, cfg.model.quantiles, cfg.readout);
    rows.push_back(std::move(row));
    const auto& r = rows.back();
    char buf[160];
    std::snprintf(buf, sizeof buf, "%-8s %-5s b=%.3f%% delta=%.4f S=%.4f MAE=%.4f N=%zu\n",
                  r.method.c_str(), r.duration.c_str(), r.report.avg_deviation,
                  r.report.avg_pi_width, r.report.avg_skill, r.report.mae, r.report.samples);
    log << buf;
  }
  write_reports_json(cfg.out_dir / "metrics.json", rows);
  write_reports_csv(cfg.out_dir / "metrics.csv", rows);
  return rows;
}

int run_cli(std::vector<std::string> args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Meta-learning probabilistic wind power forecasting"};
  app.require_subcommand(1);

  std::string config_file;
  std::vector<std::string> overrides;
  std::string data_dir, out_dir;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> epochs;
  const auto common = [&](CLI::App* sub) {
    sub->add_option("-c,--config", config_file, "key = value config file");
    sub->add_option("-s,--set", overrides, "override one key (key=value); repeatable");
    sub->add_option("--data", data_dir, "data directory (data.dir)");
    sub->add_option("--out", out_dir, "output directory (out.dir)");
    sub->add_option("--seed", seed, "base seed");
    sub->add_option("--epochs", epochs, "epoch limit (meta.max_epochs)");
  };

  auto* synth = app.add_subcommand("synth", "write a synthetic data set");
  common(synth);
  auto* meta = app.add_subcommand("meta-train", "offline meta-training");
  common(meta);
  auto* base = app.add_subcommand("baseline-train", "train a comparison model");
  common(base);
  std::string kind;
  base->add_option("--kind", kind, "single | mtao | mtap")
      ->required()
      ->check(CLI::IsMember({"single", "mtao", "mtap"}));
  auto* stream = app.add_subcommand("stream", "online task-stream replay");
  common(stream);
  std::string method;
  std::string checkpoint;
  stream->add_option("--method", method, "meta | single | mtao | mtap | random")
      ->required()
      ->check(CLI::IsMember({"meta", "single", "mtao", "mtap", "random"}));
  stream->add_option("--checkpoint", checkpoint, "defaults to <out>/<method>.ckpt.json");
  auto* eval = app.add_subcommand("eval", "score forecast files");
  common(eval);
  std::vector<std::string> inputs;
  eval->add_option("--input", inputs, "forecast JSONL files (default: <out>/forecasts_*.jsonl)");
  auto* keys = app.add_subcommand("config-keys", "list configuration keys");

  std::reverse(args.begin(), args.end());
  try {
    app.parse(args);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e, out, err);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (keys->parsed()) {
      const RunConfig d = RunConfig::lead_time_defaults();
      for (const auto& k : config_keys()) {
        out << k.name << " = " << get_value(d, k.name) << "    # " << k.help << '\n';
      }
      return 0;
    }
    RunConfig cfg = RunConfig::lead_time_defaults();
    if (!config_file.empty()) apply_config_file(cfg, config_file);
    for (const auto& o : overrides) apply_override(cfg, o);
    if (!data_dir.empty()) cfg.data_dir = data_dir;
    if (!out_dir.empty()) cfg.out_dir = out_dir;
    if (seed) cfg.seed = *seed;
    if (epochs) cfg.meta.max_epochs = *epochs;

    if (synth->parsed()) {
      for (const auto& f : cmd_synth(cfg)) out << "wrote " << f.string() << '\n';
    } else if (meta->parsed()) {
      cmd_meta_train(cfg, out);
    } else if (base->parsed()) {
      cmd_baseline_train(cfg, parse_baseline(kind), out);
    } else if (stream->parsed()) {
      const fs::path ck = checkpoint.empty() ? cfg.out_dir / (method + ".ckpt.json")
                                             : fs::path(checkpoint);
      cmd_stream(cfg, method, ck, out);
    } else if (eval->parsed()) {
      std::vector<fs::path> files(inputs.begin(), inputs.end());
      cmd_eval(cfg, files, out);
    }
    return 0;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
}

int run_cli(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run_cli(std::move(args), std::cout, std::cerr);
}

}  // namespace metawpf
