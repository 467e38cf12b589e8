#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "metawpf/forecast_model.hpp"

namespace metawpf {

// ---------------------------------------------------------------------------
// Time helpers

/// Parses "2019-01-01T00:05:00" (optional trailing 'Z') as UTC seconds since epoch.
std::int64_t parse_iso8601(std::string_view text);
std::string format_iso8601(std::int64_t seconds);
/// "300s", "45m", "0.5h", "2d" or a bare number of seconds.
std::int64_t parse_duration(std::string_view text);
std::string format_duration(std::int64_t seconds);

// ---------------------------------------------------------------------------
// Raw series

struct LocationSeries {
  std::string name;
  /// Power normalized by capacity; NaN marks a gap on the grid.
  std::vector<double> power;
  std::vector<std::string> extra_names;
  /// One column per extra feature, same length as power.
  std::vector<std::vector<double>> extra;
};

/// Per-location series aligned on one uniform time grid.
struct SeriesBundle {
  std::int64_t start = 0;
  std::int64_t resolution = 300;
  std::vector<LocationSeries> locations;

  std::size_t length() const { return locations.empty() ? 0 : locations.front().power.size(); }
  std::int64_t timestamp(std::size_t index) const {
    return start + static_cast<std::int64_t>(index) * resolution;
  }
  bool is_gap(std::size_t location, std::size_t index) const;
  /// Power, time of day, day of year, then extras.
  std::size_t feature_count(std::size_t location) const {
    return 3 + locations.at(location).extra.size();
  }
};

/// Reads one `timestamp,power[,feature...]` CSV. Rows must sit on the grid;
/// missing rows become gaps. Power is divided by `capacity`.
LocationSeries read_location_csv(const std::filesystem::path& path, double capacity,
                                 std::int64_t resolution, std::int64_t* first_timestamp,
                                 std::int64_t* last_timestamp,
                                 std::vector<std::pair<std::int64_t, std::size_t>>* rows = nullptr);

/// Directory of per-location CSV files (sorted by file name) -> aligned bundle.
SeriesBundle read_bundle(const std::filesystem::path& dir, double capacity,
                         std::int64_t resolution);
void write_location_csv(const std::filesystem::path& path, const SeriesBundle& bundle,
                        std::size_t location);

/// Synthetic wind-like generator: clip01(base + diurnal + seasonal + AR(1)),
/// with a per-location phase offset.
struct SynthSpec {
  std::size_t locations = 1;
  std::size_t days = 30;
  std::int64_t resolution = 300;
  std::int64_t start = 1546300800;  // 2019-01-01T00:00:00Z
  double base = 0.4;
  double diurnal_amplitude = 0.15;
  double seasonal_amplitude = 0.1;
  double noise = 0.03;
  double ar = 0.95;
  double phase_spread = 0.25;  // fraction of a day between consecutive locations
};

SeriesBundle synthesize(const SynthSpec& spec, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Tasks and datasets

enum class TargetStatistic { Instant, Max, Min, Mean };

std::string_view to_string(TargetStatistic s);
TargetStatistic parse_statistic(std::string_view text);

/// Forecast of one location's statistic at one lead time.
struct ForecastTask {
  std::size_t location = 0;
  std::int64_t lead_time = 1800;  // seconds
  TargetStatistic statistic = TargetStatistic::Instant;

  /// "<location>:<lead>:<statistic>", e.g. "0:30m:max".
  std::string id() const;
  static ForecastTask parse(std::string_view text);
  bool operator==(const ForecastTask&) const = default;
};

std::vector<ForecastTask> parse_task_list(std::string_view text);
std::string format_task_list(std::span<const ForecastTask> tasks);

/// Per-feature min-max scaling fitted on training rows. A feature whose range
/// is empty is passed through unchanged.
struct Normalizer {
  std::vector<double> min;
  std::vector<double> max;

  double normalize(std::size_t feature, double x) const;
  double denormalize(std::size_t feature, double x) const;
};

/// Fits on grid rows [0, end) of one location, skipping gaps.
Normalizer fit_normalizer(const SeriesBundle& bundle, std::size_t location, std::size_t end);

/// Raw feature value (before normalization) at a grid index.
double raw_feature(const SeriesBundle& bundle, std::size_t location, std::size_t feature,
                   std::size_t index);

/// Window of `lag_steps` rows ending at grid index `end`; nullopt on gaps or
/// insufficient history. Entries are normalized and clipped to [0, 1].
std::optional<InputWindow> build_window(const SeriesBundle& bundle, std::size_t location,
                                        const Normalizer& norm, std::size_t end,
                                        std::size_t lag_steps);

/// Raw target over (t, t + steps]; nullopt when it runs past the series or hits a gap.
std::optional<double> raw_target(const SeriesBundle& bundle, std::size_t location,
                                 std::size_t t, std::size_t steps, TargetStatistic stat);

struct TaskDataset {
  ForecastTask task;
  std::vector<InputWindow> windows;
  std::vector<double> targets;            // normalized with the power feature constants
  std::vector<std::size_t> window_end;    // grid index t of each sample
  std::vector<std::int64_t> target_time;  // timestamp of t + tau
  Normalizer norm;

  std::size_t size() const { return targets.size(); }
  bool empty() const { return targets.empty(); }
};

struct SplitFractions {
  double train = 0.4;
  double validation = 0.2;
};

struct DatasetSplits {
  TaskDataset train;
  TaskDataset validation;
  TaskDataset test;
};

/// Grid index where the validation region starts / the test region starts.
std::size_t train_end(std::size_t length, const SplitFractions& split);
std::size_t validation_end(std::size_t length, const SplitFractions& split);

std::size_t lead_steps(const SeriesBundle& bundle, const ForecastTask& task);

/// Windows end at t, targets cover (t, t + tau]. A sample belongs to the split
/// that contains both its first window row and its last target row; samples
/// straddling a boundary or touching a gap are dropped. Throws when every
/// split is empty.
DatasetSplits build_dataset(const SeriesBundle& bundle, const ForecastTask& task,
                            std::size_t lag_steps, const SplitFractions& split = {});

// ---------------------------------------------------------------------------
// Mini-batches

struct TaskBatch {
  std::vector<std::size_t> support;
  std::vector<std::size_t> target;
};

/// One entry per dataset, index-aligned with the dataset list.
struct MiniBatchSplit {
  std::vector<TaskBatch> tasks;
  std::size_t total() const;
};

/// Draws `batch_size` samples uniformly without replacement from the joint
/// dataset, then splits each task's draw into support/target by
/// `support_fraction` (rounded to nearest).
MiniBatchSplit sample_minibatch(std::span<const TaskDataset* const> datasets,
                                std::size_t batch_size, double support_fraction,
                                std::uint64_t seed);

/// Windows and targets of a subset of a dataset, ready for the model.
struct SampleView {
  std::vector<const InputWindow*> windows;
  std::vector<double> targets;

  std::size_t size() const { return targets.size(); }
  bool empty() const { return targets.empty(); }
};

SampleView view(const TaskDataset& data, std::span<const std::size_t> indices);
SampleView view_all(const TaskDataset& data);

// ---------------------------------------------------------------------------
// Task streams

struct StreamSegment {
  std::size_t task = 0;   // index into TaskStream::tasks
  std::size_t begin = 0;  // grid index, inclusive
  std::size_t end = 0;    // grid index, exclusive
};

/// Schedule of online tasks over a test horizon, cycling tasks in order.
struct TaskStream {
  std::vector<ForecastTask> tasks;
  std::int64_t duration = 0;  // t_T in seconds
  std::size_t segment_length = 0;
  std::vector<StreamSegment> segments;

  std::size_t spots() const;
  /// Task index scheduled at grid index, or nullopt outside the schedule.
  std::optional<std::size_t> task_at(std::size_t index) const;
};

/// Grid range [begin, end) of the stream horizon.
struct StreamRange {
  std::size_t begin = 0;
  std::size_t end = 0;
};

/// Each task lasts `duration` (a multiple of the grid resolution). A single
/// task occupies the whole horizon as one segment. A trailing partial segment
/// is dropped.
TaskStream build_stream(std::vector<ForecastTask> tasks, std::int64_t duration,
                        const SeriesBundle& bundle, StreamRange range);

/// Stream over the test region implied by `split`.
TaskStream build_stream(std::vector<ForecastTask> tasks, std::int64_t duration,
                        const SeriesBundle& bundle, const SplitFractions& split = {});

}  // namespace metawpf
