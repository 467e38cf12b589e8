#include "metawpf/task_engine.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <numbers>
#include <random>
#include <sstream>
#include <stdexcept>

namespace metawpf {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr std::int64_t kDay = 86400;

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (true) {
    const auto next = s.find(sep, pos);
    out.push_back(trim(s.substr(pos, next == std::string_view::npos ? next : next - pos)));
    if (next == std::string_view::npos) break;
    pos = next + 1;
  }
  return out;
}

double parse_double(std::string_view text, const std::string& what) {
  const std::string t = trim(text);
  if (t.empty() || t == "nan" || t == "NaN" || t == "NA") return kNaN;
  char* end = nullptr;
  const double v = std::strtod(t.c_str(), &end);
  if (end != t.c_str() + t.size()) throw std::invalid_argument("cannot parse number '" + t +
                                                               "' in " + what);
  return v;
}

int parse_int(std::string_view s) {
  int v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) {
    throw std::invalid_argument("bad integer '" + std::string(s) + "'");
  }
  return v;
}

}  // namespace

// ---------------------------------------------------------------------------
// Time helpers

std::int64_t parse_iso8601(std::string_view text) {
  std::string t = trim(text);
  if (!t.empty() && (t.back() == 'Z' || t.back() == 'z')) t.pop_back();
  // YYYY-MM-DDTHH:MM[:SS]
  if (t.size() < 16 || t[4] != '-' || t[7] != '-' || (t[10] != 'T' && t[10] != ' ') ||
      t[13] != ':') {
    throw std::invalid_argument("bad ISO-8601 timestamp '" + std::string(text) + "'");
  }
  try {
    using namespace std::chrono;
    const year_month_day ymd{year{parse_int(std::string_view(t).substr(0, 4))},
                             month{static_cast<unsigned>(parse_int(std::string_view(t).substr(5, 2)))},
                             day{static_cast<unsigned>(parse_int(std::string_view(t).substr(8, 2)))}};
    if (!ymd.ok()) throw std::invalid_argument("invalid date");
    const int hh = parse_int(std::string_view(t).substr(11, 2));
    const int mm = parse_int(std::string_view(t).substr(14, 2));
    int ss = 0;
    if (t.size() >= 19) {
      if (t[16] != ':') throw std::invalid_argument("bad seconds");
      ss = parse_int(std::string_view(t).substr(17, 2));
    }
    if (hh > 23 || mm > 59 || ss > 60) throw std::invalid_argument("bad clock time");
    const auto days = sys_days{ymd}.time_since_epoch().count();
    return static_cast<std::int64_t>(days) * kDay + hh * 3600 + mm * 60 + ss;
  } catch (const std::invalid_argument&) {
    throw std::invalid_argument("bad ISO-8601 timestamp '" + std::string(text) + "'");
  }
}

std::string format_iso8601(std::int64_t seconds) {
  using namespace std::chrono;
  std::int64_t days = seconds / kDay;
  std::int64_t rem = seconds % kDay;
  if (rem < 0) {
    rem += kDay;
    --days;
  }
  const year_month_day ymd{sys_days{std::chrono::days{days}}};
  char buf[32];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02d:%02d:%02dZ", static_cast<int>(ymd.year()),
                static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()),
                static_cast<int>(rem / 3600), static_cast<int>(rem % 3600 / 60),
                static_cast<int>(rem % 60));
  return buf;
}

std::int64_t parse_duration(std::string_view text) {
  std::string t = trim(text);
  if (t.empty()) throw std::invalid_argument("empty duration");
  double unit = 1.0;
  switch (t.back()) {
    case 's': unit = 1.0; t.pop_back(); break;
    case 'm': unit = 60.0; t.pop_back(); break;
    case 'h': unit = 3600.0; t.pop_back(); break;
    case 'd': unit = 86400.0; t.pop_back(); break;
    default: break;
  }
  const double v = parse_double(t, "duration '" + std::string(text) + "'");
  const double secs = v * unit;
  if (!std::isfinite(secs) || secs <= 0.0 || std::abs(secs - std::round(secs)) > 1e-9) {
    throw std::invalid_argument("duration '" + std::string(text) +
                                "' must be a positive whole number of seconds");
  }
  return static_cast<std::int64_t>(std::llround(secs));
}

std::string format_duration(std::int64_t seconds) {
  if (seconds % 3600 == 0) return std::to_string(seconds / 3600) + "h";
  if (seconds % 60 == 0) return std::to_string(seconds / 60) + "m";
  return std::to_string(seconds) + "s";
}

// ---------------------------------------------------------------------------
// Series I/O

bool SeriesBundle::is_gap(std::size_t location, std::size_t index) const {
  return std::isnan(locations.at(location).power.at(index));
}

LocationSeries read_location_csv(const std::filesystem::path& path, double capacity,
                                 std::int64_t resolution, std::int64_t* first_timestamp,
                                 std::int64_t* last_timestamp,
                                 std::vector<std::pair<std::int64_t, std::size_t>>* rows) {
  if (!(capacity > 0.0)) throw std::invalid_argument("capacity must be positive");
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error(path.string() + ": empty file");
  const auto header = split(line, ',');
  if (header.size() < 2 || header[0] != "timestamp" || header[1] != "power") {
    throw std::runtime_error(path.string() + ": header must start with 'timestamp,power'");
  }
  LocationSeries s;
  s.name = path.stem().string();
  s.extra_names.assign(header.begin() + 2, header.end());

  struct Row {
    std::int64_t ts;
    std::vector<double> vals;
  };
  std::vector<Row> parsed;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    const auto cells = split(line, ',');
    if (cells.size() != header.size()) {
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": expected " +
                               std::to_string(header.size()) + " columns");
    }
    Row r;
    r.ts = parse_iso8601(cells[0]);
    const std::string where = path.string() + ":" + std::to_string(lineno);
    for (std::size_t c = 1; c < cells.size(); ++c) r.vals.push_back(parse_double(cells[c], where));
    r.vals[0] /= capacity;
    parsed.push_back(std::move(r));
  }
  if (parsed.empty()) throw std::runtime_error(path.string() + ": no data rows");
  std::sort(parsed.begin(), parsed.end(), [](const Row& a, const Row& b) { return a.ts < b.ts; });
  const std::int64_t first = parsed.front().ts;
  const std::int64_t last = parsed.back().ts;
  const std::size_t n = static_cast<std::size_t>((last - first) / resolution) + 1;
  s.power.assign(n, kNaN);
  s.extra.assign(s.extra_names.size(), std::vector<double>(n, kNaN));
  for (const Row& r : parsed) {
    if ((r.ts - first) % resolution != 0) {
      throw std::runtime_error(path.string() + ": timestamp " + format_iso8601(r.ts) +
                               " is off the " + std::to_string(resolution) + " s grid");
    }
    const auto idx = static_cast<std::size_t>((r.ts - first) / resolution);
    s.power[idx] = r.vals[0];
    for (std::size_t c = 0; c < s.extra.size(); ++c) s.extra[c][idx] = r.vals[c + 1];
    if (rows != nullptr) rows->emplace_back(r.ts, idx);
  }
  if (first_timestamp != nullptr) *first_timestamp = first;
  if (last_timestamp != nullptr) *last_timestamp = last;
  return s;
}

SeriesBundle read_bundle(const std::filesystem::path& dir, double capacity,
                         std::int64_t resolution) {
  if (!std::filesystem::is_directory(dir)) {
    throw std::runtime_error("data directory not found: " + dir.string());
  }
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".csv") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw std::runtime_error("no .csv files in " + dir.string());

  struct Loaded {
    LocationSeries s;
    std::int64_t first;
    std::int64_t last;
  };
  std::vector<Loaded> loaded;
  for (const auto& f : files) {
    Loaded l;
    l.s = read_location_csv(f, capacity, resolution, &l.first, &l.last);
    loaded.push_back(std::move(l));
  }
  std::int64_t start = loaded.front().first;
  std::int64_t stop = loaded.front().last;
  for (const auto& l : loaded) {
    start = std::min(start, l.first);
    stop = std::max(stop, l.last);
  }
  SeriesBundle b;
  b.start = start;
  b.resolution = resolution;
  const std::size_t n = static_cast<std::size_t>((stop - start) / resolution) + 1;
  for (auto& l : loaded) {
    if ((l.first - start) % resolution != 0) {
      throw std::runtime_error("location '" + l.s.name + "' is not aligned with the common grid");
    }
    const auto offset = static_cast<std::size_t>((l.first - start) / resolution);
    LocationSeries aligned;
    aligned.name = l.s.name;
    aligned.extra_names = l.s.extra_names;
    aligned.power.assign(n, kNaN);
    aligned.extra.assign(l.s.extra.size(), std::vector<double>(n, kNaN));
    std::copy(l.s.power.begin(), l.s.power.end(), aligned.power.begin() + static_cast<std::ptrdiff_t>(offset));
    for (std::size_t c = 0; c < l.s.extra.size(); ++c) {
      std::copy(l.s.extra[c].begin(), l.s.extra[c].end(),
                aligned.extra[c].begin() + static_cast<std::ptrdiff_t>(offset));
    }
    b.locations.push_back(std::move(aligned));
  }
  return b;
}

void write_location_csv(const std::filesystem::path& path, const SeriesBundle& bundle,
                        std::size_t location) {
  const LocationSeries& s = bundle.locations.at(location);
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "timestamp,power";
  for (const auto& n : s.extra_names) out << ',' << n;
  out << '\n';
  char buf[64];
  for (std::size_t i = 0; i < s.power.size(); ++i) {
    if (std::isnan(s.power[i])) continue;
    out << format_iso8601(bundle.timestamp(i));
    std::snprintf(buf, sizeof buf, ",%.6f", s.power[i]);
    out << buf;
    for (const auto& col : s.extra) {
      std::snprintf(buf, sizeof buf, ",%.6f", col[i]);
      out << buf;
    }
    out << '\n';
  }
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

SeriesBundle synthesize(const SynthSpec& spec, std::uint64_t seed) {
  if (spec.locations == 0 || spec.days == 0 || spec.resolution <= 0 ||
      kDay % spec.resolution != 0) {
    throw std::invalid_argument("synth: need locations >= 1, days >= 1 and a resolution that "
                                "divides one day");
  }
  if (!(spec.ar > -1.0 && spec.ar < 1.0) || spec.noise < 0.0) {
    throw std::invalid_argument("synth: AR coefficient must lie in (-1, 1), noise >= 0");
  }
  SeriesBundle b;
  b.start = spec.start;
  b.resolution = spec.resolution;
  const std::size_t n = spec.days * static_cast<std::size_t>(kDay / spec.resolution);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  constexpr double two_pi = 2.0 * std::numbers::pi;
  for (std::size_t l = 0; l < spec.locations; ++l) {
    LocationSeries s;
    s.name = "loc" + std::to_string(l);
    s.power.resize(n);
    const double phase = spec.phase_spread * static_cast<double>(l);
    // Start from the stationary distribution.
    double z = spec.noise == 0.0 ? 0.0 : gauss(rng) * spec.noise / std::sqrt(1.0 - spec.ar * spec.ar);
    for (std::size_t i = 0; i < n; ++i) {
      const std::int64_t ts = b.timestamp(i);
      const double tod = static_cast<double>(((ts % kDay) + kDay) % kDay) / kDay;
      const double year_phase = static_cast<double>(ts - spec.start) / (365.25 * kDay);
      const double v = spec.base + spec.diurnal_amplitude * std::sin(two_pi * (tod + phase)) +
                       spec.seasonal_amplitude * std::sin(two_pi * (year_phase + phase)) + z;
      s.power[i] = std::clamp(v, 0.0, 1.0);
      if (spec.noise != 0.0) z = spec.ar * z + spec.noise * gauss(rng);
    }
    b.locations.push_back(std::move(s));
  }
  return b;
}

// ---------------------------------------------------------------------------
// Tasks

std::string_view to_string(TargetStatistic s) {
  switch (s) {
    case TargetStatistic::Instant: return "instant";
    case TargetStatistic::Max: return "max";
    case TargetStatistic::Min: return "min";
    case TargetStatistic::Mean: return "mean";
  }
  return "?";
}

TargetStatistic parse_statistic(std::string_view text) {
  const std::string t = trim(text);
  if (t == "instant") return TargetStatistic::Instant;
  if (t == "max") return TargetStatistic::Max;
  if (t == "min") return TargetStatistic::Min;
  if (t == "mean") return TargetStatistic::Mean;
  throw std::invalid_argument("unknown target statistic '" + t + "'");
}

std::string ForecastTask::id() const {
  return std::to_string(location) + ":" + format_duration(lead_time) + ":" +
         std::string(to_string(statistic));
}

ForecastTask ForecastTask::parse(std::string_view text) {
  const auto parts = split(text, ':');
  if (parts.size() != 3) {
    throw std::invalid_argument("task '" + std::string(text) +
                                "' must look like <location>:<lead>:<statistic>");
  }
  ForecastTask t;
  t.location = static_cast<std::size_t>(parse_int(parts[0]));
  t.lead_time = parse_duration(parts[1]);
  t.statistic = parse_statistic(parts[2]);
  return t;
}

std::vector<ForecastTask> parse_task_list(std::string_view text) {
  std::vector<ForecastTask> out;
  for (const auto& item : split(text, ',')) {
    if (!item.empty()) out.push_back(ForecastTask::parse(item));
  }
  return out;
}

std::string format_task_list(std::span<const ForecastTask> tasks) {
  std::string out;
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    if (i) out += ',';
    out += tasks[i].id();
  }
  return out;
}

// ---------------------------------------------------------------------------
// Normalization and windows

double Normalizer::normalize(std::size_t feature, double x) const {
  const double range = max.at(feature) - min.at(feature);
  if (!(range > 0.0)) return x;
  return (x - min[feature]) / range;
}

double Normalizer::denormalize(std::size_t feature, double x) const {
  const double range = max.at(feature) - min.at(feature);
  if (!(range > 0.0)) return x;
  return x * range + min[feature];
}

double raw_feature(const SeriesBundle& bundle, std::size_t location, std::size_t feature,
                   std::size_t index) {
  const LocationSeries& s = bundle.locations.at(location);
  switch (feature) {
    case 0: return s.power.at(index);
    case 1: {
      const std::int64_t ts = bundle.timestamp(index);
      return static_cast<double>(((ts % kDay) + kDay) % kDay) / kDay;
    }
    case 2: {
      using namespace std::chrono;
      const std::int64_t ts = bundle.timestamp(index);
      const sys_days day{std::chrono::days{ts >= 0 ? ts / kDay : (ts - kDay + 1) / kDay}};
      const year_month_day ymd{day};
      const auto jan1 = sys_days{ymd.year() / January / 1};
      return static_cast<double>((day - jan1).count()) / 365.0;
    }
    default: return s.extra.at(feature - 3).at(index);
  }
}

Normalizer fit_normalizer(const SeriesBundle& bundle, std::size_t location, std::size_t end) {
  const std::size_t nf = bundle.feature_count(location);
  Normalizer n;
  n.min.assign(nf, std::numeric_limits<double>::infinity());
  n.max.assign(nf, -std::numeric_limits<double>::infinity());
  end = std::min(end, bundle.length());
  for (std::size_t i = 0; i < end; ++i) {
    if (bundle.is_gap(location, i)) continue;
    for (std::size_t f = 0; f < nf; ++f) {
      const double v = raw_feature(bundle, location, f, i);
      if (std::isnan(v)) continue;
      n.min[f] = std::min(n.min[f], v);
      n.max[f] = std::max(n.max[f], v);
    }
  }
  for (std::size_t f = 0; f < nf; ++f) {
    if (!std::isfinite(n.min[f])) {
      n.min[f] = 0.0;
      n.max[f] = 0.0;  // empty range: identity
    }
  }
  return n;
}

std::optional<InputWindow> build_window(const SeriesBundle& bundle, std::size_t location,
                                        const Normalizer& norm, std::size_t end,
                                        std::size_t lag_steps) {
  if (lag_steps == 0 || end + 1 < lag_steps || end >= bundle.length()) return std::nullopt;
  const std::size_t nf = bundle.feature_count(location);
  InputWindow w;
  w.lag_steps = lag_steps;
  w.features = nf;
  w.values.resize(lag_steps * nf);
  w.last_timestamp = bundle.timestamp(end);
  const std::size_t first = end + 1 - lag_steps;
  for (std::size_t k = 0; k < lag_steps; ++k) {
    if (bundle.is_gap(location, first + k)) return std::nullopt;
    for (std::size_t f = 0; f < nf; ++f) {
      const double raw = raw_feature(bundle, location, f, first + k);
      if (std::isnan(raw)) return std::nullopt;
      w.values[k * nf + f] = std::clamp(norm.normalize(f, raw), 0.0, 1.0);
    }
  }
  return w;
}

std::optional<double> raw_target(const SeriesBundle& bundle, std::size_t location,
                                 std::size_t t, std::size_t steps, TargetStatistic stat) {
  if (steps == 0 || t + steps >= bundle.length()) return std::nullopt;
  double acc = stat == TargetStatistic::Max   ? -std::numeric_limits<double>::infinity()
               : stat == TargetStatistic::Min ? std::numeric_limits<double>::infinity()
                                              : 0.0;
  for (std::size_t i = t + 1; i <= t + steps; ++i) {
    if (bundle.is_gap(location, i)) return std::nullopt;
    const double v = bundle.locations[location].power[i];
    switch (stat) {
      case TargetStatistic::Instant: acc = v; break;
      case TargetStatistic::Max: acc = std::max(acc, v); break;
      case TargetStatistic::Min: acc = std::min(acc, v); break;
      case TargetStatistic::Mean: acc += v; break;
    }
  }
  if (stat == TargetStatistic::Mean) acc /= static_cast<double>(steps);
  return acc;
}

std::size_t train_end(std::size_t length, const SplitFractions& split) {
  return static_cast<std::size_t>(std::floor(split.train * static_cast<double>(length)));
}

std::size_t validation_end(std::size_t length, const SplitFractions& split) {
  return static_cast<std::size_t>(
      std::floor((split.train + split.validation) * static_cast<double>(length)));
}

std::size_t lead_steps(const SeriesBundle& bundle, const ForecastTask& task) {
  if (task.lead_time <= 0 || task.lead_time % bundle.resolution != 0) {
    throw std::invalid_argument("task " + task.id() + ": lead time is not a positive multiple of "
                                "the " + std::to_string(bundle.resolution) + " s resolution");
  }
  return static_cast<std::size_t>(task.lead_time / bundle.resolution);
}

DatasetSplits build_dataset(const SeriesBundle& bundle, const ForecastTask& task,
                            std::size_t lag_steps, const SplitFractions& split) {
  if (task.location >= bundle.locations.size()) {
    throw std::invalid_argument("task " + task.id() + ": bundle has no location " +
                                std::to_string(task.location));
  }
  if (lag_steps == 0) throw std::invalid_argument("lag_steps must be >= 1");
  if (split.train <= 0.0 || split.validation < 0.0 || split.train + split.validation > 1.0) {
    throw std::invalid_argument("invalid split fractions");
  }
  const std::size_t steps = lead_steps(bundle, task);
  const std::size_t n = bundle.length();
  const std::size_t tr_end = train_end(n, split);
  const std::size_t va_end = validation_end(n, split);
  const Normalizer norm = fit_normalizer(bundle, task.location, tr_end);

  auto region = [&](std::size_t i) { return i < tr_end ? 0 : (i < va_end ? 1 : 2); };

  DatasetSplits out;
  TaskDataset* parts[3] = {&out.train, &out.validation, &out.test};
  for (TaskDataset* p : parts) {
    p->task = task;
    p->norm = norm;
  }
  for (std::size_t t = lag_steps - 1; t + steps < n; ++t) {
    const int r = region(t + 1 - lag_steps);
    if (region(t + steps) != r) continue;
    auto target = raw_target(bundle, task.location, t, steps, task.statistic);
    if (!target) continue;
    auto window = build_window(bundle, task.location, norm, t, lag_steps);
    if (!window) continue;
    TaskDataset& d = *parts[r];
    d.windows.push_back(std::move(*window));
    d.targets.push_back(norm.normalize(0, *target));
    d.window_end.push_back(t);
    d.target_time.push_back(bundle.timestamp(t + steps));
  }
  if (out.train.empty() && out.validation.empty() && out.test.empty()) {
    throw std::runtime_error("task " + task.id() + ": no usable samples (series too short or gappy)");
  }
  return out;
}

// ---------------------------------------------------------------------------
// Mini-batches

std::size_t MiniBatchSplit::total() const {
  std::size_t n = 0;
  for (const auto& t : tasks) n += t.support.size() + t.target.size();
  return n;
}

MiniBatchSplit sample_minibatch(std::span<const TaskDataset* const> datasets,
                                std::size_t batch_size, double support_fraction,
                                std::uint64_t seed) {
  if (!(support_fraction >= 0.0 && support_fraction <= 1.0)) {
    throw std::invalid_argument("support_fraction must lie in [0, 1]");
  }
  std::vector<std::size_t> offsets{0};
  for (const TaskDataset* d : datasets) offsets.push_back(offsets.back() + d->size());
  const std::size_t total = offsets.back();
  if (total == 0) throw std::invalid_argument("sample_minibatch: all task datasets are empty");

  const std::size_t take = std::min(batch_size, total);
  std::vector<std::size_t> pool(total);
  for (std::size_t i = 0; i < total; ++i) pool[i] = i;
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < take; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, total - 1);
    std::swap(pool[i], pool[pick(rng)]);
  }

  std::vector<std::vector<std::size_t>> drawn(datasets.size());
  for (std::size_t i = 0; i < take; ++i) {
    const std::size_t joint = pool[i];
    const auto it = std::upper_bound(offsets.begin(), offsets.end(), joint);
    const auto task = static_cast<std::size_t>(it - offsets.begin()) - 1;
    drawn[task].push_back(joint - offsets[task]);
  }
  MiniBatchSplit out;
  out.tasks.resize(datasets.size());
  for (std::size_t t = 0; t < datasets.size(); ++t) {
    const auto& d = drawn[t];
    const auto ns = std::min(
        d.size(), static_cast<std::size_t>(std::floor(support_fraction * static_cast<double>(d.size()) + 0.5)));
    out.tasks[t].support.assign(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(ns));
    out.tasks[t].target.assign(d.begin() + static_cast<std::ptrdiff_t>(ns), d.end());
  }
  return out;
}

SampleView view(const TaskDataset& data, std::span<const std::size_t> indices) {
  SampleView v;
  v.windows.reserve(indices.size());
  v.targets.reserve(indices.size());
  for (std::size_t i : indices) {
    v.windows.push_back(&data.windows.at(i));
    v.targets.push_back(data.targets.at(i));
  }
  return v;
}

SampleView view_all(const TaskDataset& data) {
  SampleView v;
  for (std::size_t i = 0; i < data.size(); ++i) {
    v.windows.push_back(&data.windows[i]);
    v.targets.push_back(data.targets[i]);
  }
  return v;
}

// ---------------------------------------------------------------------------
// Task streams

std::size_t TaskStream::spots() const {
  std::size_t n = 0;
  for (const auto& s : segments) n += s.end - s.begin;
  return n;
}

std::optional<std::size_t> TaskStream::task_at(std::size_t index) const {
  for (const auto& s : segments) {
    if (index >= s.begin && index < s.end) return s.task;
  }
  return std::nullopt;
}

TaskStream build_stream(std::vector<ForecastTask> tasks, std::int64_t duration,
                        const SeriesBundle& bundle, StreamRange range) {
  if (tasks.empty()) throw std::invalid_argument("build_stream: no online tasks");
  if (duration <= 0 || duration % bundle.resolution != 0) {
    throw std::invalid_argument("build_stream: task duration " + format_duration(duration) +
                                " is not a positive multiple of the " +
                                std::to_string(bundle.resolution) + " s grid");
  }
  if (range.end > bundle.length() || range.begin >= range.end) {
    throw std::invalid_argument("build_stream: empty or out-of-range horizon");
  }
  TaskStream s;
  s.tasks = std::move(tasks);
  s.duration = duration;
  s.segment_length = static_cast<std::size_t>(duration / bundle.resolution);
  const std::size_t len = range.end - range.begin;
  if (s.tasks.size() == 1) {
    s.segments.push_back({0, range.begin, range.end});
    return s;
  }
  const std::size_t count = len / s.segment_length;
  for (std::size_t k = 0; k < count; ++k) {
    const std::size_t b = range.begin + k * s.segment_length;
    s.segments.push_back({k % s.tasks.size(), b, b + s.segment_length});
  }
  return s;
}

TaskStream build_stream(std::vector<ForecastTask> tasks, std::int64_t duration,
                        const SeriesBundle& bundle, const SplitFractions& split) {
  return build_stream(std::move(tasks), duration, bundle,
                      StreamRange{validation_end(bundle.length(), split), bundle.length()});
}

}  // namespace metawpf
