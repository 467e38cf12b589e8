#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "metawpf/online_adapter.hpp"

namespace metawpf {

/// Unit step with H(0) = 1: a tie counts as covered.
inline double heaviside(double x) { return x >= 0.0 ? 1.0 : 0.0; }

/// Mean over levels of |q_j - coverage_j|, as a fraction in [0, 0.5]
/// for a symmetric grid. Throws on an empty set or a size mismatch.
double reliability(std::span<const ScoredForecast> pairs, std::span<const double> quantiles);

/// How off-grid levels are read from a forecast.
enum class QuantileReadout {
  Linear,       // interpolate; extrapolate along the edge segment
  FlatEdges,    // interpolate; clamp to the outermost forecast outside the grid
  NearestGrid,  // nearest grid level (lower one on ties)
};
std::string_view to_string(QuantileReadout r);
QuantileReadout parse_readout(std::string_view text);

/// Forecast value at level p (grid must be strictly increasing, >= 2 levels).
double quantile_at(std::span<const double> values, std::span<const double> quantiles, double p,
                   QuantileReadout readout = QuantileReadout::Linear);

/// Mean over j and i of yhat^{1 - q_j/2} - yhat^{q_j/2}.
double sharpness(std::span<const QuantileForecast> forecasts, std::span<const double> quantiles,
                 QuantileReadout readout = QuantileReadout::Linear);
double sharpness(std::span<const ScoredForecast> pairs, std::span<const double> quantiles,
                 QuantileReadout readout = QuantileReadout::Linear);

/// (1/N) sum_i sum_j [H(yhat - y) - q_j](y - yhat); never positive.
double skill_score(std::span<const ScoredForecast> pairs, std::span<const double> quantiles);

/// (1/N) sum_i |y_i - yhat_i^{0.5}|. Throws if 0.5 is not on the grid.
double mae(std::span<const ScoredForecast> pairs, std::span<const double> quantiles);

struct MetricReport {
  double avg_deviation = 0.0;  // percent
  double avg_pi_width = 0.0;
  double avg_skill = 0.0;
  double mae = 0.0;
  std::size_t samples = 0;
  std::vector<double> quantiles;

  bool operator==(const MetricReport&) const = default;
};

MetricReport evaluate(std::span<const ScoredForecast> pairs, std::span<const double> quantiles,
                      QuantileReadout readout = QuantileReadout::Linear);

std::string to_json(const MetricReport& r);
MetricReport report_from_json(std::string_view text);

/// One labelled report: a method evaluated at one task duration t_T.
struct ReportRow {
  std::string method;
  std::string duration;  // e.g. "0.5h"
  MetricReport report;
};

/// {"reports": [{method, t_T, metrics...}, ...]}
void write_reports_json(const std::filesystem::path& path, std::span<const ReportRow> rows);
std::vector<ReportRow> read_reports_json(const std::filesystem::path& path);
/// Long table: method,t_T,metric,value with metrics b_bar, delta_bar, S_bar, MAE.
void write_reports_csv(const std::filesystem::path& path, std::span<const ReportRow> rows);

}  // namespace metawpf
