#include "metawpf/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace metawpf {

namespace {

void check_pairs(std::span<const ScoredForecast> pairs, std::span<const double> quantiles,
                 const char* what) {
  if (pairs.empty()) throw std::invalid_argument(std::string(what) + ": no forecast pairs");
  if (quantiles.empty()) throw std::invalid_argument(std::string(what) + ": empty quantile grid");
  for (const auto& p : pairs) {
    if (p.forecast.values.size() != quantiles.size()) {
      throw std::invalid_argument(std::string(what) + ": forecast has " +
                                  std::to_string(p.forecast.values.size()) + " levels, grid has " +
                                  std::to_string(quantiles.size()));
    }
  }
}

std::size_t median_index(std::span<const double> quantiles) {
  for (std::size_t j = 0; j < quantiles.size(); ++j) {
    if (quantiles[j] == 0.5) return j;
  }
  throw std::invalid_argument("mae: the 0.5 level is not on the quantile grid");
}

}  // namespace

double reliability(std::span<const ScoredForecast> pairs, std::span<const double> quantiles) {
  check_pairs(pairs, quantiles, "reliability");
  const double n = static_cast<double>(pairs.size());
  double total = 0.0;
  for (std::size_t j = 0; j < quantiles.size(); ++j) {
    std::size_t covered = 0;
    for (const auto& p : pairs) covered += p.forecast.values[j] >= p.observation;
    total += std::abs(quantiles[j] - static_cast<double>(covered) / n);
  }
  return total / static_cast<double>(quantiles.size());
}

std::string_view to_string(QuantileReadout r) {
  switch (r) {
    case QuantileReadout::Linear: return "linear";
    case QuantileReadout::FlatEdges: return "flat";
    case QuantileReadout::NearestGrid: return "nearest";
  }
  return "?";
}

QuantileReadout parse_readout(std::string_view text) {
  if (text == "linear") return QuantileReadout::Linear;
  if (text == "flat") return QuantileReadout::FlatEdges;
  if (text == "nearest") return QuantileReadout::NearestGrid;
  throw std::invalid_argument("unknown quantile readout '" + std::string(text) +
                              "' (expected linear, flat or nearest)");
}

double quantile_at(std::span<const double> values, std::span<const double> quantiles, double p,
                   QuantileReadout readout) {
  const std::size_t n = quantiles.size();
  if (n < 2 || values.size() != n) {
    throw std::invalid_argument("quantile_at: need >= 2 levels and one value per level");
  }
  if (readout == QuantileReadout::NearestGrid) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < n; ++j) {
      if (std::abs(quantiles[j] - p) < std::abs(quantiles[best] - p)) best = j;
    }
    return values[best];
  }
  if (readout == QuantileReadout::FlatEdges) {
    if (p <= quantiles.front()) return values.front();
    if (p >= quantiles.back()) return values.back();
  }
  // Segment [lo, lo + 1] containing p, or the edge segment outside the grid.
  const auto it = std::upper_bound(quantiles.begin(), quantiles.end(), p);
  std::size_t lo = static_cast<std::size_t>(it - quantiles.begin());
  lo = lo == 0 ? 0 : std::min(lo - 1, n - 2);
  const double q0 = quantiles[lo], q1 = quantiles[lo + 1];
  if (p == q0) return values[lo];
  if (p == q1) return values[lo + 1];
  const double t = (p - q0) / (q1 - q0);
  return values[lo] + t * (values[lo + 1] - values[lo]);
}

double sharpness(std::span<const QuantileForecast> forecasts, std::span<const double> quantiles,
                 QuantileReadout readout) {
  if (forecasts.empty()) throw std::invalid_argument("sharpness: no forecasts");
  double total = 0.0;
  for (const auto& f : forecasts) {
    double row = 0.0;
    for (const double q : quantiles) {
      row += quantile_at(f.values, quantiles, 1.0 - q / 2.0, readout) -
             quantile_at(f.values, quantiles, q / 2.0, readout);
    }
    total += row / static_cast<double>(quantiles.size());
  }
  return total / static_cast<double>(forecasts.size());
}

double sharpness(std::span<const ScoredForecast> pairs, std::span<const double> quantiles,
                 QuantileReadout readout) {
  std::vector<QuantileForecast> f;
  f.reserve(pairs.size());
  for (const auto& p : pairs) f.push_back(p.forecast);
  return sharpness(f, quantiles, readout);
}

double skill_score(std::span<const ScoredForecast> pairs, std::span<const double> quantiles) {
  check_pairs(pairs, quantiles, "skill_score");
  double total = 0.0;
  for (const auto& p : pairs) {
    double s = 0.0;
    for (std::size_t j = 0; j < quantiles.size(); ++j) {
      const double yhat = p.forecast.values[j];
      s += (heaviside(yhat - p.observation) - quantiles[j]) * (p.observation - yhat);
    }
    total += s;
  }
  return total / static_cast<double>(pairs.size());
}

double mae(std::span<const ScoredForecast> pairs, std::span<const double> quantiles) {
  check_pairs(pairs, quantiles, "mae");
  const std::size_t m = median_index(quantiles);
  double total = 0.0;
  for (const auto& p : pairs) total += std::abs(p.observation - p.forecast.values[m]);
  return total / static_cast<double>(pairs.size());
}

MetricReport evaluate(std::span<const ScoredForecast> pairs, std::span<const double> quantiles,
                      QuantileReadout readout) {
  MetricReport r;
  r.avg_deviation = 100.0 * reliability(pairs, quantiles);
  r.avg_pi_width = sharpness(pairs, quantiles, readout);
  r.avg_skill = skill_score(pairs, quantiles);
  r.mae = mae(pairs, quantiles);
  r.samples = pairs.size();
  r.quantiles.assign(quantiles.begin(), quantiles.end());
  return r;
}

namespace {

nlohmann::json report_json(const MetricReport& r) {
  return {{"avg_deviation_pct", r.avg_deviation},
          {"avg_pi_width", r.avg_pi_width},
          {"avg_skill", r.avg_skill},
          {"mae", r.mae},
          {"samples", r.samples},
          {"quantiles", r.quantiles}};
}

MetricReport report_from(const nlohmann::json& j) {
  MetricReport r;
  r.avg_deviation = j.at("avg_deviation_pct").get<double>();
  r.avg_pi_width = j.at("avg_pi_width").get<double>();
  r.avg_skill = j.at("avg_skill").get<double>();
  r.mae = j.at("mae").get<double>();
  r.samples = j.at("samples").get<std::size_t>();
  r.quantiles = j.at("quantiles").get<std::vector<double>>();
  return r;
}

}  // namespace

std::string to_json(const MetricReport& r) { return report_json(r).dump(2); }

MetricReport report_from_json(std::string_view text) {
  return report_from(nlohmann::json::parse(text));
}

void write_reports_json(const std::filesystem::path& path, std::span<const ReportRow> rows) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& row : rows) {
    auto j = report_json(row.report);
    j["method"] = row.method;
    j["t_T"] = row.duration;
    arr.push_back(std::move(j));
  }
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << nlohmann::json{{"reports", arr}}.dump(2) << '\n';
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

std::vector<ReportRow> read_reports_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  const auto j = nlohmann::json::parse(in);
  std::vector<ReportRow> rows;
  for (const auto& e : j.at("reports")) {
    rows.push_back({e.at("method").get<std::string>(), e.at("t_T").get<std::string>(),
                    report_from(e)});
  }
  return rows;
}

void write_reports_csv(const std::filesystem::path& path, std::span<const ReportRow> rows) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "method,t_T,metric,value\n";
  char buf[64];
  const auto line = [&](const ReportRow& r, const char* metric, double v) {
    std::snprintf(buf, sizeof buf, "%.10g", v);
    out << r.method << ',' << r.duration << ',' << metric << ',' << buf << '\n';
  };
  for (const auto& r : rows) {
    line(r, "b_bar_pct", r.report.avg_deviation);
    line(r, "delta_bar", r.report.avg_pi_width);
    line(r, "S_bar", r.report.avg_skill);
    line(r, "MAE", r.report.mae);
  }
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

}  // namespace metawpf
