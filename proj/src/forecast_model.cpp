#include "metawpf/forecast_model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <stdexcept>
#include <string>

#include <json.hpp>

namespace metawpf {

using ad::Shape;
using ad::Tape;
using ad::Var;

std::vector<double> default_quantiles() {
  std::vector<double> q;
  for (int j = 1; j <= 19; ++j) q.push_back(j / 20.0);
  return q;
}

ModelConfig ModelConfig::full_scale() {
  ModelConfig c;
  c.num_layers = 16;
  c.hidden_size = 64;
  c.input_features = 3;
  c.lag_steps = 96;
  return c;
}

void ModelConfig::validate() const {
  if (num_layers == 0 || hidden_size == 0 || input_features == 0 || lag_steps == 0) {
    throw std::invalid_argument("model config: layer count, hidden size, feature count and "
                                "lag steps must be positive");
  }
  if (quantiles.empty()) throw std::invalid_argument("model config: empty quantile set");
  for (std::size_t j = 0; j < quantiles.size(); ++j) {
    const double q = quantiles[j];
    if (!(q > 0.0 && q < 1.0)) {
      throw std::invalid_argument("model config: quantile " + std::to_string(q) +
                                  " outside (0, 1)");
    }
    if (j > 0 && !(q > quantiles[j - 1])) {
      throw std::invalid_argument("model config: quantiles must be strictly increasing");
    }
  }
}

void QuantileForecast::finalize() { std::sort(values.begin(), values.end()); }

bool QuantileForecast::is_monotone() const {
  return std::is_sorted(values.begin(), values.end());
}

namespace {

constexpr const char* kGates[4] = {"i", "f", "o", "g"};

struct LayerSlots {
  std::size_t w[4];
  std::size_t u[4];
  std::size_t b[4];
  std::size_t proj;  // npos when the layer has an identity skip
};

struct Slots {
  std::vector<LayerSlots> layers;
  std::size_t head_w = 0;
  std::size_t head_b = 0;
};

constexpr std::size_t kNoProj = static_cast<std::size_t>(-1);

// Segment order matches make_layout().
Slots slots_for(const ModelConfig& c) {
  Slots s;
  std::size_t next = 0;
  for (std::size_t l = 0; l < c.num_layers; ++l) {
    LayerSlots ls{};
    for (int g = 0; g < 4; ++g) {
      ls.w[g] = next++;
      ls.u[g] = next++;
      ls.b[g] = next++;
    }
    ls.proj = (l == 0 && c.input_features != c.hidden_size) ? next++ : kNoProj;
    s.layers.push_back(ls);
  }
  s.head_w = next++;
  s.head_b = next++;
  return s;
}

bool is_bias(const std::string& name) {
  return name.ends_with(".b") || name.find(".b_") != std::string::npos;
}

}  // namespace

ParameterVector make_layout(const ModelConfig& config) {
  config.validate();
  ParameterVector p;
  const std::size_t h = config.hidden_size;
  for (std::size_t l = 0; l < config.num_layers; ++l) {
    const std::size_t in = l == 0 ? config.input_features : h;
    const std::string prefix = "lstm" + std::to_string(l) + ".";
    for (const char* g : kGates) {
      p.add_segment(prefix + "W_" + g, h, in);
      p.add_segment(prefix + "U_" + g, h, h);
      p.add_segment(prefix + "b_" + g, 1, h);
    }
    if (l == 0 && config.input_features != h) p.add_segment(prefix + "proj", h, in);
  }
  p.add_segment("head.W", config.quantiles.size(), h);
  p.add_segment("head.b", 1, config.quantiles.size());
  return p;
}

ParameterVector init_params(const ModelConfig& config, std::uint64_t seed) {
  ParameterVector p = make_layout(config);
  const double bound = 1.0 / std::sqrt(static_cast<double>(config.hidden_size));
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (std::size_t i = 0; i < p.segment_count(); ++i) {
    if (is_bias(p.segment_info(i).name)) continue;
    for (double& v : p.segment(i)) v = dist(rng);
  }
  return p;
}

Var forward(Tape& tape, std::span<const Var> params, const ModelConfig& config,
            std::span<const InputWindow* const> batch) {
  const Slots slots = slots_for(config);
  if (params.size() != slots.head_b + 1) {
    throw std::invalid_argument("forward: expected " + std::to_string(slots.head_b + 1) +
                                " parameter segments, got " + std::to_string(params.size()));
  }
  if (batch.empty()) throw std::invalid_argument("forward: empty batch");
  const std::size_t rows = batch.size();
  const std::size_t lag = config.lag_steps;
  const std::size_t feat = config.input_features;
  for (const InputWindow* w : batch) {
    if (w->lag_steps != lag || w->features != feat || w->values.size() != lag * feat) {
      throw ad::ShapeError("forward(window)", Shape{w->lag_steps, w->features},
                           Shape{lag, feat});
    }
  }

  // Layer-0 inputs: one constant batch x features matrix per time step.
  std::vector<Var> seq;
  seq.reserve(lag);
  for (std::size_t k = 0; k < lag; ++k) {
    std::vector<double> x(rows * feat);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t f = 0; f < feat; ++f) x[r * feat + f] = batch[r]->at(k, f);
    }
    seq.push_back(tape.constant(std::move(x), Shape{rows, feat}));
  }

  for (const LayerSlots& ls : slots.layers) {
    Var bias[4];
    for (int g = 0; g < 4; ++g) bias[g] = ad::broadcast_rows(params[ls.b[g]], rows);
    Var h;
    Var c;
    std::vector<Var> out;
    out.reserve(lag);
    for (std::size_t k = 0; k < lag; ++k) {
      const Var x = seq[k];
      Var gate[4];
      for (int g = 0; g < 4; ++g) {
        Var pre = ad::matmul(x, params[ls.w[g]], false, true);
        if (h.valid()) pre = pre + ad::matmul(h, params[ls.u[g]], false, true);
        pre = pre + bias[g];
        gate[g] = g == 3 ? ad::tanh(pre) : ad::sigmoid(pre);
      }
      c = c.valid() ? gate[1] * c + gate[0] * gate[3] : gate[0] * gate[3];
      h = gate[2] * ad::tanh(c);
      const Var skip = ls.proj == kNoProj ? x : ad::matmul(x, params[ls.proj], false, true);
      out.push_back(h + skip);
    }
    seq = std::move(out);
  }

  return ad::matmul(seq.back(), params[slots.head_w], false, true) +
         ad::broadcast_rows(params[slots.head_b], rows);
}

Var pinball_loss(Var predictions, std::span<const double> targets,
                 std::span<const double> quantiles, std::span<const double> weights) {
  const Shape s = predictions.shape();
  if (s.rows != targets.size() || s.rows != weights.size() || s.cols != quantiles.size()) {
    throw ad::ShapeError("pinball_loss", s, Shape{targets.size(), quantiles.size()});
  }
  Tape& tape = predictions.tape();
  std::vector<double> y(s.size());
  std::vector<double> under(s.size());
  std::vector<double> over(s.size());
  for (std::size_t r = 0; r < s.rows; ++r) {
    for (std::size_t j = 0; j < s.cols; ++j) {
      y[r * s.cols + j] = targets[r];
      under[r * s.cols + j] = weights[r] * quantiles[j];
      over[r * s.cols + j] = weights[r] * (1.0 - quantiles[j]);
    }
  }
  const Var diff = tape.constant(std::move(y), s) - predictions;
  const Var loss = tape.constant(std::move(under), s) * ad::relu(diff) +
                   tape.constant(std::move(over), s) * ad::relu(-diff);
  return ad::sum(loss);
}

Var batch_loss(Tape& tape, std::span<const Var> params, const ModelConfig& config,
               std::span<const InputWindow* const> batch, std::span<const double> targets) {
  const Var pred = forward(tape, params, config, batch);
  const std::vector<double> w(batch.size(), 1.0 / static_cast<double>(batch.size()));
  return pinball_loss(pred, targets, config.quantiles, w);
}

std::vector<QuantileForecast> predict_batch(const ParameterVector& params,
                                            std::span<const InputWindow* const> batch,
                                            const ModelConfig& config, bool finalize) {
  Tape tape;
  auto leaves = ad::bind(tape, params, false);
  const Var out = forward(tape, leaves, config, batch);
  const std::size_t j = config.quantiles.size();
  std::vector<QuantileForecast> result(batch.size());
  for (std::size_t r = 0; r < batch.size(); ++r) {
    auto& f = result[r];
    f.values.resize(j);
    for (std::size_t q = 0; q < j; ++q) f.values[q] = out.at(r * j + q);
    f.issue_time = batch[r]->last_timestamp;
    if (finalize) f.finalize();
  }
  return result;
}

QuantileForecast predict(const ParameterVector& params, const InputWindow& window,
                         const ModelConfig& config, bool finalize) {
  const InputWindow* one[1] = {&window};
  return predict_batch(params, one, config, finalize).front();
}

double pinball_loss(const QuantileForecast& forecast, double observation,
                    std::span<const double> quantiles) {
  if (forecast.values.size() != quantiles.size()) {
    throw std::invalid_argument("pinball_loss: forecast and quantile set lengths differ");
  }
  double total = 0.0;
  for (std::size_t j = 0; j < quantiles.size(); ++j) {
    const double q = quantiles[j];
    const double yhat = forecast.values[j];
    total += q * std::max(0.0, observation - yhat) + (1.0 - q) * std::max(0.0, yhat - observation);
  }
  return total;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr const char* kCheckpointFormat = "metawpf.params";
constexpr int kCheckpointVersion = 1;

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const ParameterVector& params,
                     const ModelConfig& config) {
  if (!params.same_layout(make_layout(config))) {
    throw std::invalid_argument("save_checkpoint: parameters do not match model config");
  }
  nlohmann::json j;
  j["format"] = kCheckpointFormat;
  j["version"] = kCheckpointVersion;
  j["model"] = {{"num_layers", config.num_layers},
                {"hidden_size", config.hidden_size},
                {"input_features", config.input_features},
                {"lag_steps", config.lag_steps},
                {"quantiles", config.quantiles}};
  auto& segs = j["segments"] = nlohmann::json::array();
  for (std::size_t i = 0; i < params.segment_count(); ++i) {
    const auto& s = params.segment_info(i);
    auto vals = params.segment(i);
    segs.push_back({{"name", s.name},
                    {"rows", s.rows},
                    {"cols", s.cols},
                    {"values", std::vector<double>(vals.begin(), vals.end())}});
  }
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
  out << j.dump() << '\n';
  if (!out) throw std::runtime_error("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("checkpoint " + path.string() + " is not valid JSON: " + e.what());
  }
  if (j.value("format", "") != kCheckpointFormat || j.value("version", 0) != kCheckpointVersion) {
    throw std::runtime_error("checkpoint " + path.string() + " has unknown format/version");
  }
  Checkpoint c;
  const auto& m = j.at("model");
  c.config.num_layers = m.at("num_layers").get<std::size_t>();
  c.config.hidden_size = m.at("hidden_size").get<std::size_t>();
  c.config.input_features = m.at("input_features").get<std::size_t>();
  c.config.lag_steps = m.at("lag_steps").get<std::size_t>();
  c.config.quantiles = m.at("quantiles").get<std::vector<double>>();
  c.params = make_layout(c.config);

  const auto& segs = j.at("segments");
  if (segs.size() != c.params.segment_count()) {
    throw std::runtime_error("checkpoint " + path.string() + ": segment count does not match model");
  }
  for (std::size_t i = 0; i < segs.size(); ++i) {
    const auto& s = c.params.segment_info(i);
    if (segs[i].at("name").get<std::string>() != s.name ||
        segs[i].at("rows").get<std::size_t>() != s.rows ||
        segs[i].at("cols").get<std::size_t>() != s.cols) {
      throw std::runtime_error("checkpoint " + path.string() + ": segment '" + s.name +
                               "' does not match model layout");
    }
    auto vals = segs[i].at("values").get<std::vector<double>>();
    if (vals.size() != s.size()) {
      throw std::runtime_error("checkpoint " + path.string() + ": wrong value count in '" +
                               s.name + "'");
    }
    std::copy(vals.begin(), vals.end(), c.params.segment(i).begin());
  }
  return c;
}

}  // namespace metawpf
