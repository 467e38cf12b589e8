#pragma once
// Independent reference computations used by the unit and acceptance tests.
// Nothing here calls into the tape.

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "metawpf/forecast_model.hpp"

namespace oracle {

/// Standard normal quantile by bisection on the CDF.
inline double normal_quantile(double p) {
  double lo = -12.0, hi = 12.0;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    (0.5 * std::erfc(-mid / std::sqrt(2.0)) < p ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

/// Plain-loop LSTM stack with residual skips and a linear head.
inline std::vector<double> lstm_forward(const metawpf::ParameterVector& p,
                                        const metawpf::ModelConfig& c,
                                        const metawpf::InputWindow& w) {
  const std::size_t H = c.hidden_size;
  auto seg = [&](const std::string& n) { return p.segment(p.find(n)); };
  auto affine = [](std::span<const double> W, const std::vector<double>& x, std::size_t rows) {
    std::vector<double> y(rows, 0.0);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t k = 0; k < x.size(); ++k) y[r] += W[r * x.size() + k] * x[k];
    return y;
  };
  auto sig = [](double x) { return 1.0 / (1.0 + std::exp(-x)); };

  std::vector<std::vector<double>> seq;
  for (std::size_t k = 0; k < c.lag_steps; ++k) {
    seq.emplace_back(w.values.begin() + k * c.input_features,
                     w.values.begin() + (k + 1) * c.input_features);
  }
  for (std::size_t l = 0; l < c.num_layers; ++l) {
    const std::string pre = "lstm" + std::to_string(l) + ".";
    std::vector<double> h(H, 0.0), cell(H, 0.0);
    std::vector<std::vector<double>> out;
    for (const auto& x : seq) {
      std::vector<double> g[4];
      const char* names[4] = {"i", "f", "o", "g"};
      for (int q = 0; q < 4; ++q) {
        auto a = affine(seg(pre + "W_" + names[q]), x, H);
        auto b = affine(seg(pre + "U_" + names[q]), h, H);
        auto bias = seg(pre + "b_" + names[q]);
        g[q].resize(H);
        for (std::size_t r = 0; r < H; ++r) {
          const double z = a[r] + b[r] + bias[r];
          g[q][r] = q == 3 ? std::tanh(z) : sig(z);
        }
      }
      for (std::size_t r = 0; r < H; ++r) {
        cell[r] = g[1][r] * cell[r] + g[0][r] * g[3][r];
        h[r] = g[2][r] * std::tanh(cell[r]);
      }
      std::vector<double> skip = x;
      if (x.size() != H) skip = affine(seg(pre + "proj"), x, H);
      std::vector<double> o(H);
      for (std::size_t r = 0; r < H; ++r) o[r] = h[r] + skip[r];
      out.push_back(o);
    }
    seq = out;
  }
  auto y = affine(seg("head.W"), seq.back(), c.quantiles.size());
  auto hb = seg("head.b");
  for (std::size_t j = 0; j < y.size(); ++j) y[j] += hb[j];
  return y;
}

inline double pinball(std::span<const double> yhat, double y, std::span<const double> q) {
  double s = 0.0;
  for (std::size_t j = 0; j < q.size(); ++j) {
    const double d = y - yhat[j];
    s += d >= 0 ? q[j] * d : (q[j] - 1.0) * d;
  }
  return s;
}

// Brute-force metric definitions, written straight from the formulas.

struct Pair {
  std::vector<double> f;
  double y;
};

inline double reliability(const std::vector<Pair>& ps, std::span<const double> q) {
  double out = 0.0;
  for (std::size_t j = 0; j < q.size(); ++j) {
    double cover = 0.0;
    for (const auto& p : ps) cover += (p.f[j] - p.y >= 0.0) ? 1.0 : 0.0;
    out += std::fabs(q[j] - cover / static_cast<double>(ps.size()));
  }
  return out / static_cast<double>(q.size());
}

inline double skill(const std::vector<Pair>& ps, std::span<const double> q) {
  double out = 0.0;
  for (const auto& p : ps) {
    for (std::size_t j = 0; j < q.size(); ++j) {
      const double hv = (p.f[j] - p.y >= 0.0) ? 1.0 : 0.0;
      out += (hv - q[j]) * (p.y - p.f[j]);
    }
  }
  return out / static_cast<double>(ps.size());
}

inline double mae(const std::vector<Pair>& ps, std::span<const double> q) {
  const auto m = static_cast<std::size_t>(std::find(q.begin(), q.end(), 0.5) - q.begin());
  double out = 0.0;
  for (const auto& p : ps) out += std::fabs(p.y - p.f[m]);
  return out / static_cast<double>(ps.size());
}

/// Piecewise-linear quantile function through (q_j, f_j), continued linearly
/// past both ends.
inline double interp(const std::vector<double>& f, std::span<const double> q, double p) {
  std::size_t j = 0;
  while (j + 2 < q.size() && p > q[j + 1]) ++j;
  return f[j] + (p - q[j]) * (f[j + 1] - f[j]) / (q[j + 1] - q[j]);
}

inline double sharpness(const std::vector<Pair>& ps, std::span<const double> q) {
  double out = 0.0;
  for (std::size_t j = 0; j < q.size(); ++j) {
    for (const auto& p : ps) out += interp(p.f, q, 1.0 - q[j] / 2) - interp(p.f, q, q[j] / 2);
  }
  return out / static_cast<double>(q.size() * ps.size());
}

}  // namespace oracle
