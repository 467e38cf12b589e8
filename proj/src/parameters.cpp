#include "metawpf/parameters.hpp"

#include <cmath>
#include <stdexcept>

namespace metawpf {

std::size_t ParameterVector::add_segment(std::string name, std::size_t rows, std::size_t cols) {
  if (rows == 0 || cols == 0) throw std::invalid_argument("segment '" + name + "' has zero size");
  Segment s{std::move(name), rows, cols, values_.size()};
  values_.resize(values_.size() + s.size(), 0.0);
  segments_.push_back(std::move(s));
  return segments_.size() - 1;
}

std::size_t ParameterVector::find(std::string_view name) const {
  for (std::size_t i = 0; i < segments_.size(); ++i) {
    if (segments_[i].name == name) return i;
  }
  throw std::out_of_range("no parameter segment named '" + std::string(name) + "'");
}

std::span<double> ParameterVector::segment(std::size_t i) {
  const Segment& s = segments_.at(i);
  return std::span<double>(values_).subspan(s.offset, s.size());
}

std::span<const double> ParameterVector::segment(std::size_t i) const {
  const Segment& s = segments_.at(i);
  return std::span<const double>(values_).subspan(s.offset, s.size());
}

ParameterVector ParameterVector::like(double fill) const {
  ParameterVector out = *this;
  for (double& v : out.values_) v = fill;
  return out;
}

void axpy(double alpha, const ParameterVector& x, ParameterVector& y) {
  if (!x.same_layout(y)) throw std::invalid_argument("axpy: parameter layouts differ");
  auto xs = x.values();
  auto ys = y.values();
  for (std::size_t i = 0; i < xs.size(); ++i) ys[i] += alpha * xs[i];
}

double dot(const ParameterVector& a, const ParameterVector& b) {
  if (!a.same_layout(b)) throw std::invalid_argument("dot: parameter layouts differ");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

double norm(const ParameterVector& v) { return std::sqrt(dot(v, v)); }

bool all_finite(const ParameterVector& v) {
  for (double x : v.values()) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

ParameterVector mean(std::span<const ParameterVector> vectors) {
  if (vectors.empty()) throw std::invalid_argument("mean: no parameter vectors");
  ParameterVector out = vectors.front().like(0.0);
  for (const auto& v : vectors) {
    if (!v.same_layout(out)) throw std::invalid_argument("mean: parameter layouts differ");
    for (std::size_t i = 0; i < v.size(); ++i) out[i] += v[i];
  }
  const double n = static_cast<double>(vectors.size());
  for (double& x : out.values()) x /= n;
  return out;
}

}  // namespace metawpf
