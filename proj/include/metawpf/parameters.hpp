#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace metawpf {

/// One named block of a flat parameter vector, stored row-major.
struct Segment {
  std::string name;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t offset = 0;

  std::size_t size() const { return rows * cols; }
  bool operator==(const Segment&) const = default;
};

/// Flat, ordered collection of model weights with a named segment layout.
/// Meta-parameters, adapted copies and gradients all share this type.
class ParameterVector {
 public:
  ParameterVector() = default;

  /// Appends a zero-filled segment and returns its index.
  std::size_t add_segment(std::string name, std::size_t rows, std::size_t cols);

  std::size_t size() const { return values_.size(); }
  std::size_t segment_count() const { return segments_.size(); }
  const std::vector<Segment>& segments() const { return segments_; }
  const Segment& segment_info(std::size_t i) const { return segments_.at(i); }
  /// Index of the segment with this name; throws std::out_of_range if absent.
  std::size_t find(std::string_view name) const;

  std::span<double> segment(std::size_t i);
  std::span<const double> segment(std::size_t i) const;

  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }
  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }

  /// Copy with identical layout and all values set to `fill`.
  ParameterVector like(double fill = 0.0) const;
  bool same_layout(const ParameterVector& other) const { return segments_ == other.segments_; }

  bool operator==(const ParameterVector&) const = default;

 private:
  std::vector<Segment> segments_;
  std::vector<double> values_;
};

/// y += alpha * x. Layouts must match.
void axpy(double alpha, const ParameterVector& x, ParameterVector& y);
double dot(const ParameterVector& a, const ParameterVector& b);
double norm(const ParameterVector& v);
bool all_finite(const ParameterVector& v);

/// Elementwise mean in the given order. Throws on empty input or mismatched layouts.
ParameterVector mean(std::span<const ParameterVector> vectors);

}  // namespace metawpf
