#include "metawpf/kernels.hpp"

#include <omp.h>

#include <cstdint>
#include <stdexcept>

namespace metawpf::kernels {
namespace {

void check_gemm_sizes(const GemmShape& s, std::span<const double> a, std::span<const double> b,
                      std::span<double> c) {
  if (a.size() != s.m * s.k || b.size() != s.k * s.n || c.size() != s.m * s.n) {
    throw std::invalid_argument("gemm: buffer sizes do not match shape");
  }
}

// One output row. Accumulates over p in ascending order for every (i, j),
// whichever loop nesting is used, so serial and parallel agree bit for bit.
inline void gemm_row(const GemmShape& s, const double* a, const double* b, double* c,
                     std::size_t i) {
  double* crow = c + i * s.n;
  for (std::size_t j = 0; j < s.n; ++j) crow[j] = 0.0;
  if (!s.trans_b) {
    for (std::size_t p = 0; p < s.k; ++p) {
      const double aip = s.trans_a ? a[p * s.m + i] : a[i * s.k + p];
      const double* brow = b + p * s.n;
      for (std::size_t j = 0; j < s.n; ++j) crow[j] += aip * brow[j];
    }
  } else {
    for (std::size_t j = 0; j < s.n; ++j) {
      const double* brow = b + j * s.k;
      double acc = 0.0;
      if (s.trans_a) {
        for (std::size_t p = 0; p < s.k; ++p) acc += a[p * s.m + i] * brow[p];
      } else {
        const double* arow = a + i * s.k;
        for (std::size_t p = 0; p < s.k; ++p) acc += arow[p] * brow[p];
      }
      crow[j] = acc;
    }
  }
}

}  // namespace

namespace serial {

void gemm(const GemmShape& s, std::span<const double> a, std::span<const double> b,
          std::span<double> c) {
  check_gemm_sizes(s, a, b, c);
  for (std::size_t i = 0; i < s.m; ++i) gemm_row(s, a.data(), b.data(), c.data(), i);
}

void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  if (x.size() != y.size()) throw std::invalid_argument("axpy: length mismatch");
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

}  // namespace serial

namespace omp {

void gemm(const GemmShape& s, std::span<const double> a, std::span<const double> b,
          std::span<double> c) {
  check_gemm_sizes(s, a, b, c);
  const auto rows = static_cast<std::int64_t>(s.m);
  const double* pa = a.data();
  const double* pb = b.data();
  double* pc = c.data();
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < rows; ++i) gemm_row(s, pa, pb, pc, static_cast<std::size_t>(i));
}

void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  if (x.size() != y.size()) throw std::invalid_argument("axpy: length mismatch");
  const auto n = static_cast<std::int64_t>(x.size());
  const double* px = x.data();
  double* py = y.data();
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < n; ++i) py[i] += alpha * px[i];
}

}  // namespace omp

void gemm(const GemmShape& s, std::span<const double> a, std::span<const double> b,
          std::span<double> c) {
  if (s.m > 1 && s.m * s.n * s.k >= kParallelGemmWork && !omp_in_parallel()) {
    omp::gemm(s, a, b, c);
  } else {
    serial::gemm(s, a, b, c);
  }
}

void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  if (x.size() >= kParallelAxpyLength && !omp_in_parallel()) {
    omp::axpy(alpha, x, y);
  } else {
    serial::axpy(alpha, x, y);
  }
}

int max_threads() { return omp_get_max_threads(); }

}  // namespace metawpf::kernels
