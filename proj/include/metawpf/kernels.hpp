#pragma once

#include <cstddef>
#include <span>

// Dense numeric kernels behind the autodiff tape.
//
// Every kernel has a serial reference and an OpenMP variant. The OpenMP
// variants partition output rows across threads and keep the per-element
// reduction order of the serial code, so both produce bit-identical results.
namespace metawpf::kernels {

/// C (m x n) = op(A) (m x k) * op(B) (k x n), row-major. op() transposes when
/// the matching flag is set: A is stored k x m, B is stored n x k.
struct GemmShape {
  std::size_t m = 0;
  std::size_t n = 0;
  std::size_t k = 0;
  bool trans_a = false;
  bool trans_b = false;
};

namespace serial {
void gemm(const GemmShape& s, std::span<const double> a, std::span<const double> b,
          std::span<double> c);
void axpy(double alpha, std::span<const double> x, std::span<double> y);
}  // namespace serial

namespace omp {
void gemm(const GemmShape& s, std::span<const double> a, std::span<const double> b,
          std::span<double> c);
void axpy(double alpha, std::span<const double> x, std::span<double> y);
}  // namespace omp

/// Work size (m*n*k multiply-adds) from which gemm() dispatches to OpenMP.
inline constexpr std::size_t kParallelGemmWork = 1u << 16;
/// Length from which axpy() dispatches to OpenMP.
inline constexpr std::size_t kParallelAxpyLength = 1u << 15;

void gemm(const GemmShape& s, std::span<const double> a, std::span<const double> b,
          std::span<double> c);
void axpy(double alpha, std::span<const double> x, std::span<double> y);

int max_threads();

}  // namespace metawpf::kernels
