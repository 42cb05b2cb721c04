// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>

namespace rdpb::kernels {

/// Row-major matrix view. `ld` is the distance between consecutive rows.
struct ConstMatrix {
  const double* data = nullptr;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t ld = 0;
};

struct Matrix {
  double* data = nullptr;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t ld = 0;
};

enum class Trans { kNo, kYes };

/// C = alpha * op(A) * op(B) + beta * C, where op is identity or transpose.
/// Blocked and packed; OpenMP-parallel over column panels of C. Every element
/// of C is accumulated by one thread in a fixed order, so results do not
/// depend on the thread count.
void gemm(Trans trans_a, Trans trans_b, double alpha, ConstMatrix a,
          ConstMatrix b, double beta, Matrix c);

/// Elementwise y[i] += x[i].
void axpy(double alpha, std::span<const double> x, std::span<double> y);

/// Number of OpenMP threads used by the parallel kernels (1 without OpenMP).
int num_threads();
void set_num_threads(int n);

namespace serial {

/// Straight triple loop; the ground truth for `kernels::gemm`.
void gemm(Trans trans_a, Trans trans_b, double alpha, ConstMatrix a,
          ConstMatrix b, double beta, Matrix c);

}  // namespace serial

}  // namespace rdpb::kernels
