// SPDX-License-Identifier: Apache-2.0
#include "rdpb/kernels.hpp"

#include <algorithm>
#include <cassert>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace rdpb::kernels {
namespace {

constexpr std::size_t kMr = 4;
constexpr std::size_t kNr = 16;
constexpr std::size_t kKc = 256;
constexpr std::size_t kMc = 128;

struct OpView {
  const double* data;
  std::size_t ld;
  bool trans;

  double at(std::size_t i, std::size_t j) const {
    return trans ? data[j * ld + i] : data[i * ld + j];
  }
};

// Packs rows [i0, i0+mc) x cols [p0, p0+kc) of op(A) into kMr-row panels,
// zero-padding the last panel.
void pack_a(const OpView& a, std::size_t i0, std::size_t mc, std::size_t p0,
            std::size_t kc, double* out) {
  for (std::size_t ip = 0; ip < mc; ip += kMr) {
    const std::size_t rows = std::min(kMr, mc - ip);
    double* panel = out + ip * kc;
    for (std::size_t p = 0; p < kc; ++p) {
      for (std::size_t r = 0; r < kMr; ++r) {
        panel[p * kMr + r] = r < rows ? a.at(i0 + ip + r, p0 + p) : 0.0;
      }
    }
  }
}

void pack_b(const OpView& b, std::size_t p0, std::size_t kc, std::size_t j0,
            std::size_t nr, double* out) {
  if (!b.trans && nr == kNr) {
    for (std::size_t p = 0; p < kc; ++p) {
      const double* src = b.data + (p0 + p) * b.ld + j0;
      std::copy(src, src + kNr, out + p * kNr);
    }
    return;
  }
  for (std::size_t p = 0; p < kc; ++p) {
    for (std::size_t c = 0; c < kNr; ++c) {
      out[p * kNr + c] = c < nr ? b.at(p0 + p, j0 + c) : 0.0;
    }
  }
}

void micro_kernel(std::size_t kc, const double* __restrict ap,
                  const double* __restrict bp, double acc[kMr][kNr]) {
  double c[kMr][kNr] = {};
  for (std::size_t p = 0; p < kc; ++p) {
    const double* brow = bp + p * kNr;
    const double* acol = ap + p * kMr;
    for (std::size_t r = 0; r < kMr; ++r) {
      const double av = acol[r];
#pragma omp simd
      for (std::size_t j = 0; j < kNr; ++j) c[r][j] += av * brow[j];
    }
  }
  for (std::size_t r = 0; r < kMr; ++r)
    for (std::size_t j = 0; j < kNr; ++j) acc[r][j] = c[r][j];
}

void scale_c(double beta, Matrix c) {
  for (std::size_t i = 0; i < c.rows; ++i) {
    double* row = c.data + i * c.ld;
    if (beta == 0.0) {
      std::fill(row, row + c.cols, 0.0);
    } else if (beta != 1.0) {
      for (std::size_t j = 0; j < c.cols; ++j) row[j] *= beta;
    }
  }
}

}  // namespace

void gemm(Trans trans_a, Trans trans_b, double alpha, ConstMatrix a,
          ConstMatrix b, double beta, Matrix c) {
  const std::size_t m = c.rows;
  const std::size_t n = c.cols;
  const std::size_t k = trans_a == Trans::kNo ? a.cols : a.rows;
  assert((trans_a == Trans::kNo ? a.rows : a.cols) == m);
  assert((trans_b == Trans::kNo ? b.rows : b.cols) == k);
  assert((trans_b == Trans::kNo ? b.cols : b.rows) == n);

  scale_c(beta, c);
  if (m == 0 || n == 0 || k == 0 || alpha == 0.0) return;

  const OpView av{a.data, a.ld, trans_a == Trans::kYes};
  const OpView bv{b.data, b.ld, trans_b == Trans::kYes};
  const std::size_t n_panels = (n + kNr - 1) / kNr;
  std::vector<double> apack(((kMc + kMr - 1) / kMr) * kMr * kKc);

  for (std::size_t i0 = 0; i0 < m; i0 += kMc) {
    const std::size_t mc = std::min(kMc, m - i0);
    for (std::size_t p0 = 0; p0 < k; p0 += kKc) {
      const std::size_t kc = std::min(kKc, k - p0);
      pack_a(av, i0, mc, p0, kc, apack.data());

#pragma omp parallel
      {
        std::vector<double> bpack(kKc * kNr);
        double acc[kMr][kNr];
#pragma omp for schedule(static)
        for (std::ptrdiff_t jp = 0; jp < static_cast<std::ptrdiff_t>(n_panels);
             ++jp) {
          const std::size_t j0 = static_cast<std::size_t>(jp) * kNr;
          const std::size_t nr = std::min(kNr, n - j0);
          pack_b(bv, p0, kc, j0, nr, bpack.data());
          for (std::size_t ip = 0; ip < mc; ip += kMr) {
            const std::size_t mr = std::min(kMr, mc - ip);
            micro_kernel(kc, apack.data() + ip * kc, bpack.data(), acc);
            for (std::size_t r = 0; r < mr; ++r) {
              double* crow = c.data + (i0 + ip + r) * c.ld + j0;
              for (std::size_t j = 0; j < nr; ++j) crow[j] += alpha * acc[r][j];
            }
          }
        }
      }
    }
  }
}

void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  assert(x.size() == y.size());
  const std::ptrdiff_t n = static_cast<std::ptrdiff_t>(x.size());
#pragma omp parallel for schedule(static) if (n > 65536)
  for (std::ptrdiff_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

int num_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

void set_num_threads(int n) {
#ifdef _OPENMP
  omp_set_num_threads(std::max(1, n));
#else
  (void)n;
#endif
}

namespace serial {

void gemm(Trans trans_a, Trans trans_b, double alpha, ConstMatrix a,
          ConstMatrix b, double beta, Matrix c) {
  const std::size_t k = trans_a == Trans::kNo ? a.cols : a.rows;
  const OpView av{a.data, a.ld, trans_a == Trans::kYes};
  const OpView bv{b.data, b.ld, trans_b == Trans::kYes};
  for (std::size_t i = 0; i < c.rows; ++i) {
    for (std::size_t j = 0; j < c.cols; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += av.at(i, p) * bv.at(p, j);
      double& out = c.data[i * c.ld + j];
      out = alpha * s + (beta == 0.0 ? 0.0 : beta * out);
    }
  }
}

}  // namespace serial

}  // namespace rdpb::kernels
