#pragma once
// Reference computations written independently of the library code paths
// they check.

#include <algorithm>
#include <cmath>
#include <vector>

#include "rdpb/objective.hpp"
#include "rdpb/oracle.hpp"
#include "rdpb/rng.hpp"
#include "rdpb/tensor.hpp"

namespace rdpb::test {

// Batch mean of sum_j KL(N(mu, e^lv + s^2) || N(0, 1 + s^2)), estimated as
// E_p[ln p - ln q] from `n` draws per coordinate.
inline double monte_carlo_rate_kl(const Tensor& mu, const Tensor& lv, double sigma, std::size_t n,
                                  std::uint64_t seed) {
  Rng rng(seed);
  const double V = 1.0 + sigma * sigma;
  double total = 0.0;
  for (std::size_t i = 0; i < mu.size(); ++i) {
    const double m = mu.at(i);
    const double v = std::exp(lv.at(i)) + sigma * sigma;
    const double sd = std::sqrt(v);
    double acc = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      const double s = m + sd * rng.normal();
      const double log_p = -0.5 * std::log(2 * M_PI * v) - (s - m) * (s - m) / (2 * v);
      const double log_q = -0.5 * std::log(2 * M_PI * V) - s * s / (2 * V);
      acc += log_p - log_q;
    }
    total += acc / static_cast<double>(n);
  }
  return total / static_cast<double>(mu.rows());
}

struct BatchPair {
  Tensor x;
  Tensor xhat;
};

// Two (m, cols) batches of independent Gaussian pixels whose per-column
// means and spreads differ by seeded amounts.
inline BatchPair gaussian_batches(std::size_t m, std::size_t cols, std::uint64_t seed) {
  Rng rng(seed * 7919 + 1);
  std::vector<double> a(m * cols), b(m * cols);
  for (std::size_t c = 0; c < cols; ++c) {
    const double mx = rng.uniform(0.2, 0.8);
    const double sx = rng.uniform(0.05, 0.2);
    const double mh = mx + rng.uniform(-0.1, 0.1);
    const double sh = sx * rng.uniform(0.6, 1.5);
    for (std::size_t r = 0; r < m; ++r) {
      a[r * cols + c] = mx + sx * rng.normal();
      b[r * cols + c] = mh + sh * rng.normal();
    }
  }
  return {Tensor({m, cols}, a), Tensor({m, cols}, b)};
}

// Per column: fit a Gaussian to each batch (population variance, floored as
// in training), bin both densities on a shared grid and take the histogram
// KL. Returns the mean over columns.
inline double histogram_perception(const Tensor& x, const Tensor& xhat, std::size_t bins) {
  const std::size_t m = x.rows();
  const std::size_t cols = x.cols();
  auto fit = [&](const Tensor& t, std::size_t c) {
    double s = 0.0;
    for (std::size_t r = 0; r < m; ++r) s += t.at(r, c);
    const double mean = s / static_cast<double>(m);
    double ss = 0.0;
    for (std::size_t r = 0; r < m; ++r) ss += (t.at(r, c) - mean) * (t.at(r, c) - mean);
    return std::pair{mean, std::max(objective::kVarianceFloor, ss / static_cast<double>(m))};
  };
  auto cdf = [](double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); };
  double total = 0.0;
  for (std::size_t c = 0; c < cols; ++c) {
    const auto [m1, v1] = fit(x, c);
    const auto [m2, v2] = fit(xhat, c);
    const double s1 = std::sqrt(v1), s2 = std::sqrt(v2);
    const double lo = std::min(m1 - 8 * s1, m2 - 8 * s2);
    const double hi = std::max(m1 + 8 * s1, m2 + 8 * s2);
    std::vector<double> p(bins), q(bins);
    for (std::size_t i = 0; i < bins; ++i) {
      const double a = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(bins);
      const double b = lo + (hi - lo) * static_cast<double>(i + 1) / static_cast<double>(bins);
      p[i] = cdf((b - m1) / s1) - cdf((a - m1) / s1);
      q[i] = cdf((b - m2) / s2) - cdf((a - m2) / s2);
    }
    double sp = 0.0, sq = 0.0;
    for (std::size_t i = 0; i < bins; ++i) {
      sp += p[i];
      sq += q[i];
    }
    for (std::size_t i = 0; i < bins; ++i) {
      p[i] /= sp;
      q[i] /= sq;
    }
    total += objective::perception_hist_kl(p, q);
  }
  return total / static_cast<double>(cols);
}

// Every RDPB term from the full joint p(x, y, zhat, xhat), accumulated by
// explicit loops over all four alphabets.
inline oracle::RdpbTerms brute_force_terms(const oracle::DiscreteSystem& s) {
  const std::size_t nx = s.p_xy.rows(), ny = s.p_xy.cols(), nz = s.enc.cols();
  std::vector<double> joint(nx * ny * nz * nx, 0.0);
  auto at = [&](std::size_t x, std::size_t y, std::size_t z, std::size_t xh) -> double& {
    return joint[((x * ny + y) * nz + z) * nx + xh];
  };
  for (std::size_t x = 0; x < nx; ++x)
    for (std::size_t y = 0; y < ny; ++y)
      for (std::size_t z = 0; z < nz; ++z)
        for (std::size_t xh = 0; xh < nx; ++xh) at(x, y, z, xh) = s.p_xy(x, y) * s.enc(x, z) * s.dec_x(z, xh);

  std::vector<double> px(nx, 0.0), py(ny, 0.0), pz(nz, 0.0), pxh(nx, 0.0);
  std::vector<double> pxz(nx * nz, 0.0), pyz(ny * nz, 0.0);
  double distortion = 0.0;
  for (std::size_t x = 0; x < nx; ++x)
    for (std::size_t y = 0; y < ny; ++y)
      for (std::size_t z = 0; z < nz; ++z)
        for (std::size_t xh = 0; xh < nx; ++xh) {
          const double p = at(x, y, z, xh);
          px[x] += p;
          py[y] += p;
          pz[z] += p;
          pxh[xh] += p;
          pxz[x * nz + z] += p;
          pyz[y * nz + z] += p;
          double d = 0.0;
          for (std::size_t k = 0; k < s.embed.cols(); ++k) {
            const double e = s.embed(x, k) - s.embed(xh, k);
            d += e * e;
          }
          distortion += p * d;
        }

  oracle::RdpbTerms t;
  for (std::size_t y = 0; y < ny; ++y) {
    if (py[y] > 0) t.h_y -= py[y] * std::log(py[y]);
    for (std::size_t z = 0; z < nz; ++z) {
      const double p = pyz[y * nz + z];
      if (p > 0) {
        t.conditional_ce -= p * std::log(p / pz[z]);
        t.i_zy += p * std::log(p / (py[y] * pz[z]));
      }
    }
  }
  for (std::size_t x = 0; x < nx; ++x)
    for (std::size_t z = 0; z < nz; ++z) {
      const double p = pxz[x * nz + z];
      if (p > 0) t.i_zx += p * std::log(p / (px[x] * pz[z]));
    }
  t.distortion = distortion;
  for (std::size_t x = 0; x < nx; ++x) {
    if (px[x] == 0) continue;
    t.perception = pxh[x] > 0 ? t.perception + px[x] * std::log(px[x] / pxh[x]) : INFINITY;
  }
  return t;
}

}  // namespace rdpb::test
