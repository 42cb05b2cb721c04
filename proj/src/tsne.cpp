// SPDX-License-Identifier: Apache-2.0
#include "rdpb/tsne.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "rdpb/errors.hpp"
#include "rdpb/rng.hpp"

namespace rdpb::tsne {
namespace kernels {
namespace {

constexpr double kMinProb = 1e-12;

inline double student_t(const double* y, std::size_t i, std::size_t j) {
  const double dx = y[2 * i] - y[2 * j];
  const double dy = y[2 * i + 1] - y[2 * j + 1];
  return 1.0 / (1.0 + dx * dx + dy * dy);
}

}  // namespace

std::vector<double> squared_distances(std::span<const double> x, std::size_t n, std::size_t d) {
  std::vector<double> out(n * n);
  const auto rows = static_cast<std::ptrdiff_t>(n);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t si = 0; si < rows; ++si) {
    const auto i = static_cast<std::size_t>(si);
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < d; ++k) {
        const double diff = x[i * d + k] - x[j * d + k];
        s += diff * diff;
      }
      out[i * n + j] = s;
    }
  }
  return out;
}

std::vector<double> conditional_affinities(std::span<const double> dist2, std::size_t n,
                                           double perplexity, double tol,
                                           std::vector<double>& p) {
  p.assign(n * n, 0.0);
  std::vector<double> err(n, 0.0);
  const double target = std::log(perplexity);
  const auto rows = static_cast<std::ptrdiff_t>(n);
#pragma omp parallel for schedule(dynamic, 16)
  for (std::ptrdiff_t si = 0; si < rows; ++si) {
    const auto i = static_cast<std::size_t>(si);
    const double* d = dist2.data() + i * n;
    double* row = p.data() + i * n;
    double beta = 1.0;
    double lo = 0.0;
    double hi = std::numeric_limits<double>::infinity();
    double entropy = 0.0;
    for (int iter = 0; iter < 200; ++iter) {
      // Shift by the smallest off-diagonal distance for stability.
      double dmin = std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < n; ++j)
        if (j != i) dmin = std::min(dmin, d[j]);
      double sum = 0.0;
      double weighted = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        row[j] = j == i ? 0.0 : std::exp(-(d[j] - dmin) * beta);
        sum += row[j];
        weighted += (d[j] - dmin) * row[j];
      }
      entropy = std::log(sum) + beta * weighted / sum;
      for (std::size_t j = 0; j < n; ++j) row[j] /= sum;
      const double diff = entropy - target;
      if (std::abs(diff) < tol) break;
      if (diff > 0.0) {
        lo = beta;
        beta = std::isinf(hi) ? beta * 2.0 : 0.5 * (beta + hi);
      } else {
        hi = beta;
        beta = 0.5 * (beta + lo);
      }
    }
    err[i] = std::abs(entropy - target);
  }
  return err;
}

double gradient(std::span<const double> p, double exaggeration, std::span<const double> y,
                std::size_t n, std::span<double> grad) {
  const auto rows = static_cast<std::ptrdiff_t>(n);
  const double* yy = y.data();
  std::vector<double> row_sum(n, 0.0);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t si = 0; si < rows; ++si) {
    const auto i = static_cast<std::size_t>(si);
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) s += student_t(yy, i, j);
    row_sum[i] = s;
  }
  double z = 0.0;
  for (double s : row_sum) z += s;

  std::vector<double> row_kl(n, 0.0);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t si = 0; si < rows; ++si) {
    const auto i = static_cast<std::size_t>(si);
    double gx = 0.0;
    double gy = 0.0;
    double kl = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      const double num = student_t(yy, i, j);
      const double q = std::max(num / z, kMinProb);
      const double pij = p[i * n + j];
      const double mult = (exaggeration * pij - q) * num;
      gx += mult * (yy[2 * i] - yy[2 * j]);
      gy += mult * (yy[2 * i + 1] - yy[2 * j + 1]);
      if (pij > 0.0) kl += pij * std::log(pij / q);
    }
    grad[2 * i] = 4.0 * gx;
    grad[2 * i + 1] = 4.0 * gy;
    row_kl[i] = kl;
  }
  double kl = 0.0;
  for (double v : row_kl) kl += v;
  return kl;
}

namespace serial {

std::vector<double> squared_distances(std::span<const double> x, std::size_t n, std::size_t d) {
  std::vector<double> out(n * n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < d; ++k) s += (x[i * d + k] - x[j * d + k]) * (x[i * d + k] - x[j * d + k]);
      out[i * n + j] = s;
    }
  }
  return out;
}

double gradient(std::span<const double> p, double exaggeration, std::span<const double> y,
                std::size_t n, std::span<double> grad) {
  std::vector<double> num(n * n, 0.0);
  double z = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      const double dx = y[2 * i] - y[2 * j];
      const double dy = y[2 * i + 1] - y[2 * j + 1];
      num[i * n + j] = 1.0 / (1.0 + dx * dx + dy * dy);
      z += num[i * n + j];
    }
  }
  double kl = 0.0;
  std::fill(grad.begin(), grad.end(), 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      const double q = std::max(num[i * n + j] / z, kMinProb);
      const double pij = p[i * n + j];
      const double mult = 4.0 * (exaggeration * pij - q) * num[i * n + j];
      grad[2 * i] += mult * (y[2 * i] - y[2 * j]);
      grad[2 * i + 1] += mult * (y[2 * i + 1] - y[2 * j + 1]);
      if (pij > 0.0) kl += pij * std::log(pij / q);
    }
  }
  return kl;
}

}  // namespace serial
}  // namespace kernels

Embedding tsne_embed(const Tensor& features, const Options& options) {
  if (features.rank() != 2) throw ContractError("tsne: features must be (n, d)");
  const std::size_t n = features.rows();
  const std::size_t d = features.cols();
  if (n > 5000) throw ContractError("tsne: exact method supports n <= 5000, got " + std::to_string(n));
  const double max_perplexity = (static_cast<double>(n) - 1.0) / 3.0;
  if (!(options.perplexity >= 5.0 && options.perplexity <= max_perplexity)) {
    throw ContractError("tsne: perplexity " + std::to_string(options.perplexity) +
                        " outside [5, (n-1)/3 = " + std::to_string(max_perplexity) + "]");
  }
  if (options.iterations < 0) throw ContractError("tsne: iterations must be >= 0");

  const auto dist2 = kernels::squared_distances(features.values(), n, d);
  std::vector<double> cond;
  Embedding out;
  out.bandwidth_entropy_error = kernels::conditional_affinities(
      dist2, n, options.perplexity, options.entropy_tolerance, cond);

  std::vector<double> p(n * n);
  const double norm = 2.0 * static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      p[i * n + j] = i == j ? 0.0 : std::max((cond[i * n + j] + cond[j * n + i]) / norm, 1e-12);
    }
  }

  Rng rng(options.seed);
  std::vector<double> y(2 * n);
  rng.fill_normal(y, 1e-4);
  std::vector<double> update(2 * n, 0.0);
  std::vector<double> gains(2 * n, 1.0);
  std::vector<double> grad(2 * n, 0.0);

  for (int iter = 0; iter < options.iterations; ++iter) {
    const double exaggeration = iter < options.exaggeration_iters ? options.exaggeration : 1.0;
    const double momentum =
        iter < options.momentum_switch_iter ? options.initial_momentum : options.final_momentum;
    out.kl_trace.push_back(kernels::gradient(p, exaggeration, y, n, grad));
    for (std::size_t k = 0; k < 2 * n; ++k) {
      const bool same_sign = (grad[k] > 0.0) == (update[k] > 0.0);
      gains[k] = same_sign ? std::max(gains[k] * 0.8, 0.01) : gains[k] + 0.2;
      update[k] = momentum * update[k] - options.learning_rate * gains[k] * grad[k];
      y[k] += update[k];
    }
    double cx = 0.0;
    double cy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      cx += y[2 * i];
      cy += y[2 * i + 1];
    }
    cx /= static_cast<double>(n);
    cy /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
      y[2 * i] -= cx;
      y[2 * i + 1] -= cy;
    }
  }
  out.kl_trace.push_back(kernels::gradient(p, 1.0, y, n, grad));
  out.coords = Tensor({n, 2}, std::move(y));
  return out;
}

}  // namespace rdpb::tsne
