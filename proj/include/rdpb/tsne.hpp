// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "rdpb/tensor.hpp"

namespace rdpb::tsne {

struct Options {
  double perplexity = 30.0;
  int iterations = 1000;
  std::uint64_t seed = 0;
  double learning_rate = 200.0;
  double exaggeration = 4.0;
  int exaggeration_iters = 100;
  double initial_momentum = 0.5;
  double final_momentum = 0.8;
  int momentum_switch_iter = 250;
  double entropy_tolerance = 1e-4;
};

struct Embedding {
  Tensor coords;                // (n, 2)
  std::vector<double> kl_trace;  // KL(P || Q) before the first step and after each step
  std::vector<double> bandwidth_entropy_error;  // |H_i - ln perplexity| per point
};

/// Exact t-SNE. Requires 5 <= perplexity <= (n - 1) / 3 and n <= 5000.
Embedding tsne_embed(const Tensor& features, const Options& options);

namespace kernels {

/// Row-major n x n squared Euclidean distances of (n, d) points.
std::vector<double> squared_distances(std::span<const double> x, std::size_t n, std::size_t d);

/// Conditional affinities p_{j|i} with per-row precision found by bisection
/// so the row entropy (nats) is within `tol` of ln(perplexity). Returns the
/// achieved |H_i - target| per row.
std::vector<double> conditional_affinities(std::span<const double> dist2, std::size_t n,
                                           double perplexity, double tol,
                                           std::vector<double>& p);

/// Gradient of KL(exaggeration * P || Q) for the 2-D embedding y, written to
/// `grad`. Returns KL(P || Q) at y (without exaggeration). `p` is the
/// symmetric joint affinity.
double gradient(std::span<const double> p, double exaggeration, std::span<const double> y,
                std::size_t n, std::span<double> grad);

namespace serial {
std::vector<double> squared_distances(std::span<const double> x, std::size_t n, std::size_t d);
double gradient(std::span<const double> p, double exaggeration, std::span<const double> y,
                std::size_t n, std::span<double> grad);
}  // namespace serial

}  // namespace kernels

}  // namespace rdpb::tsne
