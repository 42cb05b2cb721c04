// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "rdpb/channel.hpp"
#include "rdpb/errors.hpp"
#include "rdpb/model.hpp"
#include "rdpb/rng.hpp"
#include "rdpb/tensor.hpp"

namespace rdpb::objective {

inline constexpr double kInfinity = std::numeric_limits<double>::infinity();

/// Tradeoff multipliers and the perception threshold P (+inf disables the
/// perception term).
struct RDPBWeights {
  double beta = 1e-3;
  double lambda = 1.0;
  double mu = 1.0;
  double P = kInfinity;

  void validate() const;
};

struct LossBreakdown {
  double ce = 0.0;
  double rate_kl = 0.0;
  double mse = 0.0;
  double perception = 0.0;
  bool perception_gated = true;
  double total = 0.0;

  std::string to_string() const;
};

/// Non-finite loss; carries the offending breakdown.
class NumericError : public Error {
 public:
  NumericError(const std::string& what, LossBreakdown breakdown)
      : Error(what + ": " + breakdown.to_string()), breakdown_(breakdown) {}
  const LossBreakdown& breakdown() const { return breakdown_; }

 private:
  LossBreakdown breakdown_;
};

/// Mean negative log-probability of the true labels (nats).
Tensor cross_entropy(const Tensor& log_probs, std::span<const int> labels);

/// Batch mean of KL(N(mu, e^logvar + s^2) || N(0, 1 + s^2)) summed over the
/// feature axis, with s = sigma_ch.
Tensor rate_kl(const Tensor& mu, const Tensor& logvar, double sigma_ch);

/// Mean squared difference over all entries.
Tensor mse(const Tensor& x, const Tensor& xhat);

/// sum_i p_i ln(p_i / q_i) after smoothing q by +1e-8 and renormalizing.
double perception_hist_kl(std::span<const double> p, std::span<const double> q);

inline constexpr double kVarianceFloor = 1e-6;

/// Per-column mean and population variance (floored at kVarianceFloor).
struct ColumnMoments {
  std::vector<double> mean;
  std::vector<double> var;
};

ColumnMoments column_moments(const Tensor& batch);

/// Streaming accumulator for ColumnMoments over many row blocks.
class MomentAccumulator {
 public:
  explicit MomentAccumulator(std::size_t cols) : sum_(cols), sumsq_(cols) {}
  void add(const Tensor& rows);
  ColumnMoments finish() const;
  std::size_t count() const { return n_; }

 private:
  std::vector<double> sum_;
  std::vector<double> sumsq_;
  std::size_t n_ = 0;
};

/// KL(N(mx, vx) || N(mh, vh)) summed over columns, divided by the column
/// count.
double moment_kl(const ColumnMoments& x, const ColumnMoments& xhat);

/// Differentiable (in xhat) KL between diagonal Gaussians moment-matched to
/// the two batches, in nats per pixel.
Tensor perception_moment_kl(const Tensor& x_batch, const Tensor& xhat_batch);

struct GateResult {
  double contribution;
  bool gated;
};

/// perception <= P drops the term; otherwise it contributes mu * perception.
GateResult gated_perception(double perception, double mu, double P);

struct LossRngs {
  Rng& reparam;
  Rng& channel;
};

struct LossOptions {
  int stage = 1;
  int mc_samples = 1;
  /// When set, overrides the batch estimate in the gate decision (used for
  /// running-average gating).
  const double* gate_estimate = nullptr;
};

struct LossResult {
  LossBreakdown breakdown;
  Tensor total;      // differentiable scalar
  Tensor log_probs;  // of the first Monte Carlo sample
};

/// Minibatch RDPVB estimate: encode -> reparameterize -> transmit -> heads.
/// Stage 1 skips the reconstruction head (lambda and mu terms are 0).
LossResult rdpvb_loss(const Tensor& x, std::span<const int> y,
                      const model::ModelParams& params,
                      const channel::ChannelConfig& channel_cfg,
                      const RDPBWeights& weights, LossRngs rngs,
                      const LossOptions& options);

}  // namespace rdpb::objective
