// SPDX-License-Identifier: Apache-2.0
#include "rdpb/objective.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "rdpb/autodiff.hpp"

namespace rdpb::objective {

void RDPBWeights::validate() const {
  if (!(beta >= 0.0) || !std::isfinite(beta)) throw ContractError("weights: beta must be finite and >= 0");
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw ContractError("weights: lambda must be finite and >= 0");
  if (!(mu >= 0.0) || !std::isfinite(mu)) throw ContractError("weights: mu must be finite and >= 0");
  if (!(P >= 0.0)) throw ContractError("weights: P must be >= 0 or inf");
}

std::string LossBreakdown::to_string() const {
  std::ostringstream os;
  os.precision(10);
  os << "ce=" << ce << " rate_kl=" << rate_kl << " mse=" << mse
     << " perception=" << perception << " gated=" << (perception_gated ? 1 : 0)
     << " total=" << total;
  return os.str();
}

Tensor cross_entropy(const Tensor& log_probs, std::span<const int> labels) {
  if (log_probs.rank() != 2 || log_probs.rows() != labels.size()) {
    throw ContractError("cross_entropy: log_probs " + shape_string(log_probs.shape()) +
                        " vs " + std::to_string(labels.size()) + " labels");
  }
  const std::size_t m = labels.size();
  const std::size_t c = log_probs.cols();
  std::vector<double> pick(m * c, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= c) {
      throw ContractError("cross_entropy: label " + std::to_string(labels[i]) +
                          " out of range [0, " + std::to_string(c) + ")");
    }
    pick[i * c + static_cast<std::size_t>(labels[i])] = -1.0 / static_cast<double>(m);
  }
  return sum(mul(log_probs, Tensor(log_probs.shape(), std::move(pick))));
}

Tensor rate_kl(const Tensor& mu, const Tensor& logvar, double sigma_ch) {
  if (mu.shape() != logvar.shape() || mu.rank() != 2) {
    throw ContractError("rate_kl: mu " + shape_string(mu.shape()) + " and logvar " +
                        shape_string(logvar.shape()) + " must be equal (M, dim)");
  }
  const double s2 = sigma_ch * sigma_ch;
  const double prior_var = 1.0 + s2;
  const double m = static_cast<double>(mu.rows());
  const double dim = static_cast<double>(mu.cols());
  const Tensor v = add(exp(logvar), Tensor::full(logvar.shape(), s2));
  const Tensor per_elem = sub(scale(add(square(mu), v), 1.0 / prior_var), log(v));
  const Tensor total = scale(sum(per_elem), 0.5 / m);
  return add(total, Tensor::scalar(0.5 * dim * (std::log(prior_var) - 1.0)));
}

Tensor mse(const Tensor& x, const Tensor& xhat) {
  if (x.shape() != xhat.shape()) {
    throw ContractError("mse: shapes " + shape_string(x.shape()) + " and " +
                        shape_string(xhat.shape()) + " differ");
  }
  return mean(square(sub(xhat, x)));
}

double perception_hist_kl(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size() || p.empty()) {
    throw ContractError("perception_hist_kl: lengths " + std::to_string(p.size()) +
                        " and " + std::to_string(q.size()) + " differ");
  }
  auto check = [](std::span<const double> v, const char* name) {
    double s = 0.0;
    for (double x : v) {
      if (!(x >= 0.0)) throw ContractError(std::string("perception_hist_kl: negative entry in ") + name);
      s += x;
    }
    if (std::abs(s - 1.0) > 1e-9) {
      throw ContractError(std::string("perception_hist_kl: ") + name + " sums to " +
                          std::to_string(s));
    }
  };
  check(p, "p");
  check(q, "q");
  constexpr double kSmooth = 1e-8;
  const double norm = 1.0 + kSmooth * static_cast<double>(q.size());
  double kl = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] > 0.0) kl += p[i] * std::log(p[i] * norm / (q[i] + kSmooth));
  }
  return std::max(0.0, kl);
}

ColumnMoments column_moments(const Tensor& batch) {
  MomentAccumulator acc(batch.cols());
  acc.add(batch);
  return acc.finish();
}

void MomentAccumulator::add(const Tensor& rows) {
  const std::size_t cols = sum_.size();
  if (rows.rank() != 2 || rows.cols() != cols) {
    throw ContractError("moments: expected (n, " + std::to_string(cols) + ") rows");
  }
  const auto v = rows.values();
  for (std::size_t r = 0; r < rows.rows(); ++r) {
    for (std::size_t j = 0; j < cols; ++j) {
      const double x = v[r * cols + j];
      sum_[j] += x;
      sumsq_[j] += x * x;
    }
  }
  n_ += rows.rows();
}

ColumnMoments MomentAccumulator::finish() const {
  ColumnMoments out;
  const double n = static_cast<double>(n_);
  out.mean.resize(sum_.size());
  out.var.resize(sum_.size());
  for (std::size_t j = 0; j < sum_.size(); ++j) {
    out.mean[j] = sum_[j] / n;
    out.var[j] = std::max(kVarianceFloor, sumsq_[j] / n - out.mean[j] * out.mean[j]);
  }
  return out;
}

double moment_kl(const ColumnMoments& x, const ColumnMoments& xhat) {
  if (x.mean.size() != xhat.mean.size() || x.mean.empty()) {
    throw ContractError("moment_kl: column counts differ");
  }
  double kl = 0.0;
  for (std::size_t j = 0; j < x.mean.size(); ++j) {
    const double d = x.mean[j] - xhat.mean[j];
    kl += 0.5 * (std::log(xhat.var[j] / x.var[j]) + (x.var[j] + d * d) / xhat.var[j] - 1.0);
  }
  return std::max(0.0, kl / static_cast<double>(x.mean.size()));
}

Tensor perception_moment_kl(const Tensor& x_batch, const Tensor& xhat_batch) {
  if (x_batch.shape() != xhat_batch.shape() || x_batch.rank() != 2) {
    throw ContractError("perception_moment_kl: shapes " + shape_string(x_batch.shape()) +
                        " and " + shape_string(xhat_batch.shape()) + " differ");
  }
  if (x_batch.rows() < 2) {
    throw ContractError("perception_moment_kl: needs at least 2 rows, got " +
                        std::to_string(x_batch.rows()));
  }
  const std::size_t cols = x_batch.cols();
  // The data side is a constant: plain two-pass moments.
  const std::size_t rows = x_batch.rows();
  const auto xv = x_batch.values();
  std::vector<double> mx(cols, 0.0);
  std::vector<double> vx(cols, 0.0);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < cols; ++j) mx[j] += xv[r * cols + j];
  for (double& m : mx) m /= static_cast<double>(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < cols; ++j) {
      const double d = xv[r * cols + j] - mx[j];
      vx[j] += d * d;
    }
  }
  std::vector<double> log_vx(cols);
  for (std::size_t j = 0; j < cols; ++j) {
    vx[j] = std::max(kVarianceFloor, vx[j] / static_cast<double>(rows));
    log_vx[j] = std::log(vx[j]);
  }

  const Tensor mh = mean(xhat_batch, 0);  // (1, cols)
  const Tensor centered = add_bias(xhat_batch, scale(mh, -1.0));
  const Tensor vh = clamp(mean(square(centered), 0), kVarianceFloor, kInfinity);
  const Tensor log_vh = log(vh);
  const Tensor inv_vh = exp(scale(log_vh, -1.0));
  const Tensor diff = sub(Tensor({1, cols}, mx), mh);
  const Tensor numer = add(Tensor({1, cols}, vx), square(diff));
  const Tensor per_pixel = add(sub(log_vh, Tensor({1, cols}, log_vx)), mul(numer, inv_vh));
  const double d = static_cast<double>(cols);
  return add(scale(sum(per_pixel), 0.5 / d), Tensor::scalar(-0.5));
}

GateResult gated_perception(double perception, double mu, double P) {
  if (perception <= P) return {0.0, true};
  return {mu * perception, false};
}

LossResult rdpvb_loss(const Tensor& x, std::span<const int> y,
                      const model::ModelParams& params,
                      const channel::ChannelConfig& channel_cfg,
                      const RDPBWeights& weights, LossRngs rngs,
                      const LossOptions& options) {
  if (options.stage != 1 && options.stage != 2) {
    throw ContractError("rdpvb_loss: stage must be 1 or 2");
  }
  if (options.stage == 2 && params.reconstruction.empty()) {
    throw ContractError("rdpvb_loss: stage 2 needs reconstruction weights");
  }
  if (options.mc_samples < 1) throw ContractError("rdpvb_loss: mc_samples must be >= 1");
  const bool stage2 = options.stage == 2;
  const double inv_l = 1.0 / options.mc_samples;

  const model::Encoded enc = model::encode(x, params);
  Tensor ce;
  Tensor distortion;
  Tensor perception;
  Tensor first_log_probs;
  for (int s = 0; s < options.mc_samples; ++s) {
    std::vector<double> u(enc.mu.size());
    rngs.reparam.fill_normal(u);
    const Tensor z = model::reparameterize(enc.mu, enc.logvar, Tensor(enc.mu.shape(), std::move(u)));
    const Tensor zhat = channel::transmit(z, channel_cfg, rngs.channel);
    const Tensor log_probs = model::infer(zhat, params);
    if (s == 0) first_log_probs = log_probs;
    const Tensor ce_s = cross_entropy(log_probs, y);
    ce = s == 0 ? ce_s : add(ce, ce_s);
    if (stage2) {
      const Tensor xhat = model::reconstruct(zhat, params);
      const Tensor mse_s = mse(x, xhat);
      const Tensor perc_s = perception_moment_kl(x, xhat);
      distortion = s == 0 ? mse_s : add(distortion, mse_s);
      perception = s == 0 ? perc_s : add(perception, perc_s);
    }
  }
  if (options.mc_samples > 1) {
    ce = scale(ce, inv_l);
    if (stage2) {
      distortion = scale(distortion, inv_l);
      perception = scale(perception, inv_l);
    }
  }
  const Tensor rate = rate_kl(enc.mu, enc.logvar, channel_cfg.sigma);

  LossBreakdown b;
  b.ce = ce.item();
  b.rate_kl = rate.item() < 0.0 ? 0.0 : rate.item();  // rounding can dip below zero; NaN passes
  Tensor total = ce;
  if (weights.beta > 0.0) total = add(total, scale(rate, weights.beta));
  if (stage2) {
    b.mse = distortion.item();
    b.perception = perception.item();
    const double estimate = options.gate_estimate ? *options.gate_estimate : b.perception;
    const GateResult gate = gated_perception(estimate, weights.mu, weights.P);
    b.perception_gated = gate.gated;
    if (weights.lambda > 0.0) total = add(total, scale(distortion, weights.lambda));
    if (!gate.gated && weights.mu > 0.0) total = add(total, scale(perception, weights.mu));
  }
  b.total = total.item();
  if (!std::isfinite(b.total) || !std::isfinite(b.ce) || !std::isfinite(b.rate_kl) ||
      !std::isfinite(b.mse) || !std::isfinite(b.perception)) {
    throw NumericError("rdpvb_loss: non-finite loss", b);
  }
  return {b, total, first_log_probs};
}

}  // namespace rdpb::objective
