// SPDX-License-Identifier: Apache-2.0
#include "rdpb/channel.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "rdpb/autodiff.hpp"
#include "rdpb/errors.hpp"

namespace rdpb::channel {

void ChannelConfig::validate() const {
  if (dim < 1) throw ContractError("channel: dim must be >= 1");
  if (levels < 2) throw ContractError("channel: L must be >= 2");
  if (!(clip > 0.0)) throw ContractError("channel: clip must be > 0");
  if (!(sigma >= 0.0)) throw ContractError("channel: sigma must be >= 0");
}

double rate_bits(std::int64_t dim, std::int64_t levels) {
  if (levels < 2) {
    throw ContractError("rate_bits: L must be >= 2, got " + std::to_string(levels));
  }
  if (dim < 1) {
    throw ContractError("rate_bits: dim must be >= 1, got " + std::to_string(dim));
  }
  return static_cast<double>(dim) * std::log2(static_cast<double>(levels));
}

double cell_width(std::int64_t levels, double clip) {
  return 2.0 * clip / static_cast<double>(levels);
}

double quantize_value(double z, std::int64_t levels, double clip) {
  const double delta = cell_width(levels, clip);
  const double cell = std::floor((z + clip) / delta);
  const double index = std::clamp(cell, 0.0, static_cast<double>(levels - 1));
  return -clip + (index + 0.5) * delta;
}

Tensor quantize(const Tensor& z, std::int64_t levels, double clip) {
  if (levels < 2) throw ContractError("quantize: L must be >= 2");
  if (!(clip > 0.0)) throw ContractError("quantize: clip must be > 0");
  const Tensor clamped = clamp(z, -clip, clip);
  std::vector<double> q(z.size());
  std::vector<double> offset(z.size());
  const auto zv = z.values();
  const auto cv = clamped.values();
  for (std::size_t i = 0; i < q.size(); ++i) {
    q[i] = quantize_value(zv[i], levels, clip);
    offset[i] = q[i] - cv[i];
  }
  Tensor out = add(clamped, Tensor(z.shape(), std::move(offset)));
  // clamped + offset can differ from q by an ulp; store the exact cell
  // centers. The recorded add does not read its output in backward.
  out.node()->values = std::move(q);
  return out;
}

Tensor awgn(const Tensor& z, double sigma, Rng& rng) {
  if (!(sigma >= 0.0)) throw ContractError("awgn: sigma must be >= 0");
  if (sigma == 0.0) return z;
  std::vector<double> noise(z.size());
  rng.fill_normal(noise, sigma);
  return add(z, Tensor(z.shape(), std::move(noise)));
}

Tensor transmit(const Tensor& z, const ChannelConfig& cfg, Rng& rng) {
  cfg.validate();
  if (z.shape().empty() || z.shape().back() != static_cast<std::size_t>(cfg.dim)) {
    throw ContractError("transmit: feature shape " + shape_string(z.shape()) +
                        " does not end in dim=" + std::to_string(cfg.dim));
  }
  return awgn(quantize(z, cfg.levels, cfg.clip), cfg.sigma, rng);
}

}  // namespace rdpb::channel
