// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>

#include "rdpb/rng.hpp"
#include "rdpb/tensor.hpp"

namespace rdpb::channel {

struct ChannelConfig {
  std::int64_t dim = 8;
  std::int64_t levels = 4;  // L
  double clip = 2.5;
  double sigma = 0.1;

  /// Throws ContractError unless dim >= 1, L >= 2, clip > 0, sigma >= 0.
  void validate() const;
};

/// Bits per transmitted feature vector: dim * log2(L).
double rate_bits(std::int64_t dim, std::int64_t levels);

/// Cell width 2*clip/L of the mid-rise quantizer.
double cell_width(std::int64_t levels, double clip);

/// Mid-rise uniform quantizer on [-clip, clip]: maps z to the center of its
/// cell. Values on a cell edge go to the upper cell.
double quantize_value(double z, std::int64_t levels, double clip);

/// Elementwise `quantize_value`. Backward is straight-through: gradients flow
/// as for clamp(z, -clip, clip).
Tensor quantize(const Tensor& z, std::int64_t levels, double clip);

/// z + eps with eps ~ N(0, sigma^2) i.i.d.; sigma == 0 returns z unchanged.
Tensor awgn(const Tensor& z, double sigma, Rng& rng);

/// quantize, then AWGN. The last axis of z must equal cfg.dim.
Tensor transmit(const Tensor& z, const ChannelConfig& cfg, Rng& rng);

}  // namespace rdpb::channel
