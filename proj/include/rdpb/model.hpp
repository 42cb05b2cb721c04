// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "rdpb/tensor.hpp"

namespace rdpb::model {

/// Layer widths. The encoder ends in two parallel dim-wide layers (means and
/// log-variances), i.e. an output of width 2*dim.
struct Arch {
  std::size_t input = 784;
  std::size_t classes = 10;
  std::vector<std::size_t> encoder_hidden{1024, 256};
  std::vector<std::size_t> inference_hidden{256};
  std::vector<std::size_t> reconstruction_hidden{256, 1024};

  bool operator==(const Arch&) const = default;
};

struct Linear {
  Tensor weight;  // (in, out)
  Tensor bias;    // (out)
};

inline constexpr double kLogvarMin = -10.0;
inline constexpr double kLogvarMax = 10.0;

/// Encoder (phi), inference head (theta) and reconstruction head (eta).
struct ModelParams {
  Arch arch;
  std::size_t dim = 0;
  std::vector<Linear> encoder;  // hidden layers
  Linear encoder_mu;
  Linear encoder_logvar;
  std::vector<Linear> inference;       // hidden layers + output layer
  std::vector<Linear> reconstruction;  // hidden layers + output layer

  std::size_t encoder_output_width() const;

  struct Named {
    std::string name;
    Tensor tensor;
  };
  /// Every tensor with a stable name, in a fixed order.
  std::vector<Named> named_tensors() const;
  std::vector<Tensor> encoder_tensors() const;
  std::vector<Tensor> inference_tensors() const;
  std::vector<Tensor> reconstruction_tensors() const;
  std::vector<Tensor> all_tensors() const;

  std::size_t parameter_count() const;
  ModelParams clone() const;
};

/// Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)) from a mt19937_64 seeded with
/// `seed`, biases zero. All tensors require grad.
ModelParams init_params(std::uint64_t seed, const Arch& arch, std::size_t dim);

struct Encoded {
  Tensor mu;      // (M, dim)
  Tensor logvar;  // (M, dim), clamped to [kLogvarMin, kLogvarMax]
};

Encoded encode(const Tensor& x, const ModelParams& params);

/// z = mu + exp(logvar / 2) * u.
Tensor reparameterize(const Tensor& mu, const Tensor& logvar, const Tensor& u);

/// Class log-probabilities (M, classes) computed from the received feature
/// only.
Tensor infer(const Tensor& zhat, const ModelParams& params);

/// Reconstructed image in (0, 1), computed from the received feature only.
/// Logits are clamped to [-30, 30] before the sigmoid.
Tensor reconstruct(const Tensor& zhat, const ModelParams& params);

/// Binary checkpoint: "RDPB", u32 version, u64 tensor count, then per tensor
/// u32 name length, UTF-8 name, u32 rank, u64 extents, f64 values; all
/// little-endian.
inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const ModelParams& params, const std::filesystem::path& path);
ModelParams load_checkpoint(const std::filesystem::path& path);

std::vector<std::uint8_t> encode_checkpoint(const ModelParams& params);
ModelParams decode_checkpoint(std::span<const std::uint8_t> bytes);

}  // namespace rdpb::model
