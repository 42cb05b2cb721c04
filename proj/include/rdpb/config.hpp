// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <json.hpp>
#include <string>

#include "rdpb/channel.hpp"
#include "rdpb/model.hpp"
#include "rdpb/objective.hpp"

namespace rdpb {

inline constexpr const char* kDataDirEnv = "RDPB_DATA_DIR";

struct OptimizerSettings {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Four independent streams so an ablation can vary one source of randomness.
struct Seeds {
  std::uint64_t params = 1;
  std::uint64_t batching = 2;
  std::uint64_t channel = 3;
  std::uint64_t reparam = 4;

  /// {s, s + 1000, s + 2000, s + 3000}.
  static Seeds from_base(std::uint64_t s);
};

enum class GateMode { kBatch, kRunningAverage };

struct RunConfig {
  std::string data_dir;  // empty: $RDPB_DATA_DIR, then "data/mnist"
  std::size_t train_count = 50000;
  std::size_t train_limit = 0;  // train on the first N examples; 0 = all
  std::size_t eval_limit = 0;   // evaluate on the first N of a split; 0 = all
  channel::ChannelConfig channel;
  objective::RDPBWeights weights;
  model::Arch arch;
  OptimizerSettings optimizer;
  std::size_t batch_size = 128;
  int epochs_stage1 = 10;
  int epochs_stage2 = 10;
  Seeds seeds;
  std::string precision = "f64";
  int threads = 1;
  int mc_samples = 1;
  GateMode gate = GateMode::kBatch;
  double gate_decay = 0.9;
  std::string output_dir = "runs";
  std::string stage1_checkpoint;  // input to stage 2

  void validate() const;
  std::filesystem::path resolved_data_dir() const;
};

/// P is written as a number, "inf", or "best" (gate disabled: P = 0).
double parse_threshold(const nlohmann::json& v);
nlohmann::json threshold_json(double P);

nlohmann::json to_json(const RunConfig& cfg);
/// Missing keys keep their defaults; unknown keys are rejected.
RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);

/// Stable short digest of the canonical JSON form.
std::string config_hash(const RunConfig& cfg);

}  // namespace rdpb
