// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "rdpb/config.hpp"
#include "rdpb/csv.hpp"
#include "rdpb/dataset.hpp"
#include "rdpb/model.hpp"
#include "rdpb/objective.hpp"

namespace rdpb::train {

/// Adam with bias correction. Step counts are kept per tensor, so a tensor
/// that received no gradient in a step is left untouched.
class Adam {
 public:
  Adam(std::vector<Tensor> params, const OptimizerSettings& settings);
  void step();
  void zero_grad();
  const std::vector<Tensor>& params() const { return params_; }

 private:
  struct Slot {
    std::vector<double> m;
    std::vector<double> v;
    std::int64_t t = 0;
  };
  std::vector<Tensor> params_;
  std::vector<Slot> slots_;
  OptimizerSettings settings_;
};

inline constexpr int kResultsSchemaVersion = 1;

struct RunRecord {
  double rate_bits = 0.0;
  std::int64_t dim = 0;
  std::int64_t L = 0;
  double sigma = 0.0;
  double beta = 0.0;
  double lambda = 0.0;
  double mu = 0.0;
  double P = 0.0;
  std::uint64_t seed = 0;
  int stage = 1;
  int epoch = 0;
  std::string split;
  double accuracy = 0.0;
  double error_rate = 1.0;
  double mse = 0.0;
  double perception_est = 0.0;
  double ce = 0.0;
  double rate_kl = 0.0;
  double total_loss = 0.0;
  double wall_seconds = 0.0;
  std::string status = "ok";
};

/// Fixed column order of results.csv.
const csv::Row& results_header();
csv::Row to_row(const RunRecord& r);
RunRecord from_row(const csv::Row& row);  // SchemaError on a malformed row

/// Record skeleton carrying the configuration columns.
RunRecord record_for(const RunConfig& cfg, int stage);

struct EvalMetrics {
  double accuracy = 0.0;
  double mse = 0.0;
  double perception = 0.0;
  double ce = 0.0;
  double rate_kl = 0.0;
  double total = 0.0;
};

/// Deterministic evaluation: features are the encoder means sent through
/// the channel with a fixed noise stream derived from the channel seed.
/// Perception is the moment KL between whole-split pixel statistics.
EvalMetrics evaluate(const model::ModelParams& params, const dataset::LabeledImageSet& set,
                     const RunConfig& cfg, int stage);

/// Received features (encoder mean + channel) for a block of images.
Tensor received_features(const model::ModelParams& params, const Tensor& images,
                         const RunConfig& cfg);

struct StageResult {
  std::filesystem::path run_dir;
  std::filesystem::path checkpoint;
  std::vector<RunRecord> records;  // per-epoch validation rows, then one test row
  model::ModelParams params;
  int best_epoch = 0;
};

struct TrainHooks {
  std::ostream* log = nullptr;
};

/// Creates <output_dir>/<UTC timestamp>-<config hash>-s<stage>, suffixed when
/// the name is taken, and writes config.json into it.
std::filesystem::path make_run_dir(const RunConfig& cfg, int stage);

/// Applies train_limit / eval_limit.
dataset::MnistSplits prepare_splits(const RunConfig& cfg);

/// ce + beta * rate_kl on the encoder and inference head. Keeps the
/// checkpoint with the best validation accuracy (epoch 0 is the untrained
/// model) and reports it on the test split.
StageResult train_stage1(const RunConfig& cfg, const dataset::MnistSplits& data,
                         const std::filesystem::path& run_dir, const TrainHooks& hooks = {});

/// Full objective on all parameters, starting from `init`. The reported
/// model is the final one. Gate transitions go to gate_log.csv.
StageResult train_stage2(const RunConfig& cfg, const dataset::MnistSplits& data,
                         const model::ModelParams& init, const std::filesystem::path& run_dir,
                         const TrainHooks& hooks = {});

void write_results(const std::filesystem::path& path, const std::vector<RunRecord>& records);
std::vector<RunRecord> read_results(const std::filesystem::path& path);

}  // namespace rdpb::train
