// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <json.hpp>
#include <vector>

#include "rdpb/config.hpp"
#include "rdpb/dataset.hpp"
#include "rdpb/train.hpp"

namespace rdpb::sweep {

/// Axis values; an axis left empty in the file takes the base value.
struct Grid {
  std::vector<std::int64_t> dim;
  std::vector<std::int64_t> L;
  std::vector<double> sigma;
  std::vector<double> beta;
  std::vector<double> lambda;
  std::vector<double> mu;
  std::vector<double> P;
  std::vector<std::uint64_t> seeds;  // base seeds, expanded with Seeds::from_base
};

struct SweepConfig {
  RunConfig base;
  Grid grid;
  int stages = 2;  // 1: stage 1 only
  int jobs = 1;    // cells trained concurrently
};

SweepConfig sweep_config_from_json(const nlohmann::json& j);
SweepConfig load_sweep_config(const std::filesystem::path& path);

/// Cartesian product in axis order dim, L, sigma, beta, seed, lambda, mu, P
/// (last axis fastest).
std::vector<RunConfig> expand(const SweepConfig& sc);

struct SweepSummary {
  std::filesystem::path dir;
  std::filesystem::path results;
  std::size_t cells = 0;
  std::size_t failed = 0;
};

/// Trains every cell and writes <dir>/results.csv. Cells that differ only in
/// lambda, mu or P share one stage-1 run. A failing cell is recorded with a
/// non-"ok" status and the sweep continues. Rows appear in cell order
/// regardless of `jobs`.
SweepSummary run_sweep(const SweepConfig& sc, const dataset::MnistSplits& data,
                       const std::filesystem::path& dir, const train::TrainHooks& hooks = {});

}  // namespace rdpb::sweep
