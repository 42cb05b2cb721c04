// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <optional>
#include <vector>

#include "rdpb/train.hpp"

namespace rdpb::report {

/// Rows trained without a perception constraint (P = inf) are drawn at this
/// perception value; the stored estimate is left as is.
inline constexpr double kShannonPerception = 0.15;

struct ReportOptions {
  double shannon_perception = kShannonPerception;
  /// MSE band for the perception-vs-rate panel; defaults to the
  /// interquartile range of the selected rows.
  std::optional<double> band_lo;
  std::optional<double> band_hi;
};

struct ReportResult {
  std::filesystem::path dir;
  std::size_t rows_used = 0;
  int stage = 0;
  double band_lo = 0.0;
  double band_hi = 0.0;
};

double perception_axis(const train::RunRecord& r, double shannon_value = kShannonPerception);

/// Reads <run_dir>/results.csv and writes <run_dir>/report/: one CSV per
/// panel and summary.json. Uses "ok" test-split rows of the last stage
/// present. An embedding.csv in run_dir (from the tsne command) becomes the
/// embedding panel.
ReportResult emit_report(const std::filesystem::path& run_dir, const ReportOptions& options = {});

}  // namespace rdpb::report
