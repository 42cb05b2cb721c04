// SPDX-License-Identifier: Apache-2.0
#include "rdpb/report.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <json.hpp>
#include <map>
#include <tuple>

#include "rdpb/csv.hpp"
#include "rdpb/errors.hpp"

namespace rdpb::report {

namespace fs = std::filesystem;
using csv::format_number;
using nlohmann::json;
using train::RunRecord;

double perception_axis(const RunRecord& r, double shannon_value) {
  return std::isinf(r.P) ? shannon_value : r.perception_est;
}

namespace {

// Seeds are averaged over within a group.
using GroupKey = std::tuple<double, std::int64_t, std::int64_t, double, double, double, double, double>;

GroupKey group_of(const RunRecord& r) {
  return {r.rate_bits, r.dim, r.L, r.sigma, r.beta, r.lambda, r.mu, r.P};
}

struct Group {
  std::size_t n = 0;
  double mse = 0.0;
  double perception = 0.0;
  double axis = 0.0;
  double error = 0.0;
};

double quantile(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

void write(const fs::path& path, const std::vector<csv::Row>& rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw PathError("cannot write " + path.string());
  for (const auto& r : rows) out << csv::format_row(r);
}

json row_json(const RunRecord& r) {
  return {{"rate_bits", r.rate_bits}, {"dim", r.dim},        {"L", r.L},
          {"sigma", r.sigma},         {"beta", r.beta},      {"lambda", r.lambda},
          {"mu", r.mu},               {"P", threshold_json(r.P)}, {"seed", r.seed},
          {"accuracy", r.accuracy},   {"mse", r.mse},        {"perception_est", r.perception_est}};
}

}  // namespace

ReportResult emit_report(const fs::path& run_dir, const ReportOptions& options) {
  const fs::path source = run_dir / "results.csv";
  if (!fs::exists(source)) throw PathError("no results.csv in " + run_dir.string());
  const std::vector<RunRecord> all = train::read_results(source);

  ReportResult res;
  res.dir = run_dir / "report";
  fs::create_directories(res.dir);

  std::vector<RunRecord> rows;
  for (const auto& r : all)
    if (r.status == "ok" && r.split == "test") res.stage = std::max(res.stage, r.stage);
  for (const auto& r : all)
    if (r.status == "ok" && r.split == "test" && r.stage == res.stage) rows.push_back(r);
  res.rows_used = rows.size();

  std::map<GroupKey, Group> groups;
  for (const auto& r : rows) {
    Group& g = groups[group_of(r)];
    ++g.n;
    g.mse += r.mse;
    g.perception += r.perception_est;
    g.axis += perception_axis(r, options.shannon_perception);
    g.error += r.error_rate;
  }
  for (auto& [k, g] : groups) {
    const double n = static_cast<double>(g.n);
    g.mse /= n;
    g.perception /= n;
    g.axis /= n;
    g.error /= n;
  }

  const csv::Row key_cols{"rate_bits", "dim", "L", "sigma", "beta", "lambda", "mu", "P", "n"};
  auto key_row = [](const GroupKey& k, const Group& g) {
    const auto& [rate, dim, L, sigma, beta, lambda, mu, P] = k;
    return csv::Row{format_number(rate), std::to_string(dim), std::to_string(L),
                    format_number(sigma), format_number(beta), format_number(lambda),
                    format_number(mu), format_number(P), std::to_string(g.n)};
  };

  // Distortion against perception, one curve per rate.
  {
    csv::Row header = key_cols;
    for (const char* c : {"mse", "perception_est", "perception_axis"}) header.push_back(c);
    std::vector<csv::Row> out{header};
    for (const auto& [k, g] : groups) {
      auto row = key_row(k, g);
      for (double v : {g.mse, g.perception, g.axis}) row.push_back(format_number(v));
      out.push_back(row);
    }
    write(res.dir / "panel_distortion_perception.csv", out);
  }

  // Perception against rate inside a distortion band.
  {
    std::vector<double> mses;
    for (const auto& [k, g] : groups) mses.push_back(g.mse);
    res.band_lo = options.band_lo.value_or(mses.empty() ? 0.0 : quantile(mses, 0.25));
    res.band_hi = options.band_hi.value_or(mses.empty() ? 0.0 : quantile(mses, 0.75));
    std::map<double, Group> by_rate;
    for (const auto& [k, g] : groups) {
      if (g.mse < res.band_lo || g.mse > res.band_hi) continue;
      Group& b = by_rate[std::get<0>(k)];
      b.n += 1;
      b.axis += g.axis;
      b.mse += g.mse;
    }
    std::vector<csv::Row> out{{"rate_bits", "n", "perception_axis", "mse", "band_lo", "band_hi"}};
    for (const auto& [rate, b] : by_rate) {
      const double n = static_cast<double>(b.n);
      out.push_back({format_number(rate), std::to_string(b.n), format_number(b.axis / n),
                     format_number(b.mse / n), format_number(res.band_lo),
                     format_number(res.band_hi)});
    }
    write(res.dir / "panel_perception_rate.csv", out);
  }

  // Task error against reconstruction error.
  {
    csv::Row header = key_cols;
    header.push_back("mse");
    header.push_back("error_rate");
    std::vector<csv::Row> out{header};
    for (const auto& [k, g] : groups) {
      auto row = key_row(k, g);
      row.push_back(format_number(g.mse));
      row.push_back(format_number(g.error));
      out.push_back(row);
    }
    write(res.dir / "panel_error_mse.csv", out);
  }

  // Feature embedding scatter.
  {
    std::vector<csv::Row> out{{"x", "y", "label"}};
    const fs::path emb = run_dir / "embedding.csv";
    if (fs::exists(emb)) {
      const auto src = csv::read_file(emb);
      if (src.empty() || src.front() != out.front()) {
        throw SchemaError(emb.string() + ": row 1: expected header x,y,label");
      }
      for (std::size_t i = 1; i < src.size(); ++i) {
        if (src[i].size() != 3) {
          throw SchemaError(emb.string() + ": row " + std::to_string(i + 1) + ": expected 3 fields");
        }
        out.push_back(src[i]);
      }
    }
    write(res.dir / "panel_embedding.csv", out);
  }

  json summary;
  summary["schema_version"] = train::kResultsSchemaVersion;
  summary["rows_used"] = rows.size();
  summary["stage"] = res.stage;
  summary["shannon_perception"] = options.shannon_perception;
  summary["distortion_band"] = {res.band_lo, res.band_hi};
  auto best = [&](auto better) -> json {
    if (rows.empty()) return nullptr;
    return row_json(*std::min_element(rows.begin(), rows.end(), better));
  };
  summary["best_accuracy"] =
      best([](const RunRecord& a, const RunRecord& b) { return a.accuracy > b.accuracy; });
  summary["lowest_mse"] = best([](const RunRecord& a, const RunRecord& b) { return a.mse < b.mse; });
  summary["lowest_perception"] = best(
      [](const RunRecord& a, const RunRecord& b) { return a.perception_est < b.perception_est; });
  std::ofstream(res.dir / "summary.json") << summary.dump(2) << '\n';
  return res;
}

}  // namespace rdpb::report
