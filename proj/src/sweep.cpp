// SPDX-License-Identifier: Apache-2.0
#include "rdpb/sweep.hpp"

#include <atomic>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <mutex>
#include <thread>

#include "rdpb/errors.hpp"

namespace rdpb::sweep {

namespace fs = std::filesystem;
using nlohmann::json;

SweepConfig sweep_config_from_json(const json& j) {
  if (!j.is_object()) throw ContractError("sweep config: top level must be an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    const auto& k = it.key();
    if (k != "base" && k != "grid" && k != "stages" && k != "jobs") {
      throw ContractError("sweep config: unknown key '" + k + "'");
    }
  }
  SweepConfig sc;
  sc.base = run_config_from_json(j.value("base", json::object()));
  try {
    if (j.contains("stages")) sc.stages = j["stages"].get<int>();
    if (j.contains("jobs")) sc.jobs = j["jobs"].get<int>();
    const json g = j.value("grid", json::object());
    for (auto it = g.begin(); it != g.end(); ++it) {
      const auto& k = it.key();
      const json& v = it.value();
      if (!v.is_array() || v.empty()) {
        throw ContractError("sweep config: grid." + k + " must be a non-empty list");
      }
      if (k == "dim") {
        sc.grid.dim = v.get<std::vector<std::int64_t>>();
      } else if (k == "L") {
        sc.grid.L = v.get<std::vector<std::int64_t>>();
      } else if (k == "sigma") {
        sc.grid.sigma = v.get<std::vector<double>>();
      } else if (k == "beta") {
        sc.grid.beta = v.get<std::vector<double>>();
      } else if (k == "lambda") {
        sc.grid.lambda = v.get<std::vector<double>>();
      } else if (k == "mu") {
        sc.grid.mu = v.get<std::vector<double>>();
      } else if (k == "P") {
        for (const json& p : v) sc.grid.P.push_back(parse_threshold(p));
      } else if (k == "seeds") {
        sc.grid.seeds = v.get<std::vector<std::uint64_t>>();
      } else {
        throw ContractError("sweep config: unknown grid axis '" + k + "'");
      }
    }
  } catch (const json::exception& e) {
    throw ContractError(std::string("sweep config: ") + e.what());
  }
  if (sc.stages != 1 && sc.stages != 2) throw ContractError("sweep config: stages must be 1 or 2");
  if (sc.jobs < 1) throw ContractError("sweep config: jobs must be >= 1");
  return sc;
}

SweepConfig load_sweep_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw PathError("cannot open sweep config " + path.string());
  try {
    return sweep_config_from_json(json::parse(in));
  } catch (const json::parse_error& e) {
    throw FormatError("sweep config " + path.string() + ": " + e.what());
  }
}

namespace {

template <typename T>
std::vector<T> axis(const std::vector<T>& values, T fallback) {
  return values.empty() ? std::vector<T>{fallback} : values;
}

// Cells sharing this key share a stage-1 run.
struct Stage1Key {
  std::int64_t dim, L;
  double sigma, beta;
  std::uint64_t seed;
  auto operator<=>(const Stage1Key&) const = default;
};

Stage1Key key_of(const RunConfig& c) {
  return {c.channel.dim, c.channel.levels, c.channel.sigma, c.weights.beta, c.seeds.params};
}

train::RunRecord failed_record(const RunConfig& cfg, int stage, const std::string& what) {
  train::RunRecord r = train::record_for(cfg, stage);
  const double nan = std::numeric_limits<double>::quiet_NaN();
  r.split = "none";
  r.accuracy = r.error_rate = r.mse = r.perception_est = r.ce = r.rate_kl = r.total_loss = nan;
  r.status = "failed: " + what;
  return r;
}

std::vector<train::RunRecord> relabel(std::vector<train::RunRecord> rows, const RunConfig& cfg) {
  for (auto& r : rows) {
    r.lambda = cfg.weights.lambda;
    r.mu = cfg.weights.mu;
    r.P = cfg.weights.P;
  }
  return rows;
}

}  // namespace

std::vector<RunConfig> expand(const SweepConfig& sc) {
  const RunConfig& b = sc.base;
  std::vector<RunConfig> cells;
  for (auto dim : axis(sc.grid.dim, b.channel.dim))
    for (auto L : axis(sc.grid.L, b.channel.levels))
      for (double sigma : axis(sc.grid.sigma, b.channel.sigma))
        for (double beta : axis(sc.grid.beta, b.weights.beta))
          for (std::uint64_t seed : axis(sc.grid.seeds, b.seeds.params))
            for (double lambda : axis(sc.grid.lambda, b.weights.lambda))
              for (double mu : axis(sc.grid.mu, b.weights.mu))
                for (double P : axis(sc.grid.P, b.weights.P)) {
                  RunConfig c = b;
                  c.channel.dim = dim;
                  c.channel.levels = L;
                  c.channel.sigma = sigma;
                  c.weights = {beta, lambda, mu, P};
                  if (!sc.grid.seeds.empty()) c.seeds = Seeds::from_base(seed);
                  c.validate();
                  cells.push_back(c);
                }
  return cells;
}

SweepSummary run_sweep(const SweepConfig& sc, const dataset::MnistSplits& data, const fs::path& dir,
                       const train::TrainHooks& hooks) {
  const std::vector<RunConfig> cells = expand(sc);
  if (cells.empty()) throw ContractError("sweep: grid is empty");
  fs::create_directories(dir);
  {
    json snapshot;
    snapshot["base"] = to_json(sc.base);
    snapshot["stages"] = sc.stages;
    snapshot["jobs"] = sc.jobs;
    std::ofstream(dir / "sweep.json") << snapshot.dump(2) << '\n';
  }

  // Group consecutive cells by stage-1 key; expand() puts the stage-2 axes
  // innermost, so groups are contiguous.
  std::vector<std::pair<std::size_t, std::size_t>> groups;  // [begin, end)
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (groups.empty() || key_of(cells[groups.back().first]) != key_of(cells[i])) {
      groups.push_back({i, i + 1});
    } else {
      groups.back().second = i + 1;
    }
  }

  SweepSummary summary;
  summary.dir = dir;
  summary.results = dir / "results.csv";
  summary.cells = cells.size();
  std::ofstream out(summary.results, std::ios::binary);
  if (!out) throw PathError("cannot write " + summary.results.string());
  out << csv::format_row(train::results_header());
  out.flush();

  std::mutex mu;
  std::map<std::size_t, std::vector<train::RunRecord>> pending;
  std::size_t next_to_write = 0;
  std::atomic<std::size_t> next_group{0};
  std::atomic<std::size_t> failed{0};

  // Single writer: a finished group is held until every earlier group is out.
  auto publish = [&](std::size_t g, std::vector<train::RunRecord> rows) {
    std::lock_guard lock(mu);
    pending[g] = std::move(rows);
    while (pending.count(next_to_write)) {
      for (const auto& r : pending[next_to_write]) out << csv::format_row(train::to_row(r));
      out.flush();
      pending.erase(next_to_write++);
    }
  };

  auto run_group = [&](std::size_t g) {
    const auto [begin, end] = groups[g];
    std::vector<train::RunRecord> rows;
    RunConfig first = cells[begin];
    first.output_dir = (dir / "runs").string();
    std::optional<train::StageResult> s1;
    try {
      s1 = train::train_stage1(first, data, train::make_run_dir(first, 1), hooks);
    } catch (const std::exception& e) {
      for (std::size_t c = begin; c < end; ++c) rows.push_back(failed_record(cells[c], 1, e.what()));
      failed += end - begin;
      publish(g, std::move(rows));
      return;
    }
    for (std::size_t c = begin; c < end; ++c) {
      RunConfig cfg = cells[c];
      cfg.output_dir = first.output_dir;
      cfg.stage1_checkpoint = s1->checkpoint.string();
      for (auto& r : relabel(s1->records, cfg)) rows.push_back(r);
      if (sc.stages < 2) continue;
      try {
        const auto s2 = train::train_stage2(cfg, data, s1->params, train::make_run_dir(cfg, 2), hooks);
        for (const auto& r : s2.records) rows.push_back(r);
      } catch (const std::exception& e) {
        rows.push_back(failed_record(cfg, 2, e.what()));
        ++failed;
      }
    }
    publish(g, std::move(rows));
  };

  auto worker = [&] {
    for (std::size_t g; (g = next_group++) < groups.size();) run_group(g);
  };
  const auto jobs = std::min<std::size_t>(static_cast<std::size_t>(sc.jobs), groups.size());
  if (jobs <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < jobs; ++t) pool.emplace_back(worker);
  }
  summary.failed = failed;
  return summary;
}

}  // namespace rdpb::sweep
